from __future__ import annotations

import random
from pathlib import Path

import pytest

from gcagent import Query, Transcript, build_memory, parse_srt
from gcagent.reference import ReferenceBackend

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def reference():
    return ReferenceBackend()


@pytest.fixture
def cooking_transcript() -> Transcript:
    data = (FIXTURES / "videos" / "vid01.srt").read_bytes()
    return parse_srt(data).with_duration(20.0)


@pytest.fixture
def cooking_memory(cooking_transcript, reference):
    return build_memory(cooking_transcript, reference)


@pytest.fixture
def cooking_query() -> Query:
    return Query(
        text="why do they throw food in a big bowl",
        options=(
            ("A", "Wash the dishes"),
            ("B", "Prepare to mix and taste"),
            ("C", "Feed the dog"),
        ),
    )


def make_transcript(rows, source_kind="subtitle", duration=None) -> Transcript:
    return Transcript.from_lines(rows, source_kind=source_kind, video_duration_s=duration)


def random_transcript(rng: random.Random, max_lines: int = 500) -> Transcript:
    """Synthetic transcript with random inter-line gaps spanning both sides
    of the default event-boundary threshold."""
    n = rng.randint(1, max_lines)
    rows = []
    t = rng.uniform(0.0, 3.0)
    for _ in range(n):
        duration = rng.uniform(0.5, 4.0)
        words = " ".join(f"w{rng.randint(0, 5000):04d}" for _ in range(rng.randint(3, 10)))
        rows.append((round(t, 3), round(t + duration, 3), words))
        t += duration + rng.choice([0.2, 0.8, 1.5, 3.0, 6.0, 9.5])
    return make_transcript(rows)


def random_query(rng: random.Random, transcript: Transcript) -> Query:
    """Query that usually shares tokens with some line, sometimes none."""
    line = transcript.lines[rng.randrange(len(transcript.lines))]
    tokens = line.text.split()
    if rng.random() < 0.75:
        text = " ".join(rng.sample(tokens, min(3, len(tokens))))
        option_a = " ".join(rng.sample(tokens, min(2, len(tokens))))
    else:
        text = "zkq jwx vbnn"
        option_a = "frobnicate entirely"
    return Query(text=text, options=(("A", option_a), ("B", "unrelated filler choice")))
