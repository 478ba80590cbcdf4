#!/usr/bin/env python3
"""Regenerate the bundled test fixtures (synthetic videos, manifest, parser
corpus). Deterministic: running it twice produces identical files."""

from __future__ import annotations

import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
VIDEOS = FIXTURES / "videos"
CORPUS_VALID = FIXTURES / "corpus" / "valid"
CORPUS_BAD = FIXTURES / "corpus" / "malformed"

WORDS = (
    "river stone garden window music bridge engine candle marble forest "
    "signal harbor lantern meadow copper valley summit mirror anchor beacon "
    "pepper salt cinnamon basil thunder drizzle breeze pedal canvas easel "
    "violin trumpet drum stage curtain ticket whistle referee goal corner "
    "museum statue fresco tunnel station platform carriage luggage compass map"
).split()


def fmt_srt_time(seconds: float) -> str:
    ms = int(round(seconds * 1000))
    s, ms = divmod(ms, 1000)
    h, rem = divmod(s, 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d},{ms:03d}"


def fmt_vtt_time(seconds: float) -> str:
    return fmt_srt_time(seconds).replace(",", ".")


def srt_bytes(cues: list[tuple[float, float, str]]) -> bytes:
    blocks = [
        f"{i}\n{fmt_srt_time(s)} --> {fmt_srt_time(e)}\n{text}\n"
        for i, (s, e, text) in enumerate(cues, start=1)
    ]
    return "\n".join(blocks).encode("utf-8")


def vtt_bytes(cues: list[tuple[float, float, str]], note: bool = False) -> bytes:
    parts = ["WEBVTT\n"]
    if note:
        parts.append("NOTE generated fixture\n")
    for s, e, text in cues:
        parts.append(f"{fmt_vtt_time(s)} --> {fmt_vtt_time(e)}\n{text}\n")
    return "\n".join(parts).encode("utf-8")


# --- bundled videos ---------------------------------------------------------------

def build_videos() -> list[dict]:
    items: list[dict] = []

    def add_item(qid, vid, duration, split, category, question, options, gold,
                 subtitle=None, caption=None):
        items.append(
            {
                "question_id": qid,
                "video_id": vid,
                "duration_s": duration,
                "split": split,
                "category": category,
                "query": {
                    "text": question,
                    "options": [{"label": l, "text": t} for l, t in options],
                },
                "gold": gold,
                "subtitle_path": subtitle,
                "caption_path": caption,
            }
        )

    # vid01: three lines, one topic gap
    cues = [
        (0.0, 2.0, "Alice greets Bob warmly in the kitchen"),
        (10.0, 12.0, "they throw food into a big bowl to mix"),
        (13.0, 15.0, "everyone takes a taste from the bowl of doom"),
    ]
    (VIDEOS / "vid01.srt").write_bytes(srt_bytes(cues))
    add_item("q0101", "vid01", 20.0, "short", "knowledge",
             "why do they throw food in a big bowl",
             [("A", "Wash the dishes"), ("B", "Prepare to mix and taste"),
              ("C", "Feed the dog")],
             "B", subtitle="videos/vid01.srt")
    add_item("q0102", "vid01", 20.0, "short", "knowledge",
             "who greets Bob warmly",
             [("A", "Alice"), ("B", "nobody"), ("C", "the dog")],
             "A", subtitle="videos/vid01.srt")

    # vid02: 45 back-to-back lines, marker in line 30
    cues = []
    for i in range(1, 46):
        if i == 30:
            text = "the champion stumbles near the final corner"
        else:
            text = f"lap {i} the runner keeps a steady pace on the track"
        cues.append(((i - 1) * 2.0, (i - 1) * 2.0 + 2.0, text))
    (VIDEOS / "vid02.srt").write_bytes(srt_bytes(cues))
    add_item("q0201", "vid02", 100.0, "short", "sports",
             "where does the champion stumble",
             [("A", "near the final corner"), ("B", "at the starting grid")],
             "A", subtitle="videos/vid02.srt")

    # vid03: one-hour transcript, 10 topics x 34 lines
    rng = random.Random(303)
    cues = []
    t = 0.0
    for topic in range(10):
        for i in range(34):
            word_a, word_b = rng.choice(WORDS), rng.choice(WORDS)
            text = f"chapter {topic + 1} part {i + 1} covers the {word_a} and the {word_b}"
            if topic == 6 and i == 17:
                text = "the quantum flux capacitor hums beneath the floor"
            cues.append((t, t + 10.0, text))
            t += 10.0
        t += 17.0
    (VIDEOS / "vid03.srt").write_bytes(srt_bytes(cues))
    add_item("q0301", "vid03", 3600.0, "long", "knowledge",
             "what does the quantum flux capacitor do",
             [("A", "it hums beneath the floor"), ("B", "it powers the reactor")],
             "A", subtitle="videos/vid03.srt")

    # vid04: caption-only video (subtitle path intentionally missing on disk)
    records = []
    for i in range(61):
        t = i * 10.0
        if t == 300.0:
            caption = "the detective finds a hidden letter inside the drawer"
        else:
            caption = f"frame shows a detective walking through scene {i}"
        records.append(json.dumps({"t": t, "caption": caption}))
    (VIDEOS / "vid04.captions.jsonl").write_text("\n".join(records) + "\n", encoding="utf-8")
    add_item("q0401", "vid04", 610.0, "medium", "film_tv",
             "what does the detective find inside the drawer",
             [("A", "a hidden letter"), ("B", "a broken watch")],
             "A", subtitle="videos/vid04_missing.srt",
             caption="videos/vid04.captions.jsonl")

    # vid05: no token overlap with its query (fallback path); gold is wrong on
    # purpose so the report contains one incorrect item
    cues = [
        (i * 10.0, i * 10.0 + 3.0, f"ordinary narration sentence number {i + 1}")
        for i in range(9)
    ]
    (VIDEOS / "vid05.srt").write_bytes(srt_bytes(cues))
    add_item("q0501", "vid05", 90.0, "short", "multilingual",
             "zorp blib kwux yonder",
             [("A", "frobnicate"), ("B", "dublangle")],
             "B", subtitle="videos/vid05.srt")

    # vid06: middle topic carries conflict vocabulary
    cues = []
    t = 0.0
    for i in range(4):
        cues.append((t, t + 4.0, f"the teams arrive at the arena for the grand contest {i + 1}"))
        t += 4.0
    t += 8.0
    for i in range(4):
        if i == 1:
            text = "however the problem with the scoreboard delays the match"
        else:
            text = f"officials confer about the standings round {i + 1}"
        cues.append((t, t + 4.0, text))
        t += 4.0
    t += 8.0
    for i in range(4):
        cues.append((t, t + 4.0, f"the final whistle blows and medals are awarded {i + 1}"))
        t += 4.0
    (VIDEOS / "vid06.srt").write_bytes(srt_bytes(cues))
    add_item("q0601", "vid06", 400.0, "medium", "competition",
             "what issue delays the match",
             [("A", "the scoreboard delays the match"), ("B", "the rain stops play")],
             "A", subtitle="videos/vid06.srt")

    # vid07: first and third topics share vocabulary (refers_back link)
    cues = []
    t = 0.0
    for i in range(3):
        cues.append((t, t + 3.0, f"the painter mixes crimson pigment on the palette {i + 1}"))
        t += 3.0
    t += 8.0
    for i in range(3):
        cues.append((t, t + 3.0, f"a gallery curator arranges the exhibition hall {i + 1}"))
        t += 3.0
    t += 8.0
    for i in range(3):
        cues.append((t, t + 3.0, f"under the lights the crimson pigment palette glows {i + 1}"))
        t += 3.0
    (VIDEOS / "vid07.srt").write_bytes(srt_bytes(cues))
    add_item("q0701", "vid07", 300.0, "medium", "artistic",
             "what glows under the lights in the final scene",
             [("A", "the crimson palette"), ("B", "the silver lamp")],
             "A", subtitle="videos/vid07.srt")

    # vid08: WebVTT source with voice tags and a NOTE block
    cues = [
        (0.0, 3.0, "<v Director>quiet on the set please</v>"),
        (10.0, 13.0, "the camera crew rolls the opening take"),
        (20.0, 23.0, "an actor rehearses the closing monologue"),
        (30.0, 33.0, "the director calls for one more take"),
        (40.0, 43.0, "applause fills the studio after the scene"),
        (50.0, 53.0, "lights dim and the crew packs the rig"),
    ]
    (VIDEOS / "vid08.vtt").write_bytes(vtt_bytes(cues, note=True))
    add_item("q0801", "vid08", 150.0, "short", "film_tv",
             "who calls for one more take",
             [("A", "the director"), ("B", "the producer")],
             "A", subtitle="videos/vid08.vtt")

    # vid09: named participants
    cues = [
        (0.0, 4.0, "Marie visits the museum with Pierre on a rainy afternoon"),
        (12.0, 16.0, "Pierre studies an old fresco while Marie sketches"),
        (24.0, 28.0, "later Claude joins them beside the marble statue"),
        (36.0, 40.0, "the three friends compare notes over coffee"),
    ]
    (VIDEOS / "vid09.srt").write_bytes(srt_bytes(cues))
    add_item("q0901", "vid09", 500.0, "medium", "knowledge",
             "who visits the museum with Pierre",
             [("A", "Marie"), ("B", "Claude"), ("C", "nobody")],
             "A", subtitle="videos/vid09.srt")

    # vid10: overlapping cues (commentary over ambience)
    cues = [
        (0.0, 5.0, "crowd noise builds around the stadium"),
        (3.0, 8.0, "the commentator welcomes viewers to the match"),
        (6.0, 12.0, "players warm up near the touchline"),
        (15.0, 20.0, "kickoff begins and the ball sails upfield"),
        (30.0, 36.0, "a striker scores the opening goal early"),
    ]
    (VIDEOS / "vid10.srt").write_bytes(srt_bytes(cues))
    add_item("q1001", "vid10", 60.0, "short", "sports",
             "who scores the opening goal",
             [("A", "a striker"), ("B", "the goalkeeper")],
             "A", subtitle="videos/vid10.srt")

    # vid11: 35-minute transcript with non-English fragments
    rng = random.Random(1111)
    cues = []
    t = 0.0
    for topic in range(8):
        for i in range(24):
            word = rng.choice(WORDS)
            if topic == 3 and i == 10:
                text = "der zug kommt heute punktlich am bahnhof an"
            else:
                text = f"segment {topic + 1}.{i + 1} the guide describes the {word} nearby"
            cues.append((t, t + 9.0, text))
            t += 9.0
        t += 12.0
    (VIDEOS / "vid11.srt").write_bytes(srt_bytes(cues))
    add_item("q1101", "vid11", 2100.0, "long", "multilingual",
             "wann kommt der zug am bahnhof an",
             [("A", "punktlich"), ("B", "verspatet")],
             "A", subtitle="videos/vid11.srt")

    # vid12: punctuation-heavy lines
    cues = [
        (0.0, 4.0, "Round one: the quiz-master asks, quite loudly, about rivers!"),
        (10.0, 14.0, "Contestant two answers: the Danube, of course..."),
        (20.0, 24.0, "Judges (all three) agree; points are awarded."),
        (30.0, 34.0, "A tie-break looms: buzzers ready, hands hovering."),
    ]
    (VIDEOS / "vid12.srt").write_bytes(srt_bytes(cues))
    add_item("q1201", "vid12", 700.0, "medium", "competition",
             "which river does contestant two name",
             [("A", "the Danube"), ("B", "the Rhine")],
             "A", subtitle="videos/vid12.srt")

    return items


# --- parser corpus ------------------------------------------------------------------

def _random_cues(rng: random.Random, count: int, multi_line: bool = False) -> list:
    cues = []
    t = rng.uniform(0, 30)
    for _ in range(count):
        dur = rng.uniform(0.8, 5.0)
        words = " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 10)))
        if multi_line and rng.random() < 0.5:
            parts = words.split()
            half = max(1, len(parts) // 2)
            words = " ".join(parts[:half]) + "\n" + " ".join(parts[half:])
        cues.append((round(t, 3), round(t + dur, 3), words))
        t += dur + rng.uniform(0.0, 6.0)
    return cues


def _decorate(rng: random.Random, text: str, style: int) -> str:
    if style == 1:
        return f"<i>{text}</i>"
    if style == 2:
        return f"<b>{text.split()[0]}</b> " + " ".join(text.split()[1:])
    if style == 3:
        return "{\\an8}" + text
    if style == 4:
        return f"<v Speaker>{text}</v>"
    return text


def build_corpus() -> None:
    rng = random.Random(42)
    for i in range(28):
        cues = _random_cues(rng, rng.randint(2, 12), multi_line=i % 9 == 0)
        if i % 4 == 0:
            cues = [(s, e, _decorate(rng, t.replace("\n", " "), rng.randint(1, 3)))
                    for s, e, t in cues]
        if i % 6 == 0 and len(cues) > 2:
            cues = cues[::-1]  # out of temporal order on disk
        if i % 8 == 0 and len(cues) > 1:
            s0, e0, t0 = cues[0]
            cues[0] = (s0, e0 + 4.0, t0)  # overlap the next cue
        if i % 5 == 0:
            cues = [(s + 3600.0, e + 3600.0, t) for s, e, t in cues]  # hour offsets
        data = srt_bytes(cues)
        if i % 5 == 0:
            data = data.replace(b"\n", b"\r\n")
        if i % 7 == 0:
            data = b"\xef\xbb\xbf" + data
        (CORPUS_VALID / f"s{i:02d}.srt").write_bytes(data)

    for i in range(24):
        cues = _random_cues(rng, rng.randint(2, 10), multi_line=i % 7 == 0)
        if i % 3 == 0:
            cues = [(s, e, _decorate(rng, t.replace("\n", " "), 4)) for s, e, t in cues]
        if i % 5 == 0 and len(cues) > 2:
            cues = cues[::-1]
        data = vtt_bytes(cues, note=i % 4 == 0)
        if i % 6 == 0:
            data = data.replace(b"WEBVTT", b"WEBVTT - generated corpus file", 1)
        if i % 8 == 0:
            data = data.replace(b"\n", b"\r\n")
        (CORPUS_VALID / f"v{i:02d}.vtt").write_bytes(data)


def build_malformed() -> None:
    expected = {}

    def put(name: str, data: bytes, error: str) -> None:
        (CORPUS_BAD / name).write_bytes(data)
        expected[name] = error

    put("bad_timestamp.srt",
        b"1\n00:00:AA,000 --> 00:00:02,000\nhello there\n", "MalformedCue")
    put("reversed_times.srt",
        b"1\n00:00:05,000 --> 00:00:01,000\nbackwards cue\n", "MalformedCue")
    put("empty.srt", b"\n\n", "EmptyFile")
    put("arrow_in_text.srt",
        b"1\n00:00:01,000 --> 00:00:02,000\nfirst line\n00:00:03,000 --> 00:00:04,000\n",
        "MalformedCue")
    put("tags_only.srt",
        b"1\n00:00:01,000 --> 00:00:02,000\n<i></i>\n", "MalformedCue")
    put("no_header.vtt",
        b"00:01.000 --> 00:02.000\nmissing header\n", "MissingHeader")
    put("bad_cue.vtt",
        b"WEBVTT\n\njust some stray text\nwith no timing line\n", "MalformedCue")
    put("reversed_times.vtt",
        b"WEBVTT\n\n00:10.000 --> 00:02.000\nbackwards cue\n", "MalformedCue")
    put("bad_json.jsonl",
        b'{"t": 1.0, "caption": "ok"}\n{not json}\n', "MalformedRecord")
    put("negative_t.jsonl",
        b'{"t": -5.0, "caption": "below zero"}\n', "MalformedRecord")
    put("missing_caption.jsonl",
        b'{"t": 1.0}\n', "MalformedRecord")
    put("empty.jsonl", b"\n", "EmptyFile")
    (CORPUS_BAD / "expected.json").write_text(
        json.dumps(expected, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def main() -> None:
    for directory in (VIDEOS, CORPUS_VALID, CORPUS_BAD):
        directory.mkdir(parents=True, exist_ok=True)
    items = build_videos()
    manifest = "\n".join(json.dumps(item, ensure_ascii=False) for item in items) + "\n"
    (FIXTURES / "manifest.jsonl").write_text(manifest, encoding="utf-8")
    build_corpus()
    build_malformed()
    print(f"wrote {len(items)} manifest items, "
          f"{len(list(CORPUS_VALID.iterdir()))} valid corpus files, "
          f"{len(list(CORPUS_BAD.iterdir())) - 1} malformed corpus files")


if __name__ == "__main__":
    main()
