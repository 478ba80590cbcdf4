"""Episodic memory: construction, reflection updates, and persistence.

Construction runs in three backend-assisted passes over a transcript:
event segmentation (topic-shift boundaries), schematic abstraction per
unit (situation-level summary + participant entities), and narrative
linking across units (roles and causal/temporal dependencies). Reflection
appends a concise note about an answered query to the most relevant
episode; it never rewrites existing content.
"""

from __future__ import annotations

import json
import threading
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .backend import Backend, ChatRequest, PromptTemplate, TextPart, complete, render_template
from .errors import (
    BackendError,
    BackendFailure,
    DegenerateOutputWarning,
    EmptySummary,
    EmptyTranscript,
    InvalidLinkWarning,
    InvariantViolation,
    SchemaViolation,
)
from .prompts import (
    DEFAULT_TEMPLATES,
    SYSTEM_MEMORY_MANAGER,
    format_episode_line,
    format_note_line,
    format_options,
    transcript_block,
    wrap_block,
)
from .text import truncate_tokens
from .transcript import Transcript, count_tokens, transcript_digest

NARRATIVE_ROLES = ("introduction", "development", "conflict", "resolution", "other")
LINK_RELATIONS = ("precedes", "causes", "refers_back")

# tokens whose presence in a summary marks an event unit as a conflict beat
CONFLICT_LEXICON = frozenset({"but", "however", "problem", "fail", "wrong"})


@dataclass(frozen=True)
class MemoryParams:
    gap_threshold_s: float = 5.0
    max_lines: int = 20
    summary_budget: int = 30
    refers_back_overlap: int = 3


@dataclass(frozen=True)
class CausalLink:
    target_id: int
    relation: str


@dataclass(frozen=True)
class ReflectionNote:
    query: str
    answer_id: str
    summary: str
    created_version: int


@dataclass(frozen=True)
class Episode:
    id: int
    span: tuple[float, float]
    line_range: tuple[int, int]
    schematic_summary: str
    entities: tuple[str, ...] = ()
    narrative_role: str = "other"
    causal_links: tuple[CausalLink, ...] = ()
    reflections: tuple[ReflectionNote, ...] = ()

    def __post_init__(self):
        if self.id < 0:
            raise InvariantViolation(f"episode id {self.id} negative")
        if self.span[0] > self.span[1]:
            raise InvariantViolation(f"episode {self.id}: span start after end")
        if self.line_range[0] < 1 or self.line_range[0] > self.line_range[1]:
            raise InvariantViolation(f"episode {self.id}: empty or invalid line_range")
        if not self.schematic_summary.strip():
            raise InvariantViolation(f"episode {self.id}: empty schematic summary")
        if self.narrative_role not in NARRATIVE_ROLES:
            raise InvariantViolation(f"episode {self.id}: unknown role {self.narrative_role!r}")
        for link in self.causal_links:
            if link.relation not in LINK_RELATIONS:
                raise InvariantViolation(f"episode {self.id}: unknown relation {link.relation!r}")
            if not 0 <= link.target_id < self.id:
                raise InvariantViolation(
                    f"episode {self.id}: link target {link.target_id} is not strictly earlier"
                )
        for note in self.reflections:
            if not note.summary.strip():
                raise InvariantViolation(f"episode {self.id}: empty reflection summary")
            if note.created_version < 1:
                raise InvariantViolation(f"episode {self.id}: bad note version")


@dataclass(frozen=True)
class EpisodicMemory:
    episodes: tuple[Episode, ...]
    version: int
    source_digest: str

    def __post_init__(self):
        if self.version < 1:
            raise InvariantViolation("memory version must be >= 1")
        expected_start = 1
        for pos, ep in enumerate(self.episodes):
            if ep.id != pos:
                raise InvariantViolation(f"episode id {ep.id} at position {pos}")
            if ep.line_range[0] != expected_start:
                raise InvariantViolation(
                    f"episode {ep.id}: line_range starts at {ep.line_range[0]}, "
                    f"expected {expected_start}"
                )
            expected_start = ep.line_range[1] + 1
            for note in ep.reflections:
                if note.created_version > self.version:
                    raise InvariantViolation(
                        f"episode {ep.id}: note version {note.created_version} "
                        f"exceeds memory version {self.version}"
                    )

    @property
    def line_count(self) -> int:
        return self.episodes[-1].line_range[1] if self.episodes else 0


# --- prompt-facing serialization -------------------------------------------------

def memory_text(memory: EpisodicMemory, include_narrative: bool = True) -> str:
    """One line per episode plus its reflection notes. The narrative form
    carries roles and causal links; the schematic form omits them."""
    lines = []
    for ep in memory.episodes:
        lines.append(
            format_episode_line(
                ep.id,
                ep.span[0],
                ep.span[1],
                ep.schematic_summary,
                role=ep.narrative_role if include_narrative else None,
                links=[(l.relation, l.target_id) for l in ep.causal_links]
                if include_narrative
                else None,
            )
        )
        for note in ep.reflections:
            lines.append(format_note_line(note.created_version, note.answer_id, note.summary))
    return "\n".join(lines)


def memory_token_count(memory: EpisodicMemory) -> int:
    """Token footprint of the memory as fed to prompts (summaries, roles,
    links, notes; never the underlying transcript text)."""
    return count_tokens(memory_text(memory, include_narrative=True)).count


# --- construction -----------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeDraft:
    id: int
    span: tuple[float, float]
    line_range: tuple[int, int]
    summary: str
    entities: tuple[str, ...]


def _call(backend: Backend, request: ChatRequest) -> str:
    try:
        return complete(backend, request).text
    except BackendError as exc:
        raise BackendFailure(str(exc)) from exc


def _template(templates: Mapping[str, PromptTemplate] | None, template_id: str) -> PromptTemplate:
    if templates and template_id in templates:
        return templates[template_id]
    return DEFAULT_TEMPLATES[template_id]


def segment_events(
    transcript: Transcript,
    backend: Backend,
    params: MemoryParams = MemoryParams(),
    templates: Mapping[str, PromptTemplate] | None = None,
) -> list[tuple[int, int]]:
    """Ask the backend for event-level units, then repair the proposal into a
    contiguous, non-overlapping cover of all lines."""
    if not transcript.lines:
        raise EmptyTranscript("cannot segment an empty transcript")
    n = len(transcript.lines)
    body = render_template(
        _template(templates, "memory_segmentation"),
        {"transcript": transcript_block(transcript.lines)},
    )
    system = (
        SYSTEM_MEMORY_MANAGER
        + f" Start a new unit when the silence gap between consecutive lines reaches"
        f" {params.gap_threshold_s:g} seconds, and never let a unit exceed"
        f" {params.max_lines} lines."
    )
    request = ChatRequest(
        system=system,
        user_parts=(TextPart(body),),
        context={
            "stage": "memory_segmentation",
            "gap_threshold_s": params.gap_threshold_s,
            "max_lines": params.max_lines,
        },
    )
    raw = _call(backend, request)
    proposal: list = []
    parse_failed = False
    try:
        payload = json.loads(raw)
        proposal = payload["units"]
        if not isinstance(proposal, list):
            raise TypeError
    except (ValueError, KeyError, TypeError):
        parse_failed = True
        proposal = []
    units, repaired = _repair_units(proposal, n)
    if parse_failed or repaired:
        warnings.warn(
            f"segmentation output repaired into {len(units)} unit(s)",
            DegenerateOutputWarning,
            stacklevel=2,
        )
    return units


def _as_index(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


def _repair_units(proposal: list, n: int) -> tuple[list[tuple[int, int]], bool]:
    cleaned: list[tuple[int, int]] = []
    repaired = False
    for entry in proposal:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            repaired = True
            continue
        a, b = _as_index(entry[0]), _as_index(entry[1])
        if a is None or b is None:
            repaired = True
            continue
        ca, cb = max(1, min(a, n)), max(1, min(b, n))
        if (ca, cb) != (a, b):
            repaired = True
        if ca > cb:
            repaired = True
            continue
        cleaned.append((ca, cb))
    if not cleaned:
        return [(1, n)], True
    cleaned.sort()
    fixed: list[tuple[int, int]] = []
    expected = 1
    for a, b in cleaned:
        if a > expected:
            if fixed:
                # fill the gap by extending the previous unit
                fixed[-1] = (fixed[-1][0], a - 1)
            else:
                a = expected
            repaired = True
        elif a < expected:
            a = expected  # clip the overlap
            repaired = True
        if a > b:
            repaired = True
            continue
        fixed.append((a, b))
        expected = b + 1
    if not fixed:
        return [(1, n)], True
    if fixed[-1][1] < n:
        fixed[-1] = (fixed[-1][0], n)
        repaired = True
    return fixed, repaired


def abstract_schema(
    transcript: Transcript,
    line_range: tuple[int, int],
    backend: Backend,
    params: MemoryParams = MemoryParams(),
    ordinal: int = 1,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> tuple[str, tuple[str, ...]]:
    a, b = line_range
    if a < 1 or b > len(transcript.lines) or a > b:
        raise InvariantViolation(f"line_range {line_range} out of bounds")
    unit_lines = transcript.lines[a - 1 : b]
    body = render_template(
        _template(templates, "memory_abstraction"),
        {"transcript": transcript_block(unit_lines)},
    )
    system = (
        SYSTEM_MEMORY_MANAGER
        + f" This is event unit {ordinal}. Keep the summary within"
        f" {params.summary_budget} words."
    )
    request = ChatRequest(
        system=system,
        user_parts=(TextPart(body),),
        context={
            "stage": "memory_abstraction",
            "ordinal": ordinal,
            "summary_budget": params.summary_budget,
        },
    )
    raw = _call(backend, request)
    try:
        payload = json.loads(raw)
        summary = payload.get("summary", "")
        entities_raw = payload.get("entities", [])
    except ValueError:
        summary, entities_raw = "", []
    if not isinstance(summary, str) or not summary.strip():
        raise EmptySummary(f"unit {ordinal}: backend returned no usable summary")
    entities: list[str] = []
    if isinstance(entities_raw, list):
        for item in entities_raw:
            if isinstance(item, str) and item and item not in entities:
                entities.append(item)
    return " ".join(summary.split()), tuple(entities)


def link_narrative(
    drafts: Sequence[EpisodeDraft],
    backend: Backend,
    params: MemoryParams = MemoryParams(),
    templates: Mapping[str, PromptTemplate] | None = None,
) -> list[tuple[str, tuple[CausalLink, ...]]]:
    """Assign one narrative role per draft episode and validated causal links.
    Invalid roles become 'other' and invalid links are dropped, each with a
    warning."""
    if not drafts:
        raise InvariantViolation("link_narrative needs at least one draft episode")
    listing = "\n".join(
        format_episode_line(d.id, d.span[0], d.span[1], d.summary) for d in drafts
    )
    body = render_template(
        _template(templates, "memory_narrative"),
        {"memory": wrap_block("memory", listing)},
    )
    request = ChatRequest(
        system=SYSTEM_MEMORY_MANAGER,
        user_parts=(TextPart(body),),
        context={
            "stage": "memory_narrative",
            "refers_back_overlap": params.refers_back_overlap,
        },
    )
    raw = _call(backend, request)
    assignments: dict[int, dict] = {}
    parse_failed = False
    try:
        payload = json.loads(raw)
        for entry in payload["episodes"]:
            if isinstance(entry, dict) and isinstance(entry.get("id"), int):
                assignments[entry["id"]] = entry
    except (ValueError, KeyError, TypeError):
        parse_failed = True
    if parse_failed:
        warnings.warn(
            "narrative output unreadable; roles defaulted, links dropped",
            InvalidLinkWarning,
            stacklevel=2,
        )
    out: list[tuple[str, tuple[CausalLink, ...]]] = []
    for draft in drafts:
        entry = assignments.get(draft.id, {})
        role = entry.get("narrative_role")
        if role not in NARRATIVE_ROLES:
            if role is not None:
                warnings.warn(
                    f"episode {draft.id}: role {role!r} replaced with 'other'",
                    InvalidLinkWarning,
                    stacklevel=2,
                )
            role = role if role in NARRATIVE_ROLES else "other"
        links: list[CausalLink] = []
        for link in entry.get("causal_links", []) or []:
            target = link.get("target_id") if isinstance(link, dict) else None
            relation = link.get("relation") if isinstance(link, dict) else None
            if (
                isinstance(target, int)
                and relation in LINK_RELATIONS
                and 0 <= target < draft.id
            ):
                links.append(CausalLink(target_id=target, relation=relation))
            else:
                warnings.warn(
                    f"episode {draft.id}: dropped invalid link {link!r}",
                    InvalidLinkWarning,
                    stacklevel=2,
                )
        out.append((role, tuple(links)))
    return out


def build_memory(
    transcript: Transcript,
    backend: Backend,
    params: MemoryParams = MemoryParams(),
    templates: Mapping[str, PromptTemplate] | None = None,
) -> EpisodicMemory:
    """Full construction pass: segment, abstract each unit, link narrative."""
    if not transcript.lines:
        raise EmptyTranscript("cannot build memory from an empty transcript")
    units = segment_events(transcript, backend, params, templates)
    drafts: list[EpisodeDraft] = []
    for k, (a, b) in enumerate(units):
        summary, entities = abstract_schema(
            transcript, (a, b), backend, params, ordinal=k + 1, templates=templates
        )
        unit_lines = transcript.lines[a - 1 : b]
        span = (unit_lines[0].start_s, max(l.end_s for l in unit_lines))
        drafts.append(
            EpisodeDraft(id=k, span=span, line_range=(a, b), summary=summary, entities=entities)
        )
    assignments = link_narrative(drafts, backend, params, templates)
    episodes = tuple(
        Episode(
            id=d.id,
            span=d.span,
            line_range=d.line_range,
            schematic_summary=d.summary,
            entities=d.entities,
            narrative_role=role,
            causal_links=links,
        )
        for d, (role, links) in zip(drafts, assignments)
    )
    return EpisodicMemory(
        episodes=episodes, version=1, source_digest=transcript_digest(transcript)
    )


# --- reflection --------------------------------------------------------------------

def _interval_overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    return max(0.0, min(a[1], b[1]) - max(a[0], b[0]))


def _interval_gap(a: tuple[float, float], b: tuple[float, float]) -> float:
    return max(0.0, max(b[0] - a[1], a[0] - b[1]))


def _target_episode(
    memory: EpisodicMemory, perception_spans: Sequence[tuple[float, float]]
) -> int:
    if not perception_spans:
        return 0
    overlaps = [
        sum(_interval_overlap(ep.span, span) for span in perception_spans)
        for ep in memory.episodes
    ]
    best = max(overlaps)
    if best > 0:
        return overlaps.index(best)
    gaps = [
        min(_interval_gap(ep.span, span) for span in perception_spans)
        for ep in memory.episodes
    ]
    return gaps.index(min(gaps))


def reflect(
    query: str,
    options: Sequence[tuple[str, str]],
    answer_id: str,
    evidence: str,
    memory: EpisodicMemory,
    perception_spans: Sequence[tuple[float, float]],
    backend: Backend,
    params: MemoryParams = MemoryParams(),
    templates: Mapping[str, PromptTemplate] | None = None,
) -> EpisodicMemory:
    """Append one reflection note to the episode whose span overlaps the
    perception spans most (nearest episode when nothing overlaps). Returns a
    new memory with version + 1; everything pre-existing is untouched."""
    if not evidence.strip():
        raise InvariantViolation("reflection requires non-empty evidence")
    body = render_template(
        _template(templates, "reflection"),
        {
            "query": query,
            "options": format_options(options),
            "answer": answer_id,
            "evidence": evidence,
            "memory": wrap_block("memory", memory_text(memory)),
        },
    )
    request = ChatRequest(
        system=SYSTEM_MEMORY_MANAGER,
        user_parts=(TextPart(body),),
        context={
            "stage": "reflection",
            "answer_id": answer_id,
            "summary_budget": params.summary_budget,
        },
    )
    raw = _call(backend, request)
    try:
        payload = json.loads(raw)
        summary = payload["summary"]
        if not isinstance(summary, str) or not summary.strip():
            raise ValueError
    except (ValueError, KeyError, TypeError):
        raise BackendFailure("reflection returned no usable summary; memory unchanged") from None
    new_version = memory.version + 1
    note = ReflectionNote(
        query=query,
        answer_id=answer_id,
        summary=" ".join(summary.split()),
        created_version=new_version,
    )
    target = _target_episode(memory, perception_spans)
    episodes = tuple(
        replace(ep, reflections=ep.reflections + (note,)) if ep.id == target else ep
        for ep in memory.episodes
    )
    return replace(memory, episodes=episodes, version=new_version)


def reference_note_summary(answer_id: str, evidence: str, budget: int) -> str:
    """Deterministic reflection-summary rule used by the reference backend."""
    return truncate_tokens(f"({answer_id}) {evidence}", budget)


# --- persistence --------------------------------------------------------------------

def save_memory(memory: EpisodicMemory) -> bytes:
    doc = {
        "version": memory.version,
        "source_digest": memory.source_digest,
        "episodes": [
            {
                "id": ep.id,
                "span": [ep.span[0], ep.span[1]],
                "line_range": [ep.line_range[0], ep.line_range[1]],
                "schematic_summary": ep.schematic_summary,
                "entities": list(ep.entities),
                "narrative_role": ep.narrative_role,
                "causal_links": [
                    {"target_id": l.target_id, "relation": l.relation} for l in ep.causal_links
                ],
                "reflections": [
                    {
                        "query": n.query,
                        "answer_id": n.answer_id,
                        "summary": n.summary,
                        "created_version": n.created_version,
                    }
                    for n in ep.reflections
                ],
            }
            for ep in memory.episodes
        ],
    }
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _require(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise SchemaViolation(f"{path}.{key}", "missing field")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(f"{path}.{key}", "expected a number")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaViolation(f"{path}.{key}", f"expected {kind.__name__}")
    return value


def load_memory(data: bytes) -> EpisodicMemory:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("$", "top level must be an object")
    version = _require(doc, "version", int, "$")
    digest = _require(doc, "source_digest", str, "$")
    episodes_raw = _require(doc, "episodes", list, "$")
    episodes: list[Episode] = []
    for i, ep_doc in enumerate(episodes_raw):
        path = f"$.episodes[{i}]"
        if not isinstance(ep_doc, dict):
            raise SchemaViolation(path, "expected an object")
        span = _require(ep_doc, "span", list, path)
        line_range = _require(ep_doc, "line_range", list, path)
        if len(span) != 2 or not all(isinstance(v, (int, float)) for v in span):
            raise SchemaViolation(f"{path}.span", "expected [start_s, end_s]")
        if len(line_range) != 2 or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in line_range
        ):
            raise SchemaViolation(f"{path}.line_range", "expected [first, last]")
        links_raw = ep_doc.get("causal_links", [])
        if not isinstance(links_raw, list):
            raise SchemaViolation(f"{path}.causal_links", "expected a list")
        links = []
        for j, link_doc in enumerate(links_raw):
            link_path = f"{path}.causal_links[{j}]"
            if not isinstance(link_doc, dict):
                raise SchemaViolation(link_path, "expected an object")
            links.append(
                CausalLink(
                    target_id=_require(link_doc, "target_id", int, link_path),
                    relation=_require(link_doc, "relation", str, link_path),
                )
            )
        notes_raw = ep_doc.get("reflections", [])
        if not isinstance(notes_raw, list):
            raise SchemaViolation(f"{path}.reflections", "expected a list")
        notes = []
        for j, note_doc in enumerate(notes_raw):
            note_path = f"{path}.reflections[{j}]"
            if not isinstance(note_doc, dict):
                raise SchemaViolation(note_path, "expected an object")
            notes.append(
                ReflectionNote(
                    query=_require(note_doc, "query", str, note_path),
                    answer_id=_require(note_doc, "answer_id", str, note_path),
                    summary=_require(note_doc, "summary", str, note_path),
                    created_version=_require(note_doc, "created_version", int, note_path),
                )
            )
        entities = ep_doc.get("entities", [])
        if not isinstance(entities, list) or not all(isinstance(e, str) for e in entities):
            raise SchemaViolation(f"{path}.entities", "expected a list of strings")
        try:
            episodes.append(
                Episode(
                    id=_require(ep_doc, "id", int, path),
                    span=(float(span[0]), float(span[1])),
                    line_range=(line_range[0], line_range[1]),
                    schematic_summary=_require(ep_doc, "schematic_summary", str, path),
                    entities=tuple(entities),
                    narrative_role=_require(ep_doc, "narrative_role", str, path),
                    causal_links=tuple(links),
                    reflections=tuple(notes),
                )
            )
        except InvariantViolation as exc:
            raise SchemaViolation(path, str(exc)) from None
    try:
        return EpisodicMemory(episodes=tuple(episodes), version=version, source_digest=digest)
    except InvariantViolation as exc:
        raise SchemaViolation("$", str(exc)) from None


# --- store ---------------------------------------------------------------------------

class MemoryStore:
    """Directory of per-video memory files. Writes are serialized per video
    id; readers always see a complete file (write-then-rename)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, video_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(video_id, threading.Lock())

    def path(self, video_id: str) -> Path:
        return self.root / f"{video_id}.json"

    def load(self, video_id: str) -> EpisodicMemory | None:
        path = self.path(video_id)
        if not path.exists():
            return None
        return load_memory(path.read_bytes())

    def save(self, video_id: str, memory: EpisodicMemory) -> None:
        with self._lock(video_id):
            tmp = self.path(video_id).with_suffix(".json.tmp")
            tmp.write_bytes(save_memory(memory))
            tmp.replace(self.path(video_id))

    def get_or_build(
        self,
        video_id: str,
        transcript: Transcript,
        backend: Backend,
        params: MemoryParams = MemoryParams(),
        templates: Mapping[str, PromptTemplate] | None = None,
    ) -> EpisodicMemory:
        """Reuse the cached memory when its digest matches the transcript;
        otherwise build and persist a fresh one."""
        with self._lock(video_id):
            path = self.path(video_id)
            if path.exists():
                cached = load_memory(path.read_bytes())
                if cached.source_digest == transcript_digest(transcript):
                    return cached
            built = build_memory(transcript, backend, params, templates)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_bytes(save_memory(built))
            tmp.replace(path)
            return built
