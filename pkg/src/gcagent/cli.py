"""Command-line interface.

Subcommands: build-memory (precompute episodic memory from subtitles or
captions), ask (answer one question, optionally in an interactive loop),
eval (batch evaluation over a manifest), stats (token-compression numbers).

Exit codes: 0 ok, 1 input error, 2 backend error, 64 usage error.
Config precedence: flags > config file > environment > defaults. In
reference mode no endpoint may be configured and nothing touches the
network; --dry-run additionally forces reference backends and prints the
assembled reasoning request instead of calling any backend.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

from .backend import HttpBackend, ImagePart, TextPart, load_template_file
from .backend import TEMPLATE_IDS, ChatRequest
from .errors import (
    BackendError,
    BackendFailure,
    ConfigError,
    GcagentError,
    ManifestError,
    ParseError,
    SchemaViolation,
    StageError,
)
from .harness import (
    BackendPair,
    RunConfig,
    RunReport,
    _item_transcript,
    compute_token_stats,
    duration_bucket,
    evaluate,
    load_manifest,
    render_report_table,
)
from .memory import (
    MemoryParams,
    MemoryStore,
    build_memory,
    load_memory,
    memory_token_count,
    reflect,
    save_memory,
)
from .perception import PerceptionParams, Query, perceive
from .reasoning import EvidenceConfig, act, assemble_evidence
from .reference import ReferenceBackend
from .transcript import count_tokens, load_transcript, transcript_digest

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BACKEND = 2
EXIT_USAGE = 64

log = logging.getLogger("gcagent")


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except GcagentError as exc:
        raise StageError(stage, exc) from exc

_DEFAULTS: dict = {
    "reference": None,  # auto: true unless an endpoint is configured
    "manager": {"endpoint": None, "model": "manager", "timeout_s": 60.0, "max_retries": 3,
                "multimodal": False},
    "reasoner": {"endpoint": None, "model": "reasoner", "timeout_s": 120.0, "max_retries": 3,
                 "multimodal": True},
    "perception": {"top_k": 5, "pad_s": 2.0, "merge_window_s": 10.0, "max_frames": 32},
    "memory": {"gap_threshold_s": 5.0, "max_lines": 20, "summary_budget": 30,
               "refers_back_overlap": 3},
    "evidence": {"vision": "qr_segment", "text": "qr_transcript",
                 "memory": "schematic_plus_narrative"},
    "memory_dir": "memories",
    "templates_dir": None,
    "workers": 4,
    "strict": False,
}

_OVERRIDE_SECTIONS = {
    "vision": ("evidence", "vision"),
    "text": ("evidence", "text"),
    "memory": ("evidence", "memory"),
    "top_k": ("perception", "top_k"),
    "pad_s": ("perception", "pad_s"),
    "merge_window_s": ("perception", "merge_window_s"),
    "max_frames": ("perception", "max_frames"),
    "gap_threshold_s": ("memory_params", "gap_threshold_s"),
    "max_lines": ("memory_params", "max_lines"),
    "summary_budget": ("memory_params", "summary_budget"),
    "refers_back_overlap": ("memory_params", "refers_back_overlap"),
}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _coerce(raw: str):
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_config(config_args: list[str] | None, reference_flag: bool) -> dict:
    """Resolve the effective configuration. Each --config value is either a
    JSON file path or inline key=value overrides."""
    cfg = json.loads(json.dumps(_DEFAULTS))  # deep copy
    for value in config_args or []:
        if "=" in value:
            for chunk in value.split(","):
                key, _, raw = chunk.partition("=")
                key = key.strip()
                if not key or not raw:
                    raise ConfigError(f"bad inline override {chunk!r}")
                if key in _OVERRIDE_SECTIONS:
                    section, name = _OVERRIDE_SECTIONS[key]
                    section = "memory" if section == "memory_params" else section
                    cfg[section][name] = _coerce(raw.strip())
                elif key in cfg:
                    cfg[key] = _coerce(raw.strip())
                else:
                    raise ConfigError(f"unknown config key {key!r}")
        else:
            path = Path(value)
            if not path.exists():
                raise ConfigError(f"config file not found: {value}")
            try:
                loaded = json.loads(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise ConfigError(f"config file {value}: {exc}") from None
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {value}: top level must be an object")
            cfg = _merge(cfg, loaded)
    if reference_flag:
        cfg["reference"] = True
    if cfg["reference"] is None:
        cfg["reference"] = not (cfg["manager"]["endpoint"] or cfg["reasoner"]["endpoint"])
    if cfg["reference"]:
        for role in ("manager", "reasoner"):
            if cfg[role]["endpoint"]:
                raise ConfigError(
                    f"reference mode forbids an endpoint for the {role} role"
                )
    if cfg["perception"]["max_frames"] < 1:
        raise ConfigError("max_frames must be >= 1")
    return cfg


def _load_templates(cfg: dict) -> dict | None:
    directory = cfg.get("templates_dir")
    if not directory:
        return None
    overrides = {}
    for template_id in TEMPLATE_IDS:
        path = Path(directory) / f"{template_id}.txt"
        if path.exists():
            overrides[template_id] = load_template_file(template_id, path)
    return overrides or None


def _build_backends(cfg: dict, force_reference: bool = False) -> BackendPair:
    if cfg["reference"] or force_reference:
        return BackendPair(manager=ReferenceBackend(), reasoner=ReferenceBackend())
    backends = {}
    for role in ("manager", "reasoner"):
        role_cfg = cfg[role]
        if not role_cfg["endpoint"]:
            raise ConfigError(f"{role} role needs an endpoint (or use --reference)")
        backends[role] = HttpBackend(
            endpoint=role_cfg["endpoint"],
            model=role_cfg["model"],
            multimodal=bool(role_cfg.get("multimodal", False)),
            timeout_s=float(role_cfg.get("timeout_s", 60.0)),
            max_retries=int(role_cfg.get("max_retries", 3)),
        )
    return BackendPair(manager=backends["manager"], reasoner=backends["reasoner"])


def _run_config(cfg: dict) -> RunConfig:
    return RunConfig(
        evidence=EvidenceConfig(**cfg["evidence"]),
        memory_params=MemoryParams(**cfg["memory"]),
        perception_params=PerceptionParams(**cfg["perception"]),
        strict=bool(cfg["strict"]),
        workers=int(cfg["workers"]),
        templates=_load_templates(cfg),
    )


def render_request(request: ChatRequest) -> str:
    """Human-readable dump of an assembled request (used by --dry-run)."""
    lines = [f"system: {request.system}", ""]
    for part in request.user_parts:
        if isinstance(part, TextPart):
            lines.append(part.text)
        elif isinstance(part, ImagePart):
            lines.append(f"[frame @ {part.timestamp_s:.3f}s] {part.uri}")
    return "\n".join(lines)


def parse_options_arg(raw: str) -> tuple[tuple[str, str], ...]:
    """Parse 'A: text | B: text' (also accepts 'A) text' and 'A. text')."""
    entries = [e.strip() for e in raw.split("|") if e.strip()]
    options = []
    for entry in entries:
        m = re.match(r"^([A-Za-z])\s*[\).:]\s*(.+)$", entry)
        if not m:
            raise ConfigError(
                f"bad option entry {entry!r}; expected 'A: text | B: text'"
            )
        options.append((m.group(1).upper(), m.group(2).strip()))
    labels = [label for label, _ in options]
    expected = [chr(ord("A") + i) for i in range(len(labels))]
    if len(labels) < 2 or labels != expected:
        raise ConfigError(
            f"option labels must run A, B, C, ... without gaps; got {labels}"
        )
    return tuple(options)


# --- subcommands ------------------------------------------------------------------

def _transcript_from_args(args, cfg) -> tuple:
    if getattr(args, "subtitles", None):
        path = args.subtitles
    elif getattr(args, "captions", None):
        path = args.captions
    else:
        raise ConfigError("provide --subtitles or --captions")
    duration = getattr(args, "duration", None)
    return load_transcript(path, video_duration_s=duration), path


def cmd_build_memory(args, cfg: dict) -> int:
    transcript = load_transcript(args.input, video_duration_s=args.duration)
    if args.dry_run:
        print(
            f"dry-run: parsed {len(transcript.lines)} lines, "
            f"{count_tokens(transcript.full_text()).count} tokens; nothing written"
        )
        return EXIT_OK
    backends = _build_backends(cfg)
    params = MemoryParams(**cfg["memory"])
    memory = build_memory(transcript, backends.manager, params, _load_templates(cfg))
    out_path = Path(args.out) if args.out else Path(args.input).with_suffix(".memory.json")
    out_path.write_bytes(save_memory(memory))
    t_tokens = count_tokens(transcript.full_text()).count
    m_tokens = memory_token_count(memory)
    stats = compute_token_stats(t_tokens, m_tokens)
    reduction = "n/a" if stats.reduction_pct is None else f"{stats.reduction_pct:.1f}%"
    print(
        f"wrote {out_path}: {len(memory.episodes)} episodes, "
        f"transcript_tokens={t_tokens} memory_tokens={m_tokens} reduction={reduction}"
    )
    return EXIT_OK


def _resolve_memory(args, cfg, transcript, backends, templates):
    memory_path = Path(args.memory) if args.memory else None
    digest = transcript_digest(transcript)
    if memory_path and memory_path.exists():
        memory = load_memory(memory_path.read_bytes())
        if memory.source_digest == digest:
            return memory, memory_path
        if not args.build_on_demand:
            raise SchemaViolation(
                str(memory_path), "memory digest does not match the transcript"
            )
    if not args.build_on_demand and memory_path is None:
        raise ConfigError("provide --memory FILE or --build-on-demand")
    if not args.build_on_demand and memory_path is not None and not memory_path.exists():
        raise ConfigError(f"memory file not found: {memory_path} (or use --build-on-demand)")
    params = MemoryParams(**cfg["memory"])
    memory = build_memory(transcript, backends.manager, params, templates)
    if memory_path:
        memory_path.write_bytes(save_memory(memory))
    return memory, memory_path


def _answer_once(query, transcript, memory, backends, cfg, templates, args):
    perception_params = PerceptionParams(**cfg["perception"])
    perception = _staged(
        "perception",
        perceive, query, transcript, memory, backends.manager, perception_params, templates,
    )
    request = _staged(
        "assemble",
        assemble_evidence,
        EvidenceConfig(**cfg["evidence"]),
        query,
        transcript,
        memory,
        perception,
        perception_params.max_frames,
        templates,
    )
    if args.dry_run:
        print(render_request(request))
        return None, perception
    result = _staged("action", act, query, request, backends.reasoner)
    return result, perception


def cmd_ask(args, cfg: dict) -> int:
    transcript, _ = _transcript_from_args(args, cfg)
    backends = _build_backends(cfg, force_reference=args.dry_run)
    templates = _load_templates(cfg)
    memory, memory_path = _staged(
        "memory", _resolve_memory, args, cfg, transcript, backends, templates
    )
    params = MemoryParams(**cfg["memory"])

    def _one(question: str, options) -> None:
        nonlocal memory
        query = Query(text=question, options=options)
        result, perception = _answer_once(
            query, transcript, memory, backends, cfg, templates, args
        )
        if result is None:  # dry-run
            return
        spans = ", ".join(f"{s.start_s:.2f}-{s.end_s:.2f}" for s in perception.spans)
        print(f"Answer: {result.answer_id}")
        print(f"Evidence: {result.evidence}")
        print(f"Spans: {spans if spans else '(uniform fallback)'}")
        if not args.no_reflect:
            memory = _staged(
                "reflection",
                reflect,
                query.text,
                query.options,
                result.answer_id,
                result.evidence,
                memory,
                [(s.start_s, s.end_s) for s in perception.spans],
                backends.manager,
                params,
                templates,
            )
            if memory_path:
                memory_path.write_bytes(save_memory(memory))
            print(f"Memory version: {memory.version}")

    if args.interactive:
        print("ask> question | A: option | B: option   (empty line or 'quit' to exit)",
              file=sys.stderr)
        for raw in sys.stdin:
            raw = raw.strip()
            if not raw or raw.lower() in ("quit", "exit"):
                break
            question, _, options_raw = raw.partition("|")
            try:
                options = parse_options_arg(options_raw)
                _one(question.strip(), options)
            except GcagentError as exc:
                print(f"error: {exc}", file=sys.stderr)
        return EXIT_OK
    if not args.question or not args.options:
        raise ConfigError("provide --question and --options (or --interactive)")
    _one(args.question, parse_options_arg(args.options))
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    if args.dry_run:
        items = load_manifest(args.manifest)
        if not items:
            raise ManifestError(args.manifest, "no items")
        print(f"dry-run: manifest has {len(items)} items, nothing executed")
        return EXIT_OK
    backends = _build_backends(cfg)
    run_config = _run_config(cfg)
    if args.no_reflect:
        run_config = dataclasses.replace(run_config, reflect=False)
    report = evaluate(args.manifest, run_config, backends, cfg["memory_dir"])
    baseline = None
    if args.compare:
        compare_path = Path(args.compare)
        if not compare_path.exists():
            raise ConfigError(f"baseline report not found: {args.compare}")
        doc = json.loads(compare_path.read_text(encoding="utf-8"))
        baseline = RunReport(
            config=doc.get("config", {}),
            items=[],
            counts=doc.get("counts", {}),
            accuracy=doc.get("accuracy", {"overall": None, "by_split": {}, "by_category": {}}),
            token_stats=doc.get("token_stats", {}),
            memory_versions=doc.get("memory_versions", {}),
        )
    out_path = Path(args.out)
    out_path.write_bytes(report.to_json_bytes())
    print(render_report_table(report, baseline))
    print(f"report written to {out_path}")
    if cfg["strict"] and report.counts["errors"] > 0:
        return EXIT_BACKEND
    return EXIT_OK


def cmd_stats(args, cfg: dict) -> int:
    if args.manifest:
        items = load_manifest(args.manifest)
        store = MemoryStore(args.memory_dir or cfg["memory_dir"])
        backends = _build_backends(cfg)
        params = MemoryParams(**cfg["memory"])
        per_bucket: dict[str, list[tuple[int, int]]] = {}
        seen: set[str] = set()
        for item in sorted(items, key=lambda it: it.question_id):
            if item.video_id in seen:
                continue
            seen.add(item.video_id)
            transcript = _item_transcript(item)
            memory = store.get_or_build(item.video_id, transcript, backends.manager, params)
            per_bucket.setdefault(duration_bucket(item.duration_s), []).append(
                (count_tokens(transcript.full_text()).count, memory_token_count(memory))
            )
        rows = []
        for bucket in ("0-2min", "4-15min", "30-60min", "other"):
            pairs = per_bucket.get(bucket)
            if not pairs:
                continue
            mean_t = sum(p[0] for p in pairs) / len(pairs)
            mean_m = sum(p[1] for p in pairs) / len(pairs)
            stats = compute_token_stats(mean_t, mean_m)
            reduction = "n/a" if stats.reduction_pct is None else f"{stats.reduction_pct:.1f}%"
            rows.append(
                f"{bucket:<9} videos={len(pairs)} transcript={mean_t:.1f} "
                f"memory={mean_m:.1f} reduction={reduction}"
            )
        print("\n".join(rows) if rows else "no videos")
        return EXIT_OK
    transcript, _ = _transcript_from_args(args, cfg)
    if not args.memory:
        raise ConfigError("provide --memory FILE (or --manifest)")
    memory = load_memory(Path(args.memory).read_bytes())
    t_tokens = count_tokens(transcript.full_text()).count
    m_tokens = memory_token_count(memory)
    stats = compute_token_stats(t_tokens, m_tokens)
    print(
        json.dumps(
            {
                "transcript_tokens": stats.transcript_tokens,
                "memory_tokens": stats.memory_tokens,
                "reduction_pct": None
                if stats.reduction_pct is None
                else round(stats.reduction_pct, 1),
            }
        )
    )
    return EXIT_OK


# --- driver -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 64, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_global_flags(parser: argparse.ArgumentParser, trailing: bool) -> None:
    # trailing copies (on subparsers) use SUPPRESS defaults so a flag given
    # before the subcommand is not reset when the subparser runs
    config_default = argparse.SUPPRESS if trailing else []
    flag_default = argparse.SUPPRESS if trailing else False
    parser.add_argument("--config", action="append", metavar="PATH|K=V",
                        default=config_default,
                        help="config file path or inline key=value,... overrides")
    parser.add_argument("--reference", action="store_true", default=flag_default,
                        help="use the deterministic reference backends")
    parser.add_argument("--verbose", action="store_true", default=flag_default,
                        help="log progress to stderr")
    parser.add_argument("--dry-run", action="store_true", dest="dry_run",
                        default=flag_default,
                        help="assemble and print, never call a backend")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcagent", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_global_flags(parser, trailing=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build-memory", help="construct episodic memory from a transcript")
    _add_global_flags(p_build, trailing=True)
    p_build.add_argument("input", help="subtitle (.srt/.vtt) or caption (.jsonl) file")
    p_build.add_argument("--out", help="output memory JSON path")
    p_build.add_argument("--duration", type=float, default=None, help="video duration (s)")
    p_build.set_defaults(func=cmd_build_memory)

    p_ask = sub.add_parser("ask", help="answer one question about a video")
    _add_global_flags(p_ask, trailing=True)
    p_ask.add_argument("--subtitles", help="subtitle file (.srt/.vtt)")
    p_ask.add_argument("--captions", help="caption document (.jsonl)")
    p_ask.add_argument("--duration", type=float, default=None, help="video duration (s)")
    p_ask.add_argument("--memory", help="memory JSON path (read, and updated on reflection)")
    p_ask.add_argument("--build-on-demand", action="store_true", dest="build_on_demand",
                       help="build memory when missing or stale")
    p_ask.add_argument("--question", help="question text")
    p_ask.add_argument("--options", help="'A: text | B: text | ...'")
    p_ask.add_argument("--no-reflect", action="store_true", dest="no_reflect",
                       help="skip the reflection update")
    p_ask.add_argument("--interactive", action="store_true",
                       help="read questions from stdin in a loop")
    p_ask.set_defaults(func=cmd_ask)

    p_eval = sub.add_parser("eval", help="evaluate a benchmark manifest")
    _add_global_flags(p_eval, trailing=True)
    p_eval.add_argument("manifest", help="JSONL manifest path")
    p_eval.add_argument("--out", default="report.json", help="report JSON output path")
    p_eval.add_argument("--compare", help="baseline report JSON for delta columns")
    p_eval.add_argument("--no-reflect", action="store_true", dest="no_reflect")
    p_eval.set_defaults(func=cmd_eval)

    p_stats = sub.add_parser("stats", help="token-compression statistics")
    _add_global_flags(p_stats, trailing=True)
    p_stats.add_argument("--subtitles", help="subtitle file")
    p_stats.add_argument("--captions", help="caption document")
    p_stats.add_argument("--duration", type=float, default=None)
    p_stats.add_argument("--memory", help="memory JSON path")
    p_stats.add_argument("--manifest", help="aggregate over a manifest instead")
    p_stats.add_argument("--memory-dir", dest="memory_dir", help="memory cache directory")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits; surface the code instead
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, args.reference)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"gcagent: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ManifestError, SchemaViolation) as exc:
        print(f"gcagent: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"gcagent: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return EXIT_USAGE
        if isinstance(exc.cause, (BackendError, BackendFailure)):
            return EXIT_BACKEND
        return EXIT_INPUT
    except (BackendError, BackendFailure) as exc:
        print(f"gcagent: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except GcagentError as exc:
        print(f"gcagent: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
