from __future__ import annotations

import json

import pytest

from gcagent.cli import EXIT_BACKEND, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main

from conftest import FIXTURES

# the fixture manifest includes one zero-overlap query on purpose
pytestmark = pytest.mark.filterwarnings(
    "ignore::gcagent.errors.NoRelevantContentWarning"
)

VID01 = str(FIXTURES / "videos" / "vid01.srt")
MANIFEST = str(FIXTURES / "manifest.jsonl")


def run_cli(*argv) -> int:
    return main(list(argv))


class TestBuildMemory:
    def test_reference_build_writes_file(self, tmp_path, capsys):
        out = tmp_path / "m.json"
        code = run_cli("--reference", "build-memory", VID01, "--out", str(out))
        assert code == EXIT_OK
        assert out.exists()
        assert "episodes" in capsys.readouterr().out

    def test_same_input_twice_identical_files(self, tmp_path):
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli("--reference", "build-memory", VID01, "--out", str(out1)) == EXIT_OK
        assert run_cli("--reference", "build-memory", VID01, "--out", str(out2)) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_malformed_input_exits_1_with_cue_ordinal(self, tmp_path, capsys):
        bad = tmp_path / "bad.srt"
        bad.write_bytes(b"1\n00:00:05,000 --> 00:00:01,000\nbackwards\n")
        code = run_cli("--reference", "build-memory", str(bad))
        assert code == EXIT_INPUT
        assert "cue 1" in capsys.readouterr().err

    def test_dry_run_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "m.json"
        code = run_cli("--reference", "--dry-run", "build-memory", VID01, "--out", str(out))
        assert code == EXIT_OK
        assert not out.exists()


class TestAsk:
    def _ask_args(self, tmp_path, *extra):
        return (
            "--reference",
            "ask",
            "--subtitles", VID01,
            "--duration", "20",
            "--memory", str(tmp_path / "vid01.memory.json"),
            "--build-on-demand",
            "--question", "why do they throw food in a big bowl",
            "--options", "A: Wash the dishes | B: Prepare to mix and taste | C: Feed the dog",
            *extra,
        )

    def test_golden_stdout(self, tmp_path, capsys):
        code = run_cli(*self._ask_args(tmp_path))
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "Answer: B" in out
        assert "Evidence: they throw food into a big bowl to mix" in out
        assert "Spans: 8.00-17.00" in out
        assert "Memory version: 2" in out

    def test_repeat_is_deterministic(self, tmp_path, capsys):
        run_cli(*self._ask_args(tmp_path, "--no-reflect"))
        first = capsys.readouterr().out
        run_cli(*self._ask_args(tmp_path, "--no-reflect"))
        second = capsys.readouterr().out
        assert first == second

    def test_no_reflect_skips_memory_update(self, tmp_path, capsys):
        run_cli(*self._ask_args(tmp_path, "--no-reflect"))
        out = capsys.readouterr().out
        assert "Memory version" not in out
        saved = json.loads((tmp_path / "vid01.memory.json").read_text())
        assert saved["version"] == 1

    def test_unknown_option_label_is_usage_error(self, tmp_path, capsys):
        code = run_cli(
            "--reference", "ask",
            "--subtitles", VID01,
            "--build-on-demand",
            "--question", "q",
            "--options", "A: first | Z: weird",
        )
        assert code == EXIT_USAGE

    def test_dry_run_makes_no_network_calls(self, tmp_path, capsys):
        # endpoints point at a closed port; --dry-run must still succeed
        config = tmp_path / "cfg.json"
        config.write_text(
            json.dumps(
                {
                    "reference": False,
                    "manager": {"endpoint": "http://127.0.0.1:9/v1", "model": "m",
                                "max_retries": 0},
                    "reasoner": {"endpoint": "http://127.0.0.1:9/v1", "model": "r",
                                 "max_retries": 0},
                }
            )
        )
        code = run_cli(
            "--config", str(config), "--dry-run",
            "ask",
            "--subtitles", VID01,
            "--duration", "20",
            "--build-on-demand",
            "--question", "why do they throw food in a big bowl",
            "--options", "A: Wash | B: Mix",
        )
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "<question>" in out

    def test_unreachable_endpoint_without_dry_run_is_backend_error(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(
            json.dumps(
                {
                    "reference": False,
                    "manager": {"endpoint": "http://127.0.0.1:9/v1", "model": "m",
                                "max_retries": 0},
                    "reasoner": {"endpoint": "http://127.0.0.1:9/v1", "model": "r",
                                 "max_retries": 0},
                }
            )
        )
        code = run_cli(
            "--config", str(config),
            "ask",
            "--subtitles", VID01,
            "--duration", "20",
            "--build-on-demand",
            "--question", "q",
            "--options", "A: x | B: y",
        )
        err = capsys.readouterr().err
        assert code == EXIT_BACKEND
        assert "stage 'memory'" in err

    def test_evidence_override_drops_frames(self, tmp_path, capsys):
        code = run_cli(
            "--config", "vision=none,text=full_transcript,memory=none",
            "--reference", "--dry-run",
            "ask",
            "--subtitles", VID01,
            "--duration", "20",
            "--build-on-demand",
            "--question", "why do they throw food in a big bowl",
            "--options", "A: Wash | B: Mix",
        )
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "<frames>" not in out
        assert "<transcript>" in out

    def test_interactive_loop_persists_memory(self, tmp_path, capsys, monkeypatch):
        import io

        monkeypatch.setattr(
            "sys.stdin",
            io.StringIO(
                "why do they throw food in a big bowl | A: Wash | B: Prepare to mix and taste\n"
                "who greets Bob warmly | A: Alice | B: nobody\n"
                "quit\n"
            ),
        )
        code = run_cli(
            "--reference", "ask",
            "--subtitles", VID01,
            "--duration", "20",
            "--memory", str(tmp_path / "m.json"),
            "--build-on-demand",
            "--interactive",
        )
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "Memory version: 2" in out
        assert "Memory version: 3" in out


class TestEval:
    def test_golden_report(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = run_cli(
            "--config", f"memory_dir={tmp_path / 'mem'}",
            "--reference", "eval", MANIFEST, "--out", str(out),
        )
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["counts"]["total"] == 13
        assert report["accuracy"]["overall"] == 92.3
        table = capsys.readouterr().out
        assert "by category:" in table

    def test_compare_prints_delta(self, tmp_path, capsys):
        base = tmp_path / "base.json"
        run_cli("--config", f"memory_dir={tmp_path / 'm1'}",
                "--reference", "eval", MANIFEST, "--out", str(base))
        capsys.readouterr()
        out = tmp_path / "next.json"
        code = run_cli(
            "--config", f"memory_dir={tmp_path / 'm2'}",
            "--reference", "eval", MANIFEST, "--out", str(out),
            "--compare", str(base),
        )
        assert code == EXIT_OK
        assert "(+0.0)" in capsys.readouterr().out

    def test_empty_manifest_exits_1(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("\n")
        code = run_cli("--reference", "eval", str(empty))
        assert code == EXIT_INPUT
        assert "no items" in capsys.readouterr().err

    def test_strict_mode_exits_nonzero_on_item_errors(self, tmp_path, capsys):
        # one healthy item, one whose subtitle file exists but is malformed
        bad = tmp_path / "bad.srt"
        bad.write_bytes(b"1\n00:00:09,000 --> 00:00:01,000\nbackwards\n")
        rows = [
            {
                "question_id": "q1",
                "video_id": "vid01",
                "duration_s": 20.0,
                "split": "short",
                "category": "c",
                "query": {"text": "who greets Bob warmly", "options": [
                    {"label": "A", "text": "Alice"}, {"label": "B", "text": "nobody"}]},
                "gold": "A",
                "subtitle_path": VID01,
            },
            {
                "question_id": "q2",
                "video_id": "v-bad",
                "duration_s": 20.0,
                "split": "short",
                "category": "c",
                "query": {"text": "q", "options": [
                    {"label": "A", "text": "x"}, {"label": "B", "text": "y"}]},
                "gold": "A",
                "subtitle_path": str(bad),
            },
        ]
        manifest = tmp_path / "m.jsonl"
        manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        out = tmp_path / "r.json"

        code = run_cli("--config", f"memory_dir={tmp_path / 'm1'}",
                       "--reference", "eval", str(manifest), "--out", str(out))
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["counts"]["errors"] == 1
        assert report["accuracy"]["overall"] == 50.0  # error counts as incorrect
        capsys.readouterr()

        code = run_cli("--config", f"memory_dir={tmp_path / 'm2'},strict=true",
                       "--reference", "eval", str(manifest), "--out", str(out))
        assert code == EXIT_BACKEND
        report = json.loads(out.read_text())
        assert report["accuracy"]["overall"] == 100.0  # errored item excluded
        assert report["counts"]["attempted"] == 1

    def test_missing_subtitle_is_manifest_error_naming_item(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(
            json.dumps(
                {
                    "question_id": "q1",
                    "video_id": "v1",
                    "duration_s": 10.0,
                    "split": "short",
                    "category": "c",
                    "query": {"text": "q", "options": [
                        {"label": "A", "text": "x"}, {"label": "B", "text": "y"}]},
                    "gold": "A",
                    "subtitle_path": "missing.srt",
                }
            )
            + "\n"
        )
        code = run_cli(
            "--config", f"memory_dir={tmp_path / 'mem'}",
            "--reference", "eval", str(manifest), "--out", str(tmp_path / "r.json"),
        )
        assert code == EXIT_INPUT
        assert "q1" in capsys.readouterr().err


class TestStats:
    def test_single_pair(self, tmp_path, capsys):
        memory_path = tmp_path / "m.json"
        run_cli("--reference", "build-memory", VID01, "--out", str(memory_path))
        capsys.readouterr()
        code = run_cli(
            "--reference", "stats",
            "--subtitles", VID01, "--duration", "20", "--memory", str(memory_path),
        )
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"transcript_tokens", "memory_tokens", "reduction_pct"}

    def test_manifest_buckets(self, tmp_path, capsys):
        code = run_cli(
            "--reference", "stats",
            "--manifest", MANIFEST, "--memory-dir", str(tmp_path / "mem"),
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "30-60min" in out


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert run_cli("frobnicate") == EXIT_USAGE

    def test_reference_plus_endpoint_conflict(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "reference": True,
            "manager": {"endpoint": "http://example.invalid/v1", "model": "m"},
        }))
        code = run_cli("--config", str(config), "eval", MANIFEST)
        assert code == EXIT_USAGE
        assert "reference mode forbids" in capsys.readouterr().err

    def test_unknown_config_key(self, capsys):
        code = run_cli("--config", "bogus_key=1", "eval", MANIFEST)
        assert code == EXIT_USAGE

    def test_ask_without_question_is_usage_error(self):
        code = run_cli("--reference", "ask", "--subtitles", VID01, "--build-on-demand")
        assert code == EXIT_USAGE
