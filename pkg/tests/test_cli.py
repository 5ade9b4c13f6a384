"""CLI behavior: flows, determinism, exit codes."""

import json

import pytest
from click.testing import CliRunner

from vragent.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_JOURNAL,
    EXIT_OK,
    main,
)


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, list(args), catch_exceptions=False)


class TestRunCommand:
    def test_run_prints_answer_and_writes_journal(self, runner, demo_config_path, tmp_path):
        journal = tmp_path / "j.jsonl"
        result = invoke(runner, "run", "--config", str(demo_config_path),
                        "--image", "img-001", "--question", "Is there a pleural effusion?",
                        "--journal-out", str(journal))
        assert result.exit_code == EXIT_OK
        assert "effusion" in result.output
        assert "path: nodes" in result.output
        assert journal.is_file()

    def test_identical_runs_identical_journals(self, runner, demo_config_path, tmp_path):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for p in paths:
            result = invoke(runner, "run", "--config", str(demo_config_path),
                            "--image", "img-001", "--question", "Is there a pleural effusion?",
                            "--journal-out", str(p))
            assert result.exit_code == EXIT_OK
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_entities_flag_reaches_detector(self, runner, demo_config_path, tmp_path):
        journal = tmp_path / "j.jsonl"
        result = invoke(runner, "run", "--config", str(demo_config_path),
                        "--image", "img-001", "--question", "effusion?",
                        "--entities", "lung,heart", "--journal-out", str(journal))
        assert result.exit_code == EXIT_OK
        assert '"entities":["lung","heart"]' in journal.read_text()

    def test_missing_config_exit_code(self, runner, tmp_path):
        result = invoke(runner, "run", "--config", str(tmp_path / "none.json"),
                        "--image", "i", "--question", "q")
        assert result.exit_code == EXIT_CONFIG

    def test_trajectory_export(self, runner, demo_config_path, tmp_path):
        out = tmp_path / "t.jsonl"
        result = invoke(runner, "run", "--config", str(demo_config_path),
                        "--image", "img-001", "--question", "effusion?",
                        "--journal-out", str(tmp_path / "j.jsonl"),
                        "--trajectory-out", str(out))
        assert result.exit_code == EXIT_OK
        assert out.read_text().splitlines()[0] == "vragent-traj/1"


class TestReplayCommand:
    def _journal(self, runner, demo_config_path, tmp_path):
        journal = tmp_path / "j.jsonl"
        invoke(runner, "run", "--config", str(demo_config_path),
               "--image", "img-001", "--question", "Is there a pleural effusion?",
               "--journal-out", str(journal))
        return journal

    def test_replay_verify_ok(self, runner, demo_config_path, tmp_path):
        journal = self._journal(runner, demo_config_path, tmp_path)
        result = invoke(runner, "replay", "--config", str(demo_config_path),
                        "--journal", str(journal), "--verify")
        assert result.exit_code == EXIT_OK
        assert "verify: identical" in result.output

    def test_replay_prints_same_path(self, runner, demo_config_path, tmp_path):
        journal = self._journal(runner, demo_config_path, tmp_path)
        run_result = invoke(runner, "run", "--config", str(demo_config_path),
                            "--image", "img-001", "--question", "Is there a pleural effusion?",
                            "--journal-out", str(tmp_path / "j2.jsonl"))
        replay_result = invoke(runner, "replay", "--config", str(demo_config_path),
                               "--journal", str(journal))
        assert replay_result.exit_code == EXIT_OK
        run_path_line = [l for l in run_result.output.splitlines() if l.startswith("path:")][0]
        assert run_path_line.split("rewards")[0] in replay_result.output

    def test_truncated_journal_exit_code(self, runner, demo_config_path, tmp_path):
        journal = self._journal(runner, demo_config_path, tmp_path)
        lines = journal.read_text().splitlines()
        journal.write_text("\n".join(lines[:3]) + "\n")
        result = invoke(runner, "replay", "--config", str(demo_config_path),
                        "--journal", str(journal))
        assert result.exit_code == EXIT_JOURNAL

    def test_missing_journal_exit_code(self, runner, demo_config_path, tmp_path):
        result = invoke(runner, "replay", "--config", str(demo_config_path),
                        "--journal", str(tmp_path / "none.jsonl"))
        assert result.exit_code == EXIT_IO


class TestBatchCommand:
    def test_batch_outputs_and_summary(self, runner, demo_config_path, demo_dir, tmp_path):
        out = tmp_path / "results.jsonl"
        result = invoke(runner, "batch", "--config", str(demo_config_path),
                        "--dataset", str(demo_dir / "dataset.jsonl"),
                        "--out", str(out))
        assert result.exit_code == EXIT_OK
        assert "2 records, 0 failed" in result.output
        assert "bleu_avg" in result.output
        written = [json.loads(l) for l in out.read_text().splitlines()]
        assert [w["id"] for w in written] == ["d1", "d2"]

    def test_malformed_dataset_line_exit(self, runner, demo_config_path, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "1", "image": "i", "question": "q"}\nnot json\n')
        result = invoke(runner, "batch", "--config", str(demo_config_path),
                        "--dataset", str(bad), "--out", str(tmp_path / "o.jsonl"))
        assert result.exit_code == EXIT_IO


class TestVteApplyCommand:
    def test_apply_and_write(self, runner, demo_config_path, demo_dir, tmp_path):
        out = tmp_path / "boosted.json"
        result = invoke(runner, "vte-apply", "--config", str(demo_config_path),
                        "--tokens", str(demo_dir / "tokens.json"),
                        "--confidence", "0.9", "--out", str(out))
        assert result.exit_code == EXIT_OK
        assert "gain 0.675000" in result.output
        boosted = json.loads(out.read_text())
        assert boosted["embeddings"][0] == [1.675, 1.675]  # (1 + 0.675) * [1, 1]

    def test_missing_fixture(self, runner, demo_config_path, tmp_path):
        result = invoke(runner, "vte-apply", "--config", str(demo_config_path),
                        "--tokens", str(tmp_path / "none.json"), "--confidence", "0.5")
        assert result.exit_code == EXIT_IO


class TestMetricsCommand:
    def test_table_and_summary_file(self, runner, demo_config_path, tmp_path):
        records = tmp_path / "records.jsonl"
        records.write_text(
            '{"id": "1", "prediction": "yes", "reference": "yes", "question_kind": "closed"}\n')
        out = tmp_path / "summary.json"
        result = invoke(runner, "metrics", "--config", str(demo_config_path),
                        "--records", str(records), "--out", str(out))
        assert result.exit_code == EXIT_OK
        assert "closed_precision  1.0000" in result.output
        assert json.loads(out.read_text())["closed_precision"] == 1.0
