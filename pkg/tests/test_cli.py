"""Command-line interface: exit codes, files written, reproducibility."""

from pathlib import Path

import pytest

from boxkg.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def run(*args):
    return main([str(a) for a in args])


def dir_bytes(path: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


@pytest.fixture()
def synth_dir(tmp_path):
    out = tmp_path / "data"
    code = run(
        "synth", "--out", out, "--entities", 24, "--classes", 3, "--relations", 2,
        "--feature-dim", 4, "--seed", 5, "--edge-prob", 0.5,
    )
    assert code == EXIT_OK
    return out


class TestSynth:
    def test_writes_dataset_and_config(self, synth_dir):
        names = {p.name for p in synth_dir.iterdir()}
        assert {"edges.tsv", "labels_train.tsv", "features.tsv", "run.cfg"} <= names

    def test_idempotent_given_same_seed(self, synth_dir, tmp_path):
        again = tmp_path / "again"
        run(
            "synth", "--out", again, "--entities", 24, "--classes", 3, "--relations", 2,
            "--feature-dim", 4, "--seed", 5, "--edge-prob", 0.5,
        )
        a, b = dir_bytes(synth_dir), dir_bytes(again)
        assert a.keys() == b.keys()
        for name in a:
            if name != "run.cfg":  # run.cfg differs in the --out path
                assert a[name] == b[name], name

    def test_rerun_from_config_file(self, synth_dir, tmp_path):
        rerun = tmp_path / "rerun"
        code = run("synth", "--config", synth_dir / "run.cfg", "--out", rerun)
        assert code == EXIT_OK
        a, b = dir_bytes(synth_dir), dir_bytes(rerun)
        for name in a:
            if name != "run.cfg":
                assert a[name] == b[name], name

    def test_validate_reports_clean(self, synth_dir, capsys):
        assert run("validate", "--data", synth_dir) == EXIT_OK
        out = capsys.readouterr().out
        assert "violations: 0" in out


class TestDropEdges:
    def test_deterministic_outputs(self, synth_dir, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            code = run(
                "drop-edges", "--data", synth_dir, "--out", out,
                "--fraction", 0.2, "--seed", 7,
            )
            assert code == EXIT_OK
        a, b = dir_bytes(out_a), dir_bytes(out_b)
        for name in a:
            if name != "run.cfg":
                assert a[name] == b[name], name
        assert (out_a / "dropped_edges.tsv").exists()
        assert "requested" in (out_a / "drop_report.txt").read_text()

    def test_missing_data_dir_is_data_error(self, tmp_path):
        code = run(
            "drop-edges", "--data", tmp_path / "nope", "--out", tmp_path / "o",
            "--fraction", 0.1,
        )
        assert code == EXIT_DATA


class TestTrainEvaluate:
    @pytest.fixture()
    def trained(self, synth_dir, tmp_path):
        out = tmp_path / "run"
        code = run(
            "train", "--data", synth_dir, "--out", out, "--mode", "boxe",
            "--classes", "on", "--loss", "ns", "--margin", 2, "--dim", 8,
            "--batch-size", 64, "--epochs", 3, "--seed", 1, "--negatives", 4,
            "--eval-every", 2,
        )
        assert code == EXIT_OK
        return out

    def test_train_writes_artifacts(self, trained):
        assert (trained / "model.json").exists()
        assert (trained / "train_log.tsv").exists()
        assert "epochs = 3" in (trained / "run.cfg").read_text()

    def test_classify_evaluation(self, trained, synth_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run(
            "evaluate", "--checkpoint", trained / "model.json", "--data", synth_dir,
            "--task", "classify", "--split", "valid", "--out", out,
        )
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        assert "accuracy:" in stdout
        assert (out / "predictions.tsv").exists()
        assert (out / "metrics.txt").exists()

    def test_rank_evaluation_requires_edge_files(self, trained, synth_dir):
        code = run(
            "evaluate", "--checkpoint", trained / "model.json", "--data", synth_dir,
            "--task", "rank",
        )
        assert code == EXIT_USAGE

    def test_rank_evaluation(self, trained, synth_dir, tmp_path, capsys):
        dropped_dir = tmp_path / "sub"
        run("drop-edges", "--data", synth_dir, "--out", dropped_dir, "--fraction", 0.2, "--seed", 3)
        capsys.readouterr()
        code = run(
            "evaluate", "--checkpoint", trained / "model.json", "--data", dropped_dir,
            "--task", "rank",
            "--eval-edges", dropped_dir / "dropped_edges.tsv",
            "--filter-edges", synth_dir / "edges.tsv",
            "--out", tmp_path / "rankeval",
        )
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        assert "mrr:" in stdout
        table = (tmp_path / "rankeval" / "metrics_table.tsv").read_text()
        assert table.splitlines()[0] == "label\tMR\tMRR\tH@10"

    def test_feature_mode_without_features_is_usage_error(self, synth_dir, tmp_path):
        code = run(
            "train", "--data", synth_dir, "--out", tmp_path / "x", "--mode", "boxe",
            "--features", "on", "--epochs", 1,
        )
        assert code == EXIT_USAGE

    def test_mlp_mode_trains_with_features(self, synth_dir, tmp_path):
        out = tmp_path / "mlprun"
        code = run(
            "train", "--data", synth_dir, "--out", out, "--mode", "mlp-boxe",
            "--loss", "ce", "--dim", 6, "--hidden", "8", "--batch-size", 64,
            "--epochs", 2, "--negatives", 4, "--seed", 2,
        )
        assert code == EXIT_OK
        assert (out / "model.json").exists()

    def test_threads_other_than_one_rejected(self, synth_dir, tmp_path):
        code = run(
            "train", "--data", synth_dir, "--out", tmp_path / "x", "--epochs", 1,
            "--threads", 4,
        )
        assert code == EXIT_USAGE


class TestOracle:
    def test_small_instance_separates(self, capsys):
        code = run(
            "oracle", "--entities", 3, "--relations", 2, "--classes", 2, "--seed", 1
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "SEPARATED margin=" in out
        margin = float(out.split("SEPARATED margin=")[1].strip())
        assert margin > 0


class TestBaselineCommand:
    def test_lp_and_mlp(self, synth_dir, capsys):
        assert run("baseline", "--data", synth_dir, "--model", "lp") == EXIT_OK
        assert "accuracy:" in capsys.readouterr().out
        assert run(
            "baseline", "--data", synth_dir, "--model", "mlp",
            "--hidden", "8", "--epochs", 20,
        ) == EXIT_OK
        assert "accuracy:" in capsys.readouterr().out


class TestUsageErrors:
    def test_unknown_command(self):
        assert run("frobnicate") == EXIT_USAGE

    def test_missing_required_flag(self, tmp_path):
        assert run("train", "--out", tmp_path / "x", "--epochs", 1) == EXIT_USAGE
