"""End-to-end CLI walkthrough on a tiny synthetic dataset."""

import json

import pytest

from polarcast.cli import main

WINDOW = dict(pre="12", post="20")  # 32-sample windows, inside the synth guarantee


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cliws")
    arch = ws / "arch.json"
    arch.write_text(json.dumps({
        "conv_channels": [2, 2, 2, 2, 2],
        "dense_widths": [4, 1],
        "pool_every_block": False,
        "kernel_size": 3,
    }))
    main([
        "synth", "--out", str(ws / "data"), "--n-defined", "60",
        "--n-undecidable", "12", "--n-mislabeled", "5", "--window-len", "32",
        "--seed", "4",
    ])
    return ws


def run_ok(capsys, argv):
    main(argv)
    return capsys.readouterr().out


class TestSynthIngestSplit:
    def test_synth_wrote_canonical_layout(self, workspace):
        assert (workspace / "data" / "metadata.csv").is_file()
        assert (workspace / "data" / "manifest.json").is_file()
        assert len(list((workspace / "data" / "waveforms").glob("*.f32"))) == 72

    def test_ingest_reports(self, workspace, capsys):
        out = run_ok(capsys, [
            "ingest", "--container", str(workspace / "data" / "waveforms"),
            "--metadata", str(workspace / "data" / "metadata.csv"),
        ])
        report = json.loads(out)
        assert report["n_loaded"] == 72 and report["n_skipped"] == 0

    def test_split_counts(self, workspace, capsys):
        out = run_ok(capsys, [
            "split", "--data", str(workspace / "data"), "--seed", "1",
            "--out", str(workspace / "splits.json"),
        ])
        counts = json.loads(out)
        assert counts == {"train": 54, "val": 3, "test": 3}
        ids = json.loads((workspace / "splits.json").read_text())
        assert len(ids["train"]) == 54


class TestTrainAndGrid:
    def test_train_single_setting(self, workspace, capsys):
        out = run_ok(capsys, [
            "train", "--setting", "sgdxnodropxcomplete", "--seed", "3",
            "--data", str(workspace / "data"), "--out", str(workspace / "run1"),
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
            "--batch-size", "16", "--max-epochs", "2",
            "--arch", str(workspace / "arch.json"),
        ])
        result = json.loads(out)
        assert result["best_epoch"] >= 1
        assert (workspace / "run1" / "checkpoint" / "manifest.json").is_file()
        assert (workspace / "run1" / "train_record.json").is_file()

    def test_train_grid_registry(self, workspace, capsys):
        out = run_ok(capsys, [
            "train-grid", "--data", str(workspace / "data"),
            "--out", str(workspace / "grid"),
            "--models-per-setting", "1", "--base-seed", "0",
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
            "--batch-size", "16", "--max-epochs", "2",
            "--arch", str(workspace / "arch.json"),
        ])
        report = json.loads(out)
        assert len(report) == 8
        registry = json.loads((workspace / "grid" / "registry.json").read_text())
        assert len(registry["settings"]) == 8

    def test_ensemble_hist_and_compare_and_audit(self, workspace, capsys):
        out = run_ok(capsys, [
            "ensemble", "hist", "--registry", str(workspace / "grid"),
            "--dataset", str(workspace / "data"), "--data", "undecidable",
            "--models", "all", "--out", str(workspace / "artifacts"),
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
        ])
        info = json.loads(out)
        assert info["n_windows"] == 12
        art = workspace / "artifacts"
        assert (art / "all.hist.json").is_file()
        assert (art / "all.preds.json").is_file()
        assert (art / "all.svg").read_text().startswith("<svg")
        assert (art / "all.csv").read_text().splitlines()[0] == "bin_lo,bin_hi,count"

        out = run_ok(capsys, [
            "ensemble", "hist", "--registry", str(workspace / "grid"),
            "--dataset", str(workspace / "data"), "--data", "undecidable",
            "--models", "sgdxnodropxcomplete", "--out", str(workspace / "artifacts"),
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
        ])
        assert (art / "sgdxnodropxcomplete.hist.json").is_file()

        out = run_ok(capsys, [
            "ensemble", "hist", "--registry", str(workspace / "grid"),
            "--dataset", str(workspace / "data"), "--data", "test",
            "--models", "all", "--out", str(workspace / "artifacts"),
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
        ])
        info = json.loads(out)
        assert info["n_windows"] == 3  # the deterministic test split
        assert (art / "all-test.hist.json").is_file()

        out = run_ok(capsys, [
            "ensemble", "compare", "--a", str(art / "all.hist.json"),
            "--b", str(art / "sgdxnodropxcomplete.hist.json"),
        ])
        cmp = json.loads(out)
        assert cmp["lower_extremal"] in ("a", "b", "tie")

        out = run_ok(capsys, [
            "audit", "--predictions", str(art / "all.preds.json"),
            "--bin", "right", "-k", "3",
        ])
        audit = json.loads(out)
        assert audit["bin"] == "right" and len(audit["ids"]) <= 3


class TestSom:
    def test_som_checkpoint(self, workspace, capsys):
        out = run_ok(capsys, [
            "som", "--data", str(workspace / "data"), "--out", str(workspace / "som"),
            "--rows", "2", "--cols", "2", "--epochs", "2",
            "--pre", WINDOW["pre"], "--post", WINDOW["post"],
        ])
        info = json.loads(out)
        assert info["nodes"] == 4
        assert (workspace / "som" / "prototypes.bin").is_file()


class TestConfigPrecedence:
    def test_flags_beat_file_beat_defaults(self, workspace, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "split": {"data": str(workspace / "data"), "seed": 9},
        }))
        # file supplies data + seed; flag overrides the seed
        out1 = run_ok(capsys, ["--config", str(cfg), "split"])
        out2 = run_ok(capsys, ["--config", str(cfg), "split", "--seed", "9"])
        assert json.loads(out1) == json.loads(out2)

    def test_missing_required_raises(self):
        with pytest.raises(SystemExit):
            main(["split"])
