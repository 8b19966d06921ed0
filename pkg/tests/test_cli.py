import json

import pytest

from quantspike import cli
from quantspike.data import load_dataset
from quantspike.experiment import ResultRow, ResultTable


def run_cli(*argv):
    return cli.main(list(argv))


class TestMakeData:
    def test_writes_loadable_idx_files(self, tmp_path):
        out = tmp_path / "data"
        code = run_cli("make-data", "--out", str(out),
                       "--n-train", "64", "--n-test", "32")
        assert code == 0
        ds = load_dataset("idx-images", str(out))
        assert ds.train_x.shape == (64, 1, 28, 28)
        assert ds.test_x.shape == (32, 1, 28, 28)


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = run_cli(
        "train", "--dataset", "toy2d", "--arch", "mlp2",
        "--epochs", "3", "--batch-size", "32", "--seed", "0",
        "--out-dir", str(out),
    )
    assert code == 0
    return out


class TestTrainConvertSimulate:
    def test_train_artifacts(self, trained_dir):
        assert (trained_dir / "ann.npz").exists()
        assert (trained_dir / "history.json").exists()
        cfg = json.loads((trained_dir / "config.json").read_text())
        assert cfg["epochs"] == 3
        assert cfg["command"] == "train"
        assert "func" not in cfg

    def test_convert_writes_snn(self, trained_dir, tmp_path, capsys):
        snn_path = tmp_path / "snn.npz"
        code = run_cli(
            "convert", "--checkpoint", str(trained_dir / "ann.npz"),
            "--out", str(snn_path),
            "--probe-dataset", "toy2d",
        )
        assert code == 0
        assert snn_path.exists()
        assert "top-1 agreement" in capsys.readouterr().out

    def test_simulate_writes_per_step_csv(self, trained_dir, tmp_path, capsys):
        snn_path = tmp_path / "snn.npz"
        run_cli("convert", "--checkpoint", str(trained_dir / "ann.npz"),
                "--out", str(snn_path))
        out = tmp_path / "sim"
        code = run_cli(
            "simulate", "--snn", str(snn_path), "--dataset", "toy2d",
            "--T", "4", "--out-dir", str(out),
        )
        assert code == 0
        lines = (out / "run.csv").read_text().splitlines()
        assert lines[0].startswith("t,accuracy,total_spikes")
        assert len(lines) == 5  # header + one row per step
        assert "accuracy at T=4" in capsys.readouterr().out


class TestExperimentVerb:
    def test_experiment_from_flags(self, tmp_path, capsys):
        out = tmp_path / "grid"
        code = run_cli(
            "experiment", "--dataset", "toy2d", "--arch", "mlp2",
            "--seeds", "0", "--t-list", "1", "2", "--epochs", "2",
            "--batch-size", "32", "--out-dir", str(out),
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert stdout.splitlines()[0] == "variant,seed,ann,T=1,T=2"
        assert (out / "results.csv").exists()
        assert (out / "results.md").exists()

    def test_experiment_from_config_file(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "dataset": "toy2d", "arch": "mlp2", "seeds": [0],
            "t_list": [1], "epochs": 1, "batch_size": 32,
            "noise_enabled": True,
            "out_dir": str(tmp_path / "grid"),
        }))
        assert run_cli("experiment", "--config", str(cfg_path)) == 0
        table = (tmp_path / "grid" / "results.csv").read_text()
        assert table.splitlines()[0] == "variant,seed,ann,T=1"
        assert "baseline" not in table  # single-variant config

    def test_failed_cells_set_exit_code(self, monkeypatch, tmp_path):
        table = ResultTable(
            rows=[ResultRow(variant="noisy", seed=0, ann=0.9, by_t={1: 0.9})],
            t_list=[1], failed_cells=["baseline_seed0"],
        )
        monkeypatch.setattr(cli, "run_experiment", lambda cfg: table)
        code = run_cli("experiment", "--dataset", "toy2d",
                       "--seeds", "0", "--t-list", "1",
                       "--out-dir", str(tmp_path / "grid"))
        assert code == 1


class TestCurveAndVerify:
    def test_curve_csv(self, tmp_path):
        out = tmp_path / "curve.csv"
        code = run_cli("curve", "--th", "1.0", "--T", "8",
                       "--n-points", "50", "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "X,Y"
        assert len(lines) == 51

    def test_verify_fast_suite_passes(self, capsys):
        assert run_cli("verify") == 0
        out = capsys.readouterr().out
        assert "5/5 checks passed" in out
        assert out.count("[PASS]") == 5


class TestErrorHandling:
    def test_unknown_dataset_exits_cleanly(self, tmp_path):
        code = run_cli("train", "--dataset", "imagenet",
                       "--out-dir", str(tmp_path / "out"))
        assert code == 2

    def test_missing_checkpoint_exits_cleanly(self, tmp_path):
        code = run_cli("convert", "--checkpoint", str(tmp_path / "nope.npz"),
                       "--out", str(tmp_path / "o.npz"))
        assert code == 2

    def test_bad_t_rejected(self, tmp_path):
        code = run_cli("simulate", "--snn", str(tmp_path / "x.npz"),
                       "--dataset", "toy2d", "--T", "0",
                       "--out-dir", str(tmp_path / "out"))
        assert code == 2
        assert not (tmp_path / "out").exists()  # validation precedes any writes
