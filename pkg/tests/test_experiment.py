import json
from pathlib import Path

import numpy as np
import pytest

from quantspike import experiment as xp
from quantspike.errors import ConfigurationError, NumericError
from quantspike.experiment import (
    ExperimentConfig,
    ResultRow,
    ResultTable,
    emit_table,
    run_experiment,
)


def toy_config(out_dir, **overrides):
    base = dict(
        dataset="toy2d",
        arch="mlp2",
        p=2,
        seeds=[0],
        t_list=[1, 2],
        out_dir=str(out_dir),
        epochs=2,
        batch_size=32,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(seeds=[])

    def test_unsorted_t_list_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(t_list=[4, 2, 1])

    def test_duplicate_t_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(t_list=[1, 2, 2])

    def test_bad_correction_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(correction="always")

    def test_variant_selection(self):
        assert ExperimentConfig(noise_enabled=None).variants() == [
            ("noisy", True), ("baseline", False)]
        assert ExperimentConfig(noise_enabled=True).variants() == [("noisy", True)]
        assert ExperimentConfig(noise_enabled=False).variants() == [("baseline", False)]

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"dataset": "toy2d", "seeds": [3, 4], "epochs": 1}))
        cfg = ExperimentConfig.from_json(path)
        assert cfg.seeds == [3, 4]
        assert cfg.epochs == 1
        assert cfg.arch == "mlp2"  # default preserved

    def test_json_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"dataset": "toy2d", "learning_rate": 0.1}))
        with pytest.raises(ConfigurationError, match="learning_rate"):
            ExperimentConfig.from_json(path)


class TestRunExperiment:
    def test_grid_produces_row_per_variant(self, tmp_path):
        cfg = toy_config(tmp_path / "run")
        table = run_experiment(cfg)
        assert sorted(r.variant for r in table.rows) == ["baseline", "noisy"]
        assert table.failed_cells == []
        for r in table.rows:
            assert 0.0 <= r.ann <= 1.0
            assert set(r.by_t) == {1, 2}

    def test_cell_artifacts_on_disk(self, tmp_path):
        out = tmp_path / "run"
        run_experiment(toy_config(out))
        assert (out / "config.json").exists()
        for cell in ("noisy_seed0", "baseline_seed0"):
            assert (out / cell / "ann.npz").exists()
            assert (out / cell / "snn.npz").exists()
            assert (out / cell / "sim_none.csv").exists()
            result = json.loads((out / cell / "result.json").read_text())
            assert result["status"] == "ok"

    def test_resume_skips_completed_cells(self, tmp_path):
        out = tmp_path / "run"
        cfg = toy_config(out)
        first = run_experiment(cfg)
        stamps = {
            cell: (out / cell / "result.json").stat().st_mtime_ns
            for cell in ("noisy_seed0", "baseline_seed0")
        }
        second = run_experiment(toy_config(out))
        for cell, stamp in stamps.items():
            assert (out / cell / "result.json").stat().st_mtime_ns == stamp
        for a, b in zip(first.rows, second.rows):
            assert a == b

    def test_failed_cell_recorded_and_grid_continues(self, tmp_path, monkeypatch):
        real = xp.run_cell

        def flaky(cfg, dataset, variant, noise, seed, cell_dir):
            if seed == 1:
                raise NumericError("training diverged (non-finite loss)")
            return real(cfg, dataset, variant, noise, seed, cell_dir)

        monkeypatch.setattr(xp, "run_cell", flaky)
        out = tmp_path / "run"
        table = run_experiment(toy_config(out, seeds=[0, 1]))
        assert sorted(table.failed_cells) == ["baseline_seed1", "noisy_seed1"]
        assert {(r.variant, r.seed) for r in table.rows} == {
            ("noisy", 0), ("baseline", 0)}
        failed = json.loads((out / "noisy_seed1" / "result.json").read_text())
        assert failed["status"] == "failed"
        assert "NumericError" in failed["error"]

    def test_failed_cell_retried_on_resume(self, tmp_path, monkeypatch):
        real = xp.run_cell
        monkeypatch.setattr(
            xp, "run_cell",
            lambda *a, **k: (_ for _ in ()).throw(NumericError("boom")))
        out = tmp_path / "run"
        assert run_experiment(toy_config(out)).failed_cells != []
        monkeypatch.setattr(xp, "run_cell", real)
        table = run_experiment(toy_config(out))
        assert table.failed_cells == []
        assert len(table.rows) == 2

    def test_byte_identical_outputs_across_runs(self, tmp_path):
        tables = []
        for name in ("a", "b"):
            out = tmp_path / name
            tables.append(run_experiment(toy_config(out)))
        paths = [emit_table(t, "csv", tmp_path / f"{n}.csv")
                 for t, n in zip(tables, ("a", "b"))]
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_correction_both_adds_negspike_rows(self, tmp_path):
        cfg = toy_config(tmp_path / "run", correction="both")
        table = run_experiment(cfg)
        assert sorted(r.variant for r in table.rows) == [
            "baseline", "baseline+negspike", "noisy", "noisy+negspike"]


def make_table(seeds=(0, 1), t_list=(1, 2, 4)):
    rng = np.random.default_rng(9)
    rows = []
    for variant in ("noisy", "baseline"):
        for seed in seeds:
            rows.append(ResultRow(
                variant=variant, seed=seed,
                ann=float(rng.uniform(0.8, 0.9)),
                by_t={t: float(rng.uniform(0.5, 0.9)) for t in t_list},
            ))
    return ResultTable(rows=rows, t_list=list(t_list))


class TestEmitTable:
    def test_csv_header_order(self, tmp_path):
        path = emit_table(make_table(), "csv", tmp_path / "t.csv")
        assert path.read_text().splitlines()[0] == "variant,seed,ann,T=1,T=2,T=4"

    def test_empty_t_list_header(self, tmp_path):
        rows = [ResultRow(variant="noisy", seed=0, ann=0.5, by_t={})]
        table = ResultTable(rows=rows, t_list=[])
        path = emit_table(table, "csv", tmp_path / "t.csv")
        assert path.read_text().splitlines()[0] == "variant,seed,ann"

    def test_four_decimal_places(self, tmp_path):
        rows = [ResultRow(variant="noisy", seed=0, ann=1 / 3, by_t={1: 2 / 3})]
        table = ResultTable(rows=rows, t_list=[1])
        text = (emit_table(table, "csv", tmp_path / "t.csv")).read_text()
        assert "0.3333" in text and "0.6667" in text

    def test_mean_and_std_rows_per_variant(self, tmp_path):
        text = emit_table(make_table(), "csv", tmp_path / "t.csv").read_text()
        lines = text.splitlines()
        assert sum(1 for l in lines if ",mean," in l) == 2
        assert sum(1 for l in lines if ",std," in l) == 2
        # aggregate follows its variant's per-seed rows
        noisy = [i for i, l in enumerate(lines) if l.startswith("noisy,")]
        assert lines[noisy[-2]].startswith("noisy,mean")
        assert lines[noisy[-1]].startswith("noisy,std")

    def test_single_seed_has_no_aggregate_rows(self, tmp_path):
        text = emit_table(make_table(seeds=(0,)), "csv", tmp_path / "t.csv").read_text()
        assert "mean" not in text and "std" not in text

    def test_markdown_shape(self, tmp_path):
        text = emit_table(make_table(), "markdown", tmp_path / "t.md").read_text()
        lines = text.splitlines()
        assert lines[0].startswith("| variant")
        assert set(lines[1]) <= {"|", "-", " "}
        assert all(l.startswith("|") and l.endswith("|") for l in lines)

    def test_empty_table_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_table(ResultTable(rows=[], t_list=[1]), "csv", tmp_path / "t.csv")

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_table(make_table(), "tsv", tmp_path / "t.tsv")

    def test_accuracy_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            ResultRow(variant="noisy", seed=0, ann=1.2, by_t={})

    def test_mean_accuracy_helper(self):
        rows = [
            ResultRow(variant="noisy", seed=0, ann=0.9, by_t={1: 0.5}),
            ResultRow(variant="noisy", seed=1, ann=0.8, by_t={1: 0.7}),
        ]
        table = ResultTable(rows=rows, t_list=[1])
        assert table.mean_accuracy("noisy", 1) == pytest.approx(0.6)
        assert table.mean_ann("noisy") == pytest.approx(0.85)
