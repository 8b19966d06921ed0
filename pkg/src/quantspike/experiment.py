"""Experiment grid orchestration: train -> convert -> simulate, per cell.

A cell is one (variant, seed) combination, where the variant toggles the
quantizer noise during training. Each cell persists its checkpoints,
per-step simulation CSVs and a result.json under its own directory, so
an interrupted grid resumes exactly where it stopped: completed cells
are loaded, never recomputed. A failed cell (e.g. divergence) is
recorded and skipped while the rest of the grid proceeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint, save_snn_checkpoint
from .convert import convert
from .data import load_dataset
from .errors import ConfigurationError, NumericError
from .model import build_model
from .sim import SimConfig, run, write_run_csv
from .train import TrainConfig, evaluate_ann, train

_CORRECTION_CHOICES = ("none", "negative_spikes", "both")


@dataclass
class ExperimentConfig:
    dataset: str = "toy2d"
    data_path: str | None = None
    arch: str = "mlp2"
    p: int = 2
    noise_enabled: bool | None = None  # None runs both variants
    seeds: list = field(default_factory=lambda: [0])
    t_list: list = field(default_factory=lambda: [1, 2, 4, 8])
    correction: str = "none"
    out_dir: str = "runs/experiment"
    epochs: int = 10
    batch_size: int = 64
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    n_train: int | None = None
    n_test: int | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if not self.t_list or list(self.t_list) != sorted(set(self.t_list)):
            raise ConfigurationError(
                f"t_list must be strictly ascending and non-empty, got {self.t_list}"
            )
        if min(self.t_list) < 1:
            raise ConfigurationError(f"t_list entries must be >= 1, got {self.t_list}")
        if self.correction not in _CORRECTION_CHOICES:
            raise ConfigurationError(
                f"correction must be one of {_CORRECTION_CHOICES}, got {self.correction!r}"
            )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def variants(self) -> list[tuple[str, bool]]:
        if self.noise_enabled is None:
            return [("noisy", True), ("baseline", False)]
        return [("noisy", True)] if self.noise_enabled else [("baseline", False)]

    def correction_modes(self) -> list[str]:
        if self.correction == "both":
            return ["none", "negative_spikes"]
        return [self.correction]


@dataclass
class ResultRow:
    variant: str
    seed: int
    ann: float
    by_t: dict

    def __post_init__(self):
        for v in [self.ann, *self.by_t.values()]:
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"accuracy {v} outside [0, 1]")


@dataclass
class ResultTable:
    rows: list
    t_list: list
    failed_cells: list = field(default_factory=list)

    def variant_rows(self, variant: str) -> list[ResultRow]:
        return [r for r in self.rows if r.variant == variant]

    def mean_accuracy(self, variant: str, t: int) -> float:
        rows = self.variant_rows(variant)
        return float(np.mean([r.by_t[t] for r in rows]))

    def mean_ann(self, variant: str) -> float:
        return float(np.mean([r.ann for r in self.variant_rows(variant)]))


def _cell_complete(result: dict, cfg: ExperimentConfig) -> bool:
    if result.get("status") != "ok" or "ann" not in result:
        return False
    snn = result.get("snn", {})
    return all(
        mode in snn and all(str(t) in snn[mode] for t in cfg.t_list)
        for mode in cfg.correction_modes()
    )


def run_cell(cfg: ExperimentConfig, dataset, variant: str, noise: bool, seed: int, cell_dir: Path) -> dict:
    """Train, convert and simulate one grid cell, writing all artifacts."""
    cell_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(
        cfg.arch, dataset.input_shape, dataset.num_classes,
        p=cfg.p, noise_enabled=noise, seed=seed,
    )
    tcfg = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
        weight_decay=cfg.weight_decay, momentum=cfg.momentum,
        seed=seed, p=cfg.p, noise_enabled=noise,
    )
    model, history = train(model, dataset, tcfg)
    if history.aborted:
        raise NumericError("training diverged (non-finite loss)")
    ann_acc = evaluate_ann(model, dataset.test_x, dataset.test_y)
    save_checkpoint(
        model, cell_dir / "ann.npz",
        metadata={"variant": variant, "seed": seed, "ann_accuracy": ann_acc},
    )
    snn = convert(model)
    save_snn_checkpoint(snn, cell_dir / "snn.npz")
    snn_acc = {}
    for mode in cfg.correction_modes():
        accs, stats = run(
            snn, (dataset.test_x, dataset.test_y),
            SimConfig(T=max(cfg.t_list), correction=mode),
        )
        snn_acc[mode] = {str(t): accs[t - 1] for t in cfg.t_list}
        write_run_csv(cell_dir / f"sim_{mode}.csv", accs, stats)
    result = {
        "status": "ok",
        "variant": variant,
        "seed": seed,
        "ann": ann_acc,
        "snn": snn_acc,
        "train_loss": history.train_loss,
        "eval_acc": history.eval_acc,
    }
    return result


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Execute the full seed-by-variant grid, resuming completed cells."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)
    dataset = load_dataset(cfg.dataset, cfg.data_path, cfg.n_train, cfg.n_test)
    rows, failed = [], []
    for variant, noise in cfg.variants():
        for seed in cfg.seeds:
            cell_dir = out_dir / f"{variant}_seed{seed}"
            result_path = cell_dir / "result.json"
            result = None
            if result_path.exists():
                with open(result_path) as f:
                    stored = json.load(f)
                if _cell_complete(stored, cfg):
                    result = stored
            if result is None:
                try:
                    result = run_cell(cfg, dataset, variant, noise, seed, cell_dir)
                except Exception as e:  # record and continue with the grid
                    cell_dir.mkdir(parents=True, exist_ok=True)
                    result = {
                        "status": "failed",
                        "variant": variant,
                        "seed": seed,
                        "error": f"{type(e).__name__}: {e}",
                    }
                with open(result_path, "w") as f:
                    json.dump(result, f, indent=2, sort_keys=True)
            if result["status"] != "ok":
                failed.append(f"{variant}_seed{seed}")
                continue
            for mode in cfg.correction_modes():
                label = variant if mode == "none" else f"{variant}+negspike"
                rows.append(
                    ResultRow(
                        variant=label,
                        seed=seed,
                        ann=result["ann"],
                        by_t={t: result["snn"][mode][str(t)] for t in cfg.t_list},
                    )
                )
    return ResultTable(rows=rows, t_list=list(cfg.t_list), failed_cells=failed)


def _table_lines(table: ResultTable) -> list[list[str]]:
    header = ["variant", "seed", "ann"] + [f"T={t}" for t in table.t_list]
    lines = [header]
    variants = sorted({r.variant for r in table.rows})
    for variant in variants:
        rows = sorted(table.variant_rows(variant), key=lambda r: r.seed)
        for r in rows:
            lines.append(
                [variant, str(r.seed), f"{r.ann:.4f}"]
                + [f"{r.by_t[t]:.4f}" for t in table.t_list]
            )
        if len(rows) > 1:
            anns = [r.ann for r in rows]
            lines.append(
                [variant, "mean", f"{np.mean(anns):.4f}"]
                + [f"{np.mean([r.by_t[t] for r in rows]):.4f}" for t in table.t_list]
            )
            lines.append(
                [variant, "std", f"{np.std(anns):.4f}"]
                + [f"{np.std([r.by_t[t] for r in rows]):.4f}" for t in table.t_list]
            )
    return lines


def emit_table(table: ResultTable, fmt: str, path) -> Path:
    """Write the aggregate table; deterministic order and formatting."""
    if not table.rows:
        raise ConfigurationError("cannot emit an empty result table")
    if fmt not in ("csv", "markdown"):
        raise ConfigurationError(f"format must be csv or markdown, got {fmt!r}")
    lines = _table_lines(table)
    path = Path(path)
    if fmt == "csv":
        text = "\n".join(",".join(cells) for cells in lines) + "\n"
    else:
        widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
        def fmt_row(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
        text = "\n".join(
            [fmt_row(lines[0]),
             "| " + " | ".join("-" * w for w in widths) + " |"]
            + [fmt_row(row) for row in lines[1:]]
        ) + "\n"
    path.write_text(text)
    return path
