"""Command-line front end.

Verbs: train, convert, simulate, experiment, curve, verify, make-data.
Every run writes the exact resolved configuration as JSON into its
output directory so results stay reproducible from the artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks
from .checkpoint import (
    load_checkpoint,
    load_snn_checkpoint,
    save_checkpoint,
    save_snn_checkpoint,
)
from .convert import convert, validate_conversion
from .data import load_dataset, make_synthetic_images, save_as_idx
from .errors import QuantSpikeError
from .experiment import ExperimentConfig, emit_table, run_experiment
from .model import build_model
from .sim import SimConfig, response_curve, run, write_curve_csv, write_run_csv
from .train import TrainConfig, evaluate_ann, train

log = logging.getLogger("quantspike")


def _write_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in payload.items() if k not in ("func", "verbose")}
    with open(out_dir / "config.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="toy2d",
                   help="toy2d, idx-images or csv-images")
    p.add_argument("--data-path", default=None,
                   help="directory with dataset files (idx/csv formats)")
    p.add_argument("--n-train", type=int, default=None,
                   help="cap on training samples")
    p.add_argument("--n-test", type=int, default=None,
                   help="cap on test samples")


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    _write_config(out_dir, vars(args) | {"command": "train"})
    dataset = load_dataset(args.dataset, args.data_path, args.n_train, args.n_test)
    model = build_model(
        args.arch, dataset.input_shape, dataset.num_classes,
        p=args.p, noise_enabled=args.noise, seed=args.seed,
    )
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr0,
        weight_decay=args.weight_decay, momentum=args.momentum,
        seed=args.seed, p=args.p, noise_enabled=args.noise,
    )
    model, history = train(model, dataset, cfg)
    if history.aborted:
        log.error("training aborted on non-finite loss; last good weights kept")
    acc = evaluate_ann(model, dataset.test_x, dataset.test_y)
    path = out_dir / "ann.npz"
    save_checkpoint(model, path, metadata={"ann_accuracy": acc, "seed": args.seed})
    with open(out_dir / "history.json", "w") as f:
        json.dump({"train_loss": history.train_loss,
                   "eval_acc": history.eval_acc,
                   "aborted": history.aborted}, f, indent=2)
    print(f"ann accuracy {acc:.4f}; checkpoint {path}")
    return 1 if history.aborted else 0


def cmd_convert(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    snn = convert(model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_snn_checkpoint(snn, out)
    if args.probe_dataset:
        dataset = load_dataset(args.probe_dataset, args.probe_path, None, 256)
        report = validate_conversion(model, snn, dataset.test_x[:256])
        print(f"conversion check at T={report['T']}: "
              f"top-1 agreement {report['top1_agreement']:.4f}, "
              f"mean |level diff| {report['per_layer_mean_abs_diff']}")
    print(f"snn checkpoint {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = SimConfig(T=args.T, correction=args.correction)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, vars(args) | {"command": "simulate"})
    snn, _ = load_snn_checkpoint(args.snn)
    dataset = load_dataset(args.dataset, args.data_path, None, args.n_test)
    accuracies, stats = run(snn, (dataset.test_x, dataset.test_y), cfg)
    csv_path = out_dir / "run.csv"
    write_run_csv(csv_path, accuracies, stats)
    print(f"accuracy at T={args.T}: {accuracies[-1]:.4f} "
          f"({stats.total:.0f} spikes total); per-step CSV {csv_path}")
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
    else:
        noise = None if args.noise == "both" else (args.noise == "on")
        cfg = ExperimentConfig(
            dataset=args.dataset, data_path=args.data_path, arch=args.arch,
            p=args.p, noise_enabled=noise, seeds=args.seeds,
            t_list=args.t_list, correction=args.correction,
            out_dir=args.out_dir or "runs/experiment",
            epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr0,
            momentum=args.momentum, weight_decay=args.weight_decay,
            n_train=args.n_train, n_test=args.n_test,
        )
    table = run_experiment(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = emit_table(table, "csv", out_dir / "results.csv")
    emit_table(table, "markdown", out_dir / "results.md")
    print(csv_path.read_text(), end="")
    if table.failed_cells:
        log.error("failed cells: %s", ", ".join(table.failed_cells))
        return 1
    return 0


def cmd_curve(args) -> int:
    curve = response_curve(args.th, args.T, n_points=args.n_points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_curve_csv(out, curve)
    print(f"response curve (th={args.th}, T={args.T}) -> {out}")
    return 0


def cmd_verify(args) -> int:
    if args.full:
        results = checks.all_checks(args.out_dir)
    else:
        results = checks.fast_checks()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_make_data(args) -> int:
    ds = make_synthetic_images(
        n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_as_idx(ds, out)
    print(f"wrote {ds.train_x.shape[0]} train / {ds.test_x.shape[0]} test "
          f"images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantspike",
        description="Train activation-quantized ANNs and convert them to "
                    "integrate-and-fire SNNs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a quantized ANN")
    _add_data_args(p)
    p.add_argument("--arch", default="mlp2", help="mlp2 or cnn4")
    p.add_argument("--p", type=int, default=2, help="quantization upper bound")
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=True,
                   help="inject uniform noise in the quantizer during training")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr0", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert an ANN checkpoint to an SNN")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probe-dataset", default=None,
                   help="optionally validate on a data sample after converting")
    p.add_argument("--probe-path", default=None)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("simulate", help="run an SNN over discrete time steps")
    _add_data_args(p)
    p.add_argument("--snn", required=True, help="SNN checkpoint path")
    p.add_argument("--T", type=int, required=True, help="number of time steps")
    p.add_argument("--correction", default="none",
                   choices=["none", "negative_spikes"])
    p.add_argument("--out-dir", default="runs/simulate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a seed-by-variant grid")
    _add_data_args(p)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--arch", default="mlp2")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--noise", choices=["on", "off", "both"], default="both")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--t-list", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--correction", default="none",
                   choices=["none", "negative_spikes", "both"])
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr0", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("curve", help="dump the spiking response curve as CSV")
    p.add_argument("--th", type=float, required=True, help="firing threshold")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--n-points", type=int, default=1000)
    p.add_argument("--out", default="curve.csv")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("verify", help="run the built-in verification suite")
    p.add_argument("--full", action="store_true",
                   help="include the trained trend benchmark (minutes)")
    p.add_argument("--out-dir", default="runs/verify",
                   help="artifact directory for the benchmark grid")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("make-data", help="generate the synthetic IDX image set")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=8000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=cmd_make_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except QuantSpikeError as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
