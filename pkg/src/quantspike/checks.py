"""Verification suite: each check pins one documented guarantee.

Every function returns a CheckResult whose detail string carries the
measured quantity next to its tolerance, so a failure is diagnosable
from the one-line report alone. The checks are shared between the
``quantspike verify`` CLI verb and the acceptance test module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tc
from .convert import convert
from .data import load_dataset, make_synthetic_images, save_as_idx
from .experiment import ExperimentConfig, ResultTable, run_experiment
from .model import AnnModel, Linear, QuantizerLayer, build_model
from .quantizer import (
    NoiseDraw,
    QuantizerParams,
    expected_mean_oracle,
    quantize_backward,
    quantize_noisy_forward,
)
from .sim import init_state, response_curve, step
from .tensor import Tensor

GRID_CONFIGS = ((1.0, 3), (0.5, 2), (2.0, 7))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# Expected value of the noisy quantizer


def check_expected_mean(n_samples: int = 100_000, base_seed: int = 90210) -> CheckResult:
    """Monte-Carlo mean of the noisy quantizer vs clip(v, 0, s*p).

    41-point grid over [-0.5*s*p, 1.5*s*p] per (s, p) config; the
    empirical mean over n_samples draws must sit within 0.005*s of the
    clipped identity line.
    """
    worst = 0.0
    worst_at = ""
    for cfg_idx, (s, p) in enumerate(GRID_CONFIGS):
        grid = np.linspace(-0.5 * s * p, 1.5 * s * p, 41)
        for i, v in enumerate(grid):
            mean = expected_mean_oracle(
                float(v), s, p, n_samples=n_samples,
                seed=base_seed + 1000 * cfg_idx + i,
            )
            err = abs(mean - float(np.clip(v, 0.0, s * p))) / s
            if err > worst:
                worst, worst_at = err, f"v={v:.3f} (s={s}, p={p})"
    passed = worst <= 0.005
    return CheckResult(
        "expected-mean",
        passed,
        f"max |mean - clip| = {worst:.5f}*s at {worst_at} (tol 0.005*s, "
        f"{n_samples} draws/point)",
    )


# ---------------------------------------------------------------------------
# Backward pass vs an independent transcription


def _transcribed_backward(x, scale, eps, grad_output, p):
    """Re-derivation of the training backward, written out step by step.

    Deliberately independent of quantizer._backward_arrays: each line
    follows the published update in order, all in float32.
    """
    x_scale = x / scale
    x_scale = x_scale + eps
    x_clip = np.clip(x_scale, np.float32(0), np.float32(p))
    flag = ((x_clip > 0) ^ (x_clip >= np.float32(p))).astype(np.float32)
    grad_activation = grad_output * flag
    grad_elem = np.floor(x_clip + np.float32(0.5)) - x_clip * flag
    grad_scale = np.float32((grad_elem * grad_output).sum()) / np.sqrt(
        np.float32(x_clip.size * p)
    )
    return grad_activation, grad_scale


def check_backward_exactness(n_scalars: int = 10_000, seed: int = 7) -> CheckResult:
    """Bit-for-bit agreement of quantize_backward with the transcription.

    Inputs are drawn to cover all three regimes (below the active range,
    inside it, saturated above) in one batch.
    """
    rng = np.random.default_rng(seed)
    s, p = 0.5, 3
    third = n_scalars // 3
    v = np.concatenate([
        rng.uniform(-3 * s * p, -0.2, third),            # below
        rng.uniform(0.1, s * p - 0.1, third),            # inside
        rng.uniform(s * p + 0.2, 3 * s * p, n_scalars - 2 * third),  # above
    ]).astype(np.float32)
    rng.shuffle(v)
    upstream = rng.normal(size=n_scalars).astype(np.float32)
    q = QuantizerParams(
        scale=Tensor(np.float32(s), requires_grad=True),
        upper_bound=p, noise_enabled=True, rng_seed=seed, layer_id=0,
    )
    draw = NoiseDraw.sample(v.shape, seed, 0, 0)
    _, ctx = quantize_noisy_forward(Tensor(v), q, draw)
    got_v, got_s = quantize_backward(Tensor(upstream), ctx, q)
    want_v, want_s = _transcribed_backward(
        v, np.float32(s), draw.epsilon, upstream, p)
    exact_v = bool(np.all(got_v.data == want_v))
    exact_s = np.float32(got_s) == want_s
    regimes = (
        int((ctx.x_clip <= 0).sum()),
        int(((ctx.x_clip > 0) & (ctx.x_clip < p)).sum()),
        int((ctx.x_clip >= p).sum()),
    )
    passed = exact_v and exact_s
    return CheckResult(
        "backward-exactness",
        passed,
        f"{n_scalars} scalars bit-for-bit (grad_v {'ok' if exact_v else 'MISMATCH'}, "
        f"grad_s {'ok' if exact_s else 'MISMATCH'}); regime counts "
        f"below/inside/above = {regimes}",
    )


# ---------------------------------------------------------------------------
# Single-layer ANN/SNN equivalence at T = p


def _single_neuron_model(s: float, p: int) -> AnnModel:
    hidden = Linear(
        w=Tensor(np.eye(1, dtype=np.float32), requires_grad=True),
        b=Tensor(np.zeros(1, dtype=np.float32), requires_grad=True),
    )
    qparams = QuantizerParams(
        scale=Tensor(np.float32(s), requires_grad=True),
        upper_bound=p, noise_enabled=False,
    )
    head = Linear(
        w=Tensor(np.array([[1.0, -1.0]], dtype=np.float32), requires_grad=True),
        b=Tensor(np.zeros(2, dtype=np.float32), requires_grad=True),
    )
    return AnnModel(
        layers=[hidden, QuantizerLayer(params=qparams, initialized=True), head],
        input_shape=(1,),
        num_classes=2,
    )


def check_single_layer_equivalence() -> CheckResult:
    """Spike count after T=p steps vs round-half-up of clip(v/s, 0, p).

    101-point grid over [-s, (p+1)*s] per config; exact integer match
    required at every point.
    """
    total_mismatch = 0
    details = []
    for s, p in GRID_CONFIGS:
        grid = np.linspace(-s, (p + 1) * s, 101).astype(np.float32)
        oracle = np.clip(np.floor(grid.astype(np.float64) / s + 0.5), 0, p)
        snn = convert(_single_neuron_model(s, p))
        x = grid.reshape(-1, 1)
        state = init_state(snn, x)
        for _ in range(p):
            state = step(state, snn, x)
        counts = state.count[0].reshape(-1).astype(np.float64)
        mism = int((counts != oracle).sum())
        total_mismatch += mism
        details.append(f"(s={s},p={p}): {mism}")
    return CheckResult(
        "single-layer-equivalence",
        total_mismatch == 0,
        "mismatches " + ", ".join(details) + " (zero tolerance, 101-point grids)",
    )


# ---------------------------------------------------------------------------
# Response curve closed form and convergence


def check_response_curve(n_points: int = 1000, th: float = 1.0) -> CheckResult:
    """N(T) == clip(floor((X + 0.5*th)/th), 0, T) and sup |Y - clip| <= th/2."""
    t_values = (3, 6, 12, 64, 256)
    total_mismatch = 0
    worst_dev = 0.0
    for T in t_values:
        curve = response_curve(th, T, n_points=n_points)
        xs = np.array([x for x, _ in curve])
        ys = np.array([y for _, y in curve])
        counts = ys / th
        closed = np.clip(np.floor((xs + 0.5 * th) / th), 0, T)
        total_mismatch += int((counts != closed).sum())
        dev = np.abs(ys - np.clip(xs, 0.0, T * th)).max()
        worst_dev = max(worst_dev, float(dev))
    passed = total_mismatch == 0 and worst_dev <= th / 2
    return CheckResult(
        "response-curve",
        passed,
        f"closed-form mismatches = {total_mismatch} over T in {t_values} "
        f"({n_points} points each); sup |Y - clip(X, 0, T*th)| = {worst_dev:.4f} "
        f"(tol {th / 2})",
    )


# ---------------------------------------------------------------------------
# Gradient sanity: finite differences + expected slope of the quantizer


def _fd_relative_error(build_loss, *leaves, h: float = 1e-2) -> float:
    """Worst relative error between analytic and central-difference grads."""
    loss = build_loss()
    for leaf in leaves:
        leaf.grad = None
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad.copy()
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(build_loss().data)
            flat[i] = orig - h
            lo = float(build_loss().data)
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            denom = max(abs(fd), abs(float(analytic.reshape(-1)[i])), 1e-3)
            worst = max(worst, abs(fd - float(analytic.reshape(-1)[i])) / denom)
    return worst


def check_gradient_sanity(seed: int = 11) -> CheckResult:
    """FD agreement (rel tol 1e-2) for matmul/conv/pool/loss, plus the
    quantizer's unit expected slope away from rounding boundaries."""
    rng = np.random.default_rng(seed)
    worst_fd = 0.0

    a = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)).astype(np.float32), requires_grad=True)
    worst_fd = max(worst_fd, _fd_relative_error(
        lambda: tc.tsum(tc.matmul(a, b)), a, b))

    x = Tensor(rng.normal(size=(2, 2, 5, 5)).astype(np.float32), requires_grad=True)
    w = Tensor((0.3 * rng.normal(size=(3, 2, 3, 3))).astype(np.float32), requires_grad=True)
    bias = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    worst_fd = max(worst_fd, _fd_relative_error(
        lambda: tc.tsum(tc.conv2d(x, w, bias, stride=1, padding=1)), x, w, bias))

    xp = Tensor(rng.normal(size=(2, 3, 4, 4)).astype(np.float32), requires_grad=True)
    worst_fd = max(worst_fd, _fd_relative_error(
        lambda: tc.tsum(tc.avg_pool2d(xp, 2)), xp))

    logits = Tensor(rng.normal(size=(4, 3)).astype(np.float32), requires_grad=True)
    labels = np.array([0, 2, 1, 1])
    worst_fd = max(worst_fd, _fd_relative_error(
        lambda: tc.softmax_cross_entropy(logits, labels), logits))

    fd_ok = worst_fd <= 1e-2

    # Expected transfer slope: d E[q(v)] / dv == 1 inside the active range,
    # measured away from the half-step rounding boundaries.
    s, p = 1.0, 3
    delta, n = 0.05 * s, 1_000_000
    worst_slope = 0.0
    for k, u in enumerate((0.35, 1.2, 1.7, 2.6)):
        hi = expected_mean_oracle(u + delta, s, p, n_samples=n, seed=seed + 2 * k)
        lo = expected_mean_oracle(u - delta, s, p, n_samples=n, seed=seed + 2 * k + 1)
        slope = (hi - lo) / (2 * delta)
        worst_slope = max(worst_slope, abs(slope - 1.0))
    slope_ok = worst_slope <= 0.05

    return CheckResult(
        "gradient-sanity",
        fd_ok and slope_ok,
        f"max FD rel err = {worst_fd:.4f} (tol 1e-2); "
        f"max |slope - 1| = {worst_slope:.4f} (tol 0.05)",
    )


# ---------------------------------------------------------------------------
# Trend benchmark: noisy training vs baseline after conversion


def benchmark_config(out_dir, epochs: int = 15, seeds=(0, 1, 2)) -> ExperimentConfig:
    """Standard small-image benchmark grid used by the trend checks.

    Writes the synthetic 10-class IDX dataset under out_dir/data on
    first use; subsequent calls reuse it, and run_experiment resumes
    any cells already completed under out_dir/grid.
    """
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    if not (data_dir / "train-images.idx").exists():
        data_dir.mkdir(parents=True, exist_ok=True)
        save_as_idx(make_synthetic_images(n_train=8000, n_test=4000), data_dir)
    return ExperimentConfig(
        dataset="idx-images",
        data_path=str(data_dir),
        arch="cnn4",
        p=2,
        noise_enabled=None,
        seeds=list(seeds),
        t_list=[1, 2, 4, 8, 16],
        correction="both",
        out_dir=str(out_dir / "grid"),
        epochs=epochs,
    )


def run_benchmark(out_dir, epochs: int = 15, seeds=(0, 1, 2)) -> tuple[ResultTable, float]:
    """Execute (or resume) the benchmark grid; returns table and wall time."""
    cfg = benchmark_config(out_dir, epochs=epochs, seeds=seeds)
    start = time.monotonic()
    table = run_experiment(cfg)
    return table, time.monotonic() - start


def check_accuracy_trend(table: ResultTable, p: int = 2) -> CheckResult:
    """Noise-trained conversion beats the baseline at T in {1, 2, 4};
    both variants land within 2 points of their own ANN accuracy by T=4p."""
    if table.failed_cells:
        return CheckResult(
            "accuracy-trend", False, f"failed cells: {table.failed_cells}")
    gaps = []
    beats = True
    for t in (1, 2, 4):
        noisy = table.mean_accuracy("noisy", t)
        base = table.mean_accuracy("baseline", t)
        beats = beats and noisy > base
        gaps.append(f"T={t}: {noisy:.4f} vs {base:.4f}")
    t_conv = 4 * p
    recovery = []
    recovered = True
    for variant in ("noisy", "baseline"):
        ann = table.mean_ann(variant)
        snn = table.mean_accuracy(variant, t_conv)
        recovered = recovered and (ann - snn) <= 0.02
        recovery.append(f"{variant}: ann={ann:.4f} snn@T={t_conv}={snn:.4f}")
    return CheckResult(
        "accuracy-trend",
        beats and recovered,
        "noisy vs baseline " + "; ".join(gaps) + " | recovery (tol 2 pts) "
        + "; ".join(recovery),
    )


def check_negative_spikes(table: ResultTable) -> CheckResult:
    """Negative-spike correction costs at most 0.5 points at T in {2, 4}
    and agrees with the plain run within 0.5 points at T=16."""
    if table.failed_cells:
        return CheckResult(
            "negative-spike-trend", False, f"failed cells: {table.failed_cells}")
    worst_drop = -1.0
    worst_gap16 = 0.0
    for variant in ("noisy", "baseline"):
        plain = {t: table.mean_accuracy(variant, t) for t in (2, 4, 16)}
        neg = {t: table.mean_accuracy(f"{variant}+negspike", t) for t in (2, 4, 16)}
        for t in (2, 4):
            worst_drop = max(worst_drop, plain[t] - neg[t])
        worst_gap16 = max(worst_gap16, abs(plain[16] - neg[16]))
    passed = worst_drop <= 0.005 and worst_gap16 <= 0.005
    return CheckResult(
        "negative-spike-trend",
        passed,
        f"max accuracy drop at T in (2,4) = {worst_drop * 100:.2f} pts (tol 0.5); "
        f"max |gap| at T=16 = {worst_gap16 * 100:.2f} pts (tol 0.5)",
    )


# ---------------------------------------------------------------------------


def fast_checks() -> list[CheckResult]:
    """The sub-minute checks (everything except the trained benchmark)."""
    return [
        check_expected_mean(),
        check_backward_exactness(),
        check_single_layer_equivalence(),
        check_response_curve(),
        check_gradient_sanity(),
    ]


def all_checks(out_dir) -> list[CheckResult]:
    """Full verification including the trained trend benchmark."""
    results = fast_checks()
    table, elapsed = run_benchmark(out_dir)
    trend = check_accuracy_trend(table)
    trend.detail += f" | grid wall time {elapsed:.0f}s"
    results.append(trend)
    results.append(check_negative_spikes(table))
    return results
