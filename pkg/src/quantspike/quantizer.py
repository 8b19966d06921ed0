"""Activation quantizers.

Three faces of the same operation:

* a deterministic baseline that snaps pre-activations to the lattice
  ``{0, s, 2s, ..., p*s}``,
* a training-time variant that adds uniform noise on (-0.5, 0.5) to the
  scaled pre-activation before rounding, so the quantizer's *expected*
  output is the clipped identity ``clip(v, 0, s*p)``,
* the matching backward pass: a straight-through estimator for the input
  gradient gated on the clipped region, and a normalized scale gradient.

The forward/backward arithmetic is float32 end to end; op order matters
for the bit-exact tests, so the helpers below are the single source of
truth and everything else (tape op, simulator thresholds, oracles)
routes through them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError
from .tensor import Tensor, _acc, _wire

SCALE_FLOOR = 1e-8
_EPS_BITS = 24
_EPS_GRID = 1 << _EPS_BITS


@dataclass
class QuantizerParams:
    """Per-layer quantizer state.

    ``scale`` is a learnable scalar tensor (the lattice pitch s);
    ``upper_bound`` is the integer level count p, fixed for the layer's
    lifetime. ``layer_id`` keys the per-layer noise stream.
    """

    scale: Tensor
    upper_bound: int
    noise_enabled: bool = True
    rng_seed: int = 0
    layer_id: int = 0

    def __post_init__(self):
        if self.upper_bound < 1 or int(self.upper_bound) != self.upper_bound:
            raise ConfigurationError(
                f"upper_bound must be a positive integer, got {self.upper_bound!r}"
            )
        self.upper_bound = int(self.upper_bound)
        if self.scale.data.size != 1:
            raise ConfigurationError(
                f"scale must be a single scalar per layer, got shape {self.scale.data.shape}"
            )
        if float(self.scale.data) <= 0:
            raise ConfigurationError(
                f"scale must be positive, got {float(self.scale.data)}"
            )

    @property
    def s(self) -> float:
        return float(self.scale.data)

    @property
    def p(self) -> int:
        return self.upper_bound

    def clamp_scale(self):
        """Re-impose s >= 1e-8 after an optimizer step."""
        np.maximum(self.scale.data, np.float32(SCALE_FLOOR), out=self.scale.data)


@dataclass
class NoiseDraw:
    """One forward pass worth of quantizer noise, element-matched to v."""

    epsilon: np.ndarray

    @classmethod
    def sample(cls, shape, seed: int, layer_id: int, step: int) -> "NoiseDraw":
        """Draw uniform noise on the open interval (-0.5, 0.5).

        The stream is counter-based: the Philox key folds in
        (seed, layer_id, step), so every layer at every step gets an
        independent, replayable stream with no state carried between
        calls. Values are drawn on a 2^-24 grid, which keeps every
        element strictly inside the interval and exactly representable
        in float32 (so the sample mean is unbiased at zero).
        """
        key = np.array(
            [seed & 0xFFFFFFFFFFFFFFFF, ((layer_id & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF)],
            dtype=np.uint64,
        )
        rng = np.random.Generator(np.random.Philox(key=key))
        grid = rng.integers(1, _EPS_GRID, size=shape, dtype=np.int64)
        eps = grid.astype(np.float32) * np.float32(2.0 ** -_EPS_BITS) - np.float32(0.5)
        return cls(epsilon=eps)


@dataclass
class QuantizeContext:
    """Forward residue needed by the backward pass."""

    x_clip: np.ndarray
    shape: tuple


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Round to nearest with halves going up: floor(x + 0.5)."""
    return np.floor(x + np.float32(0.5))


def _forward_arrays(v, s, p, eps):
    """Shared forward: returns (v_hat, x_clip), both float32."""
    s32 = np.float32(s)
    x_scale = v / s32
    if eps is not None:
        x_scale = x_scale + eps
    x_clip = np.clip(x_scale, np.float32(0.0), np.float32(p))
    return round_half_up(x_clip) * s32, x_clip


def _backward_arrays(upstream, x_clip, p):
    """Shared backward: returns (grad_v, grad_s) from the saved x_clip.

    The input gradient passes through only strictly inside the clip
    window (flag via XOR of the two boundary tests, so both saturated
    ends go dead). The scale gradient is the rounding residual per
    element — which saturates to p at the top — summed against the
    upstream gradient and normalized by sqrt(N * p).
    """
    p32 = np.float32(p)
    flag = ((x_clip > 0) ^ (x_clip >= p32)).astype(np.float32)
    grad_v = upstream * flag
    grad_one = x_clip * flag
    grad_two = round_half_up(x_clip)
    grad_scale_elem = grad_two - grad_one
    denom = np.sqrt(np.float32(x_clip.size * p))
    grad_s = np.float32((grad_scale_elem * upstream).sum()) / denom
    return grad_v, grad_s


def _check_finite(data: np.ndarray, q: QuantizerParams):
    if not np.isfinite(data).all():
        raise NumericError(
            f"non-finite pre-activation entering quantizer layer {q.layer_id}"
        )


def quantize_baseline(v: Tensor, q: QuantizerParams) -> Tensor:
    """Deterministic quantization: s * round(clip(v/s, 0, p)), half-up."""
    _check_finite(v.data, q)
    out, _ = _forward_arrays(v.data, q.s, q.p, None)
    return Tensor(out)


def quantize_noisy_forward(
    v: Tensor, q: QuantizerParams, draw: NoiseDraw | None
) -> tuple[Tensor, QuantizeContext]:
    """Noise-injected forward; returns the output and the backward context.

    With ``noise_enabled`` false this degenerates to the baseline path
    (epsilon identically zero) but still produces a usable context.
    """
    _check_finite(v.data, q)
    eps = None
    if q.noise_enabled:
        if draw is None:
            raise UsageError("noise is enabled but no NoiseDraw was supplied")
        if draw.epsilon.shape != v.data.shape:
            raise UsageError(
                f"noise shape {draw.epsilon.shape} does not match input shape {v.data.shape}"
            )
        eps = draw.epsilon
    out, x_clip = _forward_arrays(v.data, q.s, q.p, eps)
    return Tensor(out), QuantizeContext(x_clip=x_clip, shape=v.data.shape)


def quantize_backward(
    upstream: Tensor | np.ndarray, ctx: QuantizeContext, q: QuantizerParams
) -> tuple[Tensor, float]:
    """Gradient of the quantizer wrt its input and its scale."""
    if ctx is None:
        raise UsageError("quantize_backward needs the context saved by the forward pass")
    g = upstream.data if isinstance(upstream, Tensor) else np.asarray(upstream, np.float32)
    if g.shape != ctx.x_clip.shape:
        raise UsageError(
            f"upstream shape {g.shape} does not match forward shape {ctx.x_clip.shape}"
        )
    grad_v, grad_s = _backward_arrays(g, ctx.x_clip, q.p)
    return Tensor(grad_v), float(grad_s)


def quantize(x: Tensor, q: QuantizerParams, draw: NoiseDraw | None = None) -> Tensor:
    """Tape-recorded quantizer op: gradients flow to x and to q.scale.

    Passing ``draw=None`` runs the deterministic path (epsilon = 0)
    regardless of ``noise_enabled`` — that is the evaluation/export mode.
    """
    _check_finite(x.data, q)
    eps = None
    if draw is not None and q.noise_enabled:
        if draw.epsilon.shape != x.data.shape:
            raise UsageError(
                f"noise shape {draw.epsilon.shape} does not match input shape {x.data.shape}"
            )
        eps = draw.epsilon
    out_data, x_clip = _forward_arrays(x.data, q.s, q.p, eps)
    out = Tensor(out_data)

    def _bw():
        grad_v, grad_s = _backward_arrays(out.grad, x_clip, q.p)
        if x.requires_grad:
            x.grad = _acc(x.grad, grad_v)
        if q.scale.requires_grad:
            q.scale.grad = _acc(
                q.scale.grad, np.full_like(q.scale.data, grad_s)
            )

    return _wire(out, (x, q.scale), _bw)


def expected_mean_oracle(v: float, s: float, p: int, n_samples: int, seed: int) -> float:
    """Monte-Carlo mean of the noisy quantizer at a single input value.

    Averages in float64 so the estimate's own rounding error stays far
    below the sampling noise. Deterministic for a given seed.
    """
    if n_samples < 1:
        raise UsageError(f"n_samples must be >= 1, got {n_samples}")
    draw = NoiseDraw.sample((n_samples,), seed, 0, 0)
    vals = np.full(n_samples, v, dtype=np.float32)
    out, _ = _forward_arrays(vals, s, p, draw.epsilon)
    return float(out.mean(dtype=np.float64))


def init_scale(layer_preacts: Tensor | np.ndarray, p: int, n_candidates: int = 200) -> float:
    """Pick the scale minimizing the L2 gap to the unquantized ReLU response.

    Searches ``n_candidates`` log-spaced values spanning
    [max(v)/(4p), 2*max(v)/p], plus max(v)/p itself so a batch that
    already sits exactly on some lattice resolves to zero error. A batch
    with no positive values carries no scale information; falls back to
    1.0 with a warning.
    """
    v = layer_preacts.data if isinstance(layer_preacts, Tensor) else np.asarray(layer_preacts)
    v = v.astype(np.float32).reshape(-1)
    if v.size == 0:
        raise UsageError("init_scale needs a non-empty sample batch")
    vmax = float(v.max())
    if vmax <= 0.0:
        warnings.warn(
            "all pre-activations are non-positive; falling back to scale 1.0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1.0
    lo, hi = vmax / (4.0 * p), vmax * 2.0 / p
    candidates = np.append(np.geomspace(lo, hi, n_candidates), vmax / p)
    target = np.maximum(v, 0.0)
    best_s, best_err = None, np.inf
    for s in candidates:
        qv, _ = _forward_arrays(v, s, p, None)
        err = float(np.square((qv - target).astype(np.float64)).sum())
        if err < best_err:
            best_s, best_err = float(s), err
    return best_s
