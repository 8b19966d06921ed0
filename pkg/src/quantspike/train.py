"""Quantization-aware training: SGD with momentum, cosine LR, scale init.

The scales of the quantizer layers are trained alongside the weights.
Weight decay applies to weights and biases only; the scales are kept
out of the decay term and clamped positive after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import ConfigurationError, NumericError, UsageError
from .model import AnnModel, QuantizerLayer
from .quantizer import init_scale
from .tensor import Tensor

WARMUP_SAMPLES = 512


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr0: float = 0.05
    weight_decay: float = 5e-4
    momentum: float = 0.9
    seed: int = 0
    p: int = 2
    noise_enabled: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 < 0:
            raise ConfigurationError(f"lr0 must be >= 0, got {self.lr0}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    eval_acc: list = field(default_factory=list)
    aborted: bool = False


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 to 0 over total_steps; flat 0 past the end."""
    if step < 0 or total_steps < 1:
        raise UsageError(f"need step >= 0 and total_steps >= 1, got {step}/{total_steps}")
    step = min(step, total_steps)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def initialize_scales(model: AnnModel, warmup_x: np.ndarray):
    """Set each quantizer's scale from what actually reaches it.

    Proceeds in forward order: each scale is fit on pre-activations
    computed with all earlier quantizers already initialized, so every
    layer sees its true (quantized) upstream distribution.
    """
    quant_layers = model.quantizer_layers()
    for target in quant_layers:
        with tc.no_grad():
            out = Tensor(warmup_x)
            for layer in model.layers:
                if layer is target:
                    break
                if isinstance(layer, QuantizerLayer):
                    out = layer.forward(out, training=False, step=0)
                else:
                    out = layer.forward(out)
        s = init_scale(out.data, target.params.upper_bound)
        target.params.scale.data[...] = np.float32(s)
        target.initialized = True


def _sgd_step(params, momentum_bufs, lr, momentum, weight_decay):
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if weight_decay:
            g = g + np.float32(weight_decay) * p.data
        buf = momentum_bufs.get(id(p))
        if buf is None:
            buf = g.astype(np.float32, copy=True)
        else:
            buf *= np.float32(momentum)
            buf += g
        momentum_bufs[id(p)] = buf
        p.data -= np.float32(lr) * buf


def train(model: AnnModel, dataset, cfg: TrainConfig) -> tuple[AnnModel, TrainHistory]:
    """Minibatch SGD over the dataset's train split.

    Scales are initialized from a warm-up batch if the model arrives
    with uninitialized quantizers. A non-finite loss aborts the run and
    rolls the model back to the last epoch-end state.
    """
    train_x, train_y = dataset.train_x, dataset.train_y
    if len(train_x) == 0:
        raise UsageError("training split is empty")
    if any(not ql.initialized for ql in model.quantizer_layers()):
        initialize_scales(model, train_x[:WARMUP_SAMPLES])

    rng = np.random.default_rng(cfg.seed)
    n = len(train_x)
    batches_per_epoch = max(1, n // cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    weights = model.weight_params()
    scales = model.scale_params()
    quantizers = [ql.params for ql in model.quantizer_layers()]
    momentum_bufs: dict[int, np.ndarray] = {}
    history = TrainHistory()
    last_good = model.snapshot()
    step = 0

    for _epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            try:
                logits = model.forward(train_x[idx], training=True, step=step)
                loss = tc.softmax_cross_entropy(logits, train_y[idx])
                diverged = not np.isfinite(loss.data)
            except NumericError:
                # blown-up weights trip the quantizer's finite check before
                # the loss itself goes NaN; same failure, same handling
                diverged = True
            if diverged:
                model.restore(last_good)
                history.aborted = True
                return model, history
            for p in weights + scales:
                p.zero_grad()
            loss.backward()
            lr = cosine_lr(step, total_steps, cfg.lr0)
            _sgd_step(weights, momentum_bufs, lr, cfg.momentum, cfg.weight_decay)
            _sgd_step(scales, momentum_bufs, lr, cfg.momentum, 0.0)
            for q in quantizers:
                q.clamp_scale()
            epoch_loss += float(loss.data)
            step += 1
        history.train_loss.append(epoch_loss / batches_per_epoch)
        history.eval_acc.append(evaluate_ann(model, dataset.test_x, dataset.test_y))
        last_good = model.snapshot()
    return model, history


def evaluate_ann(model: AnnModel, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Deterministic top-1 accuracy: noise off, plain argmax readout."""
    if len(x) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    correct = 0
    with tc.no_grad():
        for i in range(0, len(x), batch_size):
            logits = model.forward(x[i : i + batch_size], training=False)
            correct += int((logits.data.argmax(axis=1) == y[i : i + batch_size]).sum())
    return correct / len(x)
