"""ANN-to-SNN conversion.

A trained quantized model maps onto an integrate-and-fire network by
copying weights and biases verbatim and turning each quantizer into a
firing threshold th = p * s. Hidden membranes start pre-charged at
0.5 * th, which shifts the spiking network's flooring behavior to the
rounding the quantized ANN was trained with. The final linear layer
stays non-spiking: its drive accumulates into a running logit sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConversionError, UsageError
from .model import AnnModel, AvgPool2d, Conv2d, Flatten, Linear, MaxPool2d, QuantizerLayer
from .tensor import Tensor

PRECHARGE_FRACTION = 0.5


@dataclass
class SpikingLinear:
    w: Tensor
    b: Tensor
    th: float
    precharge: float = PRECHARGE_FRACTION


@dataclass
class SpikingConv:
    w: Tensor
    b: Tensor
    stride: int
    padding: int
    th: float
    precharge: float = PRECHARGE_FRACTION


@dataclass
class SnnAvgPool:
    k: int
    stride: int


@dataclass
class SnnFlatten:
    pass


@dataclass
class OutputLinear:
    w: Tensor
    b: Tensor


@dataclass
class SnnModel:
    layers: list
    input_shape: tuple
    num_classes: int
    dt: float = 1.0

    def spiking_layers(self):
        return [l for l in self.layers if isinstance(l, (SpikingLinear, SpikingConv))]


def _spiking_from(layer, q: QuantizerLayer, position: int):
    if not q.initialized:
        raise ConversionError(
            f"quantizer layer {q.params.layer_id} (model position {position}) "
            "has an uninitialized scale; run scale initialization or training first"
        )
    th = float(np.float32(q.params.upper_bound) * q.params.scale.data)
    if th <= 0:
        raise ConversionError(
            f"quantizer layer {q.params.layer_id} yields non-positive threshold {th}"
        )
    w = Tensor(layer.w.data.copy())
    b = Tensor(layer.b.data.copy())
    if isinstance(layer, Conv2d):
        return SpikingConv(w=w, b=b, stride=layer.stride, padding=layer.padding, th=th)
    return SpikingLinear(w=w, b=b, th=th)


def convert(model: AnnModel) -> SnnModel:
    """Map a trained quantized model to its spiking equivalent."""
    model.validate()
    out_layers = []
    layers = model.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        follower = layers[i + 1] if i + 1 < len(layers) else None
        if isinstance(layer, (Linear, Conv2d)) and isinstance(follower, QuantizerLayer):
            out_layers.append(_spiking_from(layer, follower, i + 1))
            i += 2
            continue
        if isinstance(layer, Linear):
            out_layers.append(OutputLinear(w=Tensor(layer.w.data.copy()), b=Tensor(layer.b.data.copy())))
        elif isinstance(layer, Conv2d):
            raise ConversionError(
                f"conv layer at position {i} has no quantizer; only the final linear layer may be unquantized"
            )
        elif isinstance(layer, AvgPool2d):
            out_layers.append(SnnAvgPool(k=layer.k, stride=layer.stride))
        elif isinstance(layer, MaxPool2d):
            raise ConversionError(
                f"max-pool at position {i} cannot be converted; call swap_pooling first"
            )
        elif isinstance(layer, Flatten):
            out_layers.append(SnnFlatten())
        else:
            raise ConversionError(f"cannot convert layer type {type(layer).__name__}")
        i += 1
    return SnnModel(
        layers=out_layers,
        input_shape=tuple(model.input_shape),
        num_classes=model.num_classes,
    )


def ann_integer_levels(model: AnnModel, x: np.ndarray):
    """Noise-free forward collecting each quantizer's integer level map.

    Returns (levels per quantizer layer, logits). The level is the
    quantized output divided by the scale — the spike count the spiking
    twin should reproduce at T = p.
    """
    from . import tensor as tc

    levels = []
    with tc.no_grad():
        out = Tensor(x)
        for layer in model.layers:
            if isinstance(layer, QuantizerLayer):
                pre = out
                out = layer.forward(pre, training=False, step=0)
                levels.append(np.round(out.data / np.float32(layer.params.scale.data)))
            else:
                out = layer.forward(out)
    return levels, out.data


def validate_conversion(ann: AnnModel, snn: SnnModel, probe_batch: np.ndarray) -> dict:
    """Compare ANN integer levels with SNN spike counts at T = p.

    Runs the spiking model for as many steps as the largest quantizer
    bound, then reports the per-layer mean absolute difference between
    ANN activation levels and per-neuron spike counts, plus the top-1
    agreement between the two models' predictions.
    """
    from . import sim

    probe_batch = np.asarray(probe_batch, dtype=np.float32)
    if probe_batch.ndim < 2 or probe_batch.shape[1:] != tuple(ann.input_shape):
        raise UsageError(
            f"probe batch shape {probe_batch.shape} does not match model input {tuple(ann.input_shape)}"
        )
    quantizers = ann.quantizer_layers()
    if not quantizers:
        raise UsageError("model has no quantizer layers to validate")
    T = max(q.params.upper_bound for q in quantizers)

    levels, ann_logits = ann_integer_levels(ann, probe_batch)
    state = sim.init_state(snn, probe_batch)
    for _ in range(T):
        sim.step(state, snn, probe_batch)
    per_layer = [
        float(np.abs(lvl - cnt).mean()) for lvl, cnt in zip(levels, state.count)
    ]
    agreement = float(
        (ann_logits.argmax(axis=1) == state.logits.argmax(axis=1)).mean()
    )
    return {
        "T": T,
        "per_layer_mean_abs_diff": per_layer,
        "top1_agreement": agreement,
    }
