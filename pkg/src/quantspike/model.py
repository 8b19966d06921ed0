"""Model definitions: small feed-forward nets with quantized activations.

A model is an ordered list of layer records. Hidden linear/conv layers
are each followed by a quantizer layer standing in for ReLU; pooling is
average pooling (max-pool exists only as a marker for imported
checkpoints and must be swapped out before running); the final linear
layer emits full-precision logits with nothing after it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import ConfigurationError, ShapeMismatchError, UsageError
from .quantizer import NoiseDraw, QuantizerParams, quantize
from .tensor import Tensor


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    def forward(self, x: Tensor) -> Tensor:
        return tc.linear(x, self.w, self.b)


@dataclass
class Conv2d:
    w: Tensor
    b: Tensor
    stride: int = 1
    padding: int = 0

    def forward(self, x: Tensor) -> Tensor:
        return tc.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


@dataclass
class AvgPool2d:
    k: int
    stride: int

    def forward(self, x: Tensor) -> Tensor:
        return tc.avg_pool2d(x, self.k, self.stride)


@dataclass
class MaxPool2d:
    """Marker for pooling imported from a full-precision model.

    Never executed: swap_pooling must replace it with average pooling
    before any forward pass.
    """

    k: int
    stride: int

    def forward(self, x: Tensor) -> Tensor:
        raise UsageError(
            "max-pool layers cannot be executed; call swap_pooling(model) first"
        )


@dataclass
class Flatten:
    def forward(self, x: Tensor) -> Tensor:
        return tc.flatten(x)


@dataclass
class QuantizerLayer:
    params: QuantizerParams
    initialized: bool = False

    def forward(self, x: Tensor, training: bool, step: int) -> Tensor:
        draw = None
        if training and self.params.noise_enabled:
            draw = NoiseDraw.sample(
                x.data.shape, self.params.rng_seed, self.params.layer_id, step
            )
        return quantize(x, self.params, draw)


@dataclass
class AnnModel:
    layers: list
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check the structural invariants of a quantized model."""
        layers = self.layers
        if not layers or not isinstance(layers[-1], Linear):
            raise ConfigurationError("the final layer must be linear (full-precision logits)")
        for i, layer in enumerate(layers):
            if isinstance(layer, QuantizerLayer):
                if i == 0 or not isinstance(layers[i - 1], (Linear, Conv2d)):
                    raise ConfigurationError(
                        f"quantizer at position {i} must directly follow a linear or conv layer"
                    )

    def forward(self, x, training: bool = False, step: int = 0) -> Tensor:
        """Run the network; ``step`` keys the per-step noise streams."""
        out = x if isinstance(x, Tensor) else Tensor(x)
        if out.data.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatchError(
                f"input shape {out.data.shape[1:]} does not match model input {tuple(self.input_shape)}"
            )
        for layer in self.layers:
            if isinstance(layer, QuantizerLayer):
                out = layer.forward(out, training, step)
            else:
                out = layer.forward(out)
        return out

    def weight_params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            if isinstance(layer, (Linear, Conv2d)):
                out.extend([layer.w, layer.b])
        return out

    def scale_params(self) -> list[Tensor]:
        return [l.params.scale for l in self.layers if isinstance(l, QuantizerLayer)]

    def quantizer_layers(self) -> list[QuantizerLayer]:
        return [l for l in self.layers if isinstance(l, QuantizerLayer)]

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.weight_params() + self.scale_params()]

    def restore(self, snap: list[np.ndarray]):
        for p, saved in zip(self.weight_params() + self.scale_params(), snap):
            p.data[...] = saved


def _uniform_init(rng, shape, fan_in) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def _make_quantizer(layer_id, p, noise_enabled, seed) -> QuantizerLayer:
    params = QuantizerParams(
        scale=Tensor(np.float32(1.0), requires_grad=True),
        upper_bound=p,
        noise_enabled=noise_enabled,
        rng_seed=seed,
        layer_id=layer_id,
    )
    return QuantizerLayer(params=params, initialized=False)


def _build_mlp2(input_shape, num_classes, p, noise_enabled, seed, rng):
    n_in = int(np.prod(input_shape))
    hidden = 128
    return [
        Flatten(),
        Linear(_uniform_init(rng, (n_in, hidden), n_in), _uniform_init(rng, (hidden,), n_in)),
        _make_quantizer(0, p, noise_enabled, seed),
        Linear(_uniform_init(rng, (hidden, num_classes), hidden), _uniform_init(rng, (num_classes,), hidden)),
    ]


def _build_cnn4(input_shape, num_classes, p, noise_enabled, seed, rng):
    if len(input_shape) != 3:
        raise ConfigurationError(
            f"cnn4 needs a (channels, H, W) input shape, got {tuple(input_shape)}"
        )
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ConfigurationError(f"cnn4 pools twice by 2; H and W must be multiples of 4, got {h}x{w}")
    c1, c2 = 8, 16
    n_flat = c2 * (h // 4) * (w // 4)
    return [
        Conv2d(
            _uniform_init(rng, (c1, c, 3, 3), c * 9),
            _uniform_init(rng, (c1,), c * 9),
            stride=1,
            padding=1,
        ),
        _make_quantizer(0, p, noise_enabled, seed),
        AvgPool2d(2, 2),
        Conv2d(
            _uniform_init(rng, (c2, c1, 3, 3), c1 * 9),
            _uniform_init(rng, (c2,), c1 * 9),
            stride=1,
            padding=1,
        ),
        _make_quantizer(1, p, noise_enabled, seed),
        AvgPool2d(2, 2),
        Flatten(),
        Linear(_uniform_init(rng, (n_flat, num_classes), n_flat), _uniform_init(rng, (num_classes,), n_flat)),
    ]


_ARCHITECTURES = {"mlp2": _build_mlp2, "cnn4": _build_cnn4}


def build_model(
    arch: str,
    input_shape,
    num_classes: int,
    p: int = 2,
    noise_enabled: bool = True,
    seed: int = 0,
) -> AnnModel:
    """Construct a registered architecture with fresh fan-in-scaled weights.

    Quantizer scales start uninitialized; run initialize_scales (or train,
    which does it on its warm-up batch) before converting.
    """
    if arch not in _ARCHITECTURES:
        raise ConfigurationError(
            f"unknown architecture {arch!r}; registered: {sorted(_ARCHITECTURES)}"
        )
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    rng = np.random.default_rng(seed)
    layers = _ARCHITECTURES[arch](tuple(input_shape), num_classes, p, noise_enabled, seed, rng)
    return AnnModel(layers=layers, input_shape=tuple(input_shape), num_classes=num_classes)


def swap_pooling(model: AnnModel) -> AnnModel:
    """Replace every max-pool marker with average pooling of equal geometry."""
    for i, layer in enumerate(model.layers):
        if isinstance(layer, MaxPool2d):
            model.layers[i] = AvgPool2d(layer.k, layer.stride)
    return model
