"""Checkpoint serialization for quantized models and their spiking twins.

Format: a single .npz archive. ``__structure__`` holds a JSON document
describing the layer sequence, shapes and scalar attributes; float32
parameter arrays are stored as separate npz members referenced by name,
so every float payload round-trips bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .convert import (
    OutputLinear,
    SnnAvgPool,
    SnnFlatten,
    SnnModel,
    SpikingConv,
    SpikingLinear,
)
from .errors import ParseError
from .model import AnnModel, AvgPool2d, Conv2d, Flatten, Linear, MaxPool2d, QuantizerLayer
from .quantizer import QuantizerParams
from .tensor import Tensor

FORMAT_VERSION = 1


def _pack_ann_layers(model: AnnModel, arrays: dict) -> list[dict]:
    recs = []

    def put(arr):
        key = f"arr_{len(arrays)}"
        arrays[key] = arr
        return key

    for layer in model.layers:
        if isinstance(layer, Linear):
            recs.append({"type": "linear", "w": put(layer.w.data), "b": put(layer.b.data)})
        elif isinstance(layer, Conv2d):
            recs.append(
                {
                    "type": "conv",
                    "w": put(layer.w.data),
                    "b": put(layer.b.data),
                    "stride": layer.stride,
                    "padding": layer.padding,
                }
            )
        elif isinstance(layer, AvgPool2d):
            recs.append({"type": "avg_pool", "k": layer.k, "stride": layer.stride})
        elif isinstance(layer, MaxPool2d):
            recs.append({"type": "max_pool", "k": layer.k, "stride": layer.stride})
        elif isinstance(layer, Flatten):
            recs.append({"type": "flatten"})
        elif isinstance(layer, QuantizerLayer):
            recs.append(
                {
                    "type": "quantizer",
                    "scale": put(layer.params.scale.data),
                    "p": layer.params.upper_bound,
                    "noise_enabled": layer.params.noise_enabled,
                    "rng_seed": layer.params.rng_seed,
                    "layer_id": layer.params.layer_id,
                    "initialized": layer.initialized,
                }
            )
        else:
            raise ParseError(f"cannot serialize layer type {type(layer).__name__}")
    return recs


def save_checkpoint(model: AnnModel, path, metadata: dict | None = None):
    """Write the model (and optional training metadata) to ``path``."""
    arrays: dict[str, np.ndarray] = {}
    structure = {
        "format_version": FORMAT_VERSION,
        "kind": "ann",
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": _pack_ann_layers(model, arrays),
        "metadata": metadata or {},
    }
    np.savez(path, __structure__=np.str_(json.dumps(structure)), **arrays)


def _parse_structure(path, expect_kind: str) -> tuple[dict, np.lib.npyio.NpzFile]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ParseError(f"{path}: not a readable checkpoint: {e}") from None
    if "__structure__" not in archive:
        raise ParseError(f"{path}: missing structure record; not a checkpoint file")
    try:
        structure = json.loads(str(archive["__structure__"]))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: corrupt structure record: {e}") from None
    version = structure.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})"
        )
    if structure.get("kind") != expect_kind:
        raise ParseError(
            f"{path}: checkpoint holds a {structure.get('kind')!r} model, expected {expect_kind!r}"
        )
    return structure, archive


def load_checkpoint(path) -> tuple[AnnModel, dict]:
    """Rebuild a model from ``path``; returns (model, metadata)."""
    structure, archive = _parse_structure(path, "ann")

    def grab(key):
        if key not in archive:
            raise ParseError(f"{path}: missing array member {key!r}")
        return archive[key]

    layers = []
    for rec in structure["layers"]:
        t = rec["type"]
        if t == "linear":
            layers.append(
                Linear(Tensor(grab(rec["w"]), requires_grad=True), Tensor(grab(rec["b"]), requires_grad=True))
            )
        elif t == "conv":
            layers.append(
                Conv2d(
                    Tensor(grab(rec["w"]), requires_grad=True),
                    Tensor(grab(rec["b"]), requires_grad=True),
                    stride=rec["stride"],
                    padding=rec["padding"],
                )
            )
        elif t == "avg_pool":
            layers.append(AvgPool2d(rec["k"], rec["stride"]))
        elif t == "max_pool":
            layers.append(MaxPool2d(rec["k"], rec["stride"]))
        elif t == "flatten":
            layers.append(Flatten())
        elif t == "quantizer":
            params = QuantizerParams(
                scale=Tensor(grab(rec["scale"]), requires_grad=True),
                upper_bound=rec["p"],
                noise_enabled=rec["noise_enabled"],
                rng_seed=rec["rng_seed"],
                layer_id=rec["layer_id"],
            )
            layers.append(QuantizerLayer(params=params, initialized=rec["initialized"]))
        else:
            raise ParseError(f"{path}: unknown layer type {t!r} in checkpoint")
    model = AnnModel(
        layers=layers,
        input_shape=tuple(structure["input_shape"]),
        num_classes=structure["num_classes"],
    )
    return model, structure.get("metadata", {})


def save_snn_checkpoint(snn: SnnModel, path, metadata: dict | None = None):
    """Write a converted spiking model (same container, th per layer)."""
    arrays: dict[str, np.ndarray] = {}

    def put(arr):
        key = f"arr_{len(arrays)}"
        arrays[key] = arr
        return key

    recs = []
    for layer in snn.layers:
        if isinstance(layer, SpikingLinear):
            recs.append(
                {
                    "type": "spiking_linear",
                    "w": put(layer.w.data),
                    "b": put(layer.b.data),
                    "th": layer.th,
                    "precharge": layer.precharge,
                }
            )
        elif isinstance(layer, SpikingConv):
            recs.append(
                {
                    "type": "spiking_conv",
                    "w": put(layer.w.data),
                    "b": put(layer.b.data),
                    "stride": layer.stride,
                    "padding": layer.padding,
                    "th": layer.th,
                    "precharge": layer.precharge,
                }
            )
        elif isinstance(layer, SnnAvgPool):
            recs.append({"type": "avg_pool", "k": layer.k, "stride": layer.stride})
        elif isinstance(layer, SnnFlatten):
            recs.append({"type": "flatten"})
        elif isinstance(layer, OutputLinear):
            recs.append({"type": "output_linear", "w": put(layer.w.data), "b": put(layer.b.data)})
        else:
            raise ParseError(f"cannot serialize layer type {type(layer).__name__}")
    structure = {
        "format_version": FORMAT_VERSION,
        "kind": "snn",
        "input_shape": list(snn.input_shape),
        "num_classes": snn.num_classes,
        "dt": snn.dt,
        "layers": recs,
        "metadata": metadata or {},
    }
    np.savez(path, __structure__=np.str_(json.dumps(structure)), **arrays)


def load_snn_checkpoint(path) -> tuple[SnnModel, dict]:
    structure, archive = _parse_structure(path, "snn")

    def grab(key):
        if key not in archive:
            raise ParseError(f"{path}: missing array member {key!r}")
        return archive[key]

    layers = []
    for rec in structure["layers"]:
        t = rec["type"]
        if t == "spiking_linear":
            layers.append(
                SpikingLinear(
                    w=Tensor(grab(rec["w"])), b=Tensor(grab(rec["b"])),
                    th=rec["th"], precharge=rec["precharge"],
                )
            )
        elif t == "spiking_conv":
            layers.append(
                SpikingConv(
                    w=Tensor(grab(rec["w"])), b=Tensor(grab(rec["b"])),
                    stride=rec["stride"], padding=rec["padding"],
                    th=rec["th"], precharge=rec["precharge"],
                )
            )
        elif t == "avg_pool":
            layers.append(SnnAvgPool(rec["k"], rec["stride"]))
        elif t == "flatten":
            layers.append(SnnFlatten())
        elif t == "output_linear":
            layers.append(OutputLinear(w=Tensor(grab(rec["w"])), b=Tensor(grab(rec["b"]))))
        else:
            raise ParseError(f"{path}: unknown layer type {t!r} in checkpoint")
    snn = SnnModel(
        layers=layers,
        input_shape=tuple(structure["input_shape"]),
        num_classes=structure["num_classes"],
        dt=structure.get("dt", 1.0),
    )
    return snn, structure.get("metadata", {})
