"""Time-stepped integrate-and-fire simulation with reset by subtraction.

Per step and per spiking layer: the layer's drive (weighted presynaptic
values plus bias) is added to the membrane, the previous step's own
spike times the threshold is subtracted (the reset lands one step after
the spike, as the membrane update rule is written), and a spike fires
wherever the membrane meets or exceeds the threshold. Inputs are
analog-coded: the raw input vector is applied identically at every step.
Downstream layers receive spike values scaled by the emitting layer's
threshold, so average pooling simply rescales spike currents.

The optional negative-spike correction lets a neuron retract an earlier
spike: if its membrane is negative and it has a positive cumulative
spike count, it emits -1 (returning one threshold's worth of charge at
the next step) and decrements its count. The exact rule — fire -1 at
u < 0, guarded by the cumulative count — is this toolkit's
concretization of a mechanism the source material only points at.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .convert import OutputLinear, SnnAvgPool, SnnFlatten, SnnModel, SpikingConv, SpikingLinear
from .errors import ConfigurationError, NumericError, UsageError
from .tensor import Tensor

_CORRECTIONS = ("none", "negative_spikes")


@dataclass
class SimConfig:
    T: int
    input_coding: str = "analog"
    correction: str = "none"
    record_spike_counts: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError(f"T must be >= 1, got {self.T}")
        if self.input_coding != "analog":
            raise ConfigurationError(
                f"only analog input coding is implemented, got {self.input_coding!r}"
            )
        if self.correction not in _CORRECTIONS:
            raise ConfigurationError(
                f"correction must be one of {_CORRECTIONS}, got {self.correction!r}"
            )


@dataclass
class SimState:
    u: list
    z_prev: list
    count: list
    logits: np.ndarray
    t: int = 0


@dataclass
class SpikeStats:
    per_step: np.ndarray        # (T, n_spiking_layers) spike events per step
    per_layer_total: np.ndarray  # (n_spiking_layers,)

    @property
    def total(self) -> float:
        return float(self.per_layer_total.sum())


def _drive(layer, x: np.ndarray) -> np.ndarray:
    with tc.no_grad():
        if isinstance(layer, SpikingConv):
            return tc.conv2d(Tensor(x), layer.w, layer.b, layer.stride, layer.padding).data
        return tc.linear(Tensor(x), layer.w, layer.b).data


def init_state(snn: SnnModel, input_batch: np.ndarray) -> SimState:
    """Allocate membranes (pre-charged at 0.5*th), spike buffers, logits."""
    x = np.asarray(input_batch, dtype=np.float32)
    if x.ndim < 2 or x.shape[1:] != tuple(snn.input_shape):
        raise UsageError(
            f"input batch shape {x.shape} does not match model input {tuple(snn.input_shape)}"
        )
    u, z_prev, count = [], [], []
    shape_probe = np.zeros_like(x)
    for layer in snn.layers:
        if isinstance(layer, (SpikingConv, SpikingLinear)):
            shape_probe = _drive(layer, shape_probe)
            u.append(
                np.full(shape_probe.shape, np.float32(layer.precharge) * np.float32(layer.th), np.float32)
            )
            z_prev.append(np.zeros(shape_probe.shape, np.float32))
            count.append(np.zeros(shape_probe.shape, np.float32))
        elif isinstance(layer, SnnAvgPool):
            with tc.no_grad():
                shape_probe = tc.avg_pool2d(Tensor(shape_probe), layer.k, layer.stride).data
        elif isinstance(layer, SnnFlatten):
            shape_probe = shape_probe.reshape(len(shape_probe), -1)
    return SimState(
        u=u,
        z_prev=z_prev,
        count=count,
        logits=np.zeros((len(x), snn.num_classes), np.float32),
        t=0,
    )


def _advance(state: SimState, snn: SnnModel, input_batch: np.ndarray, negative: bool) -> SimState:
    x = np.asarray(input_batch, dtype=np.float32)
    si = 0
    for layer in snn.layers:
        if isinstance(layer, (SpikingConv, SpikingLinear)):
            th = np.float32(layer.th)
            u = state.u[si]
            u += _drive(layer, x)
            u -= state.z_prev[si] * th
            if not np.isfinite(u).all():
                raise NumericError(f"non-finite membrane potential in spiking layer {si}")
            z = (u >= th).astype(np.float32)
            if negative:
                z -= ((u < 0) & (state.count[si] > 0)).astype(np.float32)
            state.count[si] += z
            state.z_prev[si] = z
            x = z * th
            si += 1
        elif isinstance(layer, SnnAvgPool):
            with tc.no_grad():
                x = tc.avg_pool2d(Tensor(x), layer.k, layer.stride).data
        elif isinstance(layer, SnnFlatten):
            x = x.reshape(len(x), -1)
        elif isinstance(layer, OutputLinear):
            with tc.no_grad():
                state.logits += tc.linear(Tensor(x), layer.w, layer.b).data
    state.t += 1
    return state


def step(state: SimState, snn: SnnModel, input_batch: np.ndarray) -> SimState:
    """One time step of the plain (binary-spike) dynamics."""
    return _advance(state, snn, input_batch, negative=False)


def step_with_negative_spikes(state: SimState, snn: SnnModel, input_batch: np.ndarray) -> SimState:
    """One time step with the signed-spike retraction rule enabled."""
    return _advance(state, snn, input_batch, negative=True)


def run(snn: SnnModel, batch, cfg: SimConfig) -> tuple[list[float], SpikeStats]:
    """Simulate for cfg.T steps; returns per-step accuracies and spike stats.

    The accuracy at index t-1 is the top-1 accuracy of the accumulated
    logits after t steps, so shorter runs are exact prefixes of longer
    ones.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    if len(x) == 0:
        raise UsageError("cannot simulate an empty batch")
    if len(x) != len(y):
        raise UsageError(f"batch has {len(x)} inputs but {len(y)} labels")
    state = init_state(snn, x)
    n_spiking = len(state.u)
    advance = step_with_negative_spikes if cfg.correction == "negative_spikes" else step
    accuracies = []
    per_step = np.zeros((cfg.T, n_spiking), np.float64)
    for t in range(cfg.T):
        advance(state, snn, x)
        accuracies.append(float((state.logits.argmax(axis=1) == y).mean()))
        if cfg.record_spike_counts:
            for j in range(n_spiking):
                per_step[t, j] = float(np.abs(state.z_prev[j]).sum())
    return accuracies, SpikeStats(per_step=per_step, per_layer_total=per_step.sum(axis=0))


def response_curve(th: float, T: int, n_points: int = 1000) -> list[tuple[float, float]]:
    """Spiking response of one neuron to a constant drive, swept over X.

    X is the total input delivered over the run (per-step drive X/T),
    swept across [-0.5*T*th, 1.5*T*th]; the neuron starts pre-charged at
    0.5*th and Y = spike_count * th. The membrane is reconstructed each
    step from the running spike count (u = 0.5*th + t*x - count*th,
    identical algebra to the incremental update) so long sweeps do not
    accumulate rounding drift.
    """
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if n_points < 2:
        raise ConfigurationError(f"n_points must be >= 2, got {n_points}")
    th64 = float(th)
    xs = np.linspace(-0.5 * th64, 1.5 * th64, n_points)  # per-step drive
    count = np.zeros(n_points, np.int64)
    for t in range(1, T + 1):
        u = (0.5 * th64 + t * xs) - count * th64
        count += (u >= th64)
    X = T * xs
    Y = count * th64
    return [(float(a), float(b)) for a, b in zip(X, Y)]


def write_run_csv(path, accuracies: list[float], stats: SpikeStats):
    """Per-step simulation record: t, accuracy, total and per-layer spikes."""
    n_layers = stats.per_step.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["t", "accuracy", "total_spikes"] + [f"spikes_layer_{j}" for j in range(n_layers)]
        )
        for t, acc in enumerate(accuracies):
            row = stats.per_step[t]
            writer.writerow(
                [t + 1, f"{acc:.4f}", int(row.sum())] + [int(v) for v in row]
            )


def write_curve_csv(path, curve: list[tuple[float, float]]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["X", "Y"])
        for x, y in curve:
            writer.writerow([repr(x), repr(y)])
