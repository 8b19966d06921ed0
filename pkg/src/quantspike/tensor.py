"""Dense float32 tensors with tape-based reverse-mode autodiff.

Feed-forward graphs only. Every op wires a backward closure onto its
output tensor; ``Tensor.backward`` replays the closures in reverse
topological order. Gradients accumulate on leaf tensors across calls
(until ``zero_grad``); buffers of interior nodes are reset at the start
of each backward pass so repeated passes do not double-count through
the chain.

All values are float32. Anything finer belongs in test oracles, not here.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConfigurationError,
    InputError,
    ShapeMismatchError,
    UsageError,
)

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording inside the block."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved


class Tensor:
    """A numpy float32 array plus an optional gradient buffer.

    ``grad`` is lazily allocated (same shape as ``data``) the first time
    a backward pass deposits into it. ``requires_grad`` marks leaves the
    optimizer updates; interior nodes inherit it from their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def sum(self) -> "Tensor":
        return tsum(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self):
        """Populate ``grad`` on every reachable tensor that requires it.

        Must be called on a scalar (size-1) tensor. Interior buffers are
        cleared first; leaf gradients accumulate across repeated calls.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        for node in topo:
            if node._prev:
                node.grad = None
        self.grad = _acc(self.grad, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()


def _acc(buf: np.ndarray | None, g: np.ndarray) -> np.ndarray:
    if buf is None:
        return g.astype(np.float32, copy=True)
    buf += g
    return buf


def _wire(out: Tensor, children: tuple[Tensor, ...], backward) -> Tensor:
    """Attach the tape edge if recording is on and any input needs grads."""
    if _grad_enabled and any(c.requires_grad for c in children):
        out.requires_grad = True
        out._prev = children
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also covers the (N, K) + (K,) bias broadcast."""
    if a.data.shape != b.data.shape and b.data.shape != a.data.shape[-1:]:
        raise ShapeMismatchError(
            f"add: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(a.data + b.data)

    def _bw():
        g = out.grad
        if a.requires_grad:
            a.grad = _acc(a.grad, g)
        if b.requires_grad:
            if b.data.shape != g.shape:
                g = g.reshape(-1, g.shape[-1]).sum(axis=0)
            b.grad = _acc(b.grad, g)

    return _wire(out, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c32 = np.float32(c)
    out = Tensor(a.data * c32)

    def _bw():
        if a.requires_grad:
            a.grad = _acc(a.grad, out.grad * c32)

    return _wire(out, (a,), _bw)


def tsum(a: Tensor) -> Tensor:
    """Sum all elements to a scalar."""
    out = Tensor(a.data.sum(dtype=np.float32))

    def _bw():
        if a.requires_grad:
            a.grad = _acc(a.grad, np.broadcast_to(out.grad, a.data.shape))

    return _wire(out, (a,), _bw)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def _bw():
        if a.requires_grad:
            a.grad = _acc(a.grad, out.grad.reshape(a.data.shape))

    return _wire(out, (a,), _bw)


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.data.shape[0], -1))


# ---------------------------------------------------------------------------
# matmul / linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul: cannot multiply {a.data.shape} by {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def _bw():
        g = out.grad
        if a.requires_grad:
            a.grad = _acc(a.grad, g @ b.data.T)
        if b.requires_grad:
            b.grad = _acc(b.grad, a.data.T @ g)

    return _wire(out, (a, b), _bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# conv / pool


def _conv_indices(C, H, W, kh, kw, stride, pad):
    """Gather indices turning (C, H+2p, W+2p) into (C*kh*kw, oh*ow) columns."""
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    i0 = np.tile(np.repeat(np.arange(kh), kw), C)
    j0 = np.tile(np.arange(kw), kh * C)
    i1 = stride * np.repeat(np.arange(oh), ow)
    j1 = stride * np.tile(np.arange(ow), oh)
    i = i0.reshape(-1, 1) + i1.reshape(1, -1)
    j = j0.reshape(-1, 1) + j1.reshape(1, -1)
    k = np.repeat(np.arange(C), kh * kw).reshape(-1, 1)
    return k, i, j, oh, ow


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with FCKhKw kernels plus bias."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d: need NCHW input and FCKK kernel, got {x.data.shape} and {w.data.shape}"
        )
    N, C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if Cw != C:
        raise ShapeMismatchError(
            f"conv2d: input has {C} channels but kernel expects {Cw}"
        )
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ConfigurationError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {H + 2 * padding}x{W + 2 * padding}"
        )
    if (H + 2 * padding - kh) % stride or (W + 2 * padding - kw) % stride:
        raise ConfigurationError(
            "conv2d: output size is not integral for "
            f"H={H} W={W} k={kh}x{kw} stride={stride} pad={padding}"
        )
    k, i, j, oh, ow = _conv_indices(C, H, W, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = xp[:, k, i, j]                       # (N, C*kh*kw, oh*ow)
    wflat = w.data.reshape(F, -1)               # (F, C*kh*kw)
    out_data = np.einsum("fc,ncl->nfl", wflat, cols).reshape(N, F, oh, ow)
    out_data += b.data.reshape(1, F, 1, 1)
    out = Tensor(out_data)

    def _bw():
        g = out.grad.reshape(N, F, -1)
        if b.requires_grad:
            b.grad = _acc(b.grad, g.sum(axis=(0, 2)))
        if w.requires_grad:
            dw = np.einsum("nfl,ncl->fc", g, cols).reshape(w.data.shape)
            w.grad = _acc(w.grad, dw)
        if x.requires_grad:
            dcols = np.einsum("fc,nfl->ncl", wflat, g)
            dxp = np.zeros_like(xp)
            np.add.at(dxp, (slice(None), k, i, j), dcols)
            dx = dxp[:, :, padding : padding + H, padding : padding + W] if padding else dxp
            x.grad = _acc(x.grad, dx)

    return _wire(out, (x, w, b), _bw)


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Mean over k-by-k windows; backward spreads gradient as 1/k^2."""
    if stride is None:
        stride = k
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"avg_pool2d: need NCHW input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if k > H or k > W:
        raise ConfigurationError(
            f"avg_pool2d: window {k} larger than input {H}x{W}"
        )
    if (H - k) % stride or (W - k) % stride:
        raise ConfigurationError(
            f"avg_pool2d: output size is not integral for H={H} W={W} k={k} stride={stride}"
        )
    kk, i, j, oh, ow = _conv_indices(1, H, W, k, k, stride, 0)
    xr = x.data.reshape(N * C, 1, H, W)
    cols = xr[:, kk, i, j]                      # (N*C, k*k, oh*ow)
    out = Tensor(cols.mean(axis=1).reshape(N, C, oh, ow))
    inv = np.float32(1.0 / (k * k))

    def _bw():
        if x.requires_grad:
            g = out.grad.reshape(N * C, 1, oh * ow) * inv
            dcols = np.broadcast_to(g, (N * C, k * k, oh * ow))
            dxr = np.zeros_like(xr)
            np.add.at(dxr, (slice(None), kk, i, j), dcols)
            x.grad = _acc(x.grad, dxr.reshape(N, C, H, W))

    return _wire(out, (x,), _bw)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-shifted."""
    if logits.data.ndim != 2:
        raise ShapeMismatchError(
            f"softmax_cross_entropy: need (N, K) logits, got {logits.data.shape}"
        )
    labels = np.asarray(labels)
    N, K = logits.data.shape
    if labels.shape != (N,):
        raise ShapeMismatchError(
            f"softmax_cross_entropy: {N} rows but label shape {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= K:
        raise InputError(
            f"softmax_cross_entropy: labels must lie in [0, {K}), "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    logp = shifted - np.log(expz.sum(axis=1, keepdims=True))
    out = Tensor(-logp[np.arange(N), labels].mean(dtype=np.float32))

    def _bw():
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(N), labels] -= 1.0
            d *= out.grad / np.float32(N)
            logits.grad = _acc(logits.grad, d)

    return _wire(out, (logits,), _bw)
