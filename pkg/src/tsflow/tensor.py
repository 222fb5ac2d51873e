"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every tracked operation stores a backward
closure and references to its parents. ``Tensor.backward()`` replays the
closures in reverse topological order, accumulating gradients additively,
so a tensor consumed by n operations receives the sum of n contributions.

Forward passes are deterministic; there is no hidden RNG anywhere here.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, ContractError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (frozen-model inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense n-d array of float64 with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape), requires_grad)

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    # -- graph plumbing -------------------------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self):
        """Populate `grad` on every tracked ancestor of this scalar."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        # Propagate through a clean pass, then merge into persistent grads so
        # repeated backward calls accumulate without double-counting the seed.
        saved = [node.grad for node in topo]
        for node in topo:
            node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        for node, prior in zip(topo, saved):
            if prior is not None:
                if node.grad is None:
                    node.grad = prior
                else:
                    node.grad += prior

    def zero_grad(self):
        self.grad = None

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = _make(np.add(self.data, other.data), (self, other))
        if out._prev:
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.shape))
            out._backward = bwd
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other)
        out = _make(np.subtract(self.data, other.data), (self, other))
        if out._prev:
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-g, other.shape))
            out._backward = bwd
        return out

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        out = _make(np.multiply(self.data, other.data), (self, other))
        if out._prev:
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.shape))
            out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = _make(np.divide(self.data, other.data), (self, other))
        if out._prev:
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(
                        _unbroadcast(-g * self.data / other.data**2, other.shape)
                    )
            out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(-g)
            out._backward = bwd
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only scalar exponents are supported")
        out = _make(self.data**exponent, (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g * exponent * self.data ** (exponent - 1))
            out._backward = bwd
        return out

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        out = _make(np.exp(self.data), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g * out.data)
            out._backward = bwd
        return out

    def log(self):
        out = _make(np.log(self.data), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g / self.data)
            out._backward = bwd
        return out

    def tanh(self):
        out = _make(np.tanh(self.data), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g * (1.0 - out.data**2))
            out._backward = bwd
        return out

    def sigmoid(self):
        # exp of a non-positive argument on both branches: never overflows
        x = self.data
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = _make(y, (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g * out.data * (1.0 - out.data))
            out._backward = bwd
        return out

    def relu(self):
        out = _make(np.maximum(self.data, 0.0), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g * (self.data > 0))
            out._backward = bwd
        return out

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(_spread(g, self.shape, axis, keepdims))
            out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else _axis_count(self.shape, axis)
        out = _make(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(_spread(g, self.shape, axis, keepdims) / count)
            out._backward = bwd
        return out

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g.reshape(self.shape))
            out._backward = bwd
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out = _make(self.data.transpose(axes), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g.transpose(inverse))
            out._backward = bwd
        return out

    def swapaxes(self, a, b):
        out = _make(self.data.swapaxes(a, b), (self,))
        if out._prev:
            def bwd(g):
                self._accumulate(g.swapaxes(a, b))
            out._backward = bwd
        return out

    def __getitem__(self, key):
        out = _make(self.data[key], (self,))
        if out._prev:
            def bwd(g):
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accumulate(full)
            out._backward = bwd
        return out

    # -- linear algebra ---------------------------------------------------------

    def matmul(self, other):
        other = _as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul requires at least 2-d operands, got {self.shape} and {other.shape}"
            )
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner extents disagree: {self.shape} vs {other.shape}"
            )
        out = _make(np.matmul(self.data, other.data), (self, other))
        if out._prev:
            def bwd(g):
                if self.requires_grad:
                    da = np.matmul(g, other.data.swapaxes(-1, -2))
                    self._accumulate(_unbroadcast(da, self.shape))
                if other.requires_grad:
                    db = np.matmul(self.data.swapaxes(-1, -2), g)
                    other._accumulate(_unbroadcast(db, other.shape))
            out._backward = bwd
        return out

    __matmul__ = matmul

    def softmax(self, axis=-1):
        """Numerically stable softmax along `axis` (max-subtraction)."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = _make(y, (self,))
        if out._prev:
            def bwd(g):
                inner = (g * y).sum(axis=axis, keepdims=True)
                self._accumulate(y * (g - inner))
            out._backward = bwd
        return out


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents):
    prev = tuple(p for p in parents if p.requires_grad) if _grad_enabled else ()
    out = Tensor(data)
    if prev:
        out.requires_grad = True
        out._prev = prev
    return out


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    return int(np.prod([shape[a] for a in axis]))


def _spread(grad, shape, axis, keepdims):
    """Broadcast a reduced gradient back over the summed-out axes."""
    if axis is None:
        return np.broadcast_to(grad, shape)
    if not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


# -- time-axis primitives -------------------------------------------------------


def _pad_time(data, pad, mode):
    widths = ((0, 0), (pad, pad), (0, 0))
    if mode == "replicate":
        return np.pad(data, widths, mode="edge")
    if mode == "zero":
        return np.pad(data, widths, mode="constant")
    raise ConfigError(f"unknown padding mode {mode!r}")


def _fold_time_padding(gpad, length, pad, mode):
    # Gradients that landed in the pad region belong to the replicated edge
    # samples; zero padding simply discards them.
    g = np.ascontiguousarray(gpad[:, pad : pad + length, :])
    if mode == "replicate" and pad > 0:
        g[:, 0, :] += gpad[:, :pad, :].sum(axis=1)
        g[:, -1, :] += gpad[:, pad + length :, :].sum(axis=1)
    return g


def conv1d(x, kernel, padding="replicate"):
    """Same-length cross-correlation along the time axis.

    Args:
        x: Tensor of shape (batch, length, channels).
        kernel: Tensor of shape (width, channels, out_channels); width odd.
        padding: "replicate" or "zero" edge handling.

    Returns:
        Tensor of shape (batch, length, out_channels).
    """
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(
            f"conv1d expects (B,L,C) input and (k,C,C') kernel, got {x.shape} and {kernel.shape}"
        )
    width = kernel.shape[0]
    if width % 2 == 0:
        raise ConfigError(f"conv1d kernel width must be odd, got {width}")
    if kernel.shape[1] != x.shape[2]:
        raise ShapeError(
            f"conv1d channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    pad = (width - 1) // 2
    length = x.shape[1]
    xpad = _pad_time(x.data, pad, padding)
    windows = sliding_window_view(xpad, width, axis=1)  # (B, L, C, k)
    out = _make(np.einsum("blck,kcd->bld", windows, kernel.data), (x, kernel))
    if out._prev:
        def bwd(g):
            if kernel.requires_grad:
                kernel._accumulate(np.einsum("blck,bld->kcd", windows, g))
            if x.requires_grad:
                gpad = np.zeros_like(xpad)
                for j in range(width):
                    gpad[:, j : j + length, :] += g @ kernel.data[j].T
                x._accumulate(_fold_time_padding(gpad, length, pad, padding))
        out._backward = bwd
    return out


def moving_average(x, window):
    """Same-length average pooling over time with replicate padding."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"moving_average expects (B,L,C) input, got {x.shape}")
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"moving_average window must be odd and positive, got {window}")
    length = x.shape[1]
    if window > 2 * length - 1:
        raise ConfigError(
            f"moving_average window {window} exceeds 2L-1 for length {length}"
        )
    pad = (window - 1) // 2
    xpad = _pad_time(x.data, pad, "replicate")
    windows = sliding_window_view(xpad, window, axis=1)
    # Averaging deviations from the window center keeps constant sequences
    # bit-exact (deviations are exactly zero) and is algebraically identical.
    centers = x.data
    result = centers + (windows - centers[..., None]).mean(axis=-1)
    out = _make(result, (x,))
    if out._prev:
        def bwd(g):
            gpad = np.zeros_like(xpad)
            share = g / window
            for j in range(window):
                gpad[:, j : j + length, :] += share
            x._accumulate(_fold_time_padding(gpad, length, pad, "replicate"))
        out._backward = bwd
    return out


def attention(q, k, v):
    """Scaled dot-product attention over the last two axes.

    q, k, v are (..., L, d) stacks sharing all leading (batch/head)
    dimensions; k and v share their sequence length. Softmax uses
    max-subtraction for stability.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention head dims disagree: q {q.shape} vs k {k.shape}")
    if k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention k/v shapes disagree: {k.shape} vs {v.shape}")
    if q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(
            f"attention batch/head dims disagree: q {q.shape} vs k {k.shape}"
        )
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.swapaxes(-1, -2)) * scale
    return scores.softmax(axis=-1) @ v
