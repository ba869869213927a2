"""Dense float64 numeric core with exact reverse-mode gradients.

Everything the model needs and nothing more: a Tensor type that records a
computation trace, affine layers, the three activations, a numerically
stable softmax, inverted dropout, clamped binary cross-entropy, and Adam.
Gradients come from replaying the trace in reverse topological order; the
finite-difference suite in tests pins them down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NumericalError, VsgatError

LEAKY_SLOPE = 0.01
BCE_EPS = 1e-12


class Tensor:
    """N-d float64 array plus an optional reverse-mode trace.

    Leaf tensors created with requires_grad=True accumulate into .grad when
    backward() runs on a downstream scalar. Interior nodes hold a closure
    that routes the incoming gradient to their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)


def _result(data, parents, backprop) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray):
    if not (t.requires_grad or t._parents):
        return  # constant: nothing upstream wants this gradient
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backprop(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), backprop)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backprop(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(out_data, (a, b), backprop)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backprop(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), backprop)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionMismatchError(
            f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatchError(
            f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backprop(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out_data, (a, b), backprop)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + extents)

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _result(out_data, tuple(parts), backprop)


def gather_rows(t: Tensor, index) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into the source."""
    t = as_tensor(t)
    index = np.asarray(index, dtype=np.intp)
    out_data = t.data[index]

    def backprop(g):
        acc = np.zeros_like(t.data)
        np.add.at(acc, index, g)
        _accumulate(t, acc)

    return _result(out_data, (t,), backprop)


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    out_data = t.data.reshape(shape)

    def backprop(g):
        _accumulate(t, g.reshape(t.data.shape))

    return _result(out_data, (t,), backprop)


def tsum(t: Tensor, axis: int | None = None) -> Tensor:
    t = as_tensor(t)
    out_data = t.data.sum(axis=axis)

    def backprop(g):
        if axis is None:
            _accumulate(t, np.full_like(t.data, g))
        else:
            _accumulate(t, np.broadcast_to(np.expand_dims(g, axis), t.data.shape).copy())

    return _result(out_data, (t,), backprop)


def tmean(t: Tensor) -> Tensor:
    t = as_tensor(t)
    n = t.data.size
    out_data = t.data.mean()

    def backprop(g):
        _accumulate(t, np.full_like(t.data, g / n))

    return _result(out_data, (t,), backprop)


def tlog(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out_data = np.log(t.data)

    def backprop(g):
        _accumulate(t, g / t.data)

    return _result(out_data, (t,), backprop)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero where the clamp is active."""
    t = as_tensor(t)
    out_data = np.clip(t.data, lo, hi)
    interior = (t.data > lo) & (t.data < hi)

    def backprop(g):
        _accumulate(t, g * interior)

    return _result(out_data, (t,), backprop)


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out_data = np.maximum(t.data, 0.0)

    def backprop(g):
        _accumulate(t, g * (t.data > 0))

    return _result(out_data, (t,), backprop)


def leaky_relu(t: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    t = as_tensor(t)
    out_data = np.where(t.data > 0, t.data, slope * t.data)

    def backprop(g):
        _accumulate(t, g * np.where(t.data > 0, 1.0, slope))

    return _result(out_data, (t,), backprop)


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    x = t.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backprop(g):
        _accumulate(t, g * out_data * (1.0 - out_data))

    return _result(out_data, (t,), backprop)


def softmax(t: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction for stability."""
    t = as_tensor(t)
    if t.data.size == 0 or t.data.shape[-1] == 0:
        raise VsgatError("softmax over empty logits")
    if not np.all(np.isfinite(t.data)):
        raise NumericalError("softmax over non-finite logits")
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backprop(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(t, out_data * (g - dot))

    return _result(out_data, (t,), backprop)


# ---------------------------------------------------------------------------
# layers and model-level operations


@dataclass
class AffineLayer:
    """Single fully-connected layer: x -> weight @ x + bias."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        w, b = self.weight.data, self.bias.data
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionMismatchError(
                f"inconsistent layer extents: weight {w.shape}, bias {b.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]


def init_affine(out_dim: int, in_dim: int, rng: np.random.Generator) -> AffineLayer:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias."""
    bound = math.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return AffineLayer(Tensor(weight, requires_grad=True),
                       Tensor(np.zeros(out_dim), requires_grad=True))


def affine_forward(x, layer: AffineLayer) -> Tensor:
    """Apply weight @ x + bias to a vector or row-wise to an N x in matrix."""
    x = as_tensor(x)
    if x.data.shape[-1] != layer.in_dim:
        raise DimensionMismatchError(
            f"affine input extent {x.data.shape[-1]} != layer input extent {layer.in_dim}")
    if x.data.ndim == 1:
        row = reshape(x, (1, layer.in_dim))
        out = add(matmul(row, transpose(layer.weight)), layer.bias)
        return reshape(out, (layer.out_dim,))
    return add(matmul(x, transpose(layer.weight)), layer.bias)


def transpose(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out_data = t.data.T

    def backprop(g):
        _accumulate(t, g.T)

    return _result(out_data, (t,), backprop)


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
}


def activation(kind: str, x) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise VsgatError(f"unknown activation kind {kind!r}")
    return _ACTIVATIONS[kind](as_tensor(x))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise VsgatError(f"dropout rate {rate} outside [0, 1)")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise VsgatError("training-mode dropout needs a seeded rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


def bce_loss(scores, labels) -> Tensor:
    """Mean binary cross-entropy with scores clamped to [eps, 1-eps]."""
    scores, labels = as_tensor(scores), as_tensor(labels)
    if scores.data.shape != labels.data.shape:
        raise DimensionMismatchError(
            f"scores shape {scores.data.shape} != labels shape {labels.data.shape}")
    s = clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    y = labels.data
    pos = mul(Tensor(y), tlog(s))
    neg = mul(Tensor(1.0 - y), tlog(sub(Tensor(np.ones_like(s.data)), s)))
    return tmean(mul(Tensor(-1.0), add(pos, neg)))


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss back to every parameter leaf."""
    if not isinstance(loss, Tensor):
        raise VsgatError("backward expects a Tensor")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise VsgatError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss._backprop is None:
        raise VsgatError("backward before forward: loss has no recorded trace")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


def zero_grads(params: dict[str, Tensor]):
    for t in params.values():
        t.grad = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment buffers plus step count for the Adam update."""

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if name not in grads:
            raise DimensionMismatchError(f"missing gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise DimensionMismatchError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
