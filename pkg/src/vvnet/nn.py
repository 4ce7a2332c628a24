"""A small reverse-mode autodiff core on numpy arrays.

Every op builds a ``Tensor`` that remembers its parents and a closure that
pushes the upstream gradient back to them. ``Tensor.backward`` walks the graph
in reverse topological order. Dtype follows the inputs: float64 for gradient
checks, float32 for training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, name=None):
        self.value = np.asarray(value)
        if self.value.dtype.kind not in "f":
            self.value = self.value.astype(np.float64)
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite value produced{' by ' + name if name else ''}")
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.value)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.value.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))
    return Tensor(a.value + b.value, parents=(a, b), backward=back, name="add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.shape))
    return Tensor(a.value * b.value, parents=(a, b), backward=back, name="mul")


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.value * c, parents=(a,), backward=lambda g: a._accum(g * c), name="scale")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return Tensor(out, parents=(a,), backward=lambda g: a._accum(g * out), name="exp")


def square(a: Tensor) -> Tensor:
    return Tensor(a.value ** 2, parents=(a,), backward=lambda g: a._accum(2.0 * g * a.value),
                  name="square")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0).astype(a.dtype), parents=(a,),
                  backward=lambda g: a._accum(g * mask), name="relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(a.dtype)
    return Tensor(out, parents=(a,), backward=lambda g: a._accum(g * out * (1.0 - out)),
                  name="sigmoid")


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.value.sum(), parents=(a,),
                  backward=lambda g: a._accum(np.broadcast_to(g, a.shape)), name="sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return Tensor(a.value.mean(), parents=(a,),
                  backward=lambda g: a._accum(np.broadcast_to(g / n, a.shape)), name="mean")


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.value.reshape(shape), parents=(a,),
                  backward=lambda g: a._accum(g.reshape(a.shape)), name="reshape")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(part)
    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), parents=tuple(tensors),
                  backward=back, name="concat")


def broadcast_points(a: Tensor, n: int) -> Tensor:
    """(B, c) -> (B, n, c), one copy of each row per point."""
    return Tensor(np.broadcast_to(a.value[:, None, :], (a.shape[0], n, a.shape[1])).copy(),
                  parents=(a,), backward=lambda g: a._accum(g.sum(axis=1)), name="broadcast")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: (..., in) @ (in, out) + (out)."""
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    if b is not None and b.shape != (W.shape[1],):
        raise ValueError("linear: bias shape mismatch")
    out = x.value @ W.value
    if b is not None:
        out = out + b.value

    def back(g):
        if x.requires_grad:
            x._accum(g @ W.value.T)
        if W.requires_grad:
            W._accum(x.value.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1]))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, W.shape[1]).sum(axis=0))
    parents = (x, W) if b is None else (x, W, b)
    return Tensor(out, parents=parents, backward=back, name="linear")


def max_pool_points(features: Tensor) -> Tensor:
    """Columnwise max over the point axis (-2); ties route to the lowest index."""
    f = features.value
    if f.shape[-2] == 0:
        raise ValueError("max_pool_points: no points")
    arg = np.argmax(f, axis=-2)
    out = np.take_along_axis(f, arg[..., None, :], axis=-2)[..., 0, :]

    def back(g):
        gi = np.zeros_like(f)
        np.put_along_axis(gi, arg[..., None, :], g[..., None, :], axis=-2)
        features._accum(gi)
    return Tensor(out, parents=(features,), backward=back, name="max_pool")


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(scores: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(scores))


def softmax_cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean over points of -log softmax(score)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    m = scores.shape[-1]
    if labels.shape != scores.shape[:-1]:
        raise ValueError("softmax_cross_entropy: label shape mismatch")
    if np.any(labels < 0) or np.any(labels >= m):
        raise ValueError(f"label out of range [0, {m})")
    logp = log_softmax(scores.value)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    count = labels.size
    loss = -picked.mean()

    def back(g):
        d = np.exp(logp)
        np.put_along_axis(d, labels[..., None],
                          np.take_along_axis(d, labels[..., None], axis=-1) - 1.0, axis=-1)
        scores._accum(g * d / count)
    return Tensor(np.asarray(loss, dtype=scores.dtype), parents=(scores,), backward=back,
                  name="cross_entropy")


@dataclass
class Parameter:
    tensor: Tensor
    name: str
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.m is None:
            self.m = np.zeros_like(self.tensor.value)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.value)

    @property
    def value(self) -> np.ndarray:
        return self.tensor.value

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float32):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def dense_params(rng, widths, prefix: str, dtype=np.float32) -> list[Parameter]:
    """Weights and biases for an MLP with the given layer widths."""
    out = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        out.append(Parameter(Tensor(glorot(rng, a, b, (a, b), dtype)), f"{prefix}.{i}.W"))
        out.append(Parameter(Tensor(np.zeros(b, dtype=dtype)), f"{prefix}.{i}.b"))
    return out


def mlp(x: Tensor, params: list[Parameter], final_relu: bool = True) -> Tensor:
    layers = len(params) // 2
    for i in range(layers):
        x = linear(x, params[2 * i].tensor, params[2 * i + 1].tensor)
        if i < layers - 1 or final_relu:
            x = relu(x)
    return x


def shared_point_mlp(points: Tensor, params: list[Parameter]) -> Tensor:
    """The same MLP applied to every point row: (..., n, 3) -> (..., n, 64)."""
    if points.shape[-1] != params[0].value.shape[0]:
        raise ValueError("shared_point_mlp: coordinate width mismatch")
    if points.shape[-2] < 1:
        raise ValueError("shared_point_mlp: need at least one point")
    return mlp(points, params, final_relu=True)


def adam_step(params: list[Parameter], grads=None, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected adaptive-moment update, in place.

    ``grads`` defaults to each parameter's accumulated ``tensor.grad``; a
    parameter without a gradient is treated as having a zero gradient.
    """
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.value)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        mhat = p.m / (1.0 - beta1 ** p.step)
        vhat = p.v / (1.0 - beta2 ** p.step)
        upd = (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.value.dtype)
        p.tensor.value = p.value - upd


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the larger of max |a| and max |b|."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)
