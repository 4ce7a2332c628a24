"""Valid 3D cross-correlation and the lifting group convolution.

Feature maps are (B, D, H, W, C); filters are (K, K, K, C_in, C_out). A group
element acts on the three spatial axes in order, i.e. array axis j is group
coordinate j, rotated about the center of the index cube.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .group import GroupElement, StabilizerSet, compose
from .nn import Parameter, Tensor, glorot


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray  # (K, K, K, C_in, C_out)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 5:
            raise ValueError("filter weights must be (K_D, K_H, K_W, C_in, C_out)")
        if not (w.shape[0] == w.shape[1] == w.shape[2]):
            raise ValueError(f"kernel must be cubic, got {w.shape[:3]}")
        if np.asarray(self.bias).shape != (w.shape[4],):
            raise ValueError("bias must have C_out entries")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite filter weights")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def random(cls, rng, K, c_in, c_out, dtype=np.float64):
        fan_in, fan_out = K ** 3 * c_in, K ** 3 * c_out
        return cls(glorot(rng, fan_in, fan_out, (K, K, K, c_in, c_out), dtype),
                   np.zeros(c_out, dtype=dtype))


@dataclass(frozen=True)
class LiftedFeatureMap:
    values: np.ndarray  # (B, D', H', W', P * C_out)
    stabilizer: StabilizerSet

    @property
    def P(self) -> int:
        return self.stabilizer.P

    def block(self, p: int) -> np.ndarray:
        c = self.values.shape[-1] // self.P
        return self.values[..., p * c:(p + 1) * c]


@lru_cache(maxsize=4096)
def _source_index(rot_key: bytes, n: int) -> np.ndarray:
    """Flat source index for out[idx] = in[g^-1 (idx - c) + c] on an n^3 cube."""
    rot = np.frombuffer(rot_key, dtype=np.int64).reshape(3, 3)
    inv = rot.T
    grid = np.stack(np.meshgrid(*(np.arange(n),) * 3, indexing="ij"), -1).reshape(-1, 3)
    doubled = 2 * grid - (n - 1)  # exact centering for even n too
    src = (doubled @ inv.T + (n - 1)) // 2
    if np.any(src < 0) or np.any(src >= n):
        raise AssertionError("index map left the cube")
    flat = np.ravel_multi_index(src.T, (n, n, n))
    flat.setflags(write=False)
    return flat


def source_index(g: GroupElement, n: int) -> np.ndarray:
    if not g.is_stabilizer():
        raise ValueError("only zero-translation elements act on a filter cube")
    return _source_index(np.ascontiguousarray(g.rotation).tobytes(), n)


def transform_cube(arr: np.ndarray, g: GroupElement, first_axis: int = 0) -> np.ndarray:
    """Permute three cubic spatial axes starting at ``first_axis`` by ``g``."""
    shape = arr.shape
    n = shape[first_axis]
    if shape[first_axis:first_axis + 3] != (n, n, n):
        raise ValueError(f"spatial axes must be cubic, got {shape[first_axis:first_axis + 3]}")
    src = source_index(g, n)
    flat = arr.reshape(shape[:first_axis] + (n ** 3,) + shape[first_axis + 3:])
    return np.take(flat, src, axis=first_axis).reshape(shape)


def transform_filter(bank: FilterBank, g: GroupElement) -> FilterBank:
    return FilterBank(transform_cube(bank.weights, g, 0), bank.bias)


def rotate_input(x: np.ndarray, g: GroupElement) -> np.ndarray:
    """Spatially transform a (B, N, N, N, C) signal by ``g``."""
    return transform_cube(x, g, 1)


def block_permutation(stab: StabilizerSet, g: GroupElement) -> np.ndarray:
    """perm[q] = index(g * g_q): where block q lands after acting with ``g``."""
    return np.array([stab.index(compose(g, gq)) for gq in stab.elements], dtype=np.int64)


def apply_g_to_output(out: np.ndarray, g: GroupElement, stab: StabilizerSet) -> np.ndarray:
    P = stab.P
    c = out.shape[-1] // P
    spatial = transform_cube(out, g, 1)
    perm = block_permutation(stab, g)
    res = np.empty_like(spatial)
    for q in range(P):
        res[..., perm[q] * c:(perm[q] + 1) * c] = spatial[..., q * c:(q + 1) * c]
    return res


# plain valid 3D cross-correlation ------------------------------------------

def _check_conv_shapes(x: np.ndarray, w: np.ndarray):
    if x.ndim != 5:
        raise ValueError("input must be (B, D, H, W, C_in)")
    if w.ndim != 5 or x.shape[4] != w.shape[3]:
        raise ValueError(f"input channels {x.shape[-1]} do not match filter {w.shape}")
    if any(x.shape[1 + i] < w.shape[i] for i in range(3)):
        raise ValueError("spatial dims smaller than kernel")


def _im2col(x: np.ndarray, ksize) -> np.ndarray:
    B = x.shape[0]
    win = sliding_window_view(x, ksize, axis=(1, 2, 3))  # (B, D', H', W', C, kd, kh, kw)
    Do, Ho, Wo = win.shape[1:4]
    win = win.transpose(0, 1, 2, 3, 5, 6, 7, 4)  # kernel offsets outer, channel inner
    return win.reshape(B * Do * Ho * Wo, -1), (B, Do, Ho, Wo)


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    _check_conv_shapes(x, w)
    cols, (B, Do, Ho, Wo) = _im2col(x, w.shape[:3])
    out = cols @ w.reshape(-1, w.shape[4])
    if b is not None:
        out = out + b
    return out.reshape(B, Do, Ho, Wo, w.shape[4])


def conv3d_backward(x: np.ndarray, w: np.ndarray, grad: np.ndarray):
    """Gradients (dx, dw, db) of the valid cross-correlation."""
    _check_conv_shapes(x, w)
    kd, kh, kw, cin, cout = w.shape
    cols, (B, Do, Ho, Wo) = _im2col(x, (kd, kh, kw))
    g2 = grad.reshape(-1, cout)
    dw = (cols.T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = (g2 @ w.reshape(-1, cout).T).reshape(B, Do, Ho, Wo, kd, kh, kw, cin)
    dx = np.zeros_like(x)
    for a in range(kd):
        for b_ in range(kh):
            for c in range(kw):
                dx[:, a:a + Do, b_:b_ + Ho, c:c + Wo, :] += dcols[:, :, :, :, a, b_, c, :]
    return dx, dw, db


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = conv3d_forward(x.value, w.value, None if b is None else b.value)

    def back(g):
        dx, dw, db = conv3d_backward(x.value, w.value, g)
        if x.requires_grad:
            x._accum(dx)
        if w.requires_grad:
            w._accum(dw)
        if b is not None and b.requires_grad:
            b._accum(db)
    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward=back, name="conv3d")


# lifting group convolution -------------------------------------------------

def expand_bank(w: np.ndarray, stab: StabilizerSet) -> np.ndarray:
    """(K,K,K,C_in,C_out) -> (K,K,K,C_in,P*C_out), block p transformed by g_p."""
    return np.concatenate([transform_cube(w, g, 0) for g in stab.elements], axis=-1)


def reduce_bank_grad(dw_all: np.ndarray, stab: StabilizerSet) -> np.ndarray:
    """Pull an expanded-bank gradient back onto the base filter, stabilizer order."""
    K = dw_all.shape[0]
    cout = dw_all.shape[-1] // stab.P
    tail = dw_all.shape[3:4] + (cout,)
    dw = np.zeros((K ** 3,) + tail, dtype=dw_all.dtype)
    for p, g in enumerate(stab.elements):
        src = source_index(g, K)
        blk = dw_all[..., p * cout:(p + 1) * cout].reshape((K ** 3,) + tail)
        # src is a permutation, so the scatter has no collisions
        dw[src] += blk
    return dw.reshape((K, K, K) + tail)


def lift_gconv3d(x: np.ndarray, bank: FilterBank, stab: StabilizerSet) -> LiftedFeatureMap:
    w_all = expand_bank(np.asarray(bank.weights), stab)
    b_all = np.tile(np.asarray(bank.bias), stab.P)
    return LiftedFeatureMap(conv3d_forward(np.asarray(x), w_all, b_all), stab)


def backward_lift_gconv3d(x: np.ndarray, bank: FilterBank, stab: StabilizerSet,
                          grad: np.ndarray):
    """Exact (dx, dweights, dbias) for ``lift_gconv3d`` given the upstream gradient."""
    w_all = expand_bank(np.asarray(bank.weights), stab)
    cout = bank.weights.shape[4]
    out_shape = tuple(x.shape[1 + i] - bank.K + 1 for i in range(3))
    if grad.shape != (x.shape[0],) + out_shape + (stab.P * cout,):
        raise ValueError(f"upstream gradient shape {grad.shape} does not match forward output")
    dx, dw_all, db_all = conv3d_backward(np.asarray(x), w_all, grad)
    dw = reduce_bank_grad(dw_all, stab)
    db = db_all.reshape(stab.P, cout).sum(axis=0)
    return dx, dw, db


def lift_gconv(x: Tensor, w: Tensor, b: Tensor, stab: StabilizerSet) -> Tensor:
    """Differentiable lifting convolution on ``Tensor`` inputs."""
    w_all = expand_bank(w.value, stab)
    b_all = np.tile(b.value, stab.P)
    out = conv3d_forward(x.value, w_all, b_all)
    cout = w.shape[4]

    def back(g):
        dx, dw_all, db_all = conv3d_backward(x.value, w_all, g)
        if x.requires_grad:
            x._accum(dx)
        if w.requires_grad:
            w._accum(reduce_bank_grad(dw_all, stab))
        if b.requires_grad:
            b._accum(db_all.reshape(stab.P, cout).sum(axis=0))
    return Tensor(out, parents=(x, w, b), backward=back, name="lift_gconv")


def gconv_params(rng, K: int, c_in: int, c_out: int, name: str, dtype=np.float32):
    bank = FilterBank.random(rng, K, c_in, c_out, dtype)
    return [Parameter(Tensor(bank.weights), f"{name}.W"), Parameter(Tensor(bank.bias), f"{name}.b")]
