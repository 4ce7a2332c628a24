"""RBF subvoxel grids and the {0,1} occupancy baseline.

A cloud's box is cut into D x H x W voxels and each voxel into k^3 subvoxels.
A subvoxel stores a kernel response to the points of its voxel: the max of
the kernel over those points (default) or their unit-weight sum.

Array axes (0, 1, 2) index (D, H, W); point coordinate j is binned along
array axis j.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .pointcloud import Aabb, LabeledPointCloud, bounding_box

KERNELS = ("gaussian", "inverse_quadratic")
COMBINES = ("max", "sum")
NEIGHBORHOODS = ("local", "global")


@dataclass(frozen=True)
class GridSpec:
    D: int = 16
    H: int = 16
    W: int = 16
    k: int = 4
    sigma: float = 1.0
    kernel: str = "gaussian"
    combine: str = "max"
    # when True, sigma is a multiple of min(v_D, v_H, v_W) rather than world units
    sigma_relative: bool = True
    neighborhood: str = "local"

    def __post_init__(self):
        for name in ("D", "H", "W", "k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.combine not in COMBINES:
            raise ValueError(f"unknown combine mode {self.combine!r}")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ValueError(f"unknown neighborhood {self.neighborhood!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.D, self.H, self.W)

    def voxel_sizes(self, box: Aabb) -> np.ndarray:
        return box.padded().extent / np.array(self.dims, dtype=np.float64)

    def world_sigma(self, box: Aabb) -> float:
        if self.sigma_relative:
            return float(self.sigma * self.voxel_sizes(box).min())
        return float(self.sigma)

    @classmethod
    def shapenet(cls, **kw) -> "GridSpec":
        return cls(**{"D": 16, "H": 16, "W": 16, "k": 4, "sigma": 1.0, **kw})

    @classmethod
    def s3dis(cls, **kw) -> "GridSpec":
        return cls(**{"D": 16, "H": 16, "W": 32, "k": 4, "sigma": 5.0, **kw})


@dataclass(frozen=True)
class SubvoxelTensor:
    values: np.ndarray  # (D, H, W, k, k, k)
    spec: GridSpec
    box: Aabb

    def blocks(self) -> np.ndarray:
        """Flatten to (D*H*W, k^3) rows, voxel-major."""
        D, H, W = self.spec.dims
        return self.values.reshape(D * H * W, self.spec.k ** 3)


@dataclass(frozen=True)
class OccupancyGrid:
    bits: np.ndarray  # (D*k, H*k, W*k) uint8

    def blocks(self, k: int) -> np.ndarray:
        """Regroup into (D, H, W, k^3) so each voxel carries its k^3 bits."""
        Dk, Hk, Wk = self.bits.shape
        b = self.bits.reshape(Dk // k, k, Hk // k, k, Wk // k, k)
        return b.transpose(0, 2, 4, 1, 3, 5).reshape(Dk // k, Hk // k, Wk // k, k ** 3)


def _bin(coords: np.ndarray, lo: np.ndarray, cell: np.ndarray, counts) -> np.ndarray:
    idx = np.floor((coords - lo) / cell).astype(np.int64)
    return np.clip(idx, 0, np.asarray(counts, dtype=np.int64) - 1)


def voxel_of(point, spec: GridSpec, box: Aabb) -> tuple[int, int, int]:
    box = box.padded()
    idx = _bin(np.asarray(point, dtype=np.float64).reshape(1, 3), box.min,
               spec.voxel_sizes(box), spec.dims)[0]
    return tuple(int(i) for i in idx)


def kernel_response(sq_dist: np.ndarray, sigma: float, kernel: str) -> np.ndarray:
    if kernel == "gaussian":
        return np.exp(-sq_dist / (2.0 * sigma * sigma))
    if kernel == "inverse_quadratic":
        return 1.0 / (1.0 + sigma * sigma * sq_dist)
    raise ValueError(f"unknown kernel {kernel!r}")


def rbf_value(p, pts, spec: GridSpec, sigma: float | None = None) -> float:
    """Kernel field at ``p``; ``sigma`` overrides ``spec.sigma`` as world units."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return 0.0
    s = spec.sigma if sigma is None else sigma
    d2 = np.sum((pts - np.asarray(p, dtype=np.float64)) ** 2, axis=1)
    vals = kernel_response(d2, s, spec.kernel)
    return float(vals.max() if spec.combine == "max" else vals.sum())


def subvoxel_offsets(k: int) -> np.ndarray:
    """Centers of the k^3 subvoxels in voxel-fraction units, (k^3, 3) in C order."""
    c = (np.arange(k) + 0.5) / k
    g = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def subvoxel_centers(spec: GridSpec, box: Aabb) -> np.ndarray:
    """World coordinates of every subvoxel center, shape (D, H, W, k, k, k, 3)."""
    box = box.padded()
    v = spec.voxel_sizes(box)
    D, H, W = spec.dims
    k = spec.k
    origin = np.stack(np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij"), -1)
    origin = box.min + origin * v
    off = subvoxel_offsets(k).reshape(k, k, k, 3) * v
    return origin[:, :, :, None, None, None, :] + off


def _fill(values, pts, vox_flat, centers_flat, sigma, spec, voxel_ids):
    """Evaluate the voxels in ``voxel_ids`` into ``values`` (flat (DHW, k^3) view)."""
    mask = np.isin(vox_flat, voxel_ids)
    if not np.any(mask):
        return
    p = pts[mask]
    v = vox_flat[mask]
    d2 = np.sum((centers_flat[v] - p[:, None, :]) ** 2, axis=-1)
    resp = kernel_response(d2, sigma, spec.kernel)
    if spec.combine == "max":
        np.maximum.at(values, v, resp)
    else:
        np.add.at(values, v, resp)


def voxelize(cloud: LabeledPointCloud, spec: GridSpec, box: Aabb | None = None,
             workers: int = 1) -> SubvoxelTensor:
    """RBF subvoxel tensor of shape (D, H, W, k, k, k).

    ``box`` defaults to the cloud's own bounding box. Work is partitioned over
    contiguous voxel ranges; each voxel sees its points in input order, so the
    result does not depend on ``workers``.
    """
    box = (bounding_box(cloud) if box is None else box).padded()
    D, H, W = spec.dims
    k3 = spec.k ** 3
    sigma = spec.world_sigma(box)
    centers = subvoxel_centers(spec, box).reshape(D * H * W, k3, 3)
    values = np.zeros((D * H * W, k3), dtype=np.float64)
    pts = cloud.points

    if spec.neighborhood == "global":
        for vid in range(D * H * W):
            d2 = np.sum((centers[vid][:, None, :] - pts[None, :, :]) ** 2, axis=-1)
            resp = kernel_response(d2, sigma, spec.kernel)
            values[vid] = resp.max(axis=1) if spec.combine == "max" else resp.sum(axis=1)
    else:
        idx = _bin(pts, box.min, spec.voxel_sizes(box), spec.dims)
        vox_flat = np.ravel_multi_index(idx.T, spec.dims)
        chunks = np.array_split(np.arange(D * H * W), max(1, workers))
        if workers <= 1:
            _fill(values, pts, vox_flat, centers, sigma, spec, chunks[0])
        else:
            # disjoint voxel ranges: no two workers write the same row
            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(lambda c: _fill(values, pts, vox_flat, centers, sigma, spec, c),
                            chunks))
    return SubvoxelTensor(values.reshape(D, H, W, spec.k, spec.k, spec.k), spec, box)


def occupancy(cloud: LabeledPointCloud, spec: GridSpec, box: Aabb | None = None) -> OccupancyGrid:
    box = (bounding_box(cloud) if box is None else box).padded()
    fine = tuple(d * spec.k for d in spec.dims)
    cell = box.extent / np.array(fine, dtype=np.float64)
    idx = _bin(cloud.points, box.min, cell, fine)
    bits = np.zeros(fine, dtype=np.uint8)
    bits[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return OccupancyGrid(bits)
