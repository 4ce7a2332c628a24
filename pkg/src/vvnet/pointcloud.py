"""Point-cloud container, text I/O, bounding boxes and farthest point sampling."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise CloudFormatError("zero points")
        if not np.all(np.isfinite(pts)):
            raise CloudFormatError("non-finite coordinate")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise CloudFormatError(
                    f"labels has {lab.shape[0]} entries for {pts.shape[0]} points")
            if np.any(lab < 0):
                raise CloudFormatError("negative label")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def subset(self, indices) -> "LabeledPointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return LabeledPointCloud(self.points[idx], labels)

    def permuted(self, perm) -> "LabeledPointCloud":
        return self.subset(perm)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).reshape(3)
        hi = np.array(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def padded(self, eps: float = 1e-6) -> "Aabb":
        """Grow zero-extent axes by ``eps`` so every cell size is positive."""
        hi = self.max.copy()
        hi[self.extent <= 0] += eps
        return Aabb(self.min, hi)


UNIT_BOX = Aabb((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def load_cloud(path, has_labels: bool = False) -> LabeledPointCloud:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    want = 4 if has_labels else 3
    points, labels = [], []
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != want:
                raise CloudFormatError(
                    f"line {lineno}: expected {want} fields, got {len(parts)}")
            try:
                xyz = [float(v) for v in parts[:3]]
                if has_labels:
                    lab = int(parts[3])
            except ValueError:
                raise CloudFormatError(f"line {lineno}: malformed number") from None
            if not all(np.isfinite(xyz)):
                raise CloudFormatError(f"line {lineno}: non-finite coordinate")
            points.append(xyz)
            if has_labels:
                if lab < 0:
                    raise CloudFormatError(f"line {lineno}: negative label")
                labels.append(lab)
    if not points:
        raise CloudFormatError("zero points")
    return LabeledPointCloud(np.array(points), np.array(labels) if has_labels else None)


def save_cloud(cloud: LabeledPointCloud, path) -> None:
    """Write ``x y z [label]`` lines; coordinates use repr so they round-trip exactly."""
    path = Path(path)
    lines = []
    for i, p in enumerate(cloud.points):
        row = " ".join(repr(float(v)) for v in p)
        if cloud.labels is not None:
            row += f" {int(cloud.labels[i])}"
        lines.append(row)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def bounding_box(cloud: LabeledPointCloud) -> Aabb:
    if cloud.n == 0:
        raise ValueError("empty cloud")
    return Aabb(cloud.points.min(axis=0), cloud.points.max(axis=0))


def normalize_to_unit(cloud: LabeledPointCloud) -> LabeledPointCloud:
    """Map the cloud's own (padded) box onto [0, 1]^3, axis by axis."""
    box = bounding_box(cloud).padded()
    pts = (cloud.points - box.min) / box.extent
    return LabeledPointCloud(np.clip(pts, 0.0, 1.0), cloud.labels)


def farthest_point_sample(cloud: LabeledPointCloud, count: int, seed: int = 0) -> list[int]:
    n = cloud.n
    if count <= 0:
        raise ValueError("count must be positive")
    if count > n:
        raise ValueError(f"count {count} exceeds point count {n}")
    pts = cloud.points
    start = seed % n
    chosen = [start]
    selected = np.zeros(n, dtype=bool)
    selected[start] = True
    dist = np.sum((pts - pts[start]) ** 2, axis=1)
    for _ in range(count - 1):
        cand = np.where(selected, -np.inf, dist)
        # argmax returns the first maximum: lowest index wins ties
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        selected[nxt] = True
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return chosen
