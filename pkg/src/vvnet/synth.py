"""Labelled synthetic shapes built from boxes, cylinders and cones.

Part ids are global across categories, so a point's label depends on the
category of its shape as well as on where it sits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import LabeledPointCloud

CATEGORIES: dict[str, tuple[int, ...]] = {
    "table": (0, 1),        # top, legs
    "chair": (2, 3, 4),     # seat, back, legs
    "lamp": (5, 6, 7),      # base, pole, shade
    "rocket": (8, 9, 10),   # body, nose, fins
}
NUM_PARTS = 1 + max(p for parts in CATEGORIES.values() for p in parts)


@dataclass(frozen=True)
class Box:
    center: tuple
    half: tuple

    def area(self) -> float:
        a, b, c = self.half
        return 8.0 * (a * b + b * c + a * c)

    def sample(self, rng, n):
        c, h = np.asarray(self.center, float), np.asarray(self.half, float)
        a = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=a / a.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3))
        side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        u[np.arange(n), axis] = side
        return c + u * h

    def on_surface(self, pts, tol=1e-9):
        d = np.abs(pts - np.asarray(self.center)) - np.asarray(self.half)
        inside = np.all(d <= tol, axis=1)
        return inside & np.any(np.abs(d) <= tol, axis=1)


@dataclass(frozen=True)
class Cylinder:
    """Closed cylinder with a vertical axis (coordinate 2)."""
    center: tuple  # (x, y) of the axis
    radius: float
    z0: float
    z1: float

    def _areas(self):
        r, h = self.radius, self.z1 - self.z0
        return np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])

    def area(self) -> float:
        return float(self._areas().sum())

    def sample(self, rng, n):
        a = self._areas()
        which = rng.choice(3, size=n, p=a / a.sum())
        theta = rng.uniform(0, 2 * np.pi, n)
        rad = np.where(which == 0, self.radius, self.radius * np.sqrt(rng.random(n)))
        z = np.where(which == 0, rng.uniform(self.z0, self.z1, n),
                     np.where(which == 1, self.z0, self.z1))
        cx, cy = self.center
        return np.stack([cx + rad * np.cos(theta), cy + rad * np.sin(theta), z], axis=1)

    def on_surface(self, pts, tol=1e-9):
        cx, cy = self.center
        rho = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        z = pts[:, 2]
        within = (z >= self.z0 - tol) & (z <= self.z1 + tol) & (rho <= self.radius + tol)
        side = np.abs(rho - self.radius) <= tol
        cap = (np.abs(z - self.z0) <= tol) | (np.abs(z - self.z1) <= tol)
        return within & (side | cap)


@dataclass(frozen=True)
class Cone:
    """Solid cone, vertical axis, base disk at z_base and apex at z_apex."""
    center: tuple
    radius: float
    z_base: float
    z_apex: float

    def _areas(self):
        r, h = self.radius, abs(self.z_apex - self.z_base)
        return np.array([np.pi * r * np.hypot(r, h), np.pi * r * r])

    def area(self) -> float:
        return float(self._areas().sum())

    def sample(self, rng, n):
        a = self._areas()
        lateral = rng.random(n) < a[0] / a.sum()
        theta = rng.uniform(0, 2 * np.pi, n)
        # fraction of the way from apex to base; sqrt makes the density area-uniform
        f = np.sqrt(rng.random(n))
        rad = np.where(lateral, self.radius * f, self.radius * np.sqrt(rng.random(n)))
        z = np.where(lateral, self.z_apex + f * (self.z_base - self.z_apex), self.z_base)
        cx, cy = self.center
        return np.stack([cx + rad * np.cos(theta), cy + rad * np.sin(theta), z], axis=1)

    def on_surface(self, pts, tol=1e-9):
        cx, cy = self.center
        rho = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        lo, hi = sorted((self.z_base, self.z_apex))
        z = pts[:, 2]
        f = (z - self.z_apex) / (self.z_base - self.z_apex)
        within = (z >= lo - tol) & (z <= hi + tol)
        lateral = np.abs(rho - self.radius * f) <= tol
        base = (np.abs(z - self.z_base) <= tol) & (rho <= self.radius + tol)
        return within & (lateral | base)


def _legs(cx, cy, sx, sy, leg, z0, z1):
    return [Box((cx + i * sx, cy + j * sy, 0.5 * (z0 + z1)), (leg, leg, 0.5 * (z1 - z0)))
            for i in (-1, 1) for j in (-1, 1)]


def _table(rng):
    w, d = rng.uniform(0.8, 1.2), rng.uniform(0.5, 0.9)
    hleg, t, leg = rng.uniform(0.5, 0.8), rng.uniform(0.04, 0.1), rng.uniform(0.03, 0.06)
    top = Box((0, 0, hleg + t / 2), (w / 2, d / 2, t / 2))
    legs = _legs(0, 0, w / 2 - leg, d / 2 - leg, leg, 0.0, hleg)
    return [[top], legs]


def _chair(rng):
    w = rng.uniform(0.4, 0.6)
    hseat, t, leg = rng.uniform(0.35, 0.5), rng.uniform(0.04, 0.08), rng.uniform(0.025, 0.045)
    hback, tb = rng.uniform(0.4, 0.7), rng.uniform(0.03, 0.07)
    seat = Box((0, 0, hseat + t / 2), (w / 2, w / 2, t / 2))
    back = Box((0, -w / 2 + tb / 2, hseat + t + hback / 2), (w / 2, tb / 2, hback / 2))
    legs = _legs(0, 0, w / 2 - leg, w / 2 - leg, leg, 0.0, hseat)
    return [[seat], [back], legs]


def _lamp(rng):
    rb, hb = rng.uniform(0.15, 0.3), rng.uniform(0.03, 0.08)
    rp, hp = rng.uniform(0.015, 0.03), rng.uniform(0.5, 0.9)
    rs, hs = rng.uniform(0.2, 0.35), rng.uniform(0.2, 0.35)
    base = Cylinder((0, 0), rb, 0.0, hb)
    pole = Cylinder((0, 0), rp, hb, hb + hp)
    shade = Cone((0, 0), rs, hb + hp, hb + hp + hs)
    return [[base], [pole], [shade]]


def _rocket(rng):
    r, h = rng.uniform(0.08, 0.15), rng.uniform(0.6, 1.0)
    hn = rng.uniform(0.15, 0.3)
    fl, fh, ft = rng.uniform(0.1, 0.2), rng.uniform(0.15, 0.3), 0.01
    body = Cylinder((0, 0), r, 0.0, h)
    nose = Cone((0, 0), r, h, h + hn)
    fins = [Box((r + fl / 2, 0, fh / 2), (fl / 2, ft, fh / 2)),
            Box((-r - fl / 2, 0, fh / 2), (fl / 2, ft, fh / 2)),
            Box((0, r + fl / 2, fh / 2), (ft, fl / 2, fh / 2)),
            Box((0, -r - fl / 2, fh / 2), (ft, fl / 2, fh / 2))]
    return [[body], [nose], fins]


_BUILDERS = {"table": _table, "chair": _chair, "lamp": _lamp, "rocket": _rocket}


def build_parts(kind: str, rng) -> list[list]:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {sorted(_BUILDERS)}")
    return _BUILDERS[kind](rng)


def synth(kind: str, n_points: int, noise_sd: float = 0.0, seed: int = 0) -> LabeledPointCloud:
    """Sample ``n_points`` labelled surface points of a randomly proportioned shape."""
    if kind not in _BUILDERS:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {sorted(_BUILDERS)}")
    part_ids = CATEGORIES[kind]
    if n_points < len(part_ids):
        raise ValueError(f"{kind} has {len(part_ids)} parts; need n_points >= that")
    rng = np.random.default_rng(seed)
    parts = build_parts(kind, rng)
    areas = np.array([sum(p.area() for p in prims) for prims in parts])
    counts = 1 + rng.multinomial(n_points - len(parts), areas / areas.sum())
    pts, labels = [], []
    for prims, pid, cnt in zip(parts, part_ids, counts):
        pa = np.array([p.area() for p in prims])
        sub = rng.multinomial(cnt, pa / pa.sum())
        for prim, c in zip(prims, sub):
            if c:
                pts.append(prim.sample(rng, c))
                labels.append(np.full(c, pid))
    pts = np.concatenate(pts)
    labels = np.concatenate(labels)
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
    order = rng.permutation(n_points)
    return LabeledPointCloud(pts[order], labels[order])


def make_dataset(n_per_kind: int, n_points: int = 512, noise_sd: float = 0.0, seed: int = 0,
                 kinds=tuple(CATEGORIES)) -> list[tuple[str, LabeledPointCloud]]:
    """Interleaved (kind, cloud) pairs; cloud j of kind i uses a seed derived from (seed, i, j)."""
    out = []
    for j in range(n_per_kind):
        for i, kind in enumerate(kinds):
            s = int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])
            out.append((kind, synth(kind, n_points, noise_sd, s)))
    return out
