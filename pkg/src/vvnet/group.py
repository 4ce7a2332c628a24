"""Exact integer algebra of the 3D groups p4 and p4m acting on Z^3.

Elements are 4x4 homogeneous integer matrices. An element is built as the
product of three rotation-mirror factors, one per coordinate plane, followed
by a translation. The first factor acts on coordinates (0, 1); the other two
are the same pattern moved cyclically onto planes (1, 2) and (2, 0).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# cos and sin of r * pi/2, r = 0..3
_COS = (1, 0, -1, 0)
_SIN = (0, 1, 0, -1)
_PLANES = ((0, 1), (1, 2), (2, 0))


class GroupElement:
    __slots__ = ("mat", "_key")

    def __init__(self, mat):
        m = np.array(mat, dtype=np.int64)
        if m.shape != (4, 4):
            raise ValueError("group element must be a 4x4 matrix")
        if tuple(m[3]) != (0, 0, 0, 1):
            raise ValueError("last row must be (0, 0, 0, 1)")
        rot = m[:3, :3]
        if not (np.all(np.abs(rot).sum(axis=0) == 1) and np.all(np.abs(rot).sum(axis=1) == 1)
                and np.all(np.isin(rot, (-1, 0, 1)))):
            raise ValueError("rotation block must be a signed permutation matrix")
        m.setflags(write=False)
        self.mat = m
        self._key = m.tobytes()

    @property
    def rotation(self) -> np.ndarray:
        return self.mat[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.mat[:3, 3]

    @property
    def det(self) -> int:
        r = self.rotation
        # signed permutation: det = sign(perm) * product of entries
        perm = np.argmax(np.abs(r), axis=1)
        sign = 1
        p = list(perm)
        for i in range(3):
            for j in range(i + 1, 3):
                if p[i] > p[j]:
                    sign = -sign
        return int(sign * np.prod(r[np.arange(3), perm]))

    def is_stabilizer(self) -> bool:
        return not np.any(self.translation)

    def __eq__(self, other):
        return isinstance(other, GroupElement) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        rows = "; ".join(" ".join(str(int(v)) for v in row) for row in self.mat[:3])
        return f"GroupElement([{rows}])"


IDENTITY = GroupElement(np.eye(4, dtype=np.int64))


def _factor(plane: tuple[int, int], mirror: int, r: int) -> np.ndarray:
    i, j = plane
    c, s = _COS[r], _SIN[r]
    sign = -1 if mirror else 1
    f = np.eye(4, dtype=np.int64)
    f[i, i] = sign * c
    f[i, j] = -sign * s
    f[j, i] = s
    f[j, j] = c
    return f


def from_params(m=(0, 0, 0), r=(0, 0, 0), t=(0, 0, 0)) -> GroupElement:
    m = tuple(int(v) for v in m)
    r = tuple(int(v) for v in r)
    t = tuple(int(v) for v in t)
    if len(m) != 3 or any(v not in (0, 1) for v in m):
        raise ValueError(f"mirror flags must be in {{0, 1}}, got {m}")
    if len(r) != 3 or any(v not in (0, 1, 2, 3) for v in r):
        raise ValueError(f"rotation counts must be in 0..3, got {r}")
    if len(t) != 3:
        raise ValueError("translation must have three components")
    mat = np.eye(4, dtype=np.int64)
    for plane, mi, ri in zip(_PLANES, m, r):
        mat = mat @ _factor(plane, mi, ri)
    trans = np.eye(4, dtype=np.int64)
    trans[:3, 3] = t
    return GroupElement(mat @ trans)


def translation(t) -> GroupElement:
    return from_params(t=t)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    return GroupElement(a.mat @ b.mat)


def inverse(a: GroupElement) -> GroupElement:
    rt = a.rotation.T
    mat = np.eye(4, dtype=np.int64)
    mat[:3, :3] = rt
    mat[:3, 3] = -rt @ a.translation
    return GroupElement(mat)


def act(a: GroupElement, p) -> tuple[int, int, int]:
    x = np.asarray(p, dtype=np.int64).reshape(3)
    out = a.rotation @ x + a.translation
    return tuple(int(v) for v in out)


def act_many(a: GroupElement, pts: np.ndarray) -> np.ndarray:
    """Apply ``a`` to integer points of shape (..., 3)."""
    pts = np.asarray(pts, dtype=np.int64)
    return pts @ a.rotation.T + a.translation


@dataclass(frozen=True)
class StabilizerSet:
    elements: tuple[GroupElement, ...]
    kind: str

    @property
    def P(self) -> int:
        return len(self.elements)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    def index(self, g: GroupElement) -> int:
        """Position of the first element equal to ``g``."""
        for i, e in enumerate(self.elements):
            if e == g:
                return i
        raise KeyError(f"{g!r} not in stabilizer")


def enumerate_stabilizer(kind: str = "p4m", dedupe: bool = True) -> StabilizerSet:
    """All zero-translation elements produced by the parameterization.

    Iteration order is m (outer), then r, lexicographic. With ``dedupe`` the
    first occurrence of each distinct matrix is kept.
    """
    if kind == "p4":
        mirrors = [(0, 0, 0)]
    elif kind == "p4m":
        mirrors = list(itertools.product((0, 1), repeat=3))
    elif kind == "trivial":
        return StabilizerSet((IDENTITY,), kind)
    else:
        raise ValueError(f"unknown group kind {kind!r}")
    out = []
    seen = set()
    for m in mirrors:
        for r in itertools.product(range(4), repeat=3):
            g = from_params(m, r)
            if dedupe:
                if g in seen:
                    continue
                seen.add(g)
            out.append(g)
    return StabilizerSet(tuple(out), kind)


def check_axioms(stab: StabilizerSet, associativity: bool = True) -> dict[str, bool]:
    """Exhaustive closure / identity / inverse / associativity checks."""
    elems = list(stab.elements)
    keys = {e: i for i, e in enumerate(elems)}
    table = np.empty((len(elems), len(elems)), dtype=np.int64)
    closure = True
    for i, a in enumerate(elems):
        for j, b in enumerate(elems):
            c = compose(a, b)
            if c not in keys:
                closure = False
                table[i, j] = -1
            else:
                table[i, j] = keys[c]
    identity = IDENTITY in keys and all(
        compose(IDENTITY, e) == e and compose(e, IDENTITY) == e for e in elems)
    inverses = all(
        inverse(e) in keys and compose(e, inverse(e)) == IDENTITY
        and compose(inverse(e), e) == IDENTITY for e in elems)
    assoc = True
    if associativity and closure:
        # (ab)c == a(bc) over every triple, via the multiplication table
        ab_c = table[table, :]  # [i, j, k] = table[table[i, j], k]
        a_bc = table[:, table]  # [i, j, k] = table[i, table[j, k]]
        assoc = bool(np.array_equal(ab_c, a_bc))
        mats = np.stack([e.mat for e in elems])
        ab = np.einsum("iab,jbc->ijac", mats, mats)
        lhs = np.einsum("ijab,kbc->ijkac", ab, mats)
        rhs = np.einsum("iab,jkbc->ijkac", mats, ab)
        assoc = assoc and bool(np.array_equal(lhs, rhs))
    return {
        "closure": closure,
        "identity": identity,
        "inverse": inverses,
        "associativity": assoc,
        "unique": len(keys) == len(elems),
    }
