"""Euclidean charts with periodic coordinates, normal-space projections and
orthonormal frames transverse to a vector field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGENERATE_NORM = 1e-300
RESET_CONDITIONING = 1e-8


class DegenerateDirectionError(ValueError):
    """Raised when a direction vector is (numerically) zero."""


@dataclass(frozen=True)
class ChartTopology:
    """Coordinate chart of dimension ``dimension``.

    Flagged coordinates are periodic and wrapped into
    ``[offset, offset + period)``.
    """

    dimension: int
    periodic_mask: tuple[bool, ...] = ()
    period: tuple[float, ...] = ()
    offset: tuple[float, ...] = ()

    def __post_init__(self):
        d = int(self.dimension)
        if d < 1:
            raise ValueError("chart dimension must be >= 1")
        mask = tuple(bool(m) for m in self.periodic_mask) or (False,) * d
        per = tuple(float(p) for p in self.period) or (np.inf,) * d
        off = tuple(float(o) for o in self.offset) or (0.0,) * d
        if not (len(mask) == len(per) == len(off) == d):
            raise ValueError("periodic_mask, period and offset must have length d")
        for m, p in zip(mask, per):
            if m and not (np.isfinite(p) and p > 0):
                raise ValueError("periodic coordinates need a finite positive period")
        object.__setattr__(self, "dimension", d)
        object.__setattr__(self, "periodic_mask", mask)
        object.__setattr__(self, "period", per)
        object.__setattr__(self, "offset", off)

    @classmethod
    def euclidean(cls, d: int) -> "ChartTopology":
        return cls(d)

    @classmethod
    def torus(cls, d: int, period: float = 2 * np.pi) -> "ChartTopology":
        return cls(d, (True,) * d, (period,) * d)

    @property
    def is_periodic(self) -> bool:
        return any(self.periodic_mask)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "periodic": list(self.periodic_mask),
            "periods": [p if m else None for m, p in zip(self.periodic_mask, self.period)],
            "offsets": list(self.offset),
        }


def _check_dim(x: np.ndarray, topo: ChartTopology) -> None:
    if x.ndim != 1 or x.shape[0] != topo.dimension:
        raise ValueError(
            f"point has shape {x.shape}, chart dimension is {topo.dimension}"
        )


def wrap_point(x, topo: ChartTopology) -> np.ndarray:
    """Map every periodic coordinate of ``x`` into its fundamental interval."""
    x = np.asarray(x, dtype=float)
    _check_dim(x, topo)
    if not topo.is_periodic:
        return x.copy()
    out = x.copy()
    for i, (m, p, o) in enumerate(zip(topo.periodic_mask, topo.period, topo.offset)):
        if m:
            r = np.mod(out[i] - o, p)
            # np.mod can return p itself for tiny negative inputs
            if r >= p:
                r = 0.0
            out[i] = r + o
    return out


def displacement(x, y, topo: ChartTopology) -> np.ndarray:
    """Minimal-image displacement ``x - y`` on the chart."""
    v = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if not topo.is_periodic:
        return v
    for i, (m, p) in enumerate(zip(topo.periodic_mask, topo.period)):
        if m:
            v[..., i] = v[..., i] - p * np.round(v[..., i] / p)
    return v


def distance(x, y, topo: ChartTopology) -> float | np.ndarray:
    return np.linalg.norm(displacement(x, y, topo), axis=-1)


def _unit(v) -> tuple[np.ndarray, float]:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if not n > DEGENERATE_NORM:
        raise DegenerateDirectionError(
            f"direction norm {n:.3e} is degenerate (singularity of the field?)"
        )
    return v / n, n


def orthogonal_projection(v) -> np.ndarray:
    """Orthogonal projection ``I - v v^T / |v|^2`` onto the complement of ``v``."""
    u, _ = _unit(v)
    return np.eye(u.size) - np.outer(u, u)


@dataclass(frozen=True)
class NormalFrame:
    """Orthonormal basis of the orthogonal complement of ``base_direction``.

    ``basis`` is d x (d-1). ``reset`` marks frames that were rebuilt from
    scratch instead of transported from a predecessor.
    """

    base_direction: np.ndarray
    basis: np.ndarray
    reset: bool = field(default=False, compare=False)

    @property
    def projection(self) -> np.ndarray:
        return self.basis @ self.basis.T


def normal_frame(v) -> NormalFrame:
    """Deterministic Householder basis of ``v``-perp.

    The reflector maps ``v`` onto its largest coordinate axis; the remaining
    columns of the reflector span the normal space.
    """
    u, _ = _unit(v)
    d = u.size
    i = int(np.argmax(np.abs(u)))
    s = 1.0 if u[i] >= 0 else -1.0
    w = u.copy()
    w[i] += s
    refl = np.eye(d) - 2.0 * np.outer(w, w) / float(w @ w)
    cols = [j for j in range(d) if j != i]
    return NormalFrame(u, np.ascontiguousarray(refl[:, cols]))


def _reset(u: np.ndarray) -> NormalFrame:
    f = normal_frame(u)
    return NormalFrame(f.base_direction, f.basis, reset=True)


def transport_frame(prev: NormalFrame, new_direction) -> NormalFrame:
    """Carry ``prev`` to the normal space of ``new_direction``.

    Columns are projected onto the new normal space and re-orthonormalised
    by modified Gram-Schmidt. The frame is rebuilt (``reset=True``) when the
    projected columns lose rank or the direction reverses.
    """
    u, _ = _unit(new_direction)
    d = u.size
    if d == 1:
        return NormalFrame(u, np.zeros((1, 0)), reset=False)
    if float(u @ prev.base_direction) <= 0.0:
        return _reset(u)
    cols = prev.basis - np.outer(u, u @ prev.basis)
    out = np.empty_like(cols)
    for j in range(cols.shape[1]):
        c = cols[:, j].copy()
        for _ in range(2):
            c -= out[:, :j] @ (out[:, :j].T @ c)
            c -= u * (u @ c)
        nrm = float(np.linalg.norm(c))
        if nrm < RESET_CONDITIONING:
            return _reset(u)
        out[:, j] = c / nrm
    return NormalFrame(u, out, reset=False)


def frame_angles(a: NormalFrame, b: NormalFrame) -> np.ndarray:
    """Angle between matching columns of two frames (radians)."""
    c = np.clip(np.sum(a.basis * b.basis, axis=0), -1.0, 1.0)
    return np.arccos(c)
