"""Linear Poincaré Flow along sampled trajectories and its infinitesimal
generators.

The LPF at ``x`` over time ``t`` is ``P_x^t = O_{phi_t x} D phi_t(x)``
restricted to the normal space of ``G(x)``. In orthonormal normal frames
``Q_k`` it is the ``(d-1) x (d-1)`` matrix ``Q_k^T Z_k Q_0``. We accumulate
it one step at a time,

    P_{k+1} = (Q_{k+1}^T M_k Q_k) P_k,

with ``M_k`` the RK4 step derivative. Both forms agree up to the
integrator error, but forming ``Q_k^T Z_k`` directly cancels catastrophically
when ``Z_k`` shears strongly along the flow direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .flow import SmoothSystem, TrajectorySegment, integrate, rk4_step_derivative
from .geometry import NormalFrame, normal_frame, transport_frame
from .linalg import singular_values

REGULAR_NORM = 1e-8
# matrices are rescaled when their entries leave this range
_RESCALE = 1e100


class NearSingularityError(ValueError):
    """The trajectory came closer than 1e-8 (in ``|G|``) to a zero of ``G``."""

    def __init__(self, index: int, norm: float):
        super().__init__(f"|G| = {norm:.3e} < {REGULAR_NORM:.0e} at sample {index}")
        self.index = index
        self.norm = norm


@dataclass
class LpfCocycle:
    """LPF matrices along a trajectory.

    The true matrix at sample ``k`` is ``exp(log_scale[k]) * matrices[k]``;
    ``log_scale`` stays zero unless entries would overflow or underflow.
    ``steps[k]`` is the one-step matrix ``Q_{k+1}^T M_k Q_k``.
    """

    times: np.ndarray
    bases: np.ndarray
    directions: np.ndarray
    resets: np.ndarray
    matrices: np.ndarray
    log_scale: np.ndarray
    steps: np.ndarray
    log_norms: np.ndarray
    log_conorms: np.ndarray
    states: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def normal_dim(self) -> int:
        return self.matrices.shape[-1]

    def frame(self, k: int) -> NormalFrame:
        return NormalFrame(self.directions[k], self.bases[k], bool(self.resets[k]))

    def matrix(self, k: int) -> np.ndarray:
        """Unscaled ``P_k`` (may overflow for very long horizons)."""
        return np.exp(self.log_scale[k]) * self.matrices[k]

    def log_growth(self, v0) -> np.ndarray:
        """``ln |P_k v0|`` for every sample, overflow-safe."""
        v0 = np.asarray(v0, dtype=float)
        pv = self.matrices @ v0
        with np.errstate(divide="ignore"):
            return np.log(np.linalg.norm(pv, axis=-1)) + self.log_scale


def _check_regular(G: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(G, axis=-1)
    bad = np.flatnonzero(~(norms >= REGULAR_NORM))
    if bad.size:
        raise NearSingularityError(int(bad[0]), float(norms[bad[0]]))
    return norms


def _planar_frames(U: np.ndarray, first: NormalFrame):
    """Transported frames for ``d = 2``: the rotated direction with a sign
    fixed by the first frame. Returns ``None`` if any step reverses."""
    if np.any(np.einsum("ij,ij->i", U[1:], U[:-1]) <= 0.0):
        return None
    rot = np.stack([-U[:, 1], U[:, 0]], axis=-1)
    sign = 1.0 if float(rot[0] @ first.basis[:, 0]) >= 0 else -1.0
    return (sign * rot)[:, :, None], np.zeros(len(U), dtype=bool)


def transported_frames(directions: np.ndarray, first: NormalFrame | None = None):
    """Frames along a sequence of field directions, starting from ``first``
    (or the Householder frame of the first direction)."""
    U = directions / np.linalg.norm(directions, axis=-1)[:, None]
    if first is None:
        first = normal_frame(U[0])
    d = U.shape[1]
    if d == 2:
        out = _planar_frames(U, first)
        if out is not None:
            bases, resets = out
            bases[0] = first.basis
            resets[0] = first.reset
            return bases, resets
    bases = np.empty((len(U), d, d - 1))
    resets = np.zeros(len(U), dtype=bool)
    f = first
    bases[0] = f.basis
    resets[0] = f.reset
    for k in range(1, len(U)):
        f = transport_frame(f, U[k])
        bases[k] = f.basis
        resets[k] = f.reset
    return bases, resets


def _accumulate(B: np.ndarray):
    """Running products ``P_{k+1} = B_k P_k`` with ``P_0 = I``, rescaled."""
    n, m, _ = B.shape
    mats = np.empty((n + 1, m, m))
    scale = np.zeros(n + 1)
    if m == 1:
        b = B[:, 0, 0]
        sgn = np.concatenate(([1.0], np.cumprod(np.sign(b))))
        with np.errstate(divide="ignore"):
            scale[1:] = np.cumsum(np.log(np.abs(b)))
        mats[:, 0, 0] = sgn
        return mats, scale
    P = np.eye(m)
    s = 0.0
    mats[0] = P
    for k in range(n):
        P = B[k] @ P
        a = float(np.max(np.abs(P)))
        if a > _RESCALE or 0.0 < a < 1.0 / _RESCALE:
            P = P / a
            s += float(np.log(a))
        mats[k + 1] = P
        scale[k + 1] = s
    return mats, scale


def lpf_cocycle(seg: TrajectorySegment, system: SmoothSystem,
                first_frame: NormalFrame | None = None) -> LpfCocycle:
    """LPF matrices in transported normal frames along ``seg``.

    Raises
    ------
    NearSingularityError
        If ``|G(x_k)| < 1e-8`` at some sample.
    ValueError
        If ``seg`` has no step derivatives or the system is not a flow.
    """
    if not system.is_flow:
        raise ValueError("the Linear Poincaré Flow needs a vector field")
    if system.dimension < 2:
        raise ValueError("the Linear Poincaré Flow needs dimension >= 2")
    if seg.step_jacobians is None:
        raise ValueError("trajectory was integrated without the variational equation")
    G = np.array([system(x) for x in seg.states])
    _check_regular(G)
    bases, resets = transported_frames(G, first_frame)
    B = np.einsum("kji,kjl,klm->kim", bases[1:], seg.step_jacobians, bases[:-1])
    mats, scale = _accumulate(B)
    s = singular_values(mats)
    with np.errstate(divide="ignore"):
        log_norms = np.log(s[:, 0]) + scale
        log_conorms = np.log(s[:, -1]) + scale
    U = G / np.linalg.norm(G, axis=-1)[:, None]
    return LpfCocycle(seg.times.copy(), bases, U, resets, mats, scale, B,
                      log_norms, log_conorms, seg.states)


def lpf_from(system: SmoothSystem, x0, T: float, dt: float,
             first_frame: NormalFrame | None = None) -> LpfCocycle:
    """Integrate from ``x0`` and return its LPF cocycle."""
    seg = integrate(system, x0, T, dt, with_variational=True)
    return lpf_cocycle(seg, system, first_frame)


def lpf_cocycle_residual(cocycle: LpfCocycle, system: SmoothSystem, k: int, j: int) -> float:
    """``|P_{k+j} - P'_j P_k| / |P_{k+j}|`` where ``P'_j`` is recomputed from
    the stored state ``x_k`` with the frame ``Q_k`` and the ambient formula
    ``Q^T Z Q``."""
    if k < 0 or j < 0 or k + j >= len(cocycle):
        raise IndexError("k + j outside cocycle")
    if j == 0:
        return 0.0
    x = cocycle.states[k].copy()
    Z = np.eye(system.dimension)
    for i in range(k, k + j):
        x, M = rk4_step_derivative(system, x, cocycle.times[i + 1] - cocycle.times[i])
        Z = M @ Z
    Pj = cocycle.bases[k + j].T @ Z @ cocycle.bases[k]
    lhs = cocycle.matrix(k + j)
    return float(np.linalg.norm(lhs - Pj @ cocycle.matrix(k), 2) / np.linalg.norm(lhs, 2))


def _regular_point(system: SmoothSystem, x):
    x = np.asarray(x, dtype=float)
    g = system(x)
    n = float(np.linalg.norm(g))
    if not n >= REGULAR_NORM:
        raise ValueError(f"|G(x)| = {n:.3e} is below {REGULAR_NORM:.0e}")
    return x, g, n


def generator_D(system: SmoothSystem, x, v) -> float:
    """``<O_x DG_x v, v>`` for a unit vector ``v`` normal to ``G(x)``: the
    instantaneous log-growth rate of ``|P_x^t v|`` at ``t = 0``."""
    x, g, n = _regular_point(system, x)
    v = np.asarray(v, dtype=float)
    if abs(float(np.linalg.norm(v)) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    if abs(float(v @ g)) > 1e-8 * n:
        raise ValueError("v must be orthogonal to G(x)")
    u = g / n
    w = system.jacobian(x) @ v
    w = w - u * (u @ w)
    return float(w @ v)


def generator_D_sup(system: SmoothSystem, x) -> float:
    """Largest eigenvalue of the symmetric part of ``Q^T DG_x Q``, i.e. the
    supremum of :func:`generator_D` over unit normal vectors."""
    x, g, _ = _regular_point(system, x)
    Q = normal_frame(g).basis
    S = Q.T @ system.jacobian(x) @ Q
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def generator_D_one_sided(system: SmoothSystem, x, v, h: float = 1e-4) -> tuple[float, float]:
    """Backward and forward difference quotients ``(D_-, D_+)`` of
    ``t -> ln|O_{phi_t x} D phi_t(x) v|`` at ``t = 0``, one RK4 step each way.

    For C^1 fields both approach :func:`generator_D` at rate ``O(h)``; they
    are a diagnostic only.
    """
    x, _, _ = _regular_point(system, x)
    v = np.asarray(v, dtype=float)
    out = []
    for step in (-h, h):
        y, M = rk4_step_derivative(system, x, step)
        u = system(y)
        u = u / np.linalg.norm(u)
        w = M @ v
        w = w - u * (u @ w)
        out.append(math.log(float(np.linalg.norm(w))) / step)
    return out[0], out[1]


def generator_DG(system: SmoothSystem, x, v) -> float:
    """``<DG_x v, v>`` for a unit vector ``v``."""
    v = np.asarray(v, dtype=float)
    if abs(float(np.linalg.norm(v)) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    return float(v @ system.jacobian(x) @ v)


def generator_DG_sup(system: SmoothSystem, x) -> float:
    """``lambda_max`` of the symmetric part of ``DG_x``."""
    J = system.jacobian(x)
    return float(np.linalg.eigvalsh(0.5 * (J + J.T))[-1])


def generator_series(cocycle: LpfCocycle, system: SmoothSystem, v0, k: int | None = None):
    """``D(Phi_s v0)`` at samples ``0..k``, where ``Phi_s v0`` is the unit
    vector ``P_s v0 / |P_s v0|`` carried into ambient coordinates."""
    k = len(cocycle) - 1 if k is None else int(k)
    v0 = np.asarray(v0, dtype=float)
    pv = cocycle.matrices[: k + 1] @ v0
    pv /= np.linalg.norm(pv, axis=-1)[:, None]
    W = np.einsum("kij,kj->ki", cocycle.bases[: k + 1], pv)
    out = np.empty(k + 1)
    for i in range(k + 1):
        J = system.jacobian(cocycle.states[i])
        u = cocycle.directions[i]
        Jw = J @ W[i]
        out[i] = Jw @ W[i] - (u @ Jw) * (u @ W[i])
    return out


def additivity_residual(cocycle: LpfCocycle, system: SmoothSystem, v0, t_index: int) -> float:
    """``|ln|P_k v0| - int_0^{t_k} D(Phi_s v0) ds|`` with composite Simpson
    quadrature on the sample grid."""
    k = int(t_index)
    if not 0 <= k < len(cocycle):
        raise IndexError("t_index outside cocycle")
    v0 = np.asarray(v0, dtype=float)
    if abs(float(np.linalg.norm(v0)) - 1.0) > 1e-10:
        raise ValueError("v0 must be a unit vector")
    if k == 0:
        return 0.0
    D = generator_series(cocycle, system, v0, k)
    integral = float(simpson(D, x=cocycle.times[: k + 1]))
    return abs(float(cocycle.log_growth(v0)[k]) - integral)


@dataclass
class SectionalExponents:
    liminf_estimate: float
    limsup_estimate: float
    times: np.ndarray
    values: np.ndarray
    caveat: str = "finite-horizon estimate over the stated window"

    def to_dict(self) -> dict:
        return {
            "liminf_estimate": self.liminf_estimate,
            "limsup_estimate": self.limsup_estimate,
            "window": [float(self.times[0]), float(self.times[-1])],
            "caveat": self.caveat,
        }


def sectional_exponents(cocycle: LpfCocycle, window, conorm: bool = False) -> SectionalExponents:
    """Extremes of ``ln|P^T| / T`` (or of ``-ln|(P^T)^-1| / T`` when
    ``conorm``) over sample times ``T`` in ``window``.

    The conorm variant returns ``ln sigma_min / T``; its negation is the
    growth rate of ``|(P^T)^-1|``.
    """
    T0, T1 = map(float, window)
    if T0 < 1.0:
        raise ValueError("window must start at T0 >= 1")
    if T1 > cocycle.times[-1] + 1e-12:
        raise ValueError("window extends past the trajectory")
    t = cocycle.times
    mask = (t >= T0 - 1e-12) & (t <= T1 + 1e-12)
    if not mask.any():
        raise ValueError("empty window")
    logs = cocycle.log_conorms if conorm else cocycle.log_norms
    vals = logs[mask] / t[mask]
    return SectionalExponents(float(vals.min()), float(vals.max()), t[mask], vals)
