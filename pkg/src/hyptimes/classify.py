"""Trajectory classification: sinks, sources and accumulated saddles.

Maps go through reverse hyperbolic times, contracting balls and the nested
contraction search. Flows are screened, in order, for an equilibrium start,
full-derivative contraction (equilibrium sink), accumulation of a declared
equilibrium, sectional (LPF) contraction (periodic sink via return maps)
and expansion (source, via the time-reversed system).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import expm

from .flow import (DEFAULT_DT, NumericalError, SmoothSystem, TrajectorySegment, integrate,
                   iterate, rk4_step, rk4_step_derivative, step_sizes)
from .geometry import NormalFrame, displacement, normal_frame, wrap_point
from .hyptimes import (HyperbolicTimeRecord, HypothesisViolation, ProbeSet, auto_zeta,
                       block_exponent_series, contracting_ball_radius,
                       detect_lpf_reverse_hyperbolic_times, detect_reverse_hyperbolic_times_map)
from .linalg import singular_values
from .lpf import NearSingularityError, lpf_cocycle, sectional_exponents

XI = 0.15
FIXED_TOL = 1e-9
HYPERBOLIC_TOL = 1e-8
EQUILIBRIUM_TOL = 1e-10
MAX_CONDITION = 1e6

VERDICTS = (
    "map_sink_basin",
    "map_source_orbit",
    "flow_equilibrium_sink",
    "flow_periodic_sink_basin",
    "flow_source",
    "accumulates_saddle",
    "inconclusive",
)


class FrameError(ValueError):
    """The eigenbasis at a saddle is too ill-conditioned for a cusp section."""


# ------------------------------------------------------------------- data


@dataclass
class SectionDisk:
    """Affine disk ``center + basis u``, ``|u| <= radius``, normal to ``G(center)``."""

    center: np.ndarray
    frame: NormalFrame
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("section radius must be positive")

    @property
    def normal(self) -> np.ndarray:
        return self.frame.base_direction

    def point(self, u) -> np.ndarray:
        return self.center + self.frame.basis @ np.atleast_1d(np.asarray(u, dtype=float))

    def coords(self, x, topo) -> np.ndarray:
        return self.frame.basis.T @ displacement(x, self.center, topo)


def section_disk(system: SmoothSystem, y, rho: float = 1.0, xi: float = XI) -> SectionDisk:
    """Disk of radius ``rho * xi`` through ``y`` normal to ``G(y)``."""
    y = np.asarray(y, dtype=float)
    return SectionDisk(y.copy(), normal_frame(system(y)), float(rho) * float(xi))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "to_dict"):
        return _clean(obj.to_dict())
    return obj


@dataclass
class ClassificationReport:
    verdict: str
    evidence: dict = field(default_factory=dict)
    hyperbolic_times_used: HyperbolicTimeRecord | None = None
    caveats: list = field(default_factory=list)
    exponents: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return _clean({
            "verdict": self.verdict,
            "evidence": self.evidence,
            "exponents": self.exponents,
            "hyperbolic_times_used": None if self.hyperbolic_times_used is None
            else self.hyperbolic_times_used.to_dict(),
            "caveats": self.caveats,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ClassifyConfig:
    """Pipeline settings.

    ``horizon`` is an iterate count for maps and a time for flows. ``zeta``
    is auto-set to ``0.9 |liminf|`` when omitted.
    """

    horizon: float | None = None
    dt: float = DEFAULT_DT
    zeta: float | None = None
    exponent_threshold: float = 1e-2
    accumulate_radius: float = 1e-2
    accumulate_entries: int = 3
    section_rho: float = 1.0
    xi: float = XI
    probe_per_axis: int = 40
    fd_tolerance: float = 1e-4
    return_cap: float | None = None
    max_contraction_iterations: int = 2000

    @classmethod
    def from_dict(cls, d: dict | None) -> "ClassifyConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown classify settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------- singularities


def analyze_singularity(system: SmoothSystem, sigma) -> dict:
    """Eigenvalues of ``DG(sigma)`` and the resulting type.

    Returns a dict with ``eigenvalues``, ``type`` (``sink``, ``source`` or
    ``saddle``), ``hyperbolic``, ``dim_Es``, ``dim_Eu`` and
    ``codimension_one`` (``dim_Eu == 1``, i.e. a codimension-one stable
    manifold).
    """
    sigma = np.asarray(sigma, dtype=float)
    g = float(np.linalg.norm(system(sigma)))
    if g > EQUILIBRIUM_TOL:
        raise ValueError(f"|G(sigma)| = {g:.3e} exceeds {EQUILIBRIUM_TOL:.0e}: not an equilibrium")
    ev = np.linalg.eigvals(system.jacobian(sigma))
    ev = ev[np.lexsort((ev.imag, ev.real))]
    re = ev.real
    dim_u = int(np.sum(re > 0))
    dim_s = int(np.sum(re < 0))
    if dim_u == 0 and dim_s == ev.size:
        kind = "sink"
    elif dim_s == 0 and dim_u == ev.size:
        kind = "source"
    elif dim_s and dim_u:
        kind = "saddle"
    else:
        kind = "non_hyperbolic"
    return {
        "point": sigma.tolist(),
        "eigenvalues": [complex(e) for e in ev],
        "type": kind,
        "hyperbolic": bool(np.min(np.abs(re)) > HYPERBOLIC_TOL),
        "dim_Es": dim_s,
        "dim_Eu": dim_u,
        "codimension_one": dim_u == 1,
    }


def gronwall_check(system: SmoothSystem, sigma, q, t: float, L: float | None = None,
                   dt: float = DEFAULT_DT) -> dict:
    """Compare ``D phi_t(q)`` with ``exp(t DG_sigma)``.

    ``lhs = |D phi_t(q) - exp(t DG_sigma)|``; ``rhs = dbar t e^{L t}`` with
    ``dbar = max_s |DG(phi_s q) - DG_sigma|`` over the samples and ``L`` the
    declared Jacobian bound, raised to the largest sampled ``|DG|`` if that
    is bigger.
    """
    sigma = np.asarray(sigma, dtype=float)
    A = system.jacobian(sigma)
    seg = integrate(system, q, t, min(dt, t), with_variational=True)
    jacs = np.array([system.jacobian(x) for x in seg.states])
    dbar = float(np.max(np.linalg.norm(jacs - A, ord=2, axis=(1, 2))))
    sampled_L = float(np.max(np.linalg.norm(jacs, ord=2, axis=(1, 2))))
    L_used = max(sampled_L, float(np.linalg.norm(A, 2)),
                 system.jacobian_bound_L if L is None and system.jacobian_bound_L is not None
                 else (L or 0.0))
    lhs = float(np.linalg.norm(seg.fundamentals[-1] - expm(t * A), 2))
    rhs = dbar * t * math.exp(L_used * t)
    return {"lhs": lhs, "rhs": rhs, "delta_bar": dbar, "L": L_used, "t": t,
            "holds": lhs <= rhs + 1e-9}


# ------------------------------------------------------------ event location


def _bisect_partial_step(system, x, h, fn, topo, iters: int = 200):
    """Root of ``fn(rk4_step(x, theta))`` for ``theta`` in ``(0, h]``, assuming
    ``fn`` is negative at ``theta = 0`` and non-negative at ``h``. Bisection
    runs to machine precision."""
    lo, hi = 0.0, h
    wrap = topo.is_periodic
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        xm = rk4_step(system, x, mid)
        if wrap:
            xm = wrap_point(xm, topo)
        if fn(xm) < 0:
            lo = mid
        else:
            hi = mid
    return hi


def section_crossings(system: SmoothSystem, traj: TrajectorySegment, disk: SectionDisk,
                      skip_start: bool = True) -> list:
    """Positively oriented crossings of ``disk`` along a sampled trajectory.

    Returns ``(time, disk coordinates, hit point)`` triples. A sign change of
    ``s = <x - y, n>`` between samples is refined by bisection on a partial
    RK4 step from the earlier sample. Crossings outside the disk, against
    the field, or produced by chart wrapping are discarded.
    """
    topo = system.topo
    n = disk.normal
    s = displacement(traj.states, disk.center, topo) @ n
    hits = []
    cand = np.flatnonzero((s[:-1] < 0) & (s[1:] >= 0))
    for k in cand:
        if skip_start and k == 0 and abs(s[0]) <= 1e-12 * max(1.0, disk.radius):
            continue
        x = traj.states[k]
        h = traj.times[k + 1] - traj.times[k]
        theta = _bisect_partial_step(system, x, h,
                                     lambda z: float(displacement(z, disk.center, topo) @ n), topo)
        hit = rk4_step(system, x, theta)
        if topo.is_periodic:
            hit = wrap_point(hit, topo)
        u = disk.coords(hit, topo)
        if np.linalg.norm(u) > disk.radius:
            continue
        if abs(float(displacement(hit, disk.center, topo) @ n)) > 1e-6 * max(1.0, disk.radius):
            continue
        if float(system(hit) @ system(disk.center)) <= 0:
            continue
        hits.append((float(traj.times[k] + theta), u, hit))
    return hits


def first_return(system: SmoothSystem, disk: SectionDisk, u, cap: float,
                 dt: float = DEFAULT_DT, with_derivative: bool = False):
    """Integrate from ``disk.point(u)`` to the first positive crossing.

    Returns ``(time, coordinates, hit, Z)`` (``Z`` is the fundamental matrix
    at the hit when requested, else ``None``), or ``None`` when the orbit
    does not come back within ``cap``.
    """
    topo = system.topo
    n = disk.normal
    x = disk.point(u)
    if topo.is_periodic:
        x = wrap_point(x, topo)
    d = system.dimension
    Z = np.eye(d) if with_derivative else None
    t = 0.0
    # the start lies on the disk; rounding must not count as a crossing
    s_prev = 0.0
    for h in step_sizes(cap, dt):
        if with_derivative:
            x_new, M = rk4_step_derivative(system, x, h)
        else:
            x_new = rk4_step(system, x, h)
        if topo.is_periodic:
            x_new = wrap_point(x_new, topo)
        s_new = float(displacement(x_new, disk.center, topo) @ n)
        if s_prev < 0 <= s_new:
            theta = _bisect_partial_step(
                system, x, h, lambda z: float(displacement(z, disk.center, topo) @ n), topo)
            if with_derivative:
                hit, Mp = rk4_step_derivative(system, x, theta)
            else:
                hit = rk4_step(system, x, theta)
            if topo.is_periodic:
                hit = wrap_point(hit, topo)
            v = disk.coords(hit, topo)
            if np.linalg.norm(v) <= disk.radius and float(system(hit) @ n) > 0:
                return t + theta, v, hit, (Mp @ Z if with_derivative else None)
        if with_derivative:
            Z = M @ Z
        x, s_prev, t = x_new, s_new, t + h
        if not math.isfinite(float(x @ x)):
            raise NumericalError("non-finite state during return")
    return None


def _poincare_derivative(system, disk: SectionDisk, hit, Z) -> np.ndarray:
    """``Q^T (I - G(hit) n^T / <n, G(hit)>) Z Q``: the return-map derivative,
    i.e. the LPF between the crossings when ``hit`` is the disk centre."""
    n = disk.normal
    g = system(hit)
    proj = np.eye(len(n)) - np.outer(g, n) / float(n @ g)
    Q = disk.frame.basis
    return Q.T @ proj @ Z @ Q


def return_map_contraction(system: SmoothSystem, disk: SectionDisk, probes=None,
                           cap: float = 100.0, dt: float = DEFAULT_DT,
                           fd_step: float | None = None, fd_tolerance: float = 1e-4,
                           n_returns: int = 1, rate_threshold: float = 1e-2) -> dict:
    """Return map on the disk, its derivative at the centre and a finite
    difference cross-check.

    The derivative comes from the variational equation between the crossings
    (``Q^T Pi Z Q``). ``probes`` are disk coordinates; by default ``+-h e_i``
    with ``h = 1e-3 * radius``. The probe differences are fitted linearly
    against the probe offsets, which for symmetric probes is a central
    difference.

    ``n_returns`` successive returns of the centre orbit are followed, each
    with its own derivative ``DR(u_k)`` and rate ``ln|DR(u_k)| / T_k``; the
    contraction is uniform when every rate is below ``-rate_threshold``.
    ``certified`` requires agreement within ``fd_tolerance`` (relative), a
    complete set of probe returns and uniform contraction.
    """
    m = system.dimension - 1
    base = first_return(system, disk, np.zeros(m), cap, dt, with_derivative=True)
    if base is None:
        return {"complete": False, "certified": False, "reason": "centre does not return"}
    T, u0, hit, Z = base
    DR = _poincare_derivative(system, disk, hit, Z)
    successive = [(T, DR)]
    u = u0
    for _ in range(int(n_returns) - 1):
        r = first_return(system, disk, u, cap, dt, with_derivative=True)
        if r is None:
            break
        successive.append((r[0], _poincare_derivative(system, disk, r[2], r[3])))
        u = r[1]
    returns = []
    for Tk, Dk in successive:
        norm = float(np.linalg.norm(Dk, 2))
        rate = math.log(norm) / Tk if norm > 0 else -math.inf
        returns.append({"time": Tk, "derivative": Dk, "norm": norm, "rate": rate})
    uniform = len(returns) == int(n_returns) and \
        max(r["rate"] for r in returns) < -rate_threshold
    if probes is None:
        h = (fd_step or 1e-3) * disk.radius
        probes = np.concatenate([h * np.eye(m), -h * np.eye(m)])
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    samples = []
    for p in probes:
        r = first_return(system, disk, p, cap, dt)
        samples.append(None if r is None else (r[0], r[1]))
    complete = all(s is not None for s in samples)
    out = {
        "return_time": T,
        "image_of_centre": u0,
        "derivative": DR,
        "spectral_radius": float(np.max(np.abs(np.linalg.eigvals(DR)))),
        "samples": [None if s is None else {"u": p, "time": s[0], "image": s[1]}
                    for p, s in zip(probes, samples)],
        "complete": complete,
        "returns": returns,
        "uniform_contraction": bool(uniform),
    }
    if complete:
        images = np.array([s[1] for s in samples])
        X = np.column_stack([probes, np.ones(len(probes))])
        coef, *_ = np.linalg.lstsq(X, images, rcond=None)
        DR_fd = coef[:m].T
        rel = float(np.linalg.norm(DR_fd - DR) / max(np.linalg.norm(DR), 1e-300))
        out.update(derivative_fd=DR_fd, fd_relative_error=rel,
                   certified=bool(rel <= fd_tolerance and uniform))
    else:
        out.update(certified=False, reason="probe escaped the time cap")
    return out


# ------------------------------------------------------------- cusp section


def cusp_frame(system: SmoothSystem, sigma):
    """Affine eigenframe at a saddle with one unstable direction.

    Returns ``(V, Vinv)`` where the columns of ``V`` span ``E^s`` (first
    ``d - 1``) and ``E^u`` (last), so ``Vinv (x - sigma) = (u, v)``.
    """
    info = analyze_singularity(system, sigma)
    if not info["hyperbolic"] or info["dim_Eu"] != 1:
        raise ValueError("cusp sections need a hyperbolic saddle with dim E^u = 1")
    ev, vec = np.linalg.eig(system.jacobian(sigma))
    order = np.argsort(ev.real)
    ev, vec = ev[order], vec[:, order]
    cols = []
    j = 0
    while j < ev.size - 1:
        if abs(ev[j].imag) > 0:
            cols += [vec[:, j].real, vec[:, j].imag]
            j += 2
        else:
            cols.append(vec[:, j].real)
            j += 1
    eu = vec[:, -1].real
    eu = eu / np.linalg.norm(eu)
    if eu[np.argmax(np.abs(eu))] < 0:
        eu = -eu
    V = np.column_stack(cols + [eu])
    cond = np.linalg.cond(V)
    if not cond <= MAX_CONDITION:
        raise FrameError(f"eigenbasis condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")
    return V, np.linalg.inv(V)


def cusp_function(system: SmoothSystem, sigma):
    """``F(x) = |u|^2 - |v|`` in the eigenframe at ``sigma``; the cusp
    section is ``F = 0``."""
    sigma = np.asarray(sigma, dtype=float)
    _, Vinv = cusp_frame(system, sigma)
    topo = system.topo

    def F(x):
        c = Vinv @ displacement(x, sigma, topo)
        return float(c[:-1] @ c[:-1] - abs(c[-1]))
    return F


def cusp_section_hit(system: SmoothSystem, sigma, x0, cap: float, dt: float = DEFAULT_DT):
    """First time the orbit of ``x0`` reaches the cusp section ``F <= 0``.

    Returns ``(time, point)`` or ``None`` when ``F`` stays positive up to
    ``cap``. Orbits starting inside the cusp (``F(x0) <= 0``) hit at time 0.
    """
    F = cusp_function(system, sigma)
    topo = system.topo
    x = np.asarray(x0, dtype=float).copy()
    if F(x) <= 0:
        return 0.0, x
    t = 0.0
    neg = lambda z: -F(z)
    for h in step_sizes(cap, dt):
        x_new = rk4_step(system, x, h)
        if topo.is_periodic:
            x_new = wrap_point(x_new, topo)
        if F(x_new) <= 0:
            theta = _bisect_partial_step(system, x, h, neg, topo)
            hit = rk4_step(system, x, theta)
            return t + theta, (wrap_point(hit, topo) if topo.is_periodic else hit)
        x, t = x_new, t + h
    return None


# ------------------------------------------------------- nested contraction


def _minimal_period(f, p, period: int, topo) -> int:
    for q in range(1, period):
        if period % q:
            continue
        x = p.copy()
        for _ in range(q):
            x = wrap_point(f(x), topo)
        if np.linalg.norm(displacement(x, p, topo)) <= FIXED_TOL:
            return q
    return period


def _power(system: SmoothSystem, x, k: int, with_jac: bool = False):
    topo = system.topo
    J = np.eye(system.dimension)
    for _ in range(k):
        if with_jac:
            J = system.jacobian(x) @ J
        x = wrap_point(system(x), topo)
    return (x, J) if with_jac else x


def refine_periodic_point(system: SmoothSystem, x, period: int,
                          max_iterations: int = 2000, tol: float = 1e-12):
    """Iterate ``f^period`` until consecutive iterates agree to ``tol``, then
    polish with Newton on ``f^period(x) - x``. Returns ``None`` when the
    iteration does not settle."""
    topo = system.topo
    x = wrap_point(x, topo)
    for _ in range(max_iterations):
        y = _power(system, x, period)
        step = float(np.linalg.norm(displacement(y, x, topo)))
        x = y
        if step <= tol:
            break
    else:
        return None
    for _ in range(5):
        y, J = _power(system, x, period, with_jac=True)
        r = displacement(y, x, topo)
        if np.linalg.norm(r) == 0.0:
            break
        try:
            dx = np.linalg.solve(J - np.eye(len(x)), -r)
        except np.linalg.LinAlgError:
            break
        x = wrap_point(x + dx, topo)
        if np.linalg.norm(dx) <= 1e-15 * max(1.0, np.linalg.norm(x)):
            break
    return x


def nested_contraction_search(system: SmoothSystem, orbit: TrajectorySegment,
                              record: HyperbolicTimeRecord, delta1: float, lambda1: float,
                              xi: float = XI, max_iterations: int = 2000):
    """Periodic sink from a cluster of hyperbolic-time iterates.

    Looks for hyperbolic times ``n1 < n2`` with ``|x_{n1} - x_{n2}| < xi
    delta1`` and ``lambda1^(n2 - n1) < 1/2``, iterates ``f^(n2 - n1)`` from
    ``x_{n1}`` to a fixed point, polishes it with Newton and reduces the
    period to the minimal one. Returns ``(p, period)`` or ``None``.
    """
    if not record.times or not 0 < lambda1 < 1:
        return None
    taus = np.array([int(t) for t, _ in record.times])
    horizon = int(record.times[0][1])
    gap_min = max(1, int(math.floor(math.log(0.5) / math.log(lambda1))) + 1)
    topo = system.topo
    tol = xi * delta1
    X = orbit.states
    for i, n1 in enumerate(taus):
        later = taus[(taus >= n1 + gap_min) & (taus <= min(horizon, n1 + 50 * gap_min))]
        if later.size == 0:
            continue
        dist = np.linalg.norm(displacement(X[later], X[n1], topo), axis=-1)
        close = np.flatnonzero(dist < tol)
        if close.size == 0:
            continue
        n2 = int(later[close[0]])
        p = refine_periodic_point(system, X[n1], n2 - n1, max_iterations)
        if p is None:
            continue
        period = _minimal_period(system.func, p, n2 - n1, topo)
        return p, period
    return None


def _certify_map_sink(system: SmoothSystem, p, period: int) -> dict:
    y, J = _power(system, p, period, with_jac=True)
    residual = float(np.linalg.norm(displacement(y, p, system.topo)))
    ev = np.linalg.eigvals(J)
    rho = float(np.max(np.abs(ev)))
    return {"point": p, "period": int(period), "residual": residual,
            "multipliers": [complex(e) for e in ev], "spectral_radius": rho,
            "exponent": math.log(rho) / period if rho > 0 else -math.inf,
            "certified": residual <= FIXED_TOL and rho < 1 - 1e-6}


# --------------------------------------------------------------- maps

_PROBE_CACHE: dict = {}


def probe_grid(box, n: int) -> np.ndarray:
    """Cell centres of an ``n``-per-axis grid on ``box = (lo, hi)``."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(n) + 0.5) / n for i in range(lo.size)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)


def _probe_set(system: SmoothSystem, n: int) -> ProbeSet:
    # keyed by the rebuild spec so equal systems share one probe set
    key = (json.dumps(system.spec, sort_keys=True) if system.spec else id(system), n)
    if key not in _PROBE_CACHE:
        _PROBE_CACHE[key] = ProbeSet(system, probe_grid(system.probe_box, n))
    return _PROBE_CACHE[key]


def _map_sink_search(system: SmoothSystem, x0, cfg: ClassifyConfig):
    n = int(cfg.horizon or 500)
    orbit = iterate(system, x0, n, with_jacobians=True)
    series = block_exponent_series(orbit, 1, "forward")
    a = series.block_logs
    zeta = cfg.zeta if cfg.zeta is not None else auto_zeta(series.liminf_estimate)
    out = {"series": series, "orbit": orbit, "record": None, "sink": None, "zeta": zeta}
    if not (series.liminf_estimate < -cfg.exponent_threshold and zeta > 0):
        return out
    record = detect_reverse_hyperbolic_times_map(a, zeta)
    out["record"] = record
    if not record.times:
        return out
    try:
        grid = _probe_set(system, cfg.probe_per_axis) if system.probe_box is not None \
            else orbit.states
        delta1, lambda1 = contracting_ball_radius(system, math.exp(-0.5 * zeta), grid)
    except HypothesisViolation as exc:
        out["ball_error"] = str(exc)
        return out
    out["delta1"], out["lambda1"] = delta1, lambda1
    found = nested_contraction_search(system, orbit, record, delta1, lambda1, cfg.xi,
                                      cfg.max_contraction_iterations)
    if found is not None:
        out["sink"] = _certify_map_sink(system, *found)
    return out


def _classify_map(system: SmoothSystem, x0, cfg: ClassifyConfig, allow_source: bool = True):
    fwd = _map_sink_search(system, x0, cfg)
    exps = {"A1_forward": fwd["series"].to_dict()}
    sink = fwd["sink"]
    if sink is not None and sink["certified"]:
        ev = {**sink, "delta1": fwd["delta1"], "lambda1": fwd["lambda1"], "xi": cfg.xi}
        return ClassificationReport("map_sink_basin", ev, fwd["record"],
                                    ["finite-horizon certification only"], exps)
    caveats = []
    if sink is not None:
        caveats.append("located periodic point failed certification")
    if allow_source and system.inverse is not None:
        try:
            inv_series = block_exponent_series(fwd["orbit"], 1, "inverse")
            exps["A1_inverse"] = inv_series.to_dict()
        except ValueError as exc:
            caveats.append(str(exc))
            inv_series = None
        if inv_series is not None and inv_series.liminf_estimate < -cfg.exponent_threshold:
            back = _classify_map(system.time_reversed(), x0, cfg, allow_source=False)
            if back.verdict == "map_sink_basin":
                ev = dict(back.evidence)
                ev["via"] = "inverse map"
                return ClassificationReport("map_source_orbit", ev, back.hyperbolic_times_used,
                                            caveats + back.caveats, {**exps, **back.exponents})
    caveats.append("no certified contraction within the horizon")
    return ClassificationReport("inconclusive", {"zeta": fwd["zeta"]}, fwd["record"],
                                caveats, exps)


# --------------------------------------------------------------- flows


def _equilibrium_visits(system: SmoothSystem, seg: TrajectorySegment, radius: float):
    """Per declared equilibrium: number of separate entries into its ball,
    whether the orbit ends inside, and the closest approach."""
    out = []
    for sigma in system.equilibria:
        dist = np.linalg.norm(displacement(seg.states, sigma, system.topo), axis=-1)
        inside = dist < radius
        entries = int(np.sum(inside[1:] & ~inside[:-1])) + int(inside[0])
        tail = inside[int(0.9 * len(inside)):]
        out.append({"sigma": sigma, "entries": entries,
                    "converges": bool(tail.size and tail.all()),
                    "min_distance": float(dist.min())})
    return out


def _tail_contraction(cocycle, frac: float = 0.25) -> bool:
    """True when every tail ``[s, T]`` of length at least ``frac T`` has a
    negative average LPF rate."""
    t = cocycle.times
    T = t[-1]
    idx = np.flatnonzero(T - t >= frac * T)
    if idx.size == 0:
        return False
    PT = cocycle.matrices[-1]
    rates = []
    for k in idx[:: max(1, idx.size // 200)]:
        Pk = cocycle.matrices[k]
        tail = PT @ np.linalg.inv(Pk)
        ln = math.log(singular_values(tail)[0]) + cocycle.log_scale[-1] - cocycle.log_scale[k]
        rates.append(ln / (T - t[k]))
    return bool(max(rates) < 0)


def _locate_periodic_orbit(system, seg, cocycle, record, cfg, cap):
    """Section at a hyperbolic time, fixed point of the return map, and the
    return-map derivative at that fixed point."""
    d = system.dimension
    idx = int(np.argmin(np.abs(seg.times - record.times[0][0])))
    y = seg.states[idx]
    disk = section_disk(system, y, cfg.section_rho, cfg.xi)
    u = np.zeros(d - 1)
    for _ in range(cfg.max_contraction_iterations):
        r = first_return(system, disk, u, cap, cfg.dt)
        if r is None:
            return None, "return escaped the time cap"
        step = float(np.linalg.norm(r[1] - u))
        u = r[1]
        if step <= FIXED_TOL:
            break
    else:
        return None, "return iteration did not settle"
    # Newton on R(u) - u with a finite-difference Jacobian
    for _ in range(4):
        base = first_return(system, disk, u, cap, cfg.dt)
        h = 1e-6 * max(disk.radius, 1e-12)
        J = np.empty((d - 1, d - 1))
        for i in range(d - 1):
            e = np.zeros(d - 1)
            e[i] = h
            rp = first_return(system, disk, u + e, cap, cfg.dt)
            rm = first_return(system, disk, u - e, cap, cfg.dt)
            if rp is None or rm is None:
                break
            J[:, i] = (rp[1] - rm[1]) / (2 * h)
        else:
            res = base[1] - u
            du = np.linalg.solve(J - np.eye(d - 1), -res)
            u = u + du
            if np.linalg.norm(du) <= 1e-15:
                break
            continue
        break
    p = disk.point(u)
    if system.topo.is_periodic:
        p = wrap_point(p, system.topo)
    centred = section_disk(system, p, cfg.section_rho, cfg.xi)
    rm = return_map_contraction(system, centred, cap=cap, dt=cfg.dt, fd_tolerance=cfg.fd_tolerance)
    return (p, rm), None


def _classify_flow(system: SmoothSystem, x0, cfg: ClassifyConfig, allow_source: bool = True):
    x0 = np.asarray(x0, dtype=float)
    g0 = float(np.linalg.norm(system(x0)))
    T = float(cfg.horizon or 50.0)
    cap = float(cfg.return_cap or T)
    caveats = ["finite-horizon estimates; asymptotic limits are not decidable from a finite run"]
    if g0 < 1e-8:
        info = analyze_singularity(system, x0) if g0 <= EQUILIBRIUM_TOL else None
        if info is not None and info["type"] == "sink":
            return ClassificationReport("flow_equilibrium_sink", {"equilibrium": info}, None, caveats)
        if info is not None and info["type"] == "source":
            return ClassificationReport("flow_source", {"equilibrium": info}, None, caveats)
        if info is not None and info["type"] == "saddle":
            return ClassificationReport("accumulates_saddle", {"saddles": [info],
                                        "start_is_equilibrium": True}, None, caveats)
        return ClassificationReport("inconclusive", {"start_norm_G": g0}, None,
                                    caveats + ["start is (nearly) singular"])
    seg = integrate(system, x0, T, cfg.dt, with_variational=True)
    t = seg.times
    lnZ = np.log(singular_values(seg.fundamentals)[:, 0])
    w = t >= max(1.0, 0.5 * T)
    chi = lnZ[w] / t[w]
    exps = {"chi_G": {"liminf_estimate": float(chi.min()), "limsup_estimate": float(chi.max()),
                      "window": [float(t[w][0]), T]}}
    evidence: dict = {}

    # (i) all directions contract: equilibrium sink through the time-1 map
    if chi.min() < -cfg.exponent_threshold:
        k = int(round(1.0 / cfg.dt))
        if abs(k * cfg.dt - 1.0) < 1e-9 and seg.n_steps >= 4 * k:
            found = _flow_equilibrium_sink(system, seg, k, cfg)
            if found is not None:
                info, record = found
                exps["chi_G_at_sink"] = max(e.real for e in info["eigenvalues"])
                return ClassificationReport("flow_equilibrium_sink", {"equilibrium": info},
                                            record, caveats, exps)

    # (iii) accumulation of declared equilibria
    visits = _equilibrium_visits(system, seg, cfg.accumulate_radius)
    accumulated = [v for v in visits if v["entries"] >= cfg.accumulate_entries or v["converges"]]
    d0 = min((v["min_distance"] for v in visits), default=math.inf)
    evidence["d0"] = 0.9 * d0
    cocycle = None
    try:
        cocycle = lpf_cocycle(seg, system)
    except NearSingularityError as exc:
        caveats.append(f"LPF unavailable: {exc}")
    if cocycle is not None:
        sec = sectional_exponents(cocycle, (max(1.0, 0.25 * T), T))
        con = sectional_exponents(cocycle, (max(1.0, 0.25 * T), T), conorm=True)
        wide = sectional_exponents(cocycle, (max(1.0, T / 40), T))
        exps["sectional"] = sec.to_dict()
        exps["sectional_conorm"] = con.to_dict()
        exps["sectional_wide"] = wide.to_dict()
    if accumulated:
        saddles, sinks = [], []
        for v in accumulated:
            info = analyze_singularity(system, v["sigma"])
            info.update(entries=v["entries"], converges=v["converges"],
                        min_distance=v["min_distance"])
            (sinks if info["type"] == "sink" else saddles).append(info)
        if sinks:
            return ClassificationReport("flow_equilibrium_sink", {"equilibrium": sinks[0]},
                                        None, caveats, exps)
        saddle_like = [s for s in saddles if s["type"] == "saddle"]
        if saddle_like:
            if any(s["converges"] for s in saddle_like):
                caveats.append("orbit may lie on the stable manifold of a saddle or only pass "
                               "close to it at finite precision; both are recorded")
            record = None
            if cocycle is not None and exps["sectional"]["liminf_estimate"] < -cfg.exponent_threshold:
                zeta = cfg.zeta or auto_zeta(exps["sectional"]["liminf_estimate"])
                record = detect_lpf_reverse_hyperbolic_times(
                    cocycle, zeta, system.jacobian_bound_L or 1.0)
            # sign straddling of ln|P^t|/t over the wide window
            thr = cfg.exponent_threshold
            evidence.update(saddles=saddle_like,
                            oscillating=bool(cocycle is not None
                                             and exps["sectional_wide"]["liminf_estimate"] < -thr
                                             and exps["sectional_wide"]["limsup_estimate"] > thr))
            return ClassificationReport("accumulates_saddle", evidence, record, caveats, exps)

    # (ii) sectional contraction away from singularities: periodic sink
    if cocycle is not None and exps["sectional"]["liminf_estimate"] < -cfg.exponent_threshold:
        zeta = cfg.zeta or auto_zeta(exps["sectional"]["liminf_estimate"])
        L = system.jacobian_bound_L
        if L is None:
            L = float(np.max(np.linalg.norm([system.jacobian(x) for x in seg.states[:: 10]],
                                            ord=2, axis=(1, 2))))
        record = detect_lpf_reverse_hyperbolic_times(cocycle, zeta, L)
        evidence["branch"] = "limsup" if _tail_contraction(cocycle) else "liminf"
        if record.times and record.certified:
            located, why = _locate_periodic_orbit(system, seg, cocycle, record, cfg, cap)
            if located is not None:
                p, rm = located
                rho = rm.get("spectral_radius", math.inf)
                Tp = rm.get("return_time", math.nan)
                evidence.update(periodic_point=p, period=Tp, return_derivative=rm.get("derivative"),
                                return_derivative_fd=rm.get("derivative_fd"),
                                fd_relative_error=rm.get("fd_relative_error"),
                                spectral_radius=rho, certified=rm.get("certified", False),
                                sectional_exponent=math.log(rho) / Tp if rho > 0 else -math.inf)
                if rho < 1 and rm.get("complete"):
                    if not rm.get("certified"):
                        caveats.append("finite-difference cross-check of the return derivative failed")
                    return ClassificationReport("flow_periodic_sink_basin", evidence, record,
                                                caveats, exps)
            else:
                caveats.append(f"periodic orbit not located: {why}")

    # (iv) expansion of every normal direction: source via the reversed flow
    if allow_source:
        expanding = False
        lnZ_conorm = np.log(singular_values(seg.fundamentals)[:, -1])
        if (lnZ_conorm[w] / t[w]).min() > cfg.exponent_threshold:
            expanding = True
        if cocycle is not None and exps["sectional_conorm"]["liminf_estimate"] > cfg.exponent_threshold:
            expanding = True
        if expanding:
            back = _classify_flow(system.time_reversed(), x0, cfg, allow_source=False)
            if back.verdict in ("flow_equilibrium_sink", "flow_periodic_sink_basin"):
                ev = dict(back.evidence)
                ev["via"] = "time-reversed flow"
                ev["reversed_verdict"] = back.verdict
                return ClassificationReport("flow_source", ev, back.hyperbolic_times_used,
                                            caveats + back.caveats, {**exps, **back.exponents})
    evidence["visits"] = [{"sigma": v["sigma"], "entries": v["entries"]} for v in visits]
    return ClassificationReport("inconclusive", evidence, None,
                                caveats + ["no certified contraction or accumulation"], exps)


def _flow_equilibrium_sink(system: SmoothSystem, seg: TrajectorySegment, k: int,
                           cfg: ClassifyConfig):
    blocks = []
    steps = seg.step_jacobians
    n_blocks = steps.shape[0] // k
    for j in range(n_blocks):
        P = np.eye(system.dimension)
        for M in steps[j * k:(j + 1) * k]:
            P = M @ P
        blocks.append(P)
    blocks = np.array(blocks)
    a = np.log(singular_values(blocks)[:, 0])
    avg = np.cumsum(a) / np.arange(1, a.size + 1)
    liminf = float(avg[a.size // 2:].min())
    zeta = cfg.zeta or auto_zeta(liminf)
    if zeta <= 0:
        return None
    record = detect_reverse_hyperbolic_times_map(a, zeta)
    if not record.times:
        return None
    states = seg.states[::k][: n_blocks + 1]
    orbit = TrajectorySegment(0.0, 1.0, np.arange(len(states), dtype=float), states,
                              kind="map")
    time1 = time_one_map(system, cfg.dt)
    lam1 = math.exp(-0.25 * zeta)
    # ratio bound checked on the orbit's own unit-time samples
    norms = np.exp(a)
    tail = np.flatnonzero(np.abs(np.log(norms[:, None] / norms[None, :])) > -math.log(lam1))
    dists = np.linalg.norm(displacement(states[:n_blocks, None], states[None, :n_blocks],
                                        system.topo), axis=-1)
    bad = dists.reshape(-1)[tail]
    diam = float(dists.max()) or 1.0
    closest = float(bad.min()) if bad.size else math.inf
    delta1 = next((diam * 2.0 ** -i for i in range(21) if diam * 2.0 ** -i <= closest), 0.0)
    if delta1 == 0.0:
        return None
    found = nested_contraction_search(time1, orbit, record, delta1, lam1, cfg.xi, 200)
    if found is None:
        return None
    p = found[0]
    for _ in range(20):
        g = system(p)
        if np.linalg.norm(g) <= 1e-14:
            break
        p = p - np.linalg.solve(system.jacobian(p), g)
    if np.linalg.norm(system(p)) > EQUILIBRIUM_TOL:
        return None
    info = analyze_singularity(system, p)
    if info["type"] != "sink":
        return None
    info.update(delta1=delta1, lambda1=lam1)
    return info, record


def time_one_map(system: SmoothSystem, dt: float = DEFAULT_DT) -> SmoothSystem:
    """The time-1 map of a flow (RK4 with step ``dt``) and its derivative."""
    from .flow import flow_map

    def f(x):
        return flow_map(system, x, 1.0, dt)[0]

    def df(x):
        return flow_map(system, x, 1.0, dt)[1]
    return SmoothSystem("map", system.topo, f, df, equilibria=list(system.equilibria),
                        name=system.name + "[time-1]")


def classify_trajectory(system: SmoothSystem, x0, config=None) -> ClassificationReport:
    """Classify the forward orbit of ``x0``.

    Never raises on dynamical ambiguity: unresolved cases come back as
    ``inconclusive`` with the strongest evidence found.
    """
    cfg = config if isinstance(config, ClassifyConfig) else ClassifyConfig.from_dict(config)
    if system.is_flow:
        return _classify_flow(system, x0, cfg)
    return _classify_map(system, x0, cfg)
