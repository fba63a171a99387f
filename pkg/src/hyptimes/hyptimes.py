"""Finite-time exponent averages, (reverse) hyperbolic times and contracting
balls.

A reverse hyperbolic time ``tau`` of rate ``zeta`` up to horizon ``m`` is a
moment from which the derivative contracts uniformly until ``m``:
``prod_{i=tau}^{tau+j-1} |Df(f^i x)| <= exp(-zeta j / 2)`` for maps, and
``|P^{s-tau}_{phi_tau x}| <= exp(-zeta (s - tau) / 2)`` for the LPF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import SmoothSystem, TrajectorySegment
from .geometry import displacement
from .linalg import singular_values
from .lpf import LpfCocycle
from .pliss import flow_pliss_set, reverse_pliss_times

CERT_TOL = 1e-9
SAFETY = 0.9
DYADIC_LEVELS = 20


class NonInvertibleError(ValueError):
    """A Jacobian block is singular where its inverse is required."""


class HypothesisViolation(ValueError):
    """The sampled data violates a standing hypothesis (e.g. ``inf |Df| > 0``)."""


@dataclass
class ExponentSeries:
    """Running averages ``n^-1 sum_{j<n} ln|Df^k(f^{kj} x)|`` (or of the
    inverse norms) and their extremes over the second half of the run."""

    k: int
    direction: str
    block_logs: np.ndarray
    partial_averages: np.ndarray
    liminf_estimate: float
    limsup_estimate: float
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "direction": self.direction,
            "liminf_estimate": self.liminf_estimate,
            "limsup_estimate": self.limsup_estimate,
            "window": list(self.window),
            "caveat": "finite-horizon estimate over the stated window",
        }


@dataclass
class HyperbolicTimeRecord:
    """Hyperbolic times ``(tau, horizon)`` of one kind and rate.

    ``certified`` is True when every stored time passed a direct re-check of
    its contraction inequality and at least one time was found.
    """

    kind: str
    zeta: float
    times: list
    certified: bool
    theta: float = float("nan")
    measure: float = 0.0
    guarantee_active: bool = False
    notes: list = field(default_factory=list)

    @property
    def taus(self) -> np.ndarray:
        return np.array([t for t, _ in self.times])

    def to_dict(self) -> dict:
        taus = self.taus
        return {
            "kind": self.kind,
            "zeta": self.zeta,
            "count": len(self.times),
            "first": None if taus.size == 0 else float(taus[0]),
            "last": None if taus.size == 0 else float(taus[-1]),
            "horizon": None if not self.times else float(self.times[0][1]),
            "certified": self.certified,
            "theta": self.theta,
            "measure": self.measure,
            "guarantee_active": self.guarantee_active,
            "notes": list(self.notes),
        }


def _block_products(steps: np.ndarray, k: int) -> np.ndarray:
    n_blocks = steps.shape[0] // k
    out = np.repeat(np.eye(steps.shape[1])[None], n_blocks, axis=0)
    for i in range(k):
        out = steps[i: n_blocks * k: k][:n_blocks] @ out
    return out


def block_exponent_series(orbit: TrajectorySegment, k: int = 1, direction: str = "forward",
                          window_start: float = 0.5) -> ExponentSeries:
    """Block exponents of a map orbit.

    Parameters
    ----------
    orbit : TrajectorySegment
        Map orbit with step Jacobians.
    k : int
        Block length.
    direction : {"forward", "inverse"}
        ``ln|Df^k|`` or ``ln|(Df^k)^-1|``.
    window_start : float
        Fraction of the blocks skipped before taking window extremes.
    """
    if orbit.step_jacobians is None:
        raise ValueError("orbit has no Jacobians")
    k = int(k)
    if k < 1 or orbit.n_steps < 2 * k:
        raise ValueError("need k >= 1 and at least 2k steps")
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    blocks = _block_products(orbit.step_jacobians, k)
    s = singular_values(blocks)
    if direction == "forward":
        logs = np.log(s[:, 0])
    else:
        if np.any(s[:, -1] == 0.0):
            j = int(np.flatnonzero(s[:, -1] == 0.0)[0])
            raise NonInvertibleError(f"singular Jacobian block {j} (iterates {j * k}..{(j + 1) * k})")
        logs = -np.log(s[:, -1])
    avg = np.cumsum(logs) / np.arange(1, logs.size + 1)
    start = min(int(window_start * avg.size), avg.size - 1)
    w = avg[start:]
    return ExponentSeries(k, direction, logs, avg, float(w.min()), float(w.max()),
                          (start + 1, avg.size))


def _suffix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[::-1])[::-1]


def _certify_scalar_logs(L: np.ndarray, t: np.ndarray, zeta: float, end: int) -> np.ndarray:
    """Boolean mask over ``tau < end``: ``L[s] - L[tau] <= -(zeta/2)(t_s - t_tau)``
    for every ``tau < s <= end``, where ``L`` are cumulative logs."""
    g = L[: end + 1] + 0.5 * zeta * t[: end + 1]
    later = np.full(end + 1, -np.inf)
    later[:-1] = _suffix_max(g[1:])
    return (later - g <= CERT_TOL)[:end]


def detect_reverse_hyperbolic_times_map(series, zeta: float, m: int | None = None,
                                        H: float | None = None) -> HyperbolicTimeRecord:
    """Reverse hyperbolic times of a map orbit from per-step logs.

    Parameters
    ----------
    series : sequence of float
        ``a_j = ln|Df(f^j x)|``, ``j = 0..N-1``.
    zeta : float
        Positive rate.
    m : int, optional
        Horizon (defaults to ``N``).
    H : float, optional
        Upper bound for ``-ln|Df|``; defaults to the sampled maximum.

    The Pliss selection runs on ``b_j = -a_j`` with ``c2 = zeta``,
    ``c1 = zeta / 2``; every returned ``tau`` is re-checked directly.
    """
    a = np.asarray(series, dtype=float)
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    m = a.size if m is None else int(m)
    if not 1 <= m <= a.size:
        raise ValueError("horizon outside the series")
    b = -a[:m]
    H = float(b.max()) if H is None else float(H)
    res = reverse_pliss_times(b, 0.5 * zeta, zeta, max(H, zeta))
    L = np.concatenate(([0.0], np.cumsum(a[:m])))
    ok = _certify_scalar_logs(L, np.arange(m + 1, dtype=float), zeta, m)
    taus = [int(t) for t in res.indices if ok[t]]
    notes = []
    if len(taus) != len(res.indices):
        notes.append(f"{len(res.indices) - len(taus)} selected times failed the re-check")
    return HyperbolicTimeRecord("reverse_contracting", float(zeta), [(t, m) for t in taus],
                                bool(taus) and len(taus) == len(res.indices),
                                theta=res.theta, measure=float(len(taus)),
                                guarantee_active=res.guarantee_active, notes=notes)


def auto_zeta(liminf_estimate: float) -> float:
    """``0.9 |liminf|`` for a negative exponent estimate, else 0."""
    return SAFETY * abs(liminf_estimate) if liminf_estimate < 0 else 0.0


def _certify_lpf(cocycle: LpfCocycle, candidates: np.ndarray, zeta: float, end: int) -> np.ndarray:
    t = cocycle.times
    if cocycle.normal_dim == 1:
        L = np.concatenate(([0.0], np.cumsum(np.log(np.abs(cocycle.steps[:end, 0, 0])))))
        return _certify_scalar_logs(L, t, zeta, end)[candidates]
    # general case: advance all candidate windows together, dropping failures
    ok = np.ones(candidates.size, dtype=bool)
    m = cocycle.normal_dim
    prods = np.repeat(np.eye(m)[None], candidates.size, axis=0)
    logscale = np.zeros(candidates.size)
    alive = np.flatnonzero(candidates < end)
    ok[candidates >= end] = True
    lag = 0
    while alive.size:
        idx = candidates[alive] + lag
        prods[alive] = cocycle.steps[idx] @ prods[alive]
        nrm = singular_values(prods[alive])[:, 0]
        logscale[alive] += np.log(nrm)
        prods[alive] /= nrm[:, None, None]
        elapsed = t[idx + 1] - t[candidates[alive]]
        bad = logscale[alive] > -0.5 * zeta * elapsed + CERT_TOL
        ok[alive[bad]] = False
        done = idx + 1 >= end
        alive = alive[~bad & ~done]
        lag += 1
    return ok


def detect_lpf_reverse_hyperbolic_times(cocycle: LpfCocycle, zeta: float, L: float,
                                        end: int | None = None) -> HyperbolicTimeRecord:
    """Reverse hyperbolic times of the LPF along a trajectory.

    Runs :func:`flow_pliss_set` on ``H(t) = ln|P^t|`` with ``c = -zeta``,
    ``eps = zeta / 4`` and ``A = -L``, then keeps only the times whose
    contraction ``|P^{s-tau}| <= exp(-zeta (s - tau) / 2)`` is re-verified
    from the stored step matrices for every sample ``s`` up to the horizon.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    end = len(cocycle) - 1 if end is None else int(end)
    t = cocycle.times[: end + 1]
    H = cocycle.log_norms[: end + 1]
    T = float(t[-1] - t[0])
    if not H[-1] <= -zeta * T:
        return HyperbolicTimeRecord("lpf_reverse", float(zeta), [], False,
                                    notes=[f"ln|P^T| = {H[-1]:.4g} > -zeta T = {-zeta * T:.4g}"])
    res = flow_pliss_set(H, -zeta, 0.25 * zeta, A=-float(L), times=t)
    cand = np.asarray(res.indices[res.indices < end], dtype=int)
    ok = _certify_lpf(cocycle, cand, zeta, end)
    taus = cand[ok]
    step = res.grid_step
    notes = []
    if taus.size != cand.size:
        notes.append(f"{cand.size - taus.size} selected times failed the re-check")
    times = [(float(cocycle.times[i]), float(t[-1])) for i in taus]
    return HyperbolicTimeRecord("lpf_reverse", float(zeta), times,
                                bool(times) and taus.size == cand.size,
                                theta=res.theta, measure=float(taus.size * step),
                                guarantee_active=res.guarantee_active, notes=notes)


def verify_lpf_record(cocycle: LpfCocycle, record: HyperbolicTimeRecord) -> bool:
    """Re-check every stored ``(tau, T)`` directly from the step matrices."""
    if not record.times:
        return False
    t = cocycle.times
    end = int(np.argmin(np.abs(t - record.times[0][1])))
    idx = np.array([int(np.argmin(np.abs(t - tau))) for tau, _ in record.times])
    return bool(np.all(_certify_lpf(cocycle, idx, record.zeta, end)))


def slide_record(record: HyperbolicTimeRecord, eta: float, grid_step: float,
                 c: float, eps: float, A: float) -> tuple[float, list]:
    """Move every time forward by ``eta``.

    The moved times are Pliss times for the relaxed rate
    ``eps_hat = eps + eta (c + eps - A) / grid_step``: on a grid the
    smallest admissible gap ``s - (tau + eta)`` is one grid step.
    """
    moved = [(tau + eta, T) for tau, T in record.times if T - tau > eta]
    return eps + eta * (c + eps - A) / grid_step, moved


def _log_norm(system: SmoothSystem, P: np.ndarray) -> np.ndarray:
    jacs = np.array([system.jacobian(p) for p in P])
    norms = singular_values(jacs)[:, 0]
    if not np.min(norms) > 0:
        raise HypothesisViolation("|Df| vanishes on the probe grid")
    return np.log(norms)


class ProbeSet:
    """Probe points with their ``ln |Df|``, its largest sampled slope and
    pairwise chart distances, reusable across rates ``lam``.

    Probe pairs only constrain scales at or above the grid spacing; the
    slope ``K`` of ``ln |Df|`` (central differences at every probe) bounds
    the ratio below it, as ``|ln|Df(x)| - ln|Df(y)|| <= K dist(x, y)``.
    """

    def __init__(self, system: SmoothSystem, points, fd_step: float = 1e-6):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        self.points = P
        self.log_norms = _log_norm(system, P)
        grad = np.empty_like(P)
        for i in range(P.shape[1]):
            e = np.zeros(P.shape[1])
            e[i] = fd_step
            grad[:, i] = (_log_norm(system, P + e) - _log_norm(system, P - e)) / (2 * fd_step)
        self.slope = float(np.max(np.linalg.norm(grad, axis=1)))
        self._topo = system.topo
        # the full distance matrix is kept only for moderate probe counts
        self.distances = self._distances(slice(0, len(P))) if len(P) <= 4096 else None
        self.diameter = max(float(d.max()) for _, d in self._blocks())

    def _distances(self, rows: slice) -> np.ndarray:
        P = self.points
        return np.linalg.norm(displacement(P[rows, None, :], P[None, :, :], self._topo), axis=-1)

    def _blocks(self):
        if self.distances is not None:
            yield slice(0, len(self.points)), self.distances
            return
        for i0 in range(0, len(self.points), 512):
            rows = slice(i0, i0 + 512)
            yield rows, self._distances(rows)

    def radius(self, lam: float) -> tuple[float, float]:
        if not 0 < lam < 1:
            raise ValueError("lam must lie in (0, 1)")
        lam1 = float(np.sqrt(lam))
        closest_bad = np.inf
        for rows, dist in self._blocks():
            bad = np.abs(self.log_norms[rows, None] - self.log_norms[None, :]) > -np.log(lam1)
            if bad.any():
                closest_bad = min(closest_bad, float(dist[bad].min()))
        bound = min(closest_bad, -np.log(lam1) / self.slope if self.slope > 0 else np.inf)
        for i in range(DYADIC_LEVELS + 1):
            r = self.diameter * 2.0 ** -i
            if r <= bound:
                return r, lam1
        raise HypothesisViolation(
            f"ratio bound fails at distance {closest_bad:.3e}, below every dyadic radius")


def contracting_ball_radius(system: SmoothSystem, lam: float, probe_grid) -> tuple[float, float]:
    """Radius ``delta1`` of forward contracting balls and rate ``lambda1``.

    ``lambda1 = sqrt(lam)``; ``delta1`` is the largest dyadic fraction
    ``2^-i`` (``i = 0..20``) of the probe-set diameter such that
    ``|Df(x)| / |Df(y)| <= 1 / lambda1`` for every probe pair closer than
    ``delta1`` and ``K delta1 <= -ln lambda1`` for the sampled slope ``K``
    of ``ln |Df|``. ``probe_grid`` is a point array or a :class:`ProbeSet`.

    Raises
    ------
    HypothesisViolation
        If ``Df`` vanishes somewhere on the probe grid.
    """
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    probes = probe_grid if isinstance(probe_grid, ProbeSet) else ProbeSet(system, probe_grid)
    return probes.radius(lam)
