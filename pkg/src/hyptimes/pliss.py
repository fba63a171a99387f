"""Pliss times of finite sequences and Pliss sets of sampled functions.

Discrete version: for ``a_1..a_N`` with ``sum a_j >= c2 N`` and
``a_j <= H`` there are more than ``theta N`` indices ``n`` whose every
backward partial average from ``n`` is at least ``c1``, where
``theta = (c2 - c1) / (H - c1)``.

Continuous version: for differentiable ``H`` on ``[0, T]`` with ``H(0) = 0``,
``H(T) < cT`` and ``c + eps > inf H' > A`` the set of ``tau`` with
``H(s) - H(tau) < (c + eps)(s - tau)`` for every ``s`` in ``(tau, T]`` has
measure larger than ``theta T``, ``theta = eps / (c + eps - A)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPEN_SET_TOL = 1e-12


@dataclass
class PlissResult:
    """Selected indices (discrete) or grid points (continuous).

    ``count_or_measure`` is the number of indices, or the number of selected
    grid points times the grid step. ``checks`` records each hypothesis and
    whether it held; ``guarantee_active`` is their conjunction.
    """

    indices: np.ndarray
    theta: float
    guarantee_active: bool
    count_or_measure: float
    checks: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    grid_step: float | None = None

    def intervals(self) -> list[tuple[float, float]]:
        """Maximal runs of consecutive selected grid points as ``(start, end)``."""
        if self.times is None or len(self.indices) == 0:
            return []
        idx = np.asarray(self.indices)
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.r_[idx[0], idx[breaks + 1]]
        ends = np.r_[idx[breaks], idx[-1]]
        return [(float(self.times[s]), float(self.times[e])) for s, e in zip(starts, ends)]

    def to_dict(self) -> dict:
        out = {
            "theta": self.theta,
            "guarantee_active": self.guarantee_active,
            "count_or_measure": self.count_or_measure,
            "checks": {k: bool(v) for k, v in self.checks.items()},
        }
        if self.times is None:
            out["indices"] = [int(i) for i in self.indices]
        else:
            out["grid_step"] = self.grid_step
            out["intervals"] = [list(iv) for iv in self.intervals()]
        return out


def _validate(a, c1, c2) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("sequence must be one-dimensional and non-empty")
    if not c1 < c2:
        raise ValueError(f"need c1 < c2, got c1={c1}, c2={c2}")
    return a


def pliss_times(a, c1: float, c2: float, H: float) -> PlissResult:
    """Indices ``n`` (1-based) with ``sum_{j=n'+1}^{n} a_j >= c1 (n - n')``
    for every ``0 <= n' < n``.

    With ``S_k = sum_{j<=k} (a_j - c1)`` and ``S_0 = 0`` the condition reads
    ``S_n >= max_{n' < n} S_{n'}``, so a single running-maximum pass suffices.
    """
    a = _validate(a, c1, c2)
    N = a.size
    S = np.concatenate(([0.0], np.cumsum(a - c1)))
    prev_max = np.maximum.accumulate(S)[:-1]
    indices = np.flatnonzero(S[1:] >= prev_max) + 1
    checks = {
        "c2_le_H": c2 <= H,
        "mean_ge_c2": float(np.sum(a)) >= c2 * N,
        "entries_le_H": bool(np.all(a <= H)),
    }
    theta = (c2 - c1) / (H - c1) if H > c1 else float("nan")
    return PlissResult(indices, theta, all(checks.values()), float(indices.size), checks)


def reverse_pliss_times(a, c1: float, c2: float, H: float) -> PlissResult:
    """Start indices ``tau`` (0-based) of the original sequence from which
    every forward partial average is at least ``c1``:
    ``sum_{i=tau}^{tau+L-1} a_i >= c1 L`` for ``1 <= L <= N - tau``.

    Computed as :func:`pliss_times` on the reversed sequence, with each
    returned ``n`` mapped to ``N - n``.
    """
    a = _validate(a, c1, c2)
    N = a.size
    fwd = pliss_times(a[::-1], c1, c2, H)
    fwd.indices = np.sort(N - fwd.indices)
    return fwd


def difference_quotient_floor(h_samples, step: float) -> float:
    """Lower bound for ``inf H'`` from samples: the smallest difference
    quotient minus a one-step Lipschitz margin for ``H'``."""
    q = np.diff(np.asarray(h_samples, dtype=float)) / step
    margin = float(np.max(np.abs(np.diff(q)))) if q.size > 1 else 0.0
    return float(q.min()) - margin


def flow_pliss_set(h_samples, c: float, eps: float, A: float | None = None,
                   T: float | None = None, times=None) -> PlissResult:
    """Grid points ``t_k`` of the Pliss set of a sampled function.

    ``t_k`` is selected iff ``G_j < G_k`` (up to an open-set tolerance of
    1e-12) for every later ``j``, where ``G = H - (c + eps) t``. This is a
    single suffix-maximum scan over the samples.

    Parameters
    ----------
    h_samples : sequence of float
        ``H`` on a uniform grid over ``[0, T]``.
    c, eps : float
    A : float, optional
        Strict lower bound for ``inf H'``; estimated from the samples when
        omitted (see :func:`difference_quotient_floor`).
    T : float, optional
        Horizon; defaults to ``len(h_samples) - 1`` (unit step). Ignored when
        ``times`` is given.
    times : sequence of float, optional
        Explicit sample times, which must be uniformly spaced from 0.
    """
    h = np.asarray(h_samples, dtype=float)
    if h.ndim != 1 or h.size < 2:
        raise ValueError("need at least two samples")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = h.size - 1
    if times is not None:
        t = np.asarray(times, dtype=float)
        if t.shape != h.shape:
            raise ValueError("times and samples differ in length")
        steps = np.diff(t)
        step = float(steps.mean())
        if np.max(np.abs(steps - step)) > 1e-9 * max(1.0, step):
            raise ValueError("sample grid is not uniform")
        T = float(t[-1] - t[0])
        t = t - t[0]
    else:
        T = float(n) if T is None else float(T)
        step = T / n
        t = step * np.arange(n + 1)
    if A is None:
        A = difference_quotient_floor(h, step)
    G = h - (c + eps) * t
    # later_max[k] = max_{j > k} G_j ; -inf past the end
    later_max = np.empty_like(G)
    later_max[-1] = -np.inf
    later_max[:-1] = np.maximum.accumulate(G[::-1])[::-1][1:]
    selected = np.flatnonzero(later_max < G + OPEN_SET_TOL)
    q = np.diff(h) / step
    inf_dh = float(q.min())
    checks = {
        "H0_is_zero": abs(h[0]) <= 1e-9,
        "HT_below_cT": h[-1] < c * T,
        "c_above_A": c > A,
        "slope_above_A": inf_dh > A,
        "c_eps_above_slope": c + eps > inf_dh,
    }
    theta = eps / (c + eps - A)
    return PlissResult(selected, float(theta), all(checks.values()),
                       float(selected.size * step), checks, times=t, grid_step=step)


def slide_epsilon(eps: float, c: float, A: float, eta: float, gap: float) -> float:
    """Rate ``eps_hat`` for which a Pliss point moved forward by ``eta`` stays
    a Pliss point, given the smallest remaining gap ``gap`` to the horizon."""
    return eps + eta * (c + eps - A) / gap
