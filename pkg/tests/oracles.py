"""Brute-force reference implementations used as test oracles.

Each one evaluates the defining inequality over every pair directly, with no
prefix sums or running extrema, so it shares no code path with the package.
"""

import numpy as np


def pliss_bruteforce(a, c1):
    """1-based ``n`` with ``sum_{j=n'+1}^{n} a_j >= c1 (n - n')`` for all ``n' < n``."""
    a = np.asarray(a, dtype=float)
    out = []
    for n in range(1, a.size + 1):
        # window sums ending at n, lengths 1..n, summed right to left
        sums = np.cumsum(a[:n][::-1])
        if np.all(sums >= c1 * np.arange(1, n + 1)):
            out.append(n)
    return out


def reverse_pliss_bruteforce(a, c1):
    """0-based ``tau`` with ``sum_{i=tau}^{tau+L-1} a_i >= c1 L`` for ``1 <= L <= N - tau``."""
    a = np.asarray(a, dtype=float)
    out = []
    for tau in range(a.size):
        sums = np.cumsum(a[tau:])
        if np.all(sums >= c1 * np.arange(1, a.size - tau + 1)):
            out.append(tau)
    return out


def flow_pliss_bruteforce(h, t, c, eps, tol=1e-12):
    """Grid indices ``k`` with ``H(s) - H(t_k) < (c + eps)(s - t_k)`` for all later ``s``."""
    out = []
    for k in range(h.size):
        lhs = h[k + 1:] - h[k]
        rhs = (c + eps) * (t[k + 1:] - t[k])
        if np.all(lhs < rhs + tol):
            out.append(k)
    return np.array(out, dtype=int)


def critical_points_bisection(dphi, ddphi, kind, count, t_max, t_min=1e-3, n_grid=200_001):
    """Roots of ``dphi`` on ``(t_min, t_max)`` bracketed on a log grid and
    refined by plain bisection; ``kind`` selects the sign of ``ddphi``."""
    ts = np.geomspace(t_min, t_max, n_grid)
    vals = np.array([dphi(t) for t in ts])
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[::-1]:
        lo, hi = ts[i], ts[i + 1]
        flo = vals[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = dphi(mid)
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
            if hi - lo <= 1e-16:
                break
        r = 0.5 * (lo + hi)
        if (ddphi(r) < 0) == (kind == "sink"):
            roots.append(r)
        if len(roots) == count:
            break
    return np.array(roots)
