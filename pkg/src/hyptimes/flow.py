"""Trajectories of vector fields and maps.

Vector fields are integrated with the classic fixed-step RK4 scheme. When
requested, the first-variation equation ``Z' = DG(x(t)) Z`` is advanced
jointly with the state through the same tableau, so the stored fundamental
matrices are exactly the derivatives of the discrete flow map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ChartTopology, wrap_point

BLOWUP_NORM = 1e12
FD_STEP = 1e-6
DEFAULT_DT = 1e-3


class NumericalError(RuntimeError):
    """Integration produced non-finite values or escaped to infinity."""


class BlowUpError(NumericalError):
    pass


@dataclass
class SmoothSystem:
    """A map or vector field on a Euclidean chart.

    Parameters
    ----------
    kind : {"map", "vector_field"}
    topo : ChartTopology
    func : callable
        ``x -> f(x)`` for maps, ``x -> G(x)`` for vector fields.
    jac : callable, optional
        Analytic Jacobian. Central finite differences are used otherwise and
        ``fd_jacobian`` is set.
    equilibria : sequence of points
        Declared zeros of ``G`` (vector fields) or fixed points (maps).
    inverse, inverse_jac : callable, optional
        Inverse map and its Jacobian, for maps that are diffeomorphisms.
    value_and_jac : callable, optional
        ``x -> (f(x), Df(x))`` in one pass, used by :func:`iterate` when the
        two share most of their work.
    """

    kind: str
    topo: ChartTopology
    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    equilibria: list = field(default_factory=list)
    jacobian_bound_L: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inverse_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    probe_box: Optional[tuple] = None
    spec: Optional[dict] = None
    info: dict = field(default_factory=dict)
    value_and_jac: Optional[Callable] = None
    inverse_value_and_jac: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("map", "vector_field"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        self.fd_jacobian = self.jac is None
        self.equilibria = [np.asarray(e, dtype=float) for e in self.equilibria]

    @property
    def dimension(self) -> int:
        return self.topo.dimension

    @property
    def is_flow(self) -> bool:
        return self.kind == "vector_field"

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        return np.asarray(self._jac_fn()(np.asarray(x, dtype=float)), dtype=float)

    def _jac_fn(self):
        if self.jac is not None:
            return self.jac
        topo = self.topo if self.kind == "map" else None
        func = self.func
        return lambda x: fd_jacobian(func, x, topo)

    def min_jacobian_norm(self, points) -> float:
        """Smallest spectral norm of ``Df`` over ``points``."""
        jacs = np.array([self.jacobian(p) for p in points])
        return float(np.min(np.linalg.norm(jacs, ord=2, axis=(1, 2))))

    def time_reversed(self) -> "SmoothSystem":
        """``-G`` for a vector field; the inverse map for a map."""
        if self.is_flow:
            g, j = self.func, self.jac
            return SmoothSystem(
                "vector_field", self.topo, lambda x: -np.asarray(g(x)),
                None if j is None else (lambda x: -np.asarray(j(x))),
                equilibria=list(self.equilibria), jacobian_bound_L=self.jacobian_bound_L,
                name=self.name + "[reversed]", params=dict(self.params),
                probe_box=self.probe_box,
                spec=None if self.spec is None else {**self.spec, "reversed": not self.spec.get("reversed", False)},
            )
        if self.inverse is None:
            raise ValueError(f"map {self.name!r} has no declared inverse")
        return SmoothSystem(
            "map", self.topo, self.inverse, self.inverse_jac,
            value_and_jac=self.inverse_value_and_jac,
            inverse_value_and_jac=self.value_and_jac,
            equilibria=list(self.equilibria), name=self.name + "[inverse]",
            params=dict(self.params), inverse=self.func, inverse_jac=self.jac,
            probe_box=self.probe_box,
            spec=None if self.spec is None else {**self.spec, "reversed": not self.spec.get("reversed", False)},
        )


def fd_jacobian(func, x, topo: Optional[ChartTopology] = None, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian. Map outputs on periodic charts are
    differenced with the minimal-image convention."""
    x = np.asarray(x, dtype=float)
    d = x.size
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        diff = np.asarray(func(x + e), dtype=float) - np.asarray(func(x - e), dtype=float)
        if topo is not None and topo.is_periodic:
            for i, (m, p) in enumerate(zip(topo.periodic_mask, topo.period)):
                if m:
                    diff[i] -= p * round(diff[i] / p)
        out[:, j] = diff / (2 * step)
    return out


@dataclass
class TrajectorySegment:
    """Samples ``states[k] = x(times[k])`` and, optionally, fundamental
    matrices ``fundamentals[k]`` (``D phi_{t_k - t_0}(x_0)`` or ``Df^k(x_0)``).

    ``step_jacobians[k]`` is the derivative of the single step from sample
    ``k`` to ``k + 1`` (``Df(x_k)`` for maps, the RK4 step derivative for
    flows).
    """

    t0: float
    dt: float
    times: np.ndarray
    states: np.ndarray
    fundamentals: Optional[np.ndarray] = None
    step_jacobians: Optional[np.ndarray] = None
    kind: str = "vector_field"

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def index_of(self, t: float) -> int:
        """Index of the sample nearest to time ``t``."""
        return int(np.clip(round((t - self.t0) / self.dt), 0, self.n_steps))


def _fast_wrapper(topo: ChartTopology):
    idx = np.flatnonzero(topo.periodic_mask)
    per = np.asarray(topo.period)[idx]
    off = np.asarray(topo.offset)[idx]

    def wrapper(x):
        x[idx] = np.mod(x[idx] - off, per) + off
        return x
    return wrapper


def _check_state(x, k):
    n = math.sqrt(float(np.dot(x, x)))
    if not math.isfinite(n):
        raise NumericalError(f"non-finite state at step {k}")
    if n > BLOWUP_NORM:
        raise BlowUpError(f"state norm {n:.3e} exceeds {BLOWUP_NORM:.0e} at step {k}")


def rk4_step(system: SmoothSystem, x: np.ndarray, h: float) -> np.ndarray:
    g = system.func
    k1 = g(x)
    k2 = g(x + 0.5 * h * k1)
    k3 = g(x + 0.5 * h * k2)
    k4 = g(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_variational(system: SmoothSystem, x: np.ndarray, Z: np.ndarray, h: float):
    """One joint RK4 step of ``(x, Z)``; ``DG`` is evaluated at stage states."""
    x_new, M = rk4_step_derivative(system, x, h)
    return x_new, M @ Z


def rk4_step_derivative(system: SmoothSystem, x: np.ndarray, h: float):
    """One RK4 step and its exact derivative ``M`` (the variational step from
    ``Z = I``)."""
    g, jac = system.func, system._jac_fn()
    hh = 0.5 * h
    k1 = g(x)
    J1 = jac(x)
    x2 = x + hh * k1
    k2 = g(x2)
    J2 = jac(x2)
    K2 = J2 + hh * (J2 @ J1)
    x3 = x + hh * k2
    k3 = g(x3)
    J3 = jac(x3)
    K3 = J3 + hh * (J3 @ K2)
    x4 = x + h * k3
    k4 = g(x4)
    J4 = jac(x4)
    K4 = J4 + h * (J4 @ K3)
    c = h / 6.0
    M = c * (J1 + 2.0 * (K2 + K3) + K4)
    M.flat[:: M.shape[0] + 1] += 1.0
    return x + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4), M


def step_sizes(T: float, dt: float) -> list[float]:
    """Fixed steps of size ``dt`` reaching ``T`` exactly; the last is shrunk."""
    n_full = int(math.floor(T / dt * (1 + 1e-12)))
    steps = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12 * dt:
        steps.append(rest)
    return steps


def integrate(system: SmoothSystem, x0, T: float, dt: float = DEFAULT_DT,
              with_variational: bool = False, t0: float = 0.0) -> TrajectorySegment:
    """Integrate a vector field from ``x0`` over ``[t0, t0 + T]``.

    Raises
    ------
    ValueError
        On invalid step parameters.
    BlowUpError, NumericalError
        When the state escapes beyond 1e12 or becomes non-finite.
    """
    if system.kind != "vector_field":
        raise ValueError("integrate() requires a vector field; use iterate() for maps")
    if not (dt > 0 and T > 0):
        raise ValueError("T and dt must be positive")
    if dt > 0.1 or dt > T:
        raise ValueError("dt must satisfy dt <= T and dt <= 0.1")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (system.dimension,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({system.dimension},)")
    _check_state(x, 0)
    topo = system.topo
    wrap = topo.is_periodic
    if wrap:
        x = wrap_point(x, topo)
    steps = step_sizes(T, dt)
    n = len(steps)
    d = system.dimension
    times = t0 + dt * np.arange(n + 1, dtype=float)
    times[-1] = t0 + T
    states = np.empty((n + 1, d))
    states[0] = x
    wrapper = _fast_wrapper(topo)
    Zs = Ms = None
    if with_variational:
        Zs = np.empty((n + 1, d, d))
        Ms = np.empty((n, d, d))
        Z = np.eye(d)
        Zs[0] = Z
        for k, h in enumerate(steps):
            x, M = rk4_step_derivative(system, x, h)
            _check_state(x, k + 1)
            if wrap:
                x = wrapper(x)
            states[k + 1] = x
            Ms[k] = M
            Z = M @ Z
            Zs[k + 1] = Z
        if not np.all(np.isfinite(Zs[-1])):
            raise NumericalError("non-finite fundamental matrix")
    else:
        for k, h in enumerate(steps):
            x = rk4_step(system, x, h)
            _check_state(x, k + 1)
            if wrap:
                x = wrapper(x)
            states[k + 1] = x
    return TrajectorySegment(t0, dt, times, states, Zs, Ms)


def flow_map(system: SmoothSystem, x0, T: float, dt: float = DEFAULT_DT):
    """``(phi_T(x0), D phi_T(x0))`` without storing intermediate samples."""
    x = np.asarray(x0, dtype=float).copy()
    Z = np.eye(system.dimension)
    for k, h in enumerate(step_sizes(T, dt)):
        x, Z = rk4_step_variational(system, x, Z, h)
        _check_state(x, k + 1)
    if system.topo.is_periodic:
        x = wrap_point(x, system.topo)
    return x, Z


def iterate(system: SmoothSystem, x0, n: int, with_jacobians: bool = False) -> TrajectorySegment:
    """Orbit ``x_{k+1} = f(x_k)`` with chained Jacobians ``Z_{k+1} = Df(x_k) Z_k``."""
    if system.kind != "map":
        raise ValueError("iterate() requires a map")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    topo = system.topo
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (system.dimension,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({system.dimension},)")
    _check_state(x, 0)
    x = wrap_point(x, topo)
    d = system.dimension
    states = np.empty((n + 1, d))
    states[0] = x
    Zs = steps = None
    if with_jacobians:
        Zs = np.empty((n + 1, d, d))
        steps = np.empty((n, d, d))
        Zs[0] = np.eye(d)
    fused = system.value_and_jac if with_jacobians else None
    for k in range(n):
        if fused is not None:
            fx, J = fused(x)
            J = np.asarray(J, dtype=float)
        elif with_jacobians:
            J = system.jacobian(x)
            fx = system.func(x)
        else:
            fx = system.func(x)
        if with_jacobians:
            steps[k] = J
            Zs[k + 1] = J @ Zs[k]
        x = np.asarray(fx, dtype=float)
        _check_state(x, k + 1)
        x = wrap_point(x, topo)
        states[k + 1] = x
    return TrajectorySegment(0.0, 1.0, np.arange(n + 1, dtype=float), states, Zs, steps, kind="map")


def cocycle_residual(seg: TrajectorySegment, system: SmoothSystem, k: int, j: int) -> float:
    """Relative mismatch ``|Z_{k+j} - W_j Z_k| / |Z_{k+j}|`` where ``W_j`` is
    the fundamental matrix re-computed from ``x_k`` over ``j`` steps."""
    if seg.fundamentals is None:
        raise ValueError("trajectory has no fundamental matrices")
    if k < 0 or j < 0 or k + j > seg.n_steps:
        raise IndexError("k + j outside trajectory")
    if j == 0:
        return 0.0
    if seg.kind == "map":
        W = np.eye(system.dimension)
        for i in range(k, k + j):
            W = system.jacobian(seg.states[i]) @ W
    else:
        x = seg.states[k].copy()
        W = np.eye(system.dimension)
        for i in range(k, k + j):
            h = seg.times[i + 1] - seg.times[i]
            x, W = rk4_step_variational(system, x, W, h)
    ref = seg.fundamentals[k + j]
    return float(np.linalg.norm(ref - W @ seg.fundamentals[k], 2) / np.linalg.norm(ref, 2))
