"""Built-in example systems with known ground truth, and user systems read
from TOML/JSON documents.

Every builtin carries a ``spec`` dict (``{"builtin": name, "params": ...}``)
from which it can be rebuilt, e.g. inside worker processes.
"""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.optimize import brentq

from .expr import ExpressionError, compile_expressions, coordinate_names
from .flow import NumericalError, SmoothSystem
from .geometry import ChartTopology

__all__ = [
    "CATALOG",
    "ConfigError",
    "builtin",
    "from_config",
    "load_system",
    "estimate_jacobian_bound",
    "sinus_critical_points",
    "saddle_eigenvalue_products",
]


class ConfigError(ValueError):
    """Invalid system document or builtin parameters."""


def _probe_points(box, n_per_axis: int) -> np.ndarray:
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(n_per_axis) + 0.5) / n_per_axis
            for i in range(lo.size)]
    return np.array(list(itertools.product(*axes)))


def estimate_jacobian_bound(system: SmoothSystem, points=None, n_per_axis: int | None = None,
                            refine: int = 5) -> float:
    """``sup |DG|`` (spectral norm) over the probe box.

    The grid maximum is polished by bounded local maximization started from
    the ``refine`` best grid points, so the result is the box supremum up to
    optimizer tolerance rather than a grid sample. With explicit ``points``
    only those are used.
    """
    explicit = points is not None
    if not explicit:
        if system.probe_box is None:
            raise ValueError(f"system {system.name!r} declares no probe box")
        if n_per_axis is None:
            n_per_axis = {1: 2001, 2: 61, 3: 17}.get(system.dimension, 7)
        points = _probe_points(system.probe_box, n_per_axis)
    points = np.asarray(points, dtype=float)
    jacs = np.array([system.jacobian(p) for p in points])
    norms = np.linalg.norm(jacs, ord=2, axis=(1, 2))
    best = float(np.max(norms))
    if explicit or refine <= 0:
        return best
    bounds = list(zip(*system.probe_box))

    def neg_norm(x):
        return -float(np.linalg.norm(system.jacobian(x), 2))

    for i in np.argsort(-norms)[:refine]:
        res = minimize(neg_norm, points[i], method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-15, "gtol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def _box_for(topo: ChartTopology, half_width: float):
    lo = [o if m else -half_width for m, o in zip(topo.periodic_mask, topo.offset)]
    hi = [o + p if m else half_width for m, o, p in zip(topo.periodic_mask, topo.offset, topo.period)]
    return (tuple(lo), tuple(hi))


def _finish(system: SmoothSystem, with_bound: bool = True) -> SmoothSystem:
    if (with_bound and system.is_flow and system.jacobian_bound_L is None
            and system.probe_box is not None):
        system.jacobian_bound_L = estimate_jacobian_bound(system)
    return system


# ---------------------------------------------------------------- simple flows

def _constant_torus(dimension: int = 2, period: float = 2 * math.pi) -> SmoothSystem:
    d = int(dimension)
    e1 = np.zeros(d)
    e1[0] = 1.0
    zero = np.zeros((d, d))
    topo = ChartTopology.torus(d, period)
    return SmoothSystem("vector_field", topo, lambda x: e1.copy(), lambda x: zero.copy(),
                        jacobian_bound_L=0.0, probe_box=_box_for(topo, 1.0),
                        info={"exponents": [0.0] * d})


def _linear(A=((-1.0,),), half_width: float = 1.0) -> SmoothSystem:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("linear system needs a square matrix A")
    d = A.shape[0]
    topo = ChartTopology.euclidean(d)
    return SmoothSystem("vector_field", topo, lambda x: A @ x, lambda x: A.copy(),
                        equilibria=[np.zeros(d)], jacobian_bound_L=float(np.linalg.norm(A, 2)),
                        probe_box=_box_for(topo, half_width),
                        info={"flow": "exp(tA)"})


def _limit_cycle_field(x):
    a, b = x[0], x[1]
    s = 1.0 - (a * a + b * b)
    return np.array([a * s - b, b * s + a])


def _limit_cycle_jac(x):
    a, b = x[0], x[1]
    s = 1.0 - (a * a + b * b)
    return np.array([[s - 2 * a * a, -2 * a * b - 1.0],
                     [-2 * a * b + 1.0, s - 2 * b * b]])


def _limit_cycle() -> SmoothSystem:
    topo = ChartTopology.euclidean(2)
    return SmoothSystem("vector_field", topo, _limit_cycle_field, _limit_cycle_jac,
                        equilibria=[np.zeros(2)], probe_box=((-2.0, -2.0), (2.0, 2.0)),
                        info={"cycle_radius": 1.0, "sectional_exponent": -2.0,
                              "return_derivative": math.exp(-4 * math.pi), "period": 2 * math.pi})


# ------------------------------------------------------- north-south on a circle
# theta' = cos(theta): sink pi/2 (eigenvalue -1), source 3pi/2 (eigenvalue +1).
# With a = theta/2 + pi/4 one has tan(a(t)) = e^t tan(a(0)).

def _ns_flow_map(theta: float, t: float) -> tuple[float, float]:
    a = 0.5 * theta + 0.25 * math.pi
    et = math.exp(t)
    ca, sa = math.cos(a), math.sin(a)
    out = 2.0 * math.atan2(et * sa, ca) - 0.5 * math.pi
    deriv = et / (ca * ca + et * et * sa * sa)
    return out, deriv


def _north_south(time1_map: bool = False) -> SmoothSystem:
    topo = ChartTopology(1, (True,), (2 * math.pi,))
    eq = [np.array([0.5 * math.pi]), np.array([1.5 * math.pi])]
    box = ((0.0,), (2 * math.pi,))
    if not time1_map:
        return SmoothSystem("vector_field", topo,
                            lambda x: np.array([math.cos(x[0])]),
                            lambda x: np.array([[-math.sin(x[0])]]),
                            equilibria=eq, jacobian_bound_L=1.0, probe_box=box,
                            info={"sink": 0.5 * math.pi, "source": 1.5 * math.pi,
                                  "sink_eigenvalue": -1.0, "source_eigenvalue": 1.0})

    def make(t):
        return (lambda x: np.array([_ns_flow_map(x[0], t)[0]]),
                lambda x: np.array([[_ns_flow_map(x[0], t)[1]]]))

    f, df = make(1.0)
    finv, dfinv = make(-1.0)
    return SmoothSystem("map", topo, f, df, equilibria=eq, probe_box=box,
                        inverse=finv, inverse_jac=dfinv,
                        info={"sink": 0.5 * math.pi, "source": 1.5 * math.pi,
                              "sink_derivative": math.exp(-1.0), "source_derivative": math.e})


# ------------------------------------------------ t^4 sin(1/t) gradient map
# Gradient ascent t' = phi'(t) on [-1/pi, 1/pi) with the endpoints identified;
# the sinks are the strict local maxima of phi.

_SINUS_HALF = 1.0 / math.pi
_SINUS_PERIOD = 2.0 / math.pi


def _sinus_wrap(t: float) -> float:
    return (t + _SINUS_HALF) % _SINUS_PERIOD - _SINUS_HALF


def sinus_dphi(t: float) -> float:
    """``phi'(t)`` for ``phi(t) = t^4 sin(1/t)`` (zero at ``t = 0``)."""
    if t == 0.0:
        return 0.0
    u = 1.0 / t
    return t * t * (4.0 * t * math.sin(u) - math.cos(u))


def sinus_ddphi(t: float) -> float:
    """``phi''(t) = 12 t^2 sin(1/t) - 6 t cos(1/t) - sin(1/t)``."""
    if t == 0.0:
        return 0.0
    u = 1.0 / t
    s = math.sin(u)
    return 12.0 * t * t * s - 6.0 * t * math.cos(u) - s


def _sinus_flow(t: float, T: float, n_sub: int) -> tuple[float, float]:
    """RK4 for ``t' = phi'(t)`` over time ``T`` with its exact step derivative."""
    h = T / n_sub
    hh = 0.5 * h
    c = h / 6.0
    D = 1.0
    f, fp, w = sinus_dphi, sinus_ddphi, _sinus_wrap
    for _ in range(n_sub):
        k1 = f(t)
        j1 = fp(t)
        t2 = w(t + hh * k1)
        k2 = f(t2)
        K2 = fp(t2) * (1.0 + hh * j1)
        t3 = w(t + hh * k2)
        k3 = f(t3)
        K3 = fp(t3) * (1.0 + hh * K2)
        t4 = w(t + h * k3)
        k4 = f(t4)
        K4 = fp(t4) * (1.0 + h * K3)
        D *= 1.0 + c * (j1 + 2.0 * K2 + 2.0 * K3 + K4)
        t = w(t + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return t, D


def sinus_critical_points(count: int, kind: str = "sink", t_min: float = 0.0) -> np.ndarray:
    """First ``count`` positive zeros of ``phi'`` of the requested kind
    (``"sink"``: ``phi'' < 0``, ``"source"``: ``phi'' > 0``), descending.

    Works in ``u = 1/t``, where the zeros solve ``4 sin(u) = u cos(u)``.
    """
    def F(u):
        return 4.0 * math.sin(u) - u * math.cos(u)

    found = []
    u = math.pi
    step = 0.01
    while len(found) < count:
        a, b = u, u + step
        if F(a) * F(b) < 0:
            r = brentq(F, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)
            t = 1.0 / r
            if t <= t_min:
                break
            attracting = sinus_ddphi(t) < 0
            if attracting == (kind == "sink"):
                found.append(t)
        u = b
    return np.array(found)


def _sinus_map(n_sub: int = 16) -> SmoothSystem:
    n_sub = int(n_sub)
    topo = ChartTopology(1, (True,), (_SINUS_PERIOD,), (-_SINUS_HALF,))

    def make(T):
        def f(x):
            return np.array([_sinus_flow(float(x[0]), T, n_sub)[0]])

        def df(x):
            return np.array([[_sinus_flow(float(x[0]), T, n_sub)[1]]])

        def both(x):
            t, d = _sinus_flow(float(x[0]), T, n_sub)
            return np.array([t]), np.array([[d]])
        return f, df, both

    f, df, both = make(1.0)
    finv, dfinv, both_inv = make(-1.0)
    return SmoothSystem("map", topo, f, df, equilibria=[np.zeros(1)],
                        inverse=finv, inverse_jac=dfinv, value_and_jac=both,
                        probe_box=((-_SINUS_HALF,), (_SINUS_HALF,)),
                        info={"convention": "gradient ascent of t^4 sin(1/t); sinks are "
                                            "zeros of phi' with phi'' < 0, repelling "
                                            "zeros (phi'' > 0) form the excluded set",
                              "substeps": n_sub},
                        inverse_value_and_jac=both_inv)


def _product_sinus_ns(n_sub: int = 16) -> SmoothSystem:
    g = _sinus_map(n_sub)
    topo = ChartTopology(2, (True, True), (_SINUS_PERIOD, 2 * math.pi), (-_SINUS_HALF, 0.0))

    def make(T):
        def pair(x):
            t, dt_ = _sinus_flow(float(x[0]), T, g.info["substeps"])
            th, dth = _ns_flow_map(float(x[1]), T)
            return t, th, dt_, dth

        def f(x):
            t, th, _, _ = pair(x)
            return np.array([t, th])

        def df(x):
            _, _, a, b = pair(x)
            return np.array([[a, 0.0], [0.0, b]])

        def both(x):
            t, th, a, b = pair(x)
            return np.array([t, th]), np.array([[a, 0.0], [0.0, b]])
        return f, df, both

    f, df, both = make(1.0)
    finv, dfinv, both_inv = make(-1.0)
    return SmoothSystem("map", topo, f, df, inverse=finv, inverse_jac=dfinv, value_and_jac=both,
                        probe_box=((-_SINUS_HALF, 0.0), (_SINUS_HALF, 2 * math.pi)),
                        inverse_value_and_jac=both_inv,
                        info={"factors": ["sinus_sinks_map", "north_south_circle time-1 map"]})


# ------------------------------------------------------------ simple maps

def _linear_map(A=((0.5,),), half_width: float = 1.0) -> SmoothSystem:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("linear map needs a square matrix A")
    d = A.shape[0]
    topo = ChartTopology.euclidean(d)
    inv = None
    if abs(np.linalg.det(A)) > 0:
        Ainv = np.linalg.inv(A)
        inv = (lambda x: Ainv @ x, lambda x: Ainv.copy())
    return SmoothSystem("map", topo, lambda x: A @ x, lambda x: A.copy(),
                        equilibria=[np.zeros(d)], probe_box=_box_for(topo, half_width),
                        inverse=None if inv is None else inv[0],
                        inverse_jac=None if inv is None else inv[1])


def _rotation_contraction(angle: float = 0.3, factor: float = 0.5) -> SmoothSystem:
    c, s = math.cos(angle), math.sin(angle)
    return _linear_map(factor * np.array([[c, -s], [s, c]]))


def _doubling_map() -> SmoothSystem:
    topo = ChartTopology(1, (True,), (1.0,))
    two = np.array([[2.0]])
    return SmoothSystem("map", topo, lambda x: 2.0 * x, lambda x: two.copy(),
                        equilibria=[np.zeros(1)], probe_box=((0.0,), (1.0,)))


# ------------------------------------------------------------- Bowen-type flow
# Cylinder (x mod 4 pi, y). H = y^2/2 - w^2 cos x has saddles at (pi, 0) and
# (3 pi, 0) joined by the separatrices u1 = y - 2w cos(x/2) = 0 (upper) and
# u2 = y + 2w cos(x/2) = 0 (lower). The field is
#   X_H + eps (H_sep - H) grad H + c b(z) u2 J grad u1,
# where the last term vanishes on the lower separatrix and is localised at
# (pi, 0) by a Gaussian bump b. It leaves both saddles fixed and turns the
# eigenvalues (w, -w) at (pi, 0) into (w, -(w + c)).

def _bowen_type(omega: float = 0.5, c: float = 0.25, eps: float = 1e-3, width: float = 1.0,
                modification: bool = True) -> SmoothSystem:
    om, eps, w2 = float(omega), float(eps), float(width) ** 2
    if om <= 0 or w2 <= 0 or eps < 0:
        raise ConfigError("bowen_type needs omega > 0, width > 0 and eps >= 0")
    c = float(c) if modification else 0.0
    om2 = om * om
    period = 4 * math.pi

    def parts(x):
        X, Y = x[0], x[1]
        sx, cx = math.sin(X), math.cos(X)
        sh, ch = math.sin(0.5 * X), math.cos(0.5 * X)
        Hx, Hxx = om2 * sx, om2 * cx
        D = om2 - (0.5 * Y * Y - om2 * cx)
        dx = X - math.pi
        dx -= period * round(dx / period)
        b = c * math.exp(-(dx * dx + Y * Y) / w2)
        u2 = Y + 2.0 * om * ch
        s = om * sh
        return X, Y, Hx, Hxx, D, dx, b, u2, s, sh, ch

    def field(x):
        X, Y, Hx, Hxx, D, dx, b, u2, s, sh, ch = parts(x)
        m = b * u2
        return np.array([Y + eps * D * Hx + m, -Hx + eps * D * Y - m * s])

    def jac(x):
        X, Y, Hx, Hxx, D, dx, b, u2, s, sh, ch = parts(x)
        bx = -2.0 * dx / w2 * b
        by = -2.0 * Y / w2 * b
        u2x = -s
        sx = 0.5 * om * ch
        m1x = bx * u2 + b * u2x
        m1y = by * u2 + b
        m2x = -(bx * u2 * s + b * u2x * s + b * u2 * sx)
        m2y = -(by * u2 * s + b * s)
        return np.array([
            [eps * (-Hx * Hx + D * Hxx) + m1x, 1.0 - eps * Y * Hx + m1y],
            [-Hxx - eps * Hx * Y + m2x, eps * (D - Y * Y) + m2y],
        ])

    topo = ChartTopology(2, (True, False), (period, math.inf))
    saddles = [np.array([math.pi, 0.0]), np.array([3 * math.pi, 0.0])]
    system = SmoothSystem("vector_field", topo, field, jac,
                          probe_box=((0.0, -1.5), (period, 1.5)),
                          info={"saddles": [s.tolist() for s in saddles],
                                "modification": bool(modification and c != 0.0)})
    centers = [_newton_zero(system, np.array([0.0, 0.0])),
               _newton_zero(system, np.array([2 * math.pi, 0.0]))]
    system.equilibria = saddles + centers
    return system


def _newton_zero(system: SmoothSystem, x, tol: float = 1e-14, maxiter: int = 50) -> np.ndarray:
    x = np.asarray(x, dtype=float).copy()
    for _ in range(maxiter):
        g = system(x)
        if np.linalg.norm(g) <= tol:
            break
        x = x - np.linalg.solve(system.jacobian(x), g)
    return x


def saddle_eigenvalue_products(system: SmoothSystem):
    """``(prod of contracting rates, prod of expanding rates)`` over the
    saddles of a planar system: ``(lambda_1^- lambda_2^-, lambda_1^+ lambda_2^+)``."""
    contract, expand = 1.0, 1.0
    for s in system.equilibria:
        ev = np.linalg.eigvals(system.jacobian(s))
        re = np.sort(ev.real)
        if re[0] < 0 < re[-1]:
            contract *= -re[0]
            expand *= re[-1]
    return contract, expand


CATALOG = {
    "constant_torus": _constant_torus,
    "linear": _linear,
    "limit_cycle": _limit_cycle,
    "north_south_circle": _north_south,
    "north_south_map": lambda: _north_south(time1_map=True),
    "sinus_sinks_map": _sinus_map,
    "product_sinus_ns": _product_sinus_ns,
    "bowen_type": _bowen_type,
    "linear_map": _linear_map,
    "rotation_contraction": _rotation_contraction,
    "doubling_map": _doubling_map,
}


def builtin(name: str, params: dict | None = None) -> SmoothSystem:
    """Instantiate a catalogued system.

    Raises
    ------
    ConfigError
        For an unknown name or parameters the constructor does not accept.
    """
    if name not in CATALOG:
        raise ConfigError(f"unknown system {name!r}; available: {', '.join(sorted(CATALOG))}")
    params = dict(params or {})
    try:
        system = CATALOG[name](**params)
    except TypeError as exc:
        raise ConfigError(f"invalid parameters for {name!r}: {exc}") from None
    system.name = name
    system.params = params
    system.spec = {"builtin": name, "params": _jsonable(params)}
    return _finish(system)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


# ----------------------------------------------------------------- configs

def _guard(fn):
    def wrapped(*values):
        try:
            return fn(*values)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise NumericalError(f"expression evaluation failed: {exc}") from None
    return wrapped


def from_config(document) -> SmoothSystem:
    """Build a system from a parsed document (dict) or TOML/JSON text.

    Schema: ``{dimension, kind?, topology: {periodic, periods, offsets?},
    field: [expr per coordinate], jacobian?: [[expr]], equilibria?: [[real]],
    params?: {name: real}}``. Coordinates are ``x1..xd`` (and ``x, y, z`` when
    ``d <= 3``).
    """
    if isinstance(document, (str, bytes)):
        document = _parse_text(document)
    if not isinstance(document, dict):
        raise ConfigError("system document must be a table/object")
    if "builtin" in document:
        return builtin(document["builtin"], document.get("params"))
    try:
        d = int(document["dimension"])
        exprs = list(document["field"])
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}") from None
    kind = document.get("kind", "vector_field")
    if len(exprs) != d:
        raise ConfigError(f"field has {len(exprs)} components, dimension is {d}")
    topo_doc = document.get("topology", {}) or {}
    periodic = list(topo_doc.get("periodic", [False] * d))
    periods = topo_doc.get("periods", [None] * d)
    offsets = topo_doc.get("offsets", [0.0] * d)
    if not (len(periodic) == len(periods) == len(offsets) == d):
        raise ConfigError("topology lists must have one entry per coordinate")
    try:
        topo = ChartTopology(d, tuple(periodic),
                             tuple(math.inf if p is None else float(p) for p in periods),
                             tuple(float(o) for o in offsets))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params = {k: float(v) for k, v in (document.get("params") or {}).items()}
    names = coordinate_names(d)
    flat = [n for group in names for n in group]
    index = [i for i, group in enumerate(names) for _ in group]
    try:
        fvec = _guard(compile_expressions(exprs, flat, params))
        jexprs = document.get("jacobian")
        fjac = None
        if jexprs is not None:
            if len(jexprs) != d or any(len(row) != d for row in jexprs):
                raise ConfigError(f"jacobian must be {d}x{d}")
            fjac = _guard(compile_expressions([e for row in jexprs for e in row], flat, params))
    except ExpressionError as exc:
        raise ConfigError(str(exc)) from exc

    def func(x):
        return np.array(fvec(*(x[i] for i in index)))

    def jac(x):
        return np.array(fjac(*(x[i] for i in index))).reshape(d, d)

    eqs = [np.asarray(e, dtype=float) for e in document.get("equilibria", []) or []]
    for e in eqs:
        if e.shape != (d,):
            raise ConfigError(f"equilibrium {e.tolist()} does not have dimension {d}")
    box = document.get("probe_box")
    system = SmoothSystem(kind, topo, func, jac if fjac is not None else None, equilibria=eqs,
                          name=document.get("name", "config"), params=params,
                          probe_box=None if box is None else (tuple(box[0]), tuple(box[1])),
                          spec={"config": _jsonable(document)})
    if kind == "vector_field" and system.jacobian_bound_L is None and "jacobian_bound_L" in document:
        system.jacobian_bound_L = float(document["jacobian_bound_L"])
    return system


def _parse_text(text) -> dict:
    if isinstance(text, bytes):
        text = text.decode()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from None


def load_system(ref: str, params: dict | None = None) -> SmoothSystem:
    """``ref`` is a builtin name or a path to a TOML/JSON document."""
    if ref in CATALOG:
        return builtin(ref, params)
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"{ref!r} is neither a builtin system nor a file")
    doc = _parse_text(path.read_text())
    if params:
        doc.setdefault("params", {}).update(params)
    system = from_config(doc)
    return system


def rebuild(spec: dict) -> SmoothSystem:
    """Inverse of ``system.spec``."""
    if "builtin" in spec:
        system = builtin(spec["builtin"], spec.get("params"))
    else:
        system = from_config(spec["config"])
    if spec.get("reversed"):
        system = system.time_reversed()
    return system
