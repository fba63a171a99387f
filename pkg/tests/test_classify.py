import math

import numpy as np
import pytest

from hyptimes.classify import (ClassificationReport, ClassifyConfig, FrameError,
                               analyze_singularity, classify_trajectory, cusp_function,
                               cusp_section_hit, first_return, gronwall_check,
                               nested_contraction_search, refine_periodic_point,
                               return_map_contraction, section_crossings, section_disk)
from hyptimes.flow import SmoothSystem, integrate, iterate
from hyptimes.geometry import ChartTopology
from hyptimes.hyptimes import (block_exponent_series, contracting_ball_radius,
                               detect_lpf_reverse_hyperbolic_times,
                               detect_reverse_hyperbolic_times_map)
from hyptimes.lpf import lpf_from
from hyptimes.systems import builtin, sinus_ddphi, sinus_dphi
from oracles import critical_points_bisection

SADDLE = [[-1.0, 0.0], [0.0, 1.0]]


def linear(A):
    return builtin("linear", {"A": A})


def map_search(system, x0, n=200, zeta=None):
    orbit = iterate(system, x0, n, with_jacobians=True)
    series = block_exponent_series(orbit, 1)
    zeta = zeta or 0.9 * abs(series.liminf_estimate)
    record = detect_reverse_hyperbolic_times_map(series.block_logs, zeta)
    box = np.array(system.probe_box)
    grid = np.stack(np.meshgrid(*[np.linspace(lo, hi, 21) for lo, hi in box.T]), -1)
    delta1, lam1 = contracting_ball_radius(system, math.exp(-0.5 * zeta),
                                           grid.reshape(-1, box.shape[1]))
    return nested_contraction_search(system, orbit, record, delta1, lam1)


@pytest.fixture(scope="module")
def limit_cycle():
    return builtin("limit_cycle")


@pytest.fixture(scope="module")
def bowen():
    return builtin("bowen_type")


# ------------------------------------------------------------- nested search

def test_nested_search_halving_map():
    p, period = map_search(builtin("linear_map", {"A": [[0.5]]}), [0.8], 60)
    assert period == 1
    assert abs(p[0]) <= 1e-12


def test_nested_search_rotation_contraction():
    p, period = map_search(builtin("rotation_contraction"), [0.7, -0.4], 60)
    assert period == 1
    assert np.linalg.norm(p) <= 1e-12


def test_refine_reduces_to_minimal_period():
    p = refine_periodic_point(builtin("linear_map", {"A": [[0.5]]}), np.array([0.3]), 4)
    assert abs(p[0]) <= 1e-12


def test_nested_search_needs_contraction():
    m = builtin("linear_map", {"A": [[0.5]]})
    orbit = iterate(m, [0.5], 20, with_jacobians=True)
    record = detect_reverse_hyperbolic_times_map(block_exponent_series(orbit).block_logs, 1.0)
    assert nested_contraction_search(m, orbit, record, 0.1, 1.5) is None


@pytest.fixture(scope="module")
def sinus_sinks():
    return critical_points_bisection(sinus_dphi, sinus_ddphi, "sink", 40, 1 / math.pi, 5e-3)


def test_product_map_sink_matches_root(sinus_sinks):
    pm = builtin("product_sinus_ns")
    rng = np.random.default_rng(3)
    x0 = [rng.uniform(0.03, 0.3), rng.uniform(0.5, 6.0)]
    r = classify_trajectory(pm, x0)
    assert r.verdict == "map_sink_basin"
    t = r.evidence["point"][0]
    assert np.min(np.abs(sinus_sinks - t)) <= 1e-6
    assert sinus_ddphi(t) < 0
    assert abs(r.evidence["point"][1] - math.pi / 2) <= 1e-9


# ---------------------------------------------------------- section crossings

def test_limit_cycle_crossings_every_period(limit_cycle):
    disk = section_disk(limit_cycle, [1.0, 0.0])
    seg = integrate(limit_cycle, [1.0, 0.0], 6 * math.pi + 1.0, 1e-2)
    hits = section_crossings(limit_cycle, seg, disk)
    assert len(hits) == 3
    for k, (t, u, x) in enumerate(hits, 1):
        assert abs(t - 2 * math.pi * k) <= 1e-8
        assert abs(u[0]) <= 1e-8


def test_constant_torus_crossings():
    torus = builtin("constant_torus")
    y = np.array([1.0, 2.0])
    disk = section_disk(torus, y)
    seg = integrate(torus, [0.0, 2.0], 3 * 2 * math.pi, 1e-2)
    times = [h[0] for h in section_crossings(torus, seg, disk)]
    np.testing.assert_allclose(times, [1.0, 1.0 + 2 * math.pi, 1.0 + 4 * math.pi], atol=1e-9)


def test_crossings_missed_disk(limit_cycle):
    disk = section_disk(limit_cycle, [1.0, 0.0])
    # the orbit of the origin's neighbourhood at r = 0.2 never reaches r ~ 1 in time 3
    seg = integrate(limit_cycle, [0.0, -0.2], 3.0, 1e-2)
    assert section_crossings(limit_cycle, seg, disk) == []
    seg = integrate(builtin("constant_torus"), [0.0, 0.0], 10.0, 1e-2)
    assert section_crossings(builtin("constant_torus"), seg,
                             section_disk(builtin("constant_torus"), [1.0, 2.0])) == []


# ------------------------------------------------------------- return maps

def test_limit_cycle_return_derivative(limit_cycle):
    disk = section_disk(limit_cycle, [1.0, 0.0])
    r = return_map_contraction(limit_cycle, disk, cap=10.0, n_returns=2)
    target = math.exp(-4 * math.pi)
    assert abs(r["derivative"][0, 0] - target) <= 1e-4 * target
    assert abs(r["return_time"] - 2 * math.pi) <= 1e-8
    assert r["complete"] and r["certified"] and r["uniform_contraction"]
    assert r["fd_relative_error"] <= 1e-4
    for ret in r["returns"]:
        assert abs(ret["rate"] + 2.0) <= 1e-4


def test_linear_center_return_is_isometric():
    center = linear([[0.0, -1.0], [1.0, 0.0]])
    r = return_map_contraction(center, section_disk(center, [1.0, 0.0]), cap=10.0)
    assert abs(abs(r["derivative"][0, 0]) - 1.0) <= 1e-6
    assert abs(r["return_time"] - 2 * math.pi) <= 1e-8
    assert not r["certified"]


def test_first_return_escape_is_absent(limit_cycle):
    assert first_return(limit_cycle, section_disk(limit_cycle, [1.0, 0.0]), [0.0], 3.0) is None


def test_bowen_return_not_certified(bowen):
    # regression frozen from a reference run: per-return rates range over
    # about -4e-4 .. -5e-2 in the first five returns
    disk = section_disk(bowen, [2 * math.pi, 0.9])
    r = return_map_contraction(bowen, disk, cap=200.0, dt=1e-2, n_returns=5)
    assert r["complete"]
    norms = [ret["norm"] for ret in r["returns"]]
    rates = [ret["rate"] for ret in r["returns"]]
    assert len(norms) == 5
    assert max(norms) / min(norms) > 4
    assert max(rates) > -1e-2 and min(rates) < -4e-2
    assert not r["uniform_contraction"]
    assert not r["certified"]


# ------------------------------------------------------- singularity analysis

def test_analyze_sink():
    info = analyze_singularity(linear([[-1.0, 0.0], [0.0, -2.0]]), [0.0, 0.0])
    assert info["type"] == "sink" and info["hyperbolic"]
    assert info["dim_Es"] == 2 and info["dim_Eu"] == 0


def test_analyze_saddle():
    info = analyze_singularity(linear([[-1.0, 0.0], [0.0, 2.0]]), [0.0, 0.0])
    assert info["type"] == "saddle"
    assert info["dim_Eu"] == 1 and info["dim_Es"] == 1 and info["codimension_one"]
    assert "index" not in info


def test_analyze_complex_sink():
    A = np.array([[-1.0, 0.0, 0.0], [0.0, -0.5, -3.0], [0.0, 3.0, -0.5]])
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(3, 3)))
    info = analyze_singularity(linear((Q @ A @ Q.T).tolist()), np.zeros(3))
    assert info["type"] == "sink"
    ev = np.array(info["eigenvalues"])
    np.testing.assert_allclose(np.sort_complex(ev), [-1.0, -0.5 - 3j, -0.5 + 3j], atol=1e-12)


def test_analyze_rejects_regular_point():
    with pytest.raises(ValueError):
        analyze_singularity(linear(SADDLE), [1.0, 0.0])


def test_analyze_non_hyperbolic():
    info = analyze_singularity(linear([[0.0, -1.0], [1.0, 0.0]]), [0.0, 0.0])
    assert not info["hyperbolic"]


def test_declared_equilibria_consistent(bowen):
    types = [analyze_singularity(bowen, s)["type"] for s in bowen.equilibria]
    assert types.count("saddle") == 2


# ----------------------------------------------------------------- Gronwall

def test_gronwall_linear():
    for A in (SADDLE, [[-0.3, 2.0], [-1.0, -0.1]]):
        g = gronwall_check(linear(A), [0.0, 0.0], [0.4, -0.2], 1.0, dt=1e-3)
        assert g["lhs"] <= 1e-9 and g["holds"]


@pytest.mark.parametrize("dist", [1e-2, 1e-3, 1e-4])
def test_gronwall_bowen_saddles(bowen, dist):
    direction = np.array([0.6, 0.8])
    for sigma in bowen.equilibria[:2]:
        for t in (0.05, 0.25, 0.5, 1.0):
            g = gronwall_check(bowen, sigma, sigma + dist * direction, t, dt=1e-3)
            assert g["lhs"] <= g["rhs"] + 1e-9


def test_gronwall_far_point_reported(bowen):
    g = gronwall_check(bowen, bowen.equilibria[0], [0.0, 1.0], 1.0)
    assert g["holds"] and g["rhs"] > g["lhs"]


# ---------------------------------------------------------------- cusp hits

def test_cusp_closed_form():
    s = linear(SADDLE)
    t, x = cusp_section_hit(s, [0.0, 0.0], [1.0, math.exp(-3.0)], 5.0, dt=1e-3)
    assert abs(t - 1.0) <= 1e-8
    assert abs(cusp_function(s, [0.0, 0.0])(x)) <= 1e-12


def test_cusp_stable_axis_no_hit():
    assert cusp_section_hit(linear(SADDLE), [0.0, 0.0], [1.0, 0.0], 30.0) is None


def test_cusp_unstable_axis_apex():
    t, x = cusp_section_hit(linear(SADDLE), [0.0, 0.0], [0.0, 0.3], 5.0)
    assert abs(x[0]) <= 1e-6


def test_cusp_every_box_orbit_hits_once():
    s = linear(SADDLE)
    F = cusp_function(s, [0.0, 0.0])
    rng = np.random.default_rng(11)
    for x0 in rng.uniform(-1, 1, size=(40, 2)):
        if min(abs(x0)) < 1e-3:
            continue
        seg = integrate(s, x0, 12.0, 1e-3)
        inside = np.all(np.abs(seg.states) <= 1.0, axis=1)
        leave = np.argmin(inside) if not inside.all() else len(inside)
        vals = np.array([F(x) for x in seg.states[:leave]])
        changes = np.sum((vals[:-1] > 0) & (vals[1:] <= 0)) + int(vals[0] <= 0)
        assert changes == 1, x0


def test_cusp_needs_single_unstable_direction():
    with pytest.raises(ValueError):
        cusp_section_hit(linear([[-1.0, 0.0], [0.0, -2.0]]), [0.0, 0.0], [1.0, 1.0], 1.0)


def test_cusp_ill_conditioned_frame():
    A = [[-1.0, 1e9], [0.0, 1.0 + 1e-8]]
    with pytest.raises(FrameError):
        cusp_function(linear(A), [0.0, 0.0])


# ------------------------------------------------------------ classification

def test_classify_limit_cycle(limit_cycle):
    r = classify_trajectory(limit_cycle, [0.5, 0.0], {"horizon": 40})
    assert r.verdict == "flow_periodic_sink_basin"
    p = np.array(r.evidence["periodic_point"])
    assert abs(np.linalg.norm(p) - 1.0) <= 1e-6
    target = math.exp(-4 * math.pi)
    assert abs(r.evidence["return_derivative"][0][0] - target) <= 1e-4 * target
    assert abs(r.evidence["sectional_exponent"] + 2.0) <= 0.05


def test_classify_linear_sink_3d():
    s = linear(np.diag([-1.0, -1.0, -1.0]).tolist())
    r = classify_trajectory(s, [1.0, 0.5, -0.3], {"horizon": 20})
    assert r.verdict == "flow_equilibrium_sink"
    assert abs(r.exponents["chi_G_at_sink"] + 1.0) <= 1e-3
    assert abs(r.exponents["chi_G"]["limsup_estimate"] + 1.0) <= 1e-3
    np.testing.assert_allclose(r.evidence["equilibrium"]["point"], 0.0, atol=1e-12)


def test_classify_start_at_equilibrium():
    assert classify_trajectory(linear(SADDLE), [0.0, 0.0]).verdict == "accumulates_saddle"
    assert classify_trajectory(linear([[1.0, 0.0], [0.0, 1.0]]), [0.0, 0.0]).verdict == "flow_source"


def test_classify_bowen_accumulates_saddles(bowen):
    r = classify_trajectory(bowen, [0.0, 0.95], {"horizon": 800, "dt": 1e-2})
    assert r.verdict == "accumulates_saddle"
    saddles = r.evidence["saddles"]
    assert len(saddles) == 2
    assert all(s["dim_Eu"] == 1 and s["codimension_one"] for s in saddles)
    assert r.evidence["oscillating"]


def test_map_sink_recertifies():
    for name, x0 in (("north_south_map", [0.3]), ("rotation_contraction", [0.5, 0.5]),
                     ("product_sinus_ns", [0.2, 2.0])):
        s = builtin(name)
        r = classify_trajectory(s, x0)
        assert r.verdict == "map_sink_basin", name
        p = np.array(r.evidence["point"])
        x, J = p.copy(), np.eye(s.dimension)
        for _ in range(r.evidence["period"]):
            J = s.jacobian(x) @ J
            x = s(x)
        d = x - p
        if s.topo.is_periodic:
            d = np.array([(di + 0.5 * P) % P - 0.5 * P if per else di
                          for di, P, per in zip(d, s.topo.period, s.topo.periodic_mask)])
        assert np.linalg.norm(d) <= 1e-9
        assert np.max(np.abs(np.linalg.eigvals(J))) < 1 - 1e-6


def test_source_agrees_with_reversed_map():
    ns = builtin("north_south_map")
    fwd = classify_trajectory(ns, [1.5 * math.pi + 0.2])
    assert fwd.verdict in ("map_sink_basin", "map_source_orbit")
    src = classify_trajectory(ns, [3 * math.pi / 2])
    back = classify_trajectory(ns.time_reversed(), [3 * math.pi / 2])
    assert src.verdict == "map_source_orbit" and back.verdict == "map_sink_basin"
    np.testing.assert_allclose(src.evidence["point"], back.evidence["point"], atol=1e-12)


def test_source_agrees_with_reversed_flow():
    s = linear([[1.0, 0.0], [0.0, 1.5]])
    src = classify_trajectory(s, [0.3, -0.2], {"horizon": 10})
    back = classify_trajectory(s.time_reversed(), [0.3, -0.2], {"horizon": 10})
    assert src.verdict == "flow_source"
    assert back.verdict == "flow_equilibrium_sink"
    np.testing.assert_allclose(src.evidence["equilibrium"]["point"],
                               back.evidence["equilibrium"]["point"], atol=1e-12)


def test_stable_axis_has_no_certified_lpf_record():
    s = linear(SADDLE)
    coc = lpf_from(s, [1.0, 0.0], 8.0, 1e-2)
    np.testing.assert_allclose(coc.log_norms[-1], 8.0, rtol=1e-6)
    for zeta in (0.1, 0.5, 1.0):
        rec = detect_lpf_reverse_hyperbolic_times(coc, zeta, 1.0)
        assert not rec.certified and not rec.times


def test_classify_inconclusive_never_raises():
    r = classify_trajectory(builtin("constant_torus"), [0.1, 0.2], {"horizon": 10})
    assert r.verdict == "inconclusive"
    assert r.caveats


def test_report_and_config_round_trip():
    r = classify_trajectory(builtin("linear_map", {"A": [[0.5]]}), [0.4])
    d = r.to_dict()
    assert d["verdict"] == "map_sink_basin" and isinstance(r.to_json(), str)
    with pytest.raises(ValueError):
        ClassificationReport("sink", {})
    cfg = ClassifyConfig.from_dict({"horizon": 30, "zeta": 0.2})
    assert ClassifyConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ClassifyConfig.from_dict({"horizon": 30, "bogus": 1})


def test_doubling_map_source():
    r = classify_trajectory(builtin("doubling_map"), [0.3])
    assert r.verdict == "inconclusive"


def test_map_without_inverse_is_not_source():
    topo = ChartTopology.euclidean(1)
    sq = SmoothSystem("map", topo, lambda x: 2.0 * x, lambda x: np.array([[2.0]]))
    assert classify_trajectory(sq, [1e-3], {"horizon": 20}).verdict == "inconclusive"
