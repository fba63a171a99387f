import json
import math

import numpy as np
import pytest

from hyptimes.classify import analyze_singularity
from hyptimes.flow import fd_jacobian, integrate
from hyptimes.geometry import displacement
from hyptimes.systems import (CATALOG, ConfigError, builtin, estimate_jacobian_bound,
                              from_config, load_system, rebuild, saddle_eigenvalue_products,
                              sinus_critical_points, sinus_ddphi, sinus_dphi)
from oracles import critical_points_bisection

SADDLE_TOML = """
dimension = 2
field = ["-x", "y"]
jacobian = [["-1", "0"], ["0", "1"]]
equilibria = [[0.0, 0.0]]
"""


def random_points(system, n, rng):
    lo, hi = (np.asarray(b, dtype=float) for b in system.probe_box)
    return lo + (hi - lo) * rng.random((n, lo.size))


def test_catalog_and_errors():
    for name in CATALOG:
        s = builtin(name)
        assert s.spec == {"builtin": name, "params": {}}
        assert s.probe_box is not None
    with pytest.raises(ConfigError, match="unknown system"):
        builtin("lorenz")
    with pytest.raises(ConfigError, match="invalid parameters"):
        builtin("limit_cycle", {"radius": 2.0})
    with pytest.raises(ConfigError):
        builtin("linear", {"A": [[1.0, 2.0]]})


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_analytic_jacobians_match_differences(name):
    s = builtin(name)
    rng = np.random.default_rng(5)
    for x in random_points(s, 25, rng):
        # the sinus factor is not differentiable at 0
        if name in ("sinus_sinks_map", "product_sinus_ns") and abs(x[0]) < 0.02:
            continue
        J = s.jacobian(x)
        F = fd_jacobian(s.func, x, s.topo, 1e-6)
        np.testing.assert_allclose(J, F, atol=1e-6 * max(1.0, np.abs(J).max()))


def test_linear_exponent():
    s = builtin("linear", {"A": [[-1.0]]})
    seg = integrate(s, [0.7], 10.0, 1e-2, with_variational=True)
    assert abs(math.log(abs(seg.fundamentals[-1][0, 0])) / 10.0 + 1.0) <= 1e-9


def test_constant_torus_exponents_zero():
    s = builtin("constant_torus", {"dimension": 3})
    seg = integrate(s, [0.1, 0.2, 0.3], 20.0, 0.05, with_variational=True)
    np.testing.assert_array_equal(seg.fundamentals[-1], np.eye(3))
    assert s.info["exponents"] == [0.0, 0.0, 0.0]


DOCUMENTED = {
    "linear": ["sink"],
    "limit_cycle": ["source"],
    "north_south_circle": ["sink", "source"],
    "bowen_type": ["saddle", "saddle", "source", "source"],
}


@pytest.mark.parametrize("name", sorted(DOCUMENTED))
def test_declared_equilibria(name):
    s = builtin(name)
    types = []
    for sigma in s.equilibria:
        assert np.linalg.norm(s(sigma)) <= 1e-10
        types.append(analyze_singularity(s, sigma)["type"])
    assert types == DOCUMENTED[name]


@pytest.mark.parametrize("name", ["north_south_map", "sinus_sinks_map", "linear_map",
                                  "rotation_contraction", "doubling_map"])
def test_declared_fixed_points(name):
    s = builtin(name)
    for p in s.equilibria:
        assert np.linalg.norm(displacement(s(p), p, s.topo)) <= 1e-12


def test_north_south_map():
    s = builtin("north_south_map")
    sink, source = (float(e[0]) for e in s.equilibria)
    assert abs(s.jacobian([sink])[0, 0] - math.exp(-1)) <= 1e-12
    assert abs(s.jacobian([source])[0, 0] - math.e) <= 1e-12
    rng = np.random.default_rng(0)
    for th in rng.uniform(0, 2 * math.pi, 20):
        back = s.inverse(s([th]))
        assert abs(displacement(back, [th], s.topo)[0]) <= 1e-12
    # agrees with integrating the flow for unit time
    flow = builtin("north_south_circle")
    seg = integrate(flow, [0.4], 1.0, 1e-3)
    assert abs(seg.states[-1][0] - s([0.4])[0]) <= 1e-10


def test_sinus_sinks_against_bisection():
    ours = sinus_critical_points(5, "sink")
    oracle = critical_points_bisection(sinus_dphi, sinus_ddphi, "sink", 5, 1 / math.pi, 0.02)
    np.testing.assert_allclose(ours, oracle, atol=1e-12)
    assert np.all(np.diff(ours) < 0)
    for t in ours:
        assert abs(math.tan(1 / t) - 1 / (4 * t)) <= 1e-8 * (1 + abs(math.tan(1 / t)))
        assert sinus_ddphi(t) < 0


def test_sinus_map_sinks_attract():
    s = builtin("sinus_sinks_map")
    for t in sinus_critical_points(5, "sink"):
        assert abs(s([t])[0] - t) <= 1e-15
        assert 0 < s.jacobian([t])[0, 0] < 1
    for t in sinus_critical_points(5, "source"):
        assert s.jacobian([t])[0, 0] > 1
    assert "sinks are zeros of phi' with phi'' < 0" in s.info["convention"]


def test_product_is_factorwise():
    pm, g, h = builtin("product_sinus_ns"), builtin("sinus_sinks_map"), builtin("north_south_map")
    rng = np.random.default_rng(2)
    for x in random_points(pm, 10, rng):
        y = pm(x)
        assert y[0] == g([x[0]])[0] and y[1] == h([x[1]])[0]
        np.testing.assert_array_equal(pm.inverse(y), [g.inverse([y[0]])[0], h.inverse([y[1]])[0]])


def test_bowen_saddles_and_gate():
    on = builtin("bowen_type")
    off = builtin("bowen_type", {"modification": False})
    for s in (on, off):
        for sigma in s.equilibria[:2]:
            info = analyze_singularity(s, sigma)
            assert info["type"] == "saddle" and info["hyperbolic"]
            assert info["dim_Eu"] == 1 and info["dim_Es"] == 1
    c_off, e_off = saddle_eigenvalue_products(off)
    assert c_off == pytest.approx(e_off, rel=1e-12)
    c_on, e_on = saddle_eigenvalue_products(on)
    assert c_on > e_on
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(on.jacobian(on.equilibria[0])).real),
                               [-0.75, 0.5], atol=1e-12)


def test_bowen_invalid_params():
    with pytest.raises(ConfigError):
        builtin("bowen_type", {"omega": -1.0})


# ------------------------------------------------------------------ configs

def test_config_matches_builtin_linear():
    ref = builtin("linear", {"A": [[-1.0, 0.0], [0.0, 1.0]]})
    rng = np.random.default_rng(4)
    doc = json.dumps({"dimension": 2, "field": ["-x1", "x2"]})
    for s in (from_config(SADDLE_TOML), from_config(doc)):
        for x in rng.normal(size=(100, 2)):
            np.testing.assert_allclose(s(x), ref(x), rtol=0, atol=1e-12)
            np.testing.assert_allclose(s.jacobian(x), ref.jacobian(x), atol=1e-8)
    assert not from_config(SADDLE_TOML).fd_jacobian


def test_config_typo_names_token():
    with pytest.raises(ConfigError, match="sinn"):
        from_config({"dimension": 2, "field": ["-x + sinn(y)", "y"]})
    with pytest.raises(ConfigError, match="column"):
        from_config({"dimension": 1, "field": ["x +* 2"]})
    with pytest.raises(ConfigError, match="'q'"):
        from_config({"dimension": 1, "field": ["q * x"]})


def test_config_without_jacobian_flags_fd():
    s = from_config({"dimension": 2, "field": ["a * sin(y)", "-x"], "params": {"a": 2.0}})
    assert s.fd_jacobian
    np.testing.assert_allclose(s.jacobian([0.3, 0.4]), [[0, 2 * math.cos(0.4)], [-1, 0]],
                               atol=1e-8)


def test_config_errors():
    with pytest.raises(ConfigError, match="components"):
        from_config({"dimension": 3, "field": ["x", "y"]})
    with pytest.raises(ConfigError, match="missing"):
        from_config({"field": ["x"]})
    with pytest.raises(ConfigError, match="2x2"):
        from_config({"dimension": 2, "field": ["x", "y"], "jacobian": [["1"]]})
    with pytest.raises(ConfigError, match="TOML"):
        from_config("dimension = ")
    with pytest.raises(ConfigError, match="JSON"):
        from_config('{"dimension": 1,')


def test_config_topology_and_load(tmp_path):
    doc = {"dimension": 2, "field": ["1", "cos(x2)"],
           "topology": {"periodic": [True, False], "periods": [6.0, None]},
           "probe_box": [[0, -1], [6, 1]]}
    s = from_config(doc)
    assert s.topo.periodic_mask == (True, False)
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(doc))
    t = load_system(str(path))
    assert np.array_equal(t([1.0, 2.0]), s([1.0, 2.0]))
    assert load_system("limit_cycle").name == "limit_cycle"
    with pytest.raises(ConfigError):
        load_system(str(tmp_path / "missing.toml"))


def test_rebuild_from_spec():
    for s in (builtin("bowen_type", {"eps": 2e-3}), from_config(SADDLE_TOML),
              builtin("north_south_map").time_reversed()):
        r = rebuild(s.spec)
        x = np.array([0.3, 0.2])[: s.dimension]
        assert np.array_equal(r(x), s(x))


def test_jacobian_bound_is_box_supremum():
    s = builtin("limit_cycle")
    rng = np.random.default_rng(8)
    pts = random_points(s, 10_000, rng)
    sampled = np.linalg.norm([s.jacobian(p) for p in pts], ord=2, axis=(1, 2)).max()
    assert s.jacobian_bound_L >= sampled
    coarse = estimate_jacobian_bound(s, n_per_axis=5, refine=0)
    assert estimate_jacobian_bound(s, n_per_axis=5) >= coarse
    assert estimate_jacobian_bound(s, points=pts[:10]) <= s.jacobian_bound_L
