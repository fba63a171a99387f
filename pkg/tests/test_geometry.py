import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyptimes.geometry import (ChartTopology, DegenerateDirectionError, displacement, distance,
                               frame_angles, normal_frame, orthogonal_projection, transport_frame,
                               wrap_point)

finite = st.floats(-1e3, 1e3, allow_nan=False)
nonzero_vec = st.integers(1, 6).flatmap(
    lambda d: arrays(float, d, elements=finite)).filter(lambda v: np.linalg.norm(v) > 1e-6)


def test_wrap_examples():
    cyl = ChartTopology(2, (True, False), (2 * math.pi, math.inf))
    np.testing.assert_allclose(wrap_point([7.0, 0.3], cyl), [7.0 - 2 * math.pi, 0.3], atol=1e-15)
    assert wrap_point([0.5], ChartTopology(1))[0] == 0.5
    assert wrap_point([-0.1], ChartTopology(1, (True,), (1.0,)))[0] == pytest.approx(0.9)


def test_wrap_with_offset_and_tiny_negative():
    topo = ChartTopology(1, (True,), (2.0,), (-1.0,))
    assert wrap_point([1.5], topo)[0] == pytest.approx(-0.5)
    assert 0.0 <= wrap_point([-1e-18], ChartTopology.torus(1, 1.0))[0] < 1.0


def test_wrap_dimension_mismatch():
    with pytest.raises(ValueError):
        wrap_point([1.0, 2.0], ChartTopology(3))


def test_topology_validation():
    with pytest.raises(ValueError):
        ChartTopology(0)
    with pytest.raises(ValueError):
        ChartTopology(1, (True,), (math.inf,))


@given(arrays(float, 3, elements=finite))
def test_wrap_idempotent(x):
    topo = ChartTopology(3, (True, False, True), (1.0, math.inf, 2 * math.pi))
    once = wrap_point(x, topo)
    np.testing.assert_array_equal(wrap_point(once, topo), once)


def test_minimal_image_displacement():
    topo = ChartTopology.torus(1, 1.0)
    assert displacement([0.95], [0.05], topo)[0] == pytest.approx(-0.1)
    assert distance([0.95], [0.05], topo) == pytest.approx(0.1)


def test_projection_examples():
    np.testing.assert_allclose(orthogonal_projection([1.0, 0.0]), [[0, 0], [0, 1]])
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    np.testing.assert_allclose(orthogonal_projection(v), [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)


def test_projection_degenerate():
    with pytest.raises(DegenerateDirectionError):
        orthogonal_projection([0.0, 1e-301])


@given(nonzero_vec)
def test_projection_properties(v):
    O = orthogonal_projection(v)
    np.testing.assert_allclose(O @ O, O, atol=1e-12)
    np.testing.assert_allclose(O @ (v / np.linalg.norm(v)), 0, atol=1e-12)
    np.testing.assert_allclose(O, O.T, atol=0)
    assert np.linalg.matrix_rank(O, tol=1e-8) == v.size - 1


def test_normal_frame_examples():
    f = normal_frame([0.0, 0.0, 1.0])
    np.testing.assert_allclose(f.basis @ f.basis.T, np.diag([1.0, 1.0, 0.0]), atol=1e-15)
    g = normal_frame([1.0, 0.0])
    np.testing.assert_allclose(np.abs(g.basis[:, 0]), [0.0, 1.0], atol=1e-15)


@given(nonzero_vec)
def test_normal_frame_invariants(v):
    f = normal_frame(v)
    B = f.basis
    assert B.shape == (v.size, v.size - 1)
    np.testing.assert_allclose(B.T @ B, np.eye(v.size - 1), atol=1e-12)
    np.testing.assert_allclose(B.T @ f.base_direction, 0, atol=1e-12)
    np.testing.assert_allclose(B @ B.T, orthogonal_projection(v), atol=1e-10)
    g = normal_frame(v.copy())
    np.testing.assert_array_equal(g.basis, B)


def test_transport_identity():
    f = normal_frame([0.3, -1.2, 0.7])
    g = transport_frame(f, f.base_direction)
    np.testing.assert_allclose(g.basis, f.basis, atol=1e-12)
    assert not g.reset


def test_transport_small_rotation_2d():
    f = normal_frame([1.0, 0.0])
    a = 1e-3
    g = transport_frame(f, [math.cos(a), math.sin(a)])
    assert frame_angles(f, g)[0] <= 1e-3 + 1e-12
    assert not g.reset


def test_transport_antipodal_resets():
    f = normal_frame([0.0, 0.0, 1.0])
    g = transport_frame(f, [0.0, 0.0, -1.0])
    assert g.reset
    np.testing.assert_allclose(g.basis.T @ g.basis, np.eye(2), atol=1e-12)


def test_transport_along_smooth_field_has_no_flips():
    h = 1e-2
    ts = np.arange(0, 2 * math.pi, h)
    prev = normal_frame([1.0, 0.0, 0.2])
    worst = 0.0
    for t in ts[1:]:
        new = transport_frame(prev, [math.cos(t), math.sin(t), 0.2 + 0.1 * math.sin(3 * t)])
        assert not new.reset
        worst = max(worst, float(frame_angles(prev, new).max()))
        prev = new
    assert worst <= 2 * h


@settings(max_examples=50)
@given(nonzero_vec, nonzero_vec)
def test_transport_output_is_orthonormal(a, b):
    if a.size != b.size:
        return
    g = transport_frame(normal_frame(a), b)
    n = a.size - 1
    np.testing.assert_allclose(g.basis.T @ g.basis, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(g.basis.T @ g.base_direction, 0, atol=1e-12)
