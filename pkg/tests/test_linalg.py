import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyptimes.linalg import conorm, log_norms, singular_values, spectral_norm

entries = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200)
@given(st.integers(1, 6).flatmap(lambda m: st.integers(1, 6).flatmap(
    lambda n: arrays(float, (m, n), elements=entries))))
def test_matches_lapack(A):
    ref = np.linalg.svd(A, compute_uv=False)
    np.testing.assert_allclose(singular_values(A), ref, rtol=1e-10, atol=1e-10 * max(1.0, ref[0]))


def test_batched_and_helpers():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 5, 3, 3))
    s = singular_values(A)
    assert s.shape == (4, 5, 3)
    np.testing.assert_allclose(s, np.linalg.svd(A, compute_uv=False), rtol=1e-12)
    np.testing.assert_allclose(spectral_norm(A), s[..., 0])
    np.testing.assert_allclose(conorm(A), s[..., -1])
    hi, lo = log_norms(A)
    np.testing.assert_allclose(hi, np.log(s[..., 0]))
    np.testing.assert_allclose(lo, np.log(s[..., -1]))


def test_known_values():
    np.testing.assert_allclose(singular_values(np.diag([3.0, -5.0, 1.0])), [5, 3, 1])
    np.testing.assert_allclose(singular_values([[0.0, 0.0], [0.0, 0.0]]), [0, 0])
    assert singular_values([[3.0], [4.0]])[0] == 5.0
