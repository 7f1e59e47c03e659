import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linattn import numkit
from linattn.errors import NumericalError, ShapeError
from linattn.numkit import FlopCounter, fro_norm, gaussian_matrix, matmul, softmax_rows, svd

from oracles import naive_matmul, naive_softmax

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_matmul_identity(rand):
    a = rand.standard_normal((3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), a), a)


def test_matmul_small_example():
    a = [[1.0, 2.0], [3.0, 4.0]]
    b = [[5.0, 6.0], [7.0, 8.0]]
    expected = naive_matmul(a, b)
    assert expected == [[19.0, 22.0], [43.0, 50.0]]
    np.testing.assert_array_equal(matmul(np.array(a), np.array(b)), expected)


def test_matmul_zero(rand):
    a = rand.standard_normal((4, 3))
    assert not matmul(a, np.zeros((3, 5))).any()


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_matmul_matches_naive_oracle(rand):
    a = rand.standard_normal((5, 4))
    b = rand.standard_normal((4, 6))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    g = np.random.default_rng(seed)
    a, b, c = (g.standard_normal(s) for s in ((4, 5), (5, 3), (3, 6)))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert fro_norm(left - right) <= 1e-9 * fro_norm(left)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_rows(np.zeros((1, 4))), [[0.25] * 4], rtol=0, atol=1e-15)


def test_softmax_ln3():
    np.testing.assert_allclose(softmax_rows([[0.0, math.log(3.0)]]), [[0.25, 0.75]], atol=1e-15)


def test_softmax_large_logits():
    # oracle: shift invariance, softmax([1000, 1001]) == softmax([0, 1])
    expected = naive_softmax([0.0, 1.0])
    out = softmax_rows([[1000.0, 1001.0]])
    np.testing.assert_allclose(out[0], expected, rtol=1e-14)
    np.testing.assert_allclose(out[0], [1 / (1 + math.e), math.e / (1 + math.e)], rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), arrays(np.float64, (3, 1), elements=finite))
def test_softmax_shift_invariance(x, c):
    a = softmax_rows(x)
    b = softmax_rows(x + c)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-300)
    assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-12)
    assert np.all((a >= 0) & (a <= 1))


def test_softmax_shift_exact_for_representable_shift(rand):
    x = rand.integers(-50, 50, size=(4, 7)).astype(float)
    c = rand.integers(-1000, 1000, size=(4, 1)).astype(float)
    np.testing.assert_array_equal(softmax_rows(x), softmax_rows(x + c))


def test_svd_diagonal():
    np.testing.assert_allclose(svd(np.diag([3.0, 2.0, 1.0])).s, [3, 2, 1], atol=1e-15)
    np.testing.assert_allclose(svd(np.diag([1.0, 3.0, 2.0])).s, [3, 2, 1], atol=1e-15)


def test_svd_zero_matrix():
    res = svd(np.zeros((4, 4)))
    np.testing.assert_array_equal(res.s, np.zeros(4))
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(res.vt @ res.vt.T, np.eye(4), atol=1e-12)


def _check_svd(a, res):
    r = min(a.shape)
    assert res.u.shape == (a.shape[0], r)
    assert res.vt.shape == (r, a.shape[1])
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
    assert fro_norm(res.reconstruct() - a) <= 1e-10 * max(fro_norm(a), 1e-300)
    assert np.abs(res.u.T @ res.u - np.eye(r)).max() <= 1e-10
    assert np.abs(res.vt @ res.vt.T - np.eye(r)).max() <= 1e-10


@pytest.mark.parametrize("shape", [(8, 8), (12, 5), (5, 12), (1, 7), (7, 1), (33, 33)])
def test_svd_random_reconstruction(shape):
    a = gaussian_matrix(*shape, 1.0, seed=3)
    _check_svd(a, svd(a))


def test_svd_rank_deficient():
    g = np.random.default_rng(0)
    a = g.standard_normal((20, 3)) @ g.standard_normal((3, 20))
    res = svd(a)
    _check_svd(a, res)
    assert res.s[3] < 1e-12 * res.s[0]


def test_svd_uniform_attention():
    res = svd(np.full((16, 16), 1 / 16))
    assert res.s[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all(res.s[1:] < 1e-14)
    _check_svd(np.full((16, 16), 1 / 16), res)


def test_svd_matches_lapack_values():
    a = gaussian_matrix(30, 20, 1.0, seed=9)
    np.testing.assert_allclose(svd(a).s, np.linalg.svd(a, compute_uv=False), rtol=1e-12)


def test_svd_deterministic():
    a = gaussian_matrix(10, 10, 1.0, seed=4)
    r1, r2 = svd(a), svd(a)
    np.testing.assert_array_equal(r1.u, r2.u)
    np.testing.assert_array_equal(r1.s, r2.s)


def test_svd_rejects_nonfinite():
    with pytest.raises(NumericalError):
        svd(np.array([[1.0, np.nan]]))


def test_svd_nonconvergence_reports_residual(monkeypatch):
    monkeypatch.setattr(numkit, "JACOBI_MAX_SWEEPS", 1)
    with pytest.raises(NumericalError, match="residual"):
        svd(gaussian_matrix(10, 10, 1.0, seed=1))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_svd_energy_identity(rows, cols, seed):
    a = gaussian_matrix(rows, cols, 1.0, seed)
    s = svd(a).s
    f2 = fro_norm(a) ** 2
    assert abs(f2 - np.sum(s**2)) <= 1e-9 * f2


def test_fro_norms():
    assert fro_norm(np.eye(3)) == pytest.approx(math.sqrt(3))
    assert fro_norm([[3.0, 4.0]]) == 5.0
    assert numkit.vec2_norm(np.array([[3.0], [4.0]])) == 5.0
    assert fro_norm(np.zeros((2, 2))) == 0.0
    with pytest.raises(ShapeError):
        numkit.vec2_norm(np.eye(2))


def test_fro_norm_svd_invariance():
    a = gaussian_matrix(9, 6, 2.0, seed=5)
    res = svd(a)
    assert fro_norm(res.reconstruct()) == pytest.approx(math.sqrt(np.sum(res.s**2)), rel=1e-12)


def test_gaussian_determinism_and_streams():
    a = gaussian_matrix(4, 4, 1.0, seed=7)
    b = gaussian_matrix(4, 4, 1.0, seed=7)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gaussian_matrix(4, 4, 1.0, seed=7, stream=1))
    # (seed, stream) pairs do not collide the way seed ^ stream would
    assert not np.array_equal(
        gaussian_matrix(4, 4, 1.0, seed=1, stream=0), gaussian_matrix(4, 4, 1.0, seed=0, stream=1)
    )


def test_gaussian_variance():
    a = gaussian_matrix(1000, 1000, 1 / 64, seed=1)
    assert abs(a.var() - 1 / 64) <= 0.05 / 64


def test_gaussian_as_jl_projection():
    r = gaussian_matrix(16, 256, 1 / 16, seed=11)
    assert r.shape == (16, 256)
    assert abs(r.var() * 16 - 1) < 0.1


def test_gaussian_errors():
    with pytest.raises(ShapeError):
        gaussian_matrix(0, 3, 1.0, seed=0)
    with pytest.raises(ValueError):
        gaussian_matrix(2, 3, 0.0, seed=0)


def test_flop_counter_regions_and_model():
    a, b = np.ones((3, 4)), np.ones((4, 5))
    with FlopCounter() as fc:
        matmul(a, b)
        with numkit.flop_region("soft"):
            softmax_rows(a)
            numkit.scale(a, 2.0)
    assert fc["main"] == 2 * 3 * 4 * 5
    assert fc["soft"] == 4 * 12 + 12
    assert fc.total == 120 + 60


def test_flop_counts_pure_function_of_shape(rand):
    def run(x):
        with FlopCounter() as fc:
            softmax_rows(matmul(x, x.T))
        return fc.total

    assert run(rand.standard_normal((6, 3))) == run(np.zeros((6, 3)))


def test_no_counting_outside_context():
    matmul(np.eye(2), np.eye(2))
    with FlopCounter() as fc:
        pass
    assert fc.total == 0
