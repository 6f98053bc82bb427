import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taotf.linalg import (
    RankDeficientError,
    SvdConvergenceError,
    frobenius_distance_to_identity,
    jacobi_svd,
    polar,
    spectral_norm_sym,
    svd,
)
from taotf.stiefel import random_point


def check_svd(a, u, s, v):
    r = min(a.shape)
    assert u.shape == (a.shape[0], r) and v.shape == (a.shape[1], r) and s.shape == (r,)
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert np.linalg.norm(u.T @ u - np.eye(r)) <= 1e-10
    assert np.linalg.norm(v.T @ v - np.eye(r)) <= 1e-10
    # oracle: recompose and compare elementwise
    assert np.linalg.norm(a - (u * s) @ v.T) <= 1e-8 * max(1.0, np.linalg.norm(a))


class TestSvd:
    def test_diagonal(self):
        u, s, v = svd(np.diag([3.0, 1.0]))
        np.testing.assert_array_equal(s, [3.0, 1.0])
        np.testing.assert_allclose(u, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(v, np.eye(2), atol=1e-15)

    def test_zero(self):
        u, s, v = svd(np.zeros((2, 2)))
        np.testing.assert_array_equal(s, [0.0, 0.0])
        check_svd(np.zeros((2, 2)), u, s, v)

    def test_random_8x5(self):
        a = np.random.default_rng(5).standard_normal((8, 5))
        check_svd(a, *svd(a))

    def test_wide_matrix(self):
        a = np.random.default_rng(6).standard_normal((3, 7))
        check_svd(a, *svd(a))

    def test_rank_deficient_still_orthonormal(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
        u, s, v = svd(a)
        check_svd(a, u, s, v)
        assert s[2] < 1e-12 * s[0]

    def test_deterministic(self):
        a = np.random.default_rng(9).standard_normal((7, 7))
        r1, r2 = svd(a), svd(a)
        for x, y in zip(r1, r2):
            np.testing.assert_array_equal(x, y)

    def test_sweep_cap(self):
        a = np.random.default_rng(1).standard_normal((10, 10))
        with pytest.raises(SvdConvergenceError):
            jacobi_svd(a, max_sweeps=1)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            svd(np.array([[1.0, np.nan]]))

    def test_matches_lapack_singular_values(self):
        a = np.random.default_rng(3).standard_normal((12, 9))
        np.testing.assert_allclose(svd(a).sigma, np.linalg.svd(a, compute_uv=False), rtol=1e-12)

    def test_large_matrix_dispatch(self):
        a = np.random.default_rng(4).standard_normal((128, 64))
        check_svd(a, *svd(a))

    def test_reconstruction_500_random(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n, p = rng.integers(1, 17, size=2)
            a = rng.standard_normal((n, p)) * rng.choice([1e-3, 1.0, 1e3])
            check_svd(a, *svd(a))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-100, 100, allow_nan=False, allow_infinity=False)))
    def test_property_invariants(self, a):
        check_svd(a, *svd(a))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                  elements=st.integers(-3, 3).map(float)),
           st.sampled_from([1.0, 1e-150, 1e150]))
    def test_property_integer_and_extreme_scale(self, a, scale):
        # small integer entries make exact rank deficiency common
        check_svd(a * scale, *svd(a * scale))


class TestPolar:
    def test_identity(self):
        np.testing.assert_allclose(polar(np.eye(3)), np.eye(3), atol=1e-15)

    def test_scaled_rotation(self):
        np.testing.assert_allclose(polar([[0.0, -2.0], [2.0, 0.0]]), [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)

    def test_positive_diagonal(self):
        np.testing.assert_allclose(polar(np.diag([2.0, 3.0])), np.eye(2), atol=1e-15)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientError):
            polar([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])

    def test_wide_rejected(self):
        with pytest.raises(ValueError):
            polar(np.ones((2, 3)))

    def test_nearest_orthonormal_beats_random_candidates(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            a = rng.standard_normal((3, 2))
            q = polar(a)
            best = np.linalg.norm(a - q)
            for k in range(1000):
                cand = random_point(3, 2, seed=100000 * trial + k).mat
                assert best <= np.linalg.norm(a - cand) + 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            a = rng.standard_normal((6, 4))
            q = polar(a)
            assert np.linalg.norm(polar(q) - q) <= 1e-10

    def test_orthonormal_output(self):
        a = np.random.default_rng(13).standard_normal((9, 5))
        q = polar(a)
        assert np.linalg.norm(q.T @ q - np.eye(5)) <= 1e-10


class TestSpectralNormSym:
    @pytest.mark.parametrize("s, expected", [
        (np.diag([3.0, -1.0]), 3.0),
        (np.eye(4), 1.0),
        (np.array([[2.0, 1.0], [1.0, 2.0]]), 3.0),
        (np.diag([3.0, -3.0]), 3.0),
    ])
    @pytest.mark.parametrize("iters", [0, 50])
    def test_small_cases(self, s, expected, iters):
        value, u = spectral_norm_sym(s, iters, seed=0)
        assert value == pytest.approx(expected, rel=1e-12)
        assert abs(u @ s @ u) == pytest.approx(expected, rel=1e-12)

    def test_zero_matrix(self):
        assert spectral_norm_sym(np.zeros((3, 3)), 10)[0] == 0.0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            spectral_norm_sym(np.array([[1.0, 2.0], [0.0, 1.0]]), 5)

    def test_power_iteration_matches_exact(self):
        # gap measured relative to |lambda_1| after scaling so it is O(1)
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 60:
            n = int(rng.integers(2, 17))
            g = rng.standard_normal((n, n))
            s = (g + g.T) / math.sqrt(8 * n)
            mags = np.sort(np.abs(np.linalg.eigvalsh(s)))[::-1]
            if mags[0] - mags[1] < 1e-3:
                continue
            exact = spectral_norm_sym(s, 0)[0]
            approx = spectral_norm_sym(s, 20000, seed=checked)[0]
            assert abs(approx - exact) <= 1e-6 * exact
            checked += 1


class TestFrobeniusDistance:
    def test_stiefel_point(self):
        assert frobenius_distance_to_identity(random_point(6, 3, 1).mat) <= 1e-10

    def test_scaled_identity(self):
        assert frobenius_distance_to_identity(2 * np.eye(2)) == pytest.approx(3 * math.sqrt(2), rel=1e-15)

    def test_shear(self):
        # W^T W - I = [[0, 1], [1, 1]]
        assert frobenius_distance_to_identity([[1.0, 1.0], [0.0, 1.0]]) == pytest.approx(math.sqrt(3), rel=1e-15)

    def test_wide_is_oriented(self):
        w = random_point(5, 2, 3).mat.T
        assert frobenius_distance_to_identity(w) <= 1e-10
