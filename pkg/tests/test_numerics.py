import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commgp.errors import DimensionMismatch, NotPositiveDefinite
from commgp.numerics import (
    SpdMatrix,
    clamp_spectrum,
    product_spectrum,
    second_moment,
    sorted_eigh,
    spd_inv_sqrt,
    spd_sqrt,
)
from conftest import random_spd


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestSpdMatrix:
    def test_entries_are_read_only_copies(self):
        src = np.eye(2)
        m = SpdMatrix(src)
        src[0, 0] = 5.0
        assert m.entries[0, 0] == 1.0
        with pytest.raises(ValueError):
            m.entries[0, 0] = 3.0

    def test_rejects_asymmetric(self):
        with pytest.raises(NotPositiveDefinite):
            SpdMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            SpdMatrix(np.ones((2, 3)))

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            SpdMatrix(np.diag([1.0, -0.1]))

    def test_tiny_negative_eigenvalue_is_clamped(self):
        m = SpdMatrix(np.diag([1.0, -1e-12]))
        assert m.eigenvalues[-1] == 0.0
        assert not m.is_positive_definite()

    def test_eigenvalues_descending(self, rng):
        m = SpdMatrix(random_spd(rng, 5))
        assert np.all(np.diff(m.eigenvalues) <= 0)

    def test_clamp_threshold(self):
        assert clamp_spectrum(np.array([1.0, -5e-11]))[-1] == 0.0
        with pytest.raises(NotPositiveDefinite):
            clamp_spectrum(np.array([1.0, -5e-10]))

    def test_sorted_eigh_stable_ties(self):
        w, v = sorted_eigh(np.eye(3))
        assert np.array_equal(w, np.ones(3))
        assert np.array_equal(v, np.eye(3))


class TestSqrt:
    def test_identity(self):
        assert np.allclose(spd_sqrt(np.eye(4)).entries, np.eye(4), atol=1e-15)

    def test_diagonal(self):
        assert np.allclose(spd_sqrt(np.diag([4.0, 9.0])).entries, np.diag([2.0, 3.0]), atol=1e-14)

    def test_random_square_reconstructs(self, rng):
        a = random_spd(rng, 6)
        s = spd_sqrt(a).entries
        assert np.array_equal(s, s.T)
        assert rel_fro(s @ s, a) < 1e-8

    def test_inverse_sqrt(self, rng):
        a = random_spd(rng, 4)
        r = spd_inv_sqrt(a).entries
        assert rel_fro(r @ a @ r, np.eye(4)) < 1e-8

    def test_inverse_sqrt_needs_definite(self):
        with pytest.raises(NotPositiveDefinite):
            spd_inv_sqrt(np.diag([1.0, 0.0]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_sqrt_eigenvalues_property(self, d, seed):
        a = random_spd(np.random.default_rng(seed), d)
        got = spd_sqrt(a).eigenvalues
        want = np.sqrt(SpdMatrix(a).eigenvalues)
        assert np.allclose(got, want, rtol=1e-8, atol=1e-8 * want[0])


class TestProductSpectrum:
    def test_identity_pair(self):
        ps = product_spectrum(np.eye(3), np.eye(3))
        assert np.allclose(ps.eigenvalues, 1.0)
        assert np.allclose(ps.basis.T @ ps.basis, np.eye(3))

    def test_diagonal_pair(self):
        ps = product_spectrum(np.diag([4.0, 1.0]), np.diag([1.0, 9.0]))
        assert np.allclose(ps.eigenvalues, [9.0, 4.0])

    def test_matches_nonsymmetric_solver(self, rng):
        for _ in range(10):
            qx, qy = random_spd(rng, 5), random_spd(rng, 5)
            ps = product_spectrum(qx, qy)
            oracle = np.sort(np.linalg.eigvals(qx @ qy).real)[::-1]
            assert np.allclose(ps.eigenvalues, oracle, rtol=1e-8)

    def test_invariants(self, rng):
        qx, qy = random_spd(rng, 6), random_spd(rng, 6)
        ps = product_spectrum(qx, qy)
        assert np.allclose(ps.basis.T @ ps.basis, np.eye(6), atol=1e-8)
        assert rel_fro(ps.y_sqrt.entries @ ps.y_sqrt.entries, qy) < 1e-8
        assert abs(ps.eigenvalues.sum() - np.trace(qx @ qy)) < 1e-8 * np.trace(qx @ qy)

    def test_whiten_round_trip(self, rng):
        qx, qy = random_spd(rng, 4), random_spd(rng, 4)
        ps = product_spectrum(qx, qy)
        x = rng.standard_normal((7, 4))
        assert np.allclose(ps.unwhiten(ps.whiten(x)), x, atol=1e-10)

    def test_psd_qx_allowed(self):
        ps = product_spectrum(np.diag([1.0, 0.0]), np.eye(2))
        assert ps.eigenvalues[-1] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            product_spectrum(np.eye(2), np.eye(3))

    def test_singular_qy(self):
        with pytest.raises(NotPositiveDefinite):
            product_spectrum(np.eye(2), np.diag([1.0, 0.0]))


def test_second_moment():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert np.allclose(second_moment(x).entries, np.diag([0.5, 2.0]))
