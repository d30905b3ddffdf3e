import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as hs
from hypothesis.extra import numpy as hnp

from mftg import matrix_core as mc

from oracles import frobenius_by_hand_2x2

finite = hs.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(max_dim):
    return hs.integers(1, max_dim).flatmap(lambda d: hnp.arrays(float, (d, d), elements=finite))


def spd(max_dim):
    def build(args):
        a, shift = args
        return a @ a.T + shift * np.eye(a.shape[0])
    return hs.tuples(square(max_dim), hs.floats(0.1, 5.0)).map(build)


class TestFrobenius:
    def test_identity(self):
        assert mc.frobenius_inner(np.eye(2), np.eye(2)) == 2.0

    def test_zero(self):
        assert mc.frobenius_inner(np.arange(4.0).reshape(2, 2), np.zeros((2, 2))) == 0.0

    def test_hand_expansion(self):
        a, b = [[1, 2], [3, 4]], [[0, 1], [1, 0]]
        assert frobenius_by_hand_2x2(a, b) == 5
        assert mc.frobenius_inner(a, b) == 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(mc.DimensionError):
            mc.frobenius_inner(np.eye(2), np.eye(3))

    @given(square(8))
    def test_self_inner_nonnegative(self, a):
        v = mc.frobenius_inner(a, a)
        assert v >= 0
        assert (v == 0) == (not np.any(a))

    @given(hs.integers(1, 5).flatmap(lambda d: hs.tuples(
        hnp.arrays(float, (d, d), elements=finite), hnp.arrays(float, (d, d), elements=finite))))
    def test_symmetric(self, ab):
        a, b = ab
        assert mc.frobenius_inner(a, b) == pytest.approx(mc.frobenius_inner(b, a))
        assert mc.frobenius_inner(a, b) == pytest.approx(np.trace(a.T @ b), abs=1e-9)


class TestPositiveDefinite:
    def test_identity(self):
        assert mc.is_positive_definite(np.eye(2), tol=1e-12)

    def test_indefinite(self):
        # eigenvalues 3 and -1
        assert not mc.is_positive_definite([[1, 2], [2, 1]])

    def test_zero(self):
        assert not mc.is_positive_definite(np.zeros((3, 3)))

    def test_uses_symmetric_part(self):
        assert mc.is_positive_definite([[1.0, 5.0], [-5.0, 1.0]])

    def test_non_square_is_false(self):
        assert not mc.is_positive_definite(np.ones((2, 3)))

    @given(square(6))
    def test_agrees_with_eigenvalues(self, a):
        s = 0.5 * (a + a.T)
        eig = np.linalg.eigvalsh(s)
        scale = max(1.0, np.max(np.abs(eig)))
        assume(np.min(np.abs(eig)) > 1e-6 * scale)
        assert mc.is_positive_definite(s) == bool(eig.min() > 0)

    def test_semidefinite(self):
        assert mc.is_positive_semidefinite(np.diag([1.0, 0.0]))
        assert not mc.is_positive_semidefinite(np.diag([1.0, -1e-3]))


class TestSqrt:
    def test_identity(self):
        np.testing.assert_allclose(mc.sqrt_spd(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        np.testing.assert_allclose(mc.sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_eigendecomposition_oracle(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        # eigenpairs 3 on (1,1)/sqrt2 and 1 on (1,-1)/sqrt2
        v = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        expected = v @ np.diag([np.sqrt(3.0), 1.0]) @ v.T
        m = mc.sqrt_spd(a)
        np.testing.assert_allclose(m, expected, atol=1e-14)
        assert np.linalg.norm(m @ m - a) <= 1e-10 * np.linalg.norm(a)

    def test_rejects_indefinite(self):
        with pytest.raises(mc.NotPositiveDefiniteError):
            mc.sqrt_spd([[1.0, 2.0], [2.0, 1.0]])

    @given(spd(6))
    def test_square_reproduces(self, a):
        m = mc.sqrt_spd(a)
        np.testing.assert_allclose(m, m.T)
        assert np.linalg.norm(m @ m - a) <= 1e-9 * np.linalg.norm(a)


class TestInverse:
    def test_identity(self):
        np.testing.assert_array_equal(mc.inverse(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(mc.inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))

    def test_residual_random(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        assert np.abs(a @ mc.inverse(a) - np.eye(3)).max() < 1e-10 * 3

    def test_singular_carries_condition(self):
        with pytest.raises(mc.SingularMatrixError) as exc:
            mc.inverse([[1.0, 2.0], [2.0, 4.0 + 1e-15]])
        assert exc.value.condition > 1e12

    def test_inputs_not_mutated(self):
        a = np.array([[2.0, 0.0], [0.0, 3.0]])
        before = a.copy()
        mc.inverse(a)
        mc.sqrt_spd(a)
        np.testing.assert_array_equal(a, before)

    def test_nonfinite_rejected(self):
        with pytest.raises(mc.MatrixError):
            mc.inverse([[np.nan, 0.0], [0.0, 1.0]])
