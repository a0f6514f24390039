import numpy as np
import pytest
import scipy.linalg

from smefilter.linalg import (
    SingularMatrixError,
    allclose,
    dagger,
    expm,
    hermitian_residual,
    kron,
    lu_factor,
    lu_solve,
    matmul,
    max_abs,
    min_eigenvalue_hermitian,
    require_hermitian,
    solve_linear,
    trace,
    unvec,
    vec,
)
from smefilter.model import SIGMA, SIGMA_X

RHO_PLUS = np.full((2, 2), 0.5, dtype=complex)  # equal superposition, Bloch (1,0,0)


def random_complex(rng, n):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(1)
        x = random_complex(rng, 3)
        assert np.array_equal(matmul(np.eye(3), x), x)

    def test_lowering_is_nilpotent(self):
        assert max_abs(matmul(SIGMA, SIGMA)) == 0.0

    def test_sigma_x_squares_to_identity(self):
        assert allclose(matmul(SIGMA_X, SIGMA_X), np.eye(2), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(np.eye(2), np.eye(3))


class TestDagger:
    def test_identity(self):
        assert np.array_equal(dagger(np.eye(2)), np.eye(2))

    def test_lowering(self):
        assert np.array_equal(dagger(SIGMA), np.array([[0, 1], [0, 0]], dtype=complex))

    def test_involution(self):
        rng = np.random.default_rng(2)
        x = random_complex(rng, 4)
        assert np.array_equal(dagger(dagger(x)), x)


class TestTrace:
    def test_identity(self):
        assert trace(np.eye(2)) == 2.0

    def test_lowering(self):
        assert trace(SIGMA) == 0.0

    def test_plus_state(self):
        assert trace(RHO_PLUS) == 1.0

    def test_cyclicity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b = random_complex(rng, 3), random_complex(rng, 3)
            assert abs(trace(a @ b) - trace(b @ a)) <= 1e-12 * max(1.0, abs(trace(a @ b)))


class TestExpm:
    def test_zero(self):
        assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent_truncates_exactly(self):
        # series stops at the vanishing square, so the result is I + c*sigma
        for c in (0.3, 2.0, -17.5, 1e3):
            assert allclose(expm(c * SIGMA), np.eye(2) + c * SIGMA, 1e-15 * max(1.0, abs(c)))

    def test_diagonal(self):
        out = expm(np.diag([1.0 + 0j, -2.0]))
        assert allclose(out, np.diag([np.e, np.exp(-2.0)]), 1e-12)

    def test_inverse_identity(self):
        # spectral norm <= 5; the product's attainable accuracy is set by
        # cond(e^A), not by the series truncation
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = random_complex(rng, 3)
            a *= 5.0 / np.linalg.norm(a, 2)
            assert allclose(expm(a) @ expm(-a), np.eye(3), 1e-11)

    def test_against_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = random_complex(rng, 4)
            assert allclose(expm(a), scipy.linalg.expm(a), 1e-10 * np.exp(max_abs(a)))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            expm(np.array([[np.inf, 0], [0, 0]]))

    def test_bad_tol_rejected(self):
        with pytest.raises(ValueError, match="tol"):
            expm(np.eye(2), tol=0.0)


class TestKronVec:
    def test_kron_identities(self):
        assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))
        assert np.array_equal(kron(np.diag([1.0, 2.0]), np.eye(2)), np.diag([1.0, 1.0, 2.0, 2.0]))

    def test_vec_column_stacking(self):
        assert np.array_equal(vec(np.eye(2)), np.array([1, 0, 0, 1], dtype=complex))
        m = np.array([[1 + 2j, 3], [4, 5 - 1j]])
        assert np.array_equal(vec(m), np.array([1 + 2j, 4, 3, 5 - 1j]))

    def test_roundtrip_exact(self):
        rng = np.random.default_rng(6)
        for n in (2, 3, 5):
            x = random_complex(rng, n)
            assert np.array_equal(unvec(vec(x), n), x)

    def test_kron_vec_identity(self):
        # vec(A X B) == kron(B.T, A) vec(X), with B transposed but not conjugated
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 5))
            a, x, b = (random_complex(rng, n) for _ in range(3))
            lhs = vec(a @ x @ b)
            rhs = kron(b.T, a) @ vec(x)
            assert max_abs(lhs - rhs) <= 1e-12 * max(1.0, max_abs(lhs))

    def test_unvec_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            unvec(np.ones(5), 2)


class TestSolve:
    def test_identity(self):
        v = np.array([1.0, 2.0, 3.0 + 1j])
        assert np.array_equal(solve_linear(np.eye(3), v), v)

    def test_diagonal(self):
        assert np.array_equal(solve_linear(np.diag([2.0, 4.0]), np.array([2.0, 8.0])), np.array([1.0, 2.0]))

    def test_reconstructs_known_solution(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            m = random_complex(rng, n) + 3.0 * np.eye(n)
            x = rng.normal(size=n) + 1j * rng.normal(size=n)
            rhs = m @ x
            got = solve_linear(m, rhs)
            assert max_abs(m @ got - rhs) <= 1e-10 * max_abs(rhs)
            assert max_abs(got - x) <= 1e-8 * max(1.0, max_abs(x))

    def test_matches_numpy(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            m = random_complex(rng, 5) + 2.0 * np.eye(5)
            rhs = rng.normal(size=5) + 1j * rng.normal(size=5)
            assert max_abs(solve_linear(m, rhs) - np.linalg.solve(m, rhs)) <= 1e-11

    def test_singular_error_carries_pivot(self):
        with pytest.raises(SingularMatrixError) as err:
            solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))
        assert err.value.pivot <= 1e-12

    def test_zero_matrix_singular(self):
        with pytest.raises(SingularMatrixError):
            solve_linear(np.zeros((2, 2)), np.ones(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            solve_linear(np.eye(3), np.ones(2))

    def test_matrix_rhs(self):
        rng = np.random.default_rng(10)
        m = random_complex(rng, 4) + 2.0 * np.eye(4)
        rhs = random_complex(rng, 4)
        lu, perm = lu_factor(m)
        assert max_abs(m @ lu_solve(lu, perm, rhs) - rhs) <= 1e-11


class TestMinEigenvalue:
    def test_identity(self):
        assert min_eigenvalue_hermitian(np.eye(3)) == pytest.approx(1.0)

    def test_indefinite_diagonal(self):
        assert min_eigenvalue_hermitian(np.diag([3.0, -1.0])) == pytest.approx(-1.0)

    def test_plus_state_projector(self):
        # rank-1 projector has eigenvalues {0, 1}
        assert min_eigenvalue_hermitian(RHO_PLUS) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            min_eigenvalue_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestHermitianHelpers:
    def test_residual_zero_for_hermitian(self):
        rng = np.random.default_rng(11)
        a = random_complex(rng, 3)
        h = a + dagger(a)
        assert hermitian_residual(h) == 0.0

    def test_require_hermitian_tolerance(self):
        almost = np.eye(2) + 1e-12 * np.array([[0, 1j], [0, 0]])
        require_hermitian(almost)
        with pytest.raises(ValueError):
            require_hermitian(np.eye(2) + 1e-3 * np.array([[0, 1j], [0, 0]]))
