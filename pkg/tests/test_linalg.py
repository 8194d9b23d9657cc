# tests/test_linalg.py
import math

import numpy as np
import pytest

from models.errors import NumericalError, ShapeError
from services.linalg import as_matrix, gemm, null_space_basis, numerical_rank, right_singular_basis, svd


def _check_svd(m: np.ndarray) -> None:
    result = svd(m)
    k = min(m.shape)
    assert result.u.shape == (m.shape[0], k)
    assert result.vt.shape == (k, m.shape[1])
    assert np.all(result.s >= 0)
    assert np.all(np.diff(result.s) <= 0)
    assert np.max(np.abs(result.u.T @ result.u - np.eye(k))) <= 1e-10
    assert np.max(np.abs(result.vt @ result.vt.T - np.eye(k))) <= 1e-10
    scale = max(1.0, float(np.max(np.abs(m))))
    assert np.max(np.abs(result.reconstruct() - m)) <= 1e-10 * scale


def test_gemm_examples():
    m = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(gemm(np.eye(3), m), m)
    np.testing.assert_array_equal(gemm(np.zeros((2, 2)), m[:2]), np.zeros((2, 4)))
    np.testing.assert_array_equal(gemm(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]])), [[17.0], [39.0]])


def test_gemm_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as info:
        gemm(np.ones((2, 3)), np.ones((2, 3)))
    assert "(2, 3)" in str(info.value)


def test_gemm_associativity(rng):
    for _ in range(20):
        a, b, c = rng.standard_normal((5, 7)), rng.standard_normal((7, 4)), rng.standard_normal((4, 6))
        left = gemm(gemm(a, b), c)
        right = gemm(a, gemm(b, c))
        assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_as_matrix_rejects_non_finite_and_non_2d():
    with pytest.raises(NumericalError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])


def test_svd_diagonal():
    result = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(result.s, [3.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(result.u), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(np.abs(result.vt), np.eye(2), atol=1e-14)


def test_svd_zero_matrix():
    result = svd(np.zeros((2, 3)))
    np.testing.assert_array_equal(result.s, [0.0, 0.0])
    _check_svd(np.zeros((2, 3)))


def test_svd_hand_computed_values():
    result = svd(np.array([[3.0, 0.0], [4.0, 5.0]]))
    np.testing.assert_allclose(result.s, [math.sqrt(45.0), math.sqrt(5.0)], rtol=1e-13)


def test_svd_sign_convention():
    result = svd(np.array([[-2.0, 0.0], [0.0, -1.0]]))
    for j in range(result.k):
        column = result.u[:, j]
        assert column[np.argmax(np.abs(column))] > 0


def test_svd_random_matrices(rng):
    for _ in range(200):
        rows, cols = rng.integers(1, 65, size=2)
        _check_svd(rng.standard_normal((rows, cols)))


def test_svd_rank_deficient(rng):
    m = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 10))
    _check_svd(m)
    assert numerical_rank(svd(m).s) == 3


def test_svd_is_deterministic(rng):
    m = rng.standard_normal((17, 9))
    first, second = svd(m), svd(m)
    assert np.array_equal(first.u, second.u)
    assert np.array_equal(first.s, second.s)
    assert np.array_equal(first.vt, second.vt)


def test_svd_empty_matrix_rejected():
    with pytest.raises(ShapeError):
        svd(np.zeros((0, 3)))


def test_right_singular_basis_is_full_and_orthogonal(rng):
    m = rng.standard_normal((3, 7))
    s, v = right_singular_basis(m)
    assert v.shape == (7, 7)
    np.testing.assert_allclose(v.T @ v, np.eye(7), atol=1e-12)
    np.testing.assert_allclose(s[:3], svd(m).s, rtol=1e-12)
    assert np.all(s[3:] <= 1e-12)


def test_right_basis_spans_the_svd_row_space(rng):
    m = rng.standard_normal((4, 9))
    _, v = right_singular_basis(m)
    vt = svd(m).vt
    np.testing.assert_allclose(v[:, :4] @ v[:, :4].T, vt.T @ vt, atol=1e-10)


def test_null_space_of_single_row():
    basis = null_space_basis(np.array([[1.0, 0.0, 0.0]]))
    assert basis.shape == (3, 2)
    np.testing.assert_allclose(basis[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-12)


def test_null_space_of_full_rank_is_empty():
    assert null_space_basis(np.eye(3)).shape == (3, 0)


def test_null_space_of_rank_one():
    basis = null_space_basis(np.array([[1.0, 1.0], [2.0, 2.0]]))
    assert basis.shape == (2, 1)
    np.testing.assert_allclose(np.abs(basis[:, 0]), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert basis[0, 0] * basis[1, 0] < 0


def test_null_space_of_zero_matrix_is_identity():
    np.testing.assert_array_equal(null_space_basis(np.zeros((2, 4))), np.eye(4))


def test_null_space_properties(rng):
    for _ in range(50):
        rows, cols = rng.integers(1, 20, size=2)
        m = rng.standard_normal((rows, cols))
        basis = null_space_basis(m)
        assert basis.shape == (cols, max(0, cols - rows))
        if basis.shape[1]:
            np.testing.assert_allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-10)
            assert np.max(np.abs(m @ basis)) <= 1e-9 * max(1.0, float(np.max(np.abs(m))))


def test_numerical_rank_tolerance():
    assert numerical_rank(np.array([1.0, 1e-11])) == 1
    assert numerical_rank(np.array([1.0, 1e-9])) == 2
    assert numerical_rank(np.array([0.0, 0.0])) == 0
    with pytest.raises(ValueError):
        numerical_rank(np.array([1.0]), rel_tol=0.0)
