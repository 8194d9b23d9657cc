# services/linalg.py
"""
Dense linear algebra used by every other service: checked matrix products, a
one-sided Jacobi SVD and null-space extraction.

The decompositions share one Jacobi core. ``svd`` is its thin public form;
``right_singular_basis`` keeps the full square ``v`` that the readout and
null-space bases are cut from.

Matrices are 2-D float64 numpy arrays. All functions are pure; inputs are never
modified, so they are safe to call from several threads at once.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from models.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]

MAX_SWEEPS = 100
DEFAULT_REL_TOL = 1e-10

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(s) @ vt`` with ``k = min(rows, cols)``."""

    u: Matrix
    s: npt.NDArray[np.float64]
    vt: Matrix

    @property
    def k(self) -> int:
        return int(self.s.shape[0])

    def reconstruct(self) -> Matrix:
        return (self.u * self.s) @ self.vt


def as_matrix(values: Any, *, name: str = "matrix") -> Matrix:
    """Copy ``values`` into a finite 2-D float64 array."""
    array = np.array(values, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", array.shape)
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"{name} contains NaN or Inf entries")
    return array


def gemm(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("gemm operands do not conform", a.shape, b.shape)
    return a @ b


def _jacobi_columns(a: Matrix) -> tuple[Matrix, Matrix]:
    """
    Orthogonalize the columns of ``a`` with cyclic one-sided Jacobi rotations.

    Returns ``(b, v)`` with ``b = a @ v``, ``v`` orthogonal (cols x cols) and the
    columns of ``b`` mutually orthogonal. Pairs are visited in fixed (p, q) order,
    so the result is bit-for-bit reproducible.
    """
    # Rows of `work` are the columns of `a`; rows of `vt` are the columns of V.
    work = np.array(a.T, dtype=np.float64, copy=True)
    n, m = work.shape
    vt = np.eye(n)
    tol = _EPS * max(m, 1)
    floor = (_EPS * float(np.linalg.norm(work))) ** 2

    residual = 0.0
    for sweep in range(MAX_SWEEPS):
        rotated = False
        residual = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                xp = work[p]
                xq = work[q]
                gamma = float(xp @ xq)
                if gamma == 0.0 or abs(gamma) <= floor:
                    continue
                alpha = float(xp @ xp)
                beta = float(xq @ xq)
                scale = math.sqrt(alpha * beta)
                if abs(gamma) <= tol * scale:
                    continue
                residual = max(residual, abs(gamma) / scale)

                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t

                row_p = work[p].copy()
                work[p] = c * row_p - s * work[q]
                work[q] = s * row_p + c * work[q]
                row_p = vt[p].copy()
                vt[p] = c * row_p - s * vt[q]
                vt[q] = s * row_p + c * vt[q]
                rotated = True
        if not rotated:
            logger.debug(f"Jacobi converged after {sweep + 1} sweeps on {a.shape}")
            return work.T, vt.T

    raise NumericalError(
        f"one-sided Jacobi did not converge within {MAX_SWEEPS} sweeps on a {a.shape} matrix",
        residual=residual,
    )


def _orthogonalize(vector: npt.NDArray[np.float64], basis: Matrix) -> npt.NDArray[np.float64]:
    # Two Gram-Schmidt passes keep the result orthogonal to working precision.
    for _ in range(2):
        if basis.shape[1]:
            vector = vector - basis @ (basis.T @ vector)
    return vector


def _complete_column(basis: Matrix) -> npt.NDArray[np.float64]:
    """First standard basis vector that survives projection off ``basis``, normalized."""
    rows = basis.shape[0]
    for i in range(rows):
        e = np.zeros(rows)
        e[i] = 1.0
        candidate = _orthogonalize(e, basis)
        norm = float(np.linalg.norm(candidate))
        if norm > 0.5:
            return candidate / norm
    raise NumericalError(f"cannot extend a {basis.shape} orthonormal basis")


def _left_vectors(b: Matrix, s: npt.NDArray[np.float64]) -> Matrix:
    rows, cols = b.shape
    u = np.zeros((rows, cols))
    cutoff = (s[0] if cols else 0.0) * _EPS * max(rows, cols)
    for j in range(cols):
        if s[j] > cutoff:
            column = _orthogonalize(b[:, j] / s[j], u[:, :j])
            u[:, j] = column / np.linalg.norm(column)
        else:
            u[:, j] = _complete_column(u[:, :j])
    return u


def _sign_fix(columns: Matrix, *partners: Matrix) -> None:
    """Make the largest-magnitude entry of each column positive (in place).

    ``partners`` are matrices whose rows pair with those columns and flip with them.
    """
    for j in range(columns.shape[1]):
        idx = int(np.argmax(np.abs(columns[:, j])))
        if columns[idx, j] < 0:
            columns[:, j] *= -1.0
            for partner in partners:
                partner[j, :] *= -1.0


def _sorted_jacobi(a: Matrix) -> tuple[npt.NDArray[np.float64], Matrix, Matrix]:
    """Jacobi sweeps with columns ordered by non-increasing norm: ``(s, a @ v, v)``."""
    b, v = _jacobi_columns(a)
    s = np.linalg.norm(b, axis=0)
    order = np.argsort(-s, kind="stable")
    return s[order], b[:, order], v[:, order]


def svd(m: Matrix) -> SvdResult:
    """
    Thin singular value decomposition by one-sided Jacobi.

    Singular values come out non-increasing; each left singular vector has its
    largest-magnitude entry positive.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ShapeError("svd needs a non-empty matrix", a.shape)

    rows, cols = a.shape
    transpose = rows < cols
    work = a.T if transpose else a

    s, b, v = _sorted_jacobi(work)
    u = _left_vectors(b, s)

    if transpose:
        u, vt = v, u.T
    else:
        vt = v.T
    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)
    _sign_fix(u, vt)
    return SvdResult(u=u, s=s, vt=vt)


def right_singular_basis(m: Matrix) -> tuple[npt.NDArray[np.float64], Matrix]:
    """
    Full right singular basis: ``(s, v)`` with ``v`` cols x cols orthogonal and
    ``s`` the cols column norms of ``m @ v`` sorted non-increasing. Entries of ``s``
    beyond ``min(rows, cols)`` are zero up to rounding.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ShapeError("cannot decompose an empty matrix", a.shape)
    s, _, v = _sorted_jacobi(a)
    return s, np.ascontiguousarray(v)


def numerical_rank(s: npt.NDArray[np.float64], rel_tol: float = DEFAULT_REL_TOL) -> int:
    if rel_tol <= 0:
        raise ValueError(f"rel_tol must be positive, got {rel_tol}")
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * smax))


def null_space_basis(m: Matrix, rel_tol: float = DEFAULT_REL_TOL) -> Matrix:
    """
    Orthonormal basis (as columns) of ``{v : m @ v = 0}``.

    A full-rank ``m`` gives a cols x 0 matrix; an all-zero ``m`` gives the identity.
    """
    s, v = right_singular_basis(m)
    rank = numerical_rank(s, rel_tol)
    basis = np.ascontiguousarray(v[:, rank:])
    _sign_fix(basis)
    return basis
