# services/rdac_service.py
"""
Readout range / null-space decomposition and everything built on it: the
alpha/beta gradient filter for one-hidden-layer networks, the error projection
for three-hidden-layer networks, displacement diagnostics and case labels.

Activations are row vectors, so projectors act on the right (``h @ P``).
Hidden-weight gradients are h x x, so the filter acts on the left (``A @ dW``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from models.config import CaseThresholds
from models.errors import ClassificationUnavailable, DomainError, ShapeError
from models.records import CaseLabel, DisplacementRecord
from services.linalg import DEFAULT_REL_TOL, Matrix, as_matrix, gemm, null_space_basis, numerical_rank
from services.linalg import right_singular_basis
from services.network_service import ThreeLayerNet

logger = logging.getLogger(__name__)


def _symmetric(p: Matrix) -> Matrix:
    return (p + p.T) / 2.0


@dataclass(frozen=True)
class ReadoutDecomposition:
    """Orthonormal range basis ``c`` and null basis ``n`` of a readout, with their projectors."""

    c: Matrix
    n: Matrix
    p_range: Matrix
    p_null: Matrix
    rank: int

    @property
    def dim(self) -> int:
        return int(self.p_range.shape[0])


def _decompose(matrix: Matrix, rel_tol: float) -> ReadoutDecomposition:
    s, v = right_singular_basis(matrix)
    rank = numerical_rank(s, rel_tol)
    c = np.ascontiguousarray(v[:, :rank])
    n = np.ascontiguousarray(v[:, rank:])
    return ReadoutDecomposition(
        c=c, n=n, p_range=_symmetric(c @ c.T), p_null=_symmetric(n @ n.T), rank=rank
    )


def readout_decomposition(w_r: Matrix, rel_tol: float = DEFAULT_REL_TOL) -> ReadoutDecomposition:
    """Split the pre-readout space of an o x h readout (o <= h) into range and null space."""
    w_r = as_matrix(w_r, name="readout")
    if w_r.shape[0] > w_r.shape[1]:
        raise ShapeError("readout must not have more rows than columns", w_r.shape)
    decomp = _decompose(w_r, rel_tol)
    logger.debug(f"Readout {w_r.shape}: rank {decomp.rank}, null dim {decomp.dim - decomp.rank}")
    return decomp


def stacked_decomposition(
    readouts: Sequence[Matrix], rel_tol: float = DEFAULT_REL_TOL
) -> ReadoutDecomposition:
    """Decomposition of all readouts at once; its null space is the intersection of theirs."""
    if not readouts:
        raise ValueError("at least one readout is required")
    widths = {r.shape[1] for r in readouts}
    if len(widths) != 1:
        raise ShapeError("readouts disagree on the activation width", *(r.shape for r in readouts))
    return _decompose(as_matrix(np.vstack(readouts), name="stacked readouts"), rel_tol)


# =========================
# Gradient filters
# =========================


@dataclass(frozen=True)
class ProjectionSpec:
    """``a = alpha * CC^T + beta * NN^T``."""

    alpha: float
    beta: float
    a: Matrix

    @property
    def is_identity(self) -> bool:
        return self.alpha == 1.0 and self.beta == 1.0


def projection_spec(decomp: ReadoutDecomposition, alpha: float, beta: float) -> ProjectionSpec:
    for name, value in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    if alpha == beta:
        # CC^T + NN^T is the identity; form it exactly.
        a = alpha * np.eye(decomp.dim)
    else:
        a = alpha * decomp.p_range + beta * decomp.p_null
    return ProjectionSpec(alpha=float(alpha), beta=float(beta), a=a)


def project_hidden_gradient(d_w_h: Matrix, spec: ProjectionSpec) -> Matrix:
    return gemm(spec.a, d_w_h)


def three_layer_constraints(net: ThreeLayerNet, old_task: int, new_task: int) -> list[Matrix]:
    """
    The three o_old x o_new matrices whose null spaces the error signal must lie in
    so that no weight update reaches the old readout.
    """
    r_old = net.readout(old_task)
    r_new = net.readout(new_task)
    w2, w3 = net.w_h2, net.w_h3
    m1 = gemm(r_old, r_new.T)
    r3 = gemm(r_old, w3)
    m2 = gemm(gemm(r3, w3.T), r_new.T)
    m3 = gemm(gemm(gemm(gemm(r3, w2), w2.T), w3.T), r_new.T)
    return [m1, m2, m3]


@dataclass(frozen=True)
class ErrorProjection:
    """Symmetric o_new x o_new projector applied to error rows as ``e @ a``."""

    a: Matrix
    constraints: Matrix
    admissible_dim: int

    @property
    def empty(self) -> bool:
        return self.admissible_dim == 0


def error_projector(
    net: ThreeLayerNet,
    old_tasks: Sequence[int],
    new_task: int,
    rel_tol: float = DEFAULT_REL_TOL,
) -> ErrorProjection:
    """Projector onto the intersection of the null spaces of every old task's constraints."""
    blocks = [m for old in old_tasks for m in three_layer_constraints(net, old, new_task)]
    stack = np.vstack(blocks)
    basis = null_space_basis(stack, rel_tol)
    if basis.shape[1] == 0:
        logger.warning(
            f"No admissible error direction for task {new_task} against tasks {list(old_tasks)}; "
            "hidden-layer updates are projected to zero"
        )
        a = np.zeros((stack.shape[1], stack.shape[1]))
    else:
        a = _symmetric(basis @ basis.T)
    return ErrorProjection(a=a, constraints=stack, admissible_dim=int(basis.shape[1]))


def three_layer_error_projection(
    e_row: Matrix,
    net: ThreeLayerNet,
    old_task: int,
    new_task: int,
    rel_tol: float = DEFAULT_REL_TOL,
) -> Matrix:
    """Project error rows (1 x o_new, or a b x o_new batch) at the current weights."""
    projection = error_projector(net, [old_task], new_task, rel_tol)
    if e_row.ndim != 2 or e_row.shape[1] != projection.a.shape[0]:
        raise ShapeError("error rows do not match the new readout", e_row.shape, projection.a.shape)
    return e_row @ projection.a


# =========================
# Diagnostics
# =========================


def _summary(values: npt.NDArray[np.float64], prefix: str) -> dict[str, float]:
    if values.size == 0:
        return {f"{prefix}_mean": 0.0, f"{prefix}_p10": 0.0, f"{prefix}_p50": 0.0, f"{prefix}_p90": 0.0}
    p10, p50, p90 = np.quantile(values, [0.1, 0.5, 0.9])
    return {
        f"{prefix}_mean": float(values.mean()),
        f"{prefix}_p10": float(p10),
        f"{prefix}_p50": float(p50),
        f"{prefix}_p90": float(p90),
    }


def displacement_norms(
    h_before: Matrix, h_after: Matrix, decomp: ReadoutDecomposition
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Per-sample norms of the range part, null part and whole of ``h_after - h_before``."""
    if h_before.shape != h_after.shape:
        raise ShapeError("activation snapshots differ in shape", h_before.shape, h_after.shape)
    if h_before.ndim != 2 or h_before.shape[1] != decomp.dim:
        raise ShapeError("activations do not match the decomposition", h_before.shape, decomp.p_range.shape)
    delta = h_after - h_before
    # ||dh CC^T|| == ||dh C|| for orthonormal C.
    d_range = np.linalg.norm(delta @ decomp.c, axis=1)
    d_null = np.linalg.norm(delta @ decomp.n, axis=1)
    d_total = np.linalg.norm(delta, axis=1)
    return d_range, d_null, d_total


def displacement(h_before: Matrix, h_after: Matrix, decomp: ReadoutDecomposition) -> DisplacementRecord:
    d_range, d_null, d_total = displacement_norms(h_before, h_after, decomp)
    return DisplacementRecord(
        **_summary(d_range, "d_range"),
        **_summary(d_null, "d_null"),
        **_summary(d_total, "d_total"),
        count=int(d_total.shape[0]),
        rank=decomp.rank,
        dim=decomp.dim,
    )


def isotropic_ratio(rank: int, dim: int) -> float:
    """Null/range displacement ratio expected if activations moved equally in every direction."""
    if not 0 < rank < dim:
        raise DomainError(f"isotropic ratio needs 0 < rank < dim, got rank={rank}, dim={dim}")
    return math.sqrt((dim - rank) / rank)


def classify_case(
    stability_drop: float,
    plasticity_drop: float,
    range_disp: float,
    null_disp: float,
    baseline: DisplacementRecord,
    thresholds: CaseThresholds | None = None,
) -> CaseLabel:
    """
    Map accuracy drops and displacements (relative to an unregularized baseline)
    onto the stability cases 1/2/4 and plasticity cases 5-8. A stability drop
    with a clamped range is reported as inconsistent rather than as a case.
    """
    thresholds = thresholds or CaseThresholds()
    if baseline.d_range_mean <= 0.0 or baseline.d_null_mean <= 0.0:
        raise ClassificationUnavailable(
            "baseline displacement is zero in the range or null space; cases cannot be assigned"
        )

    stability_preserved = stability_drop <= thresholds.eps_stability
    range_clamped = range_disp < thresholds.clamp_fraction * baseline.d_range_mean
    plasticity_preserved = plasticity_drop <= thresholds.eps_plasticity
    null_clamped = null_disp < thresholds.clamp_fraction * baseline.d_null_mean

    note = None
    inconsistent = False
    if stability_preserved:
        stability_case = 1 if range_clamped else 2
        if not range_clamped:
            note = "range moved while stability held; the effective range is not estimated"
    elif range_clamped:
        stability_case = None
        inconsistent = True
        note = "stability dropped although range displacement is clamped; check the measurement"
        logger.warning(note)
    else:
        stability_case = 4

    if plasticity_preserved:
        plasticity_case = 5 if null_clamped else 6
    else:
        plasticity_case = 7 if null_clamped else 8

    return CaseLabel(
        stability_case=stability_case,
        plasticity_case=plasticity_case,
        inconsistent=inconsistent,
        stability_preserved=stability_preserved,
        range_clamped=range_clamped,
        plasticity_preserved=plasticity_preserved,
        null_clamped=null_clamped,
        thresholds=thresholds,
        note=note,
    )
