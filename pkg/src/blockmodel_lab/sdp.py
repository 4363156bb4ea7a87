"""First-order solver for the basic semidefinite relaxation.

    maximize  <Gbar, M>
    s.t.      M is PSD, M_ii = 1, 0 <= M_ij <= 1, M 1 = (n/k) 1

The PSD constraint is handled by eigenvalue clipping, the linear constraints
by Dykstra cycles over their closed-form projections, glued together with
ADMM. Dense eigendecompositions cap the practical size at n ~ 2000; larger
instances should use the spectral initialization path instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SdpSizeError(ValueError):
    """Instance too large for the dense eigendecomposition backend."""


@dataclass
class SdpSolution:
    M: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool


def psd_project(S: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clip negative eigenvalues at zero."""
    S = np.asarray(S, dtype=np.float64)
    S = (S + S.T) / 2.0
    if not np.all(np.isfinite(S)):
        raise ValueError("psd_project: non-finite entries")
    vals, vecs = np.linalg.eigh(S)
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T


def _project_rowsum(M: np.ndarray, c: float) -> np.ndarray:
    """Frobenius projection of a symmetric matrix onto {M 1 = c 1}."""
    n = M.shape[0]
    r = c - M.sum(axis=1)
    u = (r - r.sum() / (2.0 * n)) / n
    return M + np.add.outer(u, u)


def _project_linear(M: np.ndarray, rowsum: float, cycles: int) -> np.ndarray:
    """Dykstra cycles for {0 <= M <= 1} ∩ {diag = 1} ∩ {rowsums = c}."""
    Y = M.copy()
    inc_box = np.zeros_like(Y)
    inc_aff = np.zeros_like(Y)
    for _ in range(cycles):
        # box + diag are both "clip" type sets; affine set needs its own increment
        T = Y + inc_box
        Ynew = np.clip(T, 0.0, 1.0)
        np.fill_diagonal(Ynew, 1.0)
        inc_box = T - Ynew
        T = Ynew + inc_aff
        Y = _project_rowsum(T, rowsum)
        inc_aff = T - Y
    return Y


def _linear_violation(M: np.ndarray, rowsum: float) -> float:
    diag_err = np.abs(np.diag(M) - 1.0).max()
    box_err = max(0.0, float(-M.min()), float(M.max() - 1.0))
    row_err = np.abs(M.sum(axis=1) - rowsum).max() / max(rowsum, 1.0)
    return max(diag_err, box_err, row_err)


def solve_basic_sdp(Gbar, k: int, tol: float = 1e-6, max_iters: int = 2000) -> SdpSolution:
    """ADMM for the basic SDP. Gbar may be a dense array or any operator with
    a .dense() method. Deterministic; returns the best feasible-side iterate
    with residuals when max_iters is hit without convergence.
    """
    if hasattr(Gbar, "dense"):
        C = np.asarray(Gbar.dense(), dtype=np.float64)
    else:
        C = np.asarray(Gbar, dtype=np.float64)
    C = (C + C.T) / 2.0
    n = C.shape[0]
    if n > 2500:
        raise SdpSizeError(f"dense SDP backend caps at n ~ 2000, got n = {n}")
    if k < 2:
        raise ValueError("k must be at least 2")
    rowsum = n / k

    rho = 1.0 / math.sqrt(n)
    Y = np.full((n, n), 1.0 / k)
    np.fill_diagonal(Y, 1.0)
    U = np.zeros((n, n))
    scale = max(1.0, np.linalg.norm(C) / n)

    best_obj = -math.inf
    best_M = Y.copy()
    primal = dual = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        X = psd_project(Y - U)
        Y_prev = Y
        Y = _project_linear(X + U + C / rho, rowsum, cycles=8)
        U = U + X - Y
        primal = np.linalg.norm(X - Y) / n
        dual = rho * np.linalg.norm(Y - Y_prev) / n
        obj = float(np.tensordot(C, Y))
        if obj > best_obj and primal < 10 * tol * scale + 1e-3:
            best_obj = obj
            best_M = Y
        if primal <= tol and dual <= tol:
            break
        if it % 10 == 0:
            if primal > 10 * dual:
                rho *= 2.0
                U /= 2.0
            elif dual > 10 * primal:
                rho /= 2.0
                U *= 2.0

    # polish the linear feasibility of the returned iterate
    M = _project_linear(best_M if best_obj > -math.inf else Y, rowsum, cycles=200)
    converged = bool(primal <= tol and dual <= tol and _linear_violation(M, rowsum) <= 10 * tol)
    return SdpSolution(
        M=M,
        objective=float(np.tensordot(C, M)),
        primal_residual=float(primal),
        dual_residual=float(dual),
        iterations=it,
        converged=converged,
    )
