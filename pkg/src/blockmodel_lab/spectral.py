"""Centered adjacency views, degree trimming, eigensolvers, subrectangle sums.

All operators here are lazy symmetric views over a Graph: matrix-vector
products cost O(|E| + n). The centering convention is

    Gbar(i, j) = A(i, j) - d/n   for i != j inside the trusted mask,
    Gbar(i, i) = 0,              zero outside the mask,

matching the zero-diagonal assumption of the degree-trimming spectral bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import Labeling


class _SymOp:
    """Minimal symmetric-operator interface: .n and .matvec / .matmat."""

    n = 0

    def matvec(self, x):
        raise NotImplementedError

    def matmat(self, X):
        return np.column_stack([self.matvec(X[:, j]) for j in range(X.shape[1])])

    def dense(self):
        return self.matmat(np.eye(self.n))


class DenseOp(_SymOp):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=np.float64)
        self.n = self.M.shape[0]

    def matvec(self, x):
        return self.M @ x

    def matmat(self, X):
        return self.M @ X

    def dense(self):
        return self.M


def as_operator(M) -> _SymOp:
    if isinstance(M, _SymOp):
        return M
    if isinstance(M, np.ndarray):
        return DenseOp(M)
    raise TypeError(f"cannot interpret {type(M)} as a symmetric operator")


class CenteredMatrix(_SymOp):
    """Lazy Gbar = A - (d/n) J with zero diagonal, restricted to a mask."""

    def __init__(self, graph, d: float, mask: np.ndarray | None = None):
        self.graph = graph
        self.d = float(d)
        self.n = graph.n
        if mask is None:
            self.mask = None
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (self.n,):
                raise ValueError("mask must be a length-n boolean vector")
            self.mask = mask
        self._A = graph.adjacency

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        px = x if self.mask is None else np.where(self.mask, x, 0.0)
        scale = self.d / self.n
        y = self._A @ px - scale * px.sum() + scale * px
        if self.mask is not None:
            y = np.where(self.mask, y, 0.0)
        return y

    def matmat(self, X):
        X = np.asarray(X, dtype=np.float64)
        PX = X if self.mask is None else X * self.mask[:, None]
        scale = self.d / self.n
        Y = self._A @ PX - scale * PX.sum(axis=0)[None, :] + scale * PX
        if self.mask is not None:
            Y = Y * self.mask[:, None]
        return Y

    def dense(self):
        A = np.asarray(self._A.todense(), dtype=np.float64)
        scale = self.d / self.n
        M = A - scale * (np.ones((self.n, self.n)) - np.eye(self.n))
        if self.mask is not None:
            M = M * np.outer(self.mask, self.mask)
        return M


class SignalResidualOp(_SymOp):
    """Masked noise part (Gbar - (eps d / n) X) with zero diagonal, where
    X = Z Z^T - J/k is the centered membership matrix. This is the matrix
    whose spectral norm the trimming bound controls (chi * sqrt(d))."""

    def __init__(self, graph, d: float, eps: float, labeling: Labeling, mask: np.ndarray | None = None):
        self.graph = graph
        self.n = graph.n
        self.d = float(d)
        self.eps = float(eps)
        self.k = labeling.k
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self._A = graph.adjacency
        self._Z = labeling.onehot()

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        px = x if self.mask is None else np.where(self.mask, x, 0.0)
        n, k = self.n, self.k
        scale = self.d / n
        sig = self.eps * self.d / n
        total = px.sum()
        y = self._A @ px - scale * total + scale * px
        y -= sig * (self._Z @ (self._Z.T @ px) - total / k - (1.0 - 1.0 / k) * px)
        if self.mask is not None:
            y = np.where(self.mask, y, 0.0)
        return y


def center(G, d: float, mask: np.ndarray | None = None) -> CenteredMatrix:
    """Centered adjacency view of G at degree scale d, optionally masked."""
    return CenteredMatrix(G, d, mask)


@dataclass(frozen=True)
class TrimMask:
    keep: np.ndarray
    threshold: float

    @property
    def trimmed_fraction(self):
        return 1.0 - self.keep.mean()


def trim_high_degree(G, threshold: float) -> TrimMask:
    """Feige-Ofek trimming: drop vertices with degree above the threshold
    (canonically 20 d), so the centered adjacency concentrates at O(sqrt(d))."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    keep = G.degrees <= threshold
    return TrimMask(keep=keep, threshold=float(threshold))


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool
    iterations: int
    vector: np.ndarray


def spectral_norm(M, tol: float = 1e-7, max_iters: int = 2000, seed=0) -> SpectralEstimate:
    """Power iteration on M^2 for the spectral norm of a symmetric operator.

    The returned value ||M x|| / ||x|| is always a lower bound on ||M||; on
    convergence it is within tol * ||M|| of the truth. Non-convergence is
    reported in the flag, never silent.
    """
    op = as_operator(M)
    n = op.n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    nx = np.linalg.norm(x)
    if nx == 0 or n == 0:
        return SpectralEstimate(0.0, True, 0, x)
    x /= nx
    lam_prev = 0.0
    stable = 0
    for it in range(1, max_iters + 1):
        y = op.matvec(x)
        lam = np.linalg.norm(y)
        if lam == 0.0:
            return SpectralEstimate(0.0, True, it, x)
        z = op.matvec(y / lam)
        nz = np.linalg.norm(z)
        x = z / nz if nz > 0 else y / lam
        if abs(lam - lam_prev) <= tol * max(lam, 1e-300):
            stable += 1
            if stable >= 3:
                return SpectralEstimate(float(lam), True, it, x)
        else:
            stable = 0
        lam_prev = lam
    return SpectralEstimate(float(lam_prev), False, max_iters, x)


@dataclass(frozen=True)
class EigBasis:
    vectors: np.ndarray  # n x r, orthonormal columns
    values: np.ndarray  # Ritz values, ordered by |value| descending
    residual: float
    converged: bool


def top_eigvecs(M, r: int, tol: float = 1e-7, seed=0, max_iters: int = 500) -> EigBasis:
    """Orthogonal (subspace) iteration for the r dominant eigenpairs.

    Residual ||M v - theta v|| <= tol * |theta_max| per Ritz pair on
    convergence; columns are orthonormal. Small problems fall back to a
    dense eigendecomposition.
    """
    op = as_operator(M)
    n = op.n
    if not (1 <= r <= n):
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    if n <= 400 or r > n // 2:
        Md = op.dense()
        vals, vecs = np.linalg.eigh((Md + Md.T) / 2.0)
        order = np.argsort(-np.abs(vals))[:r]
        return EigBasis(vectors=vecs[:, order], values=vals[order], residual=0.0, converged=True)

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    theta = np.zeros(r)
    V = Q
    res = math.inf
    best_res = math.inf
    stagnant = 0
    for it in range(1, max_iters + 1):
        Y = op.matmat(Q)
        H = Q.T @ Y
        H = (H + H.T) / 2.0
        vals, W = np.linalg.eigh(H)
        order = np.argsort(-np.abs(vals))
        theta = vals[order]
        V = Q @ W[:, order]
        MV = op.matmat(V)
        R = MV - V * theta[None, :]
        scale = max(np.abs(theta).max(), 1e-300)
        res = float(np.linalg.norm(R, axis=0).max() / scale)
        if res <= tol:
            return EigBasis(vectors=V, values=theta, residual=res, converged=True)
        # bulk Ritz pairs have gap-limited residuals; stop once progress stalls
        if res >= 0.98 * best_res:
            stagnant += 1
            if stagnant >= 15:
                break
        else:
            stagnant = 0
        best_res = min(best_res, res)
        Q, _ = np.linalg.qr(Y)
    return EigBasis(vectors=V, values=theta, residual=res, converged=False)


@dataclass(frozen=True)
class SubrectReport:
    max_abs_sum: float
    bound: float
    exceeded: bool
    exact: bool
    rows: tuple
    cols: tuple


def _best_cols(v: np.ndarray, n2: int):
    """Exact extreme of sum_{j in T} v_j over |T| = n2, returned as
    (signed value, column tuple) with largest absolute value."""
    order = np.argsort(v)
    lo_idx = order[:n2]
    hi_idx = order[-n2:]
    lo = v[lo_idx].sum()
    hi = v[hi_idx].sum()
    if abs(hi) >= abs(lo):
        return hi, tuple(sorted(int(i) for i in hi_idx))
    return lo, tuple(sorted(int(i) for i in lo_idx))


def subrect_check(
    M: np.ndarray,
    n1: int,
    n2: int,
    bound: float,
    samples: int = 20,
    seed=0,
) -> SubrectReport:
    """Estimate the maximum absolute sum over n1 x n2 combinatorial
    subrectangles of M and compare against the claimed bound.

    Exhaustive when comb(n, n1) * comb(n, n2) <= 1e6; the inner column
    optimization for a fixed row set is exact (sorted prefix), so the
    exhaustive mode covers all pairs while enumerating only row sets.
    Otherwise: alternating row/column maximization from random starts. The
    sampled mode is a falsifier, not a verifier; it can only underestimate.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if not (1 <= n1 <= n and 1 <= n2 <= M.shape[1]):
        raise ValueError("subrectangle sizes out of range")
    exact = math.comb(n, n1) * math.comb(M.shape[1], n2) <= 1_000_000

    best_val = 0.0
    best_rows: tuple = ()
    best_cols: tuple = ()
    if exact:
        enumerate_rows = math.comb(n, n1) <= math.comb(M.shape[1], n2)
        W = M if enumerate_rows else M.T
        a, b = (n1, n2) if enumerate_rows else (n2, n1)
        for S in itertools.combinations(range(W.shape[0]), a):
            v = W[list(S), :].sum(axis=0)
            val, T = _best_cols(v, b)
            if abs(val) > abs(best_val):
                best_val = val
                best_rows, best_cols = (S, T) if enumerate_rows else (T, S)
    else:
        rng = np.random.default_rng(seed)
        for sign in (1.0, -1.0):
            B = sign * M
            for _ in range(samples):
                rows = rng.choice(n, size=n1, replace=False)
                cols = np.arange(n2)
                f_prev = -math.inf
                for _ in range(60):
                    v = B[rows, :].sum(axis=0)
                    cols = np.argsort(v)[-n2:]
                    w = B[:, cols].sum(axis=1)
                    rows = np.argsort(w)[-n1:]
                    f = float(B[np.ix_(rows, cols)].sum())
                    if f <= f_prev + 1e-12:
                        break
                    f_prev = f
                if f_prev > abs(best_val):
                    best_val = sign * f_prev
                    best_rows = tuple(sorted(int(i) for i in rows))
                    best_cols = tuple(sorted(int(i) for i in cols))
    return SubrectReport(
        max_abs_sum=abs(best_val),
        bound=float(bound),
        exceeded=bool(abs(best_val) > bound),
        exact=exact,
        rows=best_rows,
        cols=best_cols,
    )
