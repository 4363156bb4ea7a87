"""Rough k-clustering: trimming + spectral or SDP embedding + balanced k-means.

The target is a small constant error (a few percent at desk scale) from
which the boosting stages can take over. The embedding backend is chosen by
size: the SDP path needs dense eigendecompositions and caps around n = 2000,
the spectral path scales with |E|.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Labeling, SbmParams, derive, rebalance_labels
from .sdp import solve_basic_sdp
from .spectral import center, top_eigvecs, trim_high_degree


@dataclass(frozen=True)
class InitConfig:
    backend: str = "auto"  # auto | spectral | sdp
    kmeans_restarts: int = 20
    seed: int = 0
    K: float = 100.0  # warn when eps^2 d < K k^2
    trim_mult: float = 20.0
    sdp_max_n: int = 2000
    sdp_max_iters: int = 600

    def __post_init__(self):
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")
        if self.backend not in ("auto", "spectral", "sdp"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class InitResult:
    labeling: Labeling
    ok: bool
    backend: str
    trimmed_fraction: float
    notes: list = field(default_factory=list)


def _kmeans_pp_seed(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = points[idx]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, centers, max_iters=100):
    k = centers.shape[0]
    assign = None
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for j in range(k):
            sel = new_assign == j
            if sel.any():
                centers[j] = points[sel].mean(axis=0)
            else:
                # re-seed an emptied cluster at the worst-served point
                worst = int(d2.min(axis=1).argmax())
                centers[j] = points[worst]
                new_assign[worst] = j
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    cost = float(d2[np.arange(points.shape[0]), assign].sum())
    return assign, centers, cost


def kmeans_cost(points, assign, k):
    cost = 0.0
    for j in range(k):
        sel = assign == j
        if sel.any():
            c = points[sel].mean(axis=0)
            cost += float(((points[sel] - c) ** 2).sum())
    return cost


def balanced_kmeans(points: np.ndarray, k: int, restarts: int = 20, seed=0) -> Labeling:
    """k-means++ with restarts, then greedy rebalancing to exactly n/k per
    cluster (smallest cost-increase moves, centroids held fixed).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n % k != 0:
        raise ValueError("balanced_kmeans needs n divisible by k")
    ss = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(ss[r])
        centers = _kmeans_pp_seed(points, k, rng)
        assign, centers, cost = _lloyd(points, centers)
        if best is None or (cost, r) < (best[0], best[1]):
            best = (cost, r, assign, centers)
    _, _, assign, centers = best
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = rebalance_labels(assign, k, d2)
    return Labeling(assign=assign, k=k)


def rough_init(G, params: SbmParams, cfg: InitConfig | None = None) -> InitResult:
    """Trim, embed, and round to an exactly balanced k-labeling.

    Warns (never refuses) below the eps^2 d >= K k^2 operating regime.
    Trimmed vertices are assigned by nearest centroid and a final global
    rebalance enforces exactly n/k per community.
    """
    cfg = cfg or InitConfig()
    derived = derive(params)
    notes = []
    if params.eps**2 * params.d < cfg.K * params.k**2:
        warnings.warn(
            f"eps^2 d = {params.eps ** 2 * params.d:.1f} below the K k^2 = "
            f"{cfg.K * params.k ** 2:.0f} operating regime; init quality degrades",
            stacklevel=2,
        )
        notes.append("below-regime")

    backend = cfg.backend
    if backend == "auto":
        backend = "spectral" if params.n > 2000 else "sdp"
    if backend == "sdp" and params.n > cfg.sdp_max_n:
        notes.append("sdp-too-large:fallback-spectral")
        backend = "spectral"

    mask = trim_high_degree(G, cfg.trim_mult * params.d)
    ok = True
    if backend == "spectral":
        op = center(G, params.d, mask.keep)
        basis = top_eigvecs(op, params.k, tol=1e-6, seed=cfg.seed)
        # bulk Ritz pairs rarely reach tol; the embedding is usable well before
        ok = basis.converged or basis.residual <= 0.05
        if not basis.converged:
            notes.append(f"embedding-residual:{basis.residual:.2e}")
        points = basis.vectors
    else:
        op = center(G, params.d, mask.keep)
        sol = solve_basic_sdp(op, params.k, max_iters=cfg.sdp_max_iters)
        ok = sol.converged
        vals, vecs = np.linalg.eigh(sol.M)
        order = np.argsort(-vals)[: params.k]
        points = vecs[:, order] * np.sqrt(np.maximum(vals[order], 0.0))[None, :]

    kept = mask.keep
    n, k = params.n, params.k
    ss = np.random.SeedSequence(cfg.seed).spawn(cfg.kmeans_restarts)
    best = None
    kept_points = points[kept]
    for r in range(cfg.kmeans_restarts):
        rng = np.random.default_rng(ss[r])
        centers = _kmeans_pp_seed(kept_points, k, rng)
        a, centers, cost = _lloyd(kept_points, centers)
        if best is None or (cost, r) < (best[0], best[1]):
            best = (cost, r, centers)
    centers = best[2]

    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    assign = rebalance_labels(assign, k, d2)
    return InitResult(
        labeling=Labeling(assign=assign, k=k),
        ok=ok,
        backend=backend,
        trimmed_fraction=mask.trimmed_fraction,
        notes=notes,
    )
