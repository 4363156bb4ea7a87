"""Balanced k-SBM sampling, node-corruption adversaries, and edge splitting.

Graphs are simple and undirected, stored as symmetric CSR adjacency with an
empty diagonal. Sampling is exact (per-block Bernoulli processes realized as
binomial counts plus uniform distinct pairs) and deterministic given a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import Labeling, ParameterError, SbmParams, balanced_labeling, derive

# Blocks with at most this many vertex pairs are sampled with an explicit
# Bernoulli mask; larger blocks use binomial counts + distinct uniform draws.
_MASK_LIMIT = 20_000_000


class Graph:
    """Immutable simple undirected graph with symmetric CSR adjacency."""

    def __init__(self, n: int, csr: sp.csr_matrix):
        self.n = int(n)
        self._csr = csr
        self._degrees = None

    @classmethod
    def from_edges(cls, n: int, u: np.ndarray, v: np.ndarray) -> "Graph":
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if u.size and (u.min() < 0 or v.min() < 0 or u.max() >= n or v.max() >= n):
            raise ParameterError("edge endpoint out of range")
        if np.any(u == v):
            raise ParameterError("self-loops are not allowed")
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.ones(rows.size, dtype=np.float64)
        csr = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        if csr.nnz != 2 * u.size:
            raise ParameterError("duplicate edges in input")
        return cls(n, csr)

    @property
    def adjacency(self) -> sp.csr_matrix:
        return self._csr

    @property
    def m(self) -> int:
        return self._csr.nnz // 2

    @property
    def degrees(self) -> np.ndarray:
        if self._degrees is None:
            self._degrees = np.asarray(self._csr.sum(axis=1)).ravel().astype(np.int64)
        return self._degrees

    def edge_array(self):
        """Edges as (u, v) arrays with u < v, sorted lexicographically."""
        coo = self._csr.tocoo()
        keep = coo.row < coo.col
        u, v = coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64)
        order = np.lexsort((v, u))
        return u[order], v[order]

    def induce(self, ids: np.ndarray) -> "Graph":
        """Induced subgraph on ids; vertex i of the result is ids[i]."""
        ids = np.asarray(ids, dtype=np.int64)
        sub = self._csr[ids][:, ids].tocsr()
        return Graph(ids.size, sub)

    def save(self, path):
        u, v = self.edge_array()
        with open(path, "w") as fh:
            fh.write(f"{self.n} {u.size}\n")
            for a, b in zip(u, v):
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "Graph":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ParameterError(f"bad edge-list header in {path}")
            n, m = int(header[0]), int(header[1])
            arr = np.loadtxt(fh, dtype=np.int64, ndmin=2) if m else np.empty((0, 2), np.int64)
        if arr.shape[0] != m:
            raise ParameterError(f"{path}: header says {m} edges, file has {arr.shape[0]}")
        if m and np.any(arr[:, 0] >= arr[:, 1]):
            raise ParameterError(f"{path}: edges must satisfy u < v")
        return cls.from_edges(n, arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class CorruptionReport:
    corrupted: np.ndarray  # vertex ids, sorted
    strategy: str


def _distinct_uniform(rng, n_range: int, count: int) -> np.ndarray:
    """count distinct uniform integers from [0, n_range)."""
    if count > n_range:
        raise ValueError("cannot draw more distinct values than the range size")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if count > 0.5 * n_range:
        return rng.permutation(n_range)[:count].astype(np.int64)
    pool = np.unique(rng.integers(0, n_range, size=int(1.2 * count) + 16))
    while pool.size < count:
        extra = rng.integers(0, n_range, size=count)
        pool = np.unique(np.concatenate([pool, extra]))
    return rng.permutation(pool)[:count].astype(np.int64)


def _triangular_decode(t: np.ndarray, m: int):
    """Map pair index t in [0, m(m-1)/2) to (i, j) with i < j < m."""
    tf = t.astype(np.float64)
    i = np.floor((2 * m - 1 - np.sqrt((2 * m - 1) ** 2 - 8 * tf)) / 2).astype(np.int64)
    # float sqrt can be off by one near block boundaries
    for _ in range(3):
        start = i * (2 * m - i - 1) // 2
        too_big = start > t
        too_small = (i + 1) * (2 * m - i - 2) // 2 <= t
        if not (too_big.any() or too_small.any()):
            break
        i = i - too_big.astype(np.int64) + too_small.astype(np.int64)
    j = t - i * (2 * m - i - 1) // 2 + i + 1
    return i, j


def _sample_block_within(rng, members: np.ndarray, p: float):
    """Bernoulli(p) on all unordered pairs inside one community."""
    m = members.size
    n_pairs = m * (m - 1) // 2
    if n_pairs == 0 or p <= 0.0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if n_pairs <= _MASK_LIMIT:
        hit = np.flatnonzero(rng.random(n_pairs) < p)
    else:
        count = rng.binomial(n_pairs, p)
        hit = _distinct_uniform(rng, n_pairs, count)
    i, j = _triangular_decode(hit, m)
    return members[i], members[j]


def _sample_block_cross(rng, left: np.ndarray, right: np.ndarray, p: float):
    """Bernoulli(p) on all pairs between two disjoint communities."""
    n_pairs = left.size * right.size
    if n_pairs == 0 or p <= 0.0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if n_pairs <= _MASK_LIMIT:
        hit = np.flatnonzero(rng.random(n_pairs) < p)
    else:
        count = rng.binomial(n_pairs, p)
        hit = _distinct_uniform(rng, n_pairs, count)
    return left[hit // right.size], right[hit % right.size]


def sample_sbm(params: SbmParams, seed) -> tuple[Graph, Labeling]:
    """Sample a balanced k-SBM instance.

    The labeling is exactly uniform over balanced partitions; every unordered
    pair is an edge independently with probability p1 (same community) or p2
    (otherwise). Deterministic given the seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    der = derive(params)
    labeling = balanced_labeling(params.n, params.k, rng)
    members = [np.flatnonzero(labeling.assign == c) for c in range(params.k)]
    us, vs = [], []
    for c1 in range(params.k):
        u, v = _sample_block_within(rng, members[c1], der.p1)
        us.append(u)
        vs.append(v)
        for c2 in range(c1 + 1, params.k):
            u, v = _sample_block_cross(rng, members[c1], members[c2], der.p2)
            us.append(u)
            vs.append(v)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    u, v = np.minimum(u, v), np.maximum(u, v)
    return Graph.from_edges(params.n, u, v), labeling


def split_graph(G: Graph, p: float, seed) -> tuple[Graph, Graph]:
    """Partition the edge set: each edge lands in G1 with probability p, else G2."""
    if not (0.0 < p < 1.0):
        raise ParameterError(f"split probability must lie in (0, 1), got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u, v = G.edge_array()
    to_first = rng.random(u.size) < p
    G1 = Graph.from_edges(G.n, u[to_first], v[to_first])
    G2 = Graph.from_edges(G.n, u[~to_first], v[~to_first])
    return G1, G2


STRATEGIES = ("random_rewire", "vote_poison", "cluster_disguise")


def corrupt(
    G: Graph,
    trueZ: Labeling,
    params: SbmParams,
    strategy: str,
    seed,
    budget_mult: float = 2.0,
    concentrate: bool = True,
) -> tuple[Graph, CorruptionReport]:
    """Apply a node adversary to floor(eta * n) vertices.

    Strategies:
      random_rewire    replace each corrupted vertex's edges with fresh
                       Bernoulli(d/n) edges (camouflage as average vertices).
      vote_poison      pick a random target set T of n/2 vertices; each
                       corrupted vertex spends ceil(budget_mult * d) edges on
                       victims in T whose true label differs from its own, so
                       every poison edge is a wrong-direction vote. With
                       concentrate=True the victim pool is shrunk until each
                       victim receives about 1.35x the expected honest margin,
                       which is what actually flips majority votes at finite n.
      cluster_disguise rewire each corrupted vertex so its own community sees
                       density p2 and one foreign community sees density p1.

    Only edges incident to corrupted vertices change; this is asserted on
    every call. The paper's adversary leaves the per-attacker edge budget
    free; budget_mult is that knob (default 2, i.e. degree about 2d).
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown corruption strategy {strategy!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = params.n
    n_bad = int(math.floor(params.eta * n))
    if n_bad == 0:
        return G, CorruptionReport(corrupted=np.empty(0, np.int64), strategy=strategy)

    corrupted = np.sort(rng.choice(n, size=n_bad, replace=False)).astype(np.int64)
    is_bad = np.zeros(n, dtype=bool)
    is_bad[corrupted] = True

    u0, v0 = G.edge_array()
    keep = ~(is_bad[u0] | is_bad[v0])
    us, vs = [u0[keep]], [v0[keep]]

    if strategy == "random_rewire":
        p = params.d / n
        for v in corrupted:
            # pairs with smaller-id corrupted vertices were already decided
            forbidden = corrupted[corrupted <= v]
            n_elig = n - 1 - (forbidden.size - 1)
            count = rng.binomial(n_elig, p)
            partners = _draw_partners(rng, n, count, forbidden)
            us.append(np.full(count, v, dtype=np.int64))
            vs.append(partners)
    elif strategy == "vote_poison":
        new_u, new_v = _vote_poison_edges(
            rng, params, trueZ, corrupted, is_bad, budget_mult, concentrate
        )
        us.append(new_u)
        vs.append(new_v)
    else:  # cluster_disguise
        der = derive(params)
        members = [np.flatnonzero(trueZ.assign == c) for c in range(params.k)]
        for v in corrupted:
            own = int(trueZ.assign[v])
            foreign = int(rng.integers(0, params.k - 1))
            foreign = foreign + (foreign >= own)
            for c in range(params.k):
                p = der.p1 if c == foreign else der.p2
                elig = members[c]
                elig = elig[(elig != v) & ~(is_bad[elig] & (elig < v))]
                count = rng.binomial(elig.size, p)
                partners = elig[_distinct_uniform(rng, elig.size, count)]
                us.append(np.full(count, v, dtype=np.int64))
                vs.append(partners)

    u = np.concatenate(us)
    v = np.concatenate(vs)
    u, v = np.minimum(u, v), np.maximum(u, v)
    Gc = Graph.from_edges(n, u, v)

    # locality invariant: no edge between two uncorrupted vertices changed
    u1, v1 = Gc.edge_array()
    keep1 = ~(is_bad[u1] | is_bad[v1])
    assert np.array_equal(u0[keep], u1[keep1]) and np.array_equal(v0[keep], v1[keep1]), (
        "corruption touched an edge between uncorrupted vertices"
    )
    return Gc, CorruptionReport(corrupted=corrupted, strategy=strategy)


def _draw_partners(rng, n, count, forbidden):
    """count distinct partners from [0, n) \\ forbidden."""
    if count == 0:
        return np.empty(0, dtype=np.int64)
    pool = np.unique(rng.integers(0, n, size=int(1.2 * count) + 16))
    pool = pool[~np.isin(pool, forbidden)]
    while pool.size < count:
        extra = rng.integers(0, n, size=count + 16)
        pool = np.unique(np.concatenate([pool, extra]))
        pool = pool[~np.isin(pool, forbidden)]
    return rng.permutation(pool)[:count].astype(np.int64)


def _vote_poison_edges(rng, params, trueZ, corrupted, is_bad, budget_mult, concentrate):
    n, k, d, eps = params.n, params.k, params.d, params.eps
    budget = int(math.ceil(budget_mult * d))
    T = rng.choice(n, size=n // 2, replace=False)
    T = T[~is_bad[T]]  # victims are honest vertices

    if concentrate and eps > 0:
        # a victim flips once its poison votes exceed the honest margin
        margin = eps * d / k
        alloc = max(1, int(math.ceil(1.35 * margin)))
        pool_size = min(T.size, int(math.ceil(corrupted.size * budget / alloc)))
        victims = rng.permutation(T)[:pool_size]
    else:
        victims = T

    vic_label = trueZ.assign[victims]
    by_label = [victims[vic_label != c] for c in range(k)]

    us, vs = [], []
    for s in corrupted:
        elig = by_label[int(trueZ.assign[s])]
        take = min(budget, elig.size)
        partners = elig[_distinct_uniform(rng, elig.size, take)]
        us.append(np.full(take, s, dtype=np.int64))
        vs.append(partners)
    return np.concatenate(us), np.concatenate(vs)
