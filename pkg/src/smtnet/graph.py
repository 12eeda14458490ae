"""Sparse undirected graphs, stochastic block models and block views.

The adjacency matrix is held as a symmetric scipy CSR matrix with both
directions of every edge stored. Blocks of a partition are exposed as
:class:`BlockView` objects that can be complemented without materialising
the (dense) complement graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import kernels

LIKELIHOOD_EPS = 1e-9


class GraphError(ValueError):
    """Invalid graph input or degenerate block."""


class AdjacencyMatrix:
    """Symmetric 0/1 adjacency matrix without self-loops.

    Parameters
    ----------
    n : int
        Number of nodes.
    rows, cols : array_like of int
        Endpoints of the undirected edges. Each edge may be listed in one or
        both directions; duplicates are rejected.
    """

    __slots__ = ("n", "csr", "_upper")

    def __init__(self, n, rows=(), cols=(), *, _csr=None):
        self.n = int(n)
        if _csr is not None:
            self.csr = _csr
        else:
            rows = np.asarray(rows, dtype=np.int64).ravel()
            cols = np.asarray(cols, dtype=np.int64).ravel()
            if rows.shape != cols.shape:
                raise GraphError("row and column arrays differ in length")
            if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= self.n):
                raise GraphError(f"node index out of range [0, {self.n})")
            if np.any(rows == cols):
                bad = int(rows[rows == cols][0])
                raise GraphError(f"self-loop at node {bad}")
            lo = np.minimum(rows, cols)
            hi = np.maximum(rows, cols)
            code = lo * self.n + hi
            if np.unique(code).size != code.size:
                raise GraphError("duplicate edge")
            data = np.ones(2 * lo.size, dtype=np.float64)
            csr = sp.csr_matrix(
                (data, (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
                shape=(self.n, self.n),
            )
            csr.sort_indices()
            self.csr = csr
        self.csr.indptr.setflags(write=False)
        self.csr.indices.setflags(write=False)
        self.csr.data.setflags(write=False)
        self._upper = None

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(dense, dense.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(dense) != 0):
            raise GraphError("adjacency has self-loops")
        if not np.all((dense == 0) | (dense == 1)):
            raise GraphError("adjacency entries must be 0 or 1")
        r, c = np.nonzero(np.triu(dense, 1))
        return cls(dense.shape[0], r, c)

    @classmethod
    def from_csr(cls, csr):
        """Wrap an already symmetric, loop-free 0/1 sparse matrix."""
        csr = sp.csr_matrix(csr, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise GraphError("adjacency must be square")
        if csr.diagonal().any():
            raise GraphError("adjacency has self-loops")
        if (csr != csr.T).nnz:
            raise GraphError("adjacency must be symmetric")
        csr.data[:] = 1.0
        return cls(csr.shape[0], _csr=csr)

    # -- basic queries -------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return self.csr.nnz // 2

    def upper_edges(self):
        """Edge endpoints ``(rows, cols)`` with ``rows < cols``."""
        if self._upper is None:
            r, c = kernels.csr_upper_edges(
                self.csr.indptr.astype(np.int64), self.csr.indices.astype(np.int64)
            )
            r.setflags(write=False)
            c.setflags(write=False)
            self._upper = (r, c)
        return self._upper

    def degrees(self):
        return np.diff(self.csr.indptr)

    def mean_degree(self) -> float:
        return 2.0 * self.n_edges / self.n if self.n else 0.0

    def has_edge(self, u: int, v: int) -> bool:
        lo, hi = self.csr.indptr[u], self.csr.indptr[u + 1]
        k = np.searchsorted(self.csr.indices[lo:hi], v)
        return bool(k < hi - lo and self.csr.indices[lo + k] == v)

    def matvec(self, x):
        return self.csr @ x

    def to_dense(self):
        return self.csr.toarray()

    def subgraph(self, nodes) -> "AdjacencyMatrix":
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self.csr[nodes][:, nodes]
        return AdjacencyMatrix(len(nodes), _csr=sp.csr_matrix(sub))

    def complement(self) -> "AdjacencyMatrix":
        """Dense complement; only sensible for small graphs."""
        d = 1 - self.to_dense()
        np.fill_diagonal(d, 0)
        return AdjacencyMatrix.from_dense(d)

    def __eq__(self, other):
        if not isinstance(other, AdjacencyMatrix) or other.n != self.n:
            return NotImplemented
        return (self.csr != other.csr).nnz == 0

    def __repr__(self):
        return f"AdjacencyMatrix(n={self.n}, edges={self.n_edges})"


# -- edge list I/O -------------------------------------------------------------

def write_edge_list(a: AdjacencyMatrix, path) -> None:
    """Write ``a`` as ``u v`` lines preceded by a ``# nodes N`` header."""
    r, c = a.upper_edges()
    with open(path, "w") as fh:
        fh.write(f"# nodes {a.n}\n")
        for u, v in zip(r.tolist(), c.tolist()):
            fh.write(f"{u} {v}\n")


def read_edge_list(path, n=None) -> AdjacencyMatrix:
    """Parse an undirected edge list.

    Lines starting with ``#`` are comments, except ``# nodes N`` which fixes
    the node count (needed when trailing nodes are isolated). Without it,
    the node count is one past the largest index unless ``n`` is given.
    """
    rows, cols = [], []
    header_n = None
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    try:
                        header_n = int(parts[1])
                    except ValueError:
                        raise GraphError(f"line {lineno}: bad node count {parts[1]!r}") from None
                continue
            parts = s.split()
            if len(parts) != 2:
                raise GraphError(f"line {lineno}: expected 'u v', got {s!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphError(f"line {lineno}: non-integer node id in {s!r}") from None
            if u < 0 or v < 0:
                raise GraphError(f"line {lineno}: negative node id")
            if u == v:
                raise GraphError(f"line {lineno}: self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"line {lineno}: duplicate edge {key[0]} {key[1]}")
            seen.add(key)
            rows.append(u)
            cols.append(v)
    if n is None:
        n = header_n
    if n is None:
        n = max(max(rows, default=-1), max(cols, default=-1)) + 1
    return AdjacencyMatrix(n, rows, cols)


# -- block models ----------------------------------------------------------------

@dataclass(frozen=True)
class BlockModel:
    """Membership vector plus symmetric block probability table."""

    membership: np.ndarray
    block_probs: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.membership, dtype=np.int64)
        G = np.atleast_2d(np.asarray(self.block_probs, dtype=np.float64))
        if G.shape[0] != G.shape[1]:
            raise GraphError("block probability table must be square")
        if not np.allclose(G, G.T):
            raise GraphError("block probability table must be symmetric")
        if np.any((G < 0) | (G > 1)) or np.any(np.isnan(G)):
            raise GraphError("block probabilities must lie in [0, 1]")
        if g.size and (g.min() < 0 or g.max() >= G.shape[0]):
            raise GraphError("membership label outside [0, K)")
        object.__setattr__(self, "membership", g)
        object.__setattr__(self, "block_probs", G)

    @property
    def K(self) -> int:
        return self.block_probs.shape[0]

    @property
    def n(self) -> int:
        return self.membership.shape[0]

    def sizes(self):
        return np.bincount(self.membership, minlength=self.K)

    def is_populated(self) -> bool:
        return bool(np.all(self.sizes() >= 1))

    def is_assortative(self) -> bool:
        return is_assortative(self.block_probs)

    @classmethod
    def planted(cls, n: int, k: int, p_in: float, p_out: float) -> "BlockModel":
        """Balanced planted partition; the first ``n % k`` blocks get one extra node."""
        G = np.full((k, k), float(p_out))
        np.fill_diagonal(G, float(p_in))
        return cls(balanced_membership(n, k), G)


def balanced_membership(n: int, k: int):
    base, extra = divmod(n, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.repeat(np.arange(k, dtype=np.int64), sizes)


def is_assortative(G) -> bool:
    G = np.asarray(G)
    k = G.shape[0]
    if k < 2:
        return True
    off = G[~np.eye(k, dtype=bool)]
    return bool(np.min(np.diag(G)) > np.max(off))


def sample_sbm(model: BlockModel, seed) -> AdjacencyMatrix:
    """Draw an adjacency matrix from ``model``.

    Every unordered pair ``(i, j)`` is an edge independently with
    probability ``G[g_i, g_j]``. Within each block pair the edge count is
    drawn from the binomial law and the edge positions uniformly without
    replacement, which is the same distribution at O(edges) cost.
    """
    if not model.is_populated():
        empty = np.flatnonzero(model.sizes() == 0).tolist()
        raise GraphError(f"unpopulated block(s) {empty}")
    rng = np.random.default_rng(seed)
    g = model.membership
    order = np.argsort(g, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(model.sizes())])
    rows, cols = [], []
    for a in range(model.K):
        na = bounds[a + 1] - bounds[a]
        nodes_a = order[bounds[a]:bounds[a + 1]]
        for b in range(a, model.K):
            p = model.block_probs[a, b]
            if a == b:
                pairs = na * (na - 1) // 2
            else:
                nb = bounds[b + 1] - bounds[b]
                pairs = na * nb
            if pairs == 0 or p == 0.0:
                continue
            m = int(rng.binomial(pairs, p))
            if m == 0:
                continue
            idx = np.sort(rng.choice(pairs, size=m, replace=False)).astype(np.int64)
            if a == b:
                i, j = kernels.decode_upper_pairs(idx, np.int64(na))
                rows.append(nodes_a[i])
                cols.append(nodes_a[j])
            else:
                nodes_b = order[bounds[b]:bounds[b + 1]]
                rows.append(nodes_a[idx // nb])
                cols.append(nodes_b[idx % nb])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.empty(0, dtype=np.int64)
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    data = np.ones(2 * lo.size)
    csr = sp.csr_matrix((data, (np.concatenate([lo, hi]), np.concatenate([hi, lo]))), shape=(model.n, model.n))
    csr.sort_indices()
    return AdjacencyMatrix(model.n, _csr=csr)


# -- block views -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BlockView:
    """The induced subgraph on ``nodes``, optionally complemented.

    ``sub`` caches the induced CSR matrix; the complement is never stored.
    """

    parent: AdjacencyMatrix
    nodes: np.ndarray
    complemented: bool = False
    sub: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        if nodes.size > 1 and np.any(np.diff(nodes) <= 0):
            nodes = np.unique(nodes)
        object.__setattr__(self, "nodes", nodes)
        if self.sub is None:
            sub = sp.csr_matrix(self.parent.csr[nodes][:, nodes])
            sub.sort_indices()
            object.__setattr__(self, "sub", sub)

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def edge_count(self) -> int:
        """Edges of this (possibly complemented) view."""
        m = self.sub.nnz // 2
        if self.complemented:
            return comb(self.size, 2) - m
        return m

    def edge(self, u: int, v: int) -> int:
        """Entry of the view's adjacency at local indices ``u, v``."""
        if u == v:
            return 0
        lo, hi = self.sub.indptr[u], self.sub.indptr[u + 1]
        present = v in self.sub.indices[lo:hi]
        return int(present != self.complemented)

    def complement(self) -> "BlockView":
        return BlockView(self.parent, self.nodes, not self.complemented, self.sub)

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.complemented:
            return kernels.complement_matvec(
                self.sub.indptr.astype(np.int64), self.sub.indices.astype(np.int64), x, 1.0
            )
        return self.sub @ x

    def to_dense(self):
        d = self.sub.toarray()
        if self.complemented:
            d = 1.0 - d
            np.fill_diagonal(d, 0.0)
        return d


def extract_blocks(a: AdjacencyMatrix, membership) -> list[BlockView]:
    """One uncomplemented view per distinct label, ordered by label."""
    g = np.asarray(membership)
    if g.shape != (a.n,):
        raise GraphError(f"membership length {g.shape} does not match n={a.n}")
    labels, inverse = np.unique(g, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(inverse, minlength=labels.size))])
    return [BlockView(a, order[bounds[k]:bounds[k + 1]]) for k in range(labels.size)]


def block_pair_counts(a: AdjacencyMatrix, membership, k=None):
    """Edge counts and possible pair counts for every block pair."""
    g = np.asarray(membership, dtype=np.int64)
    if g.shape != (a.n,):
        raise GraphError(f"membership length {g.shape} does not match n={a.n}")
    if k is None:
        k = int(g.max()) + 1 if g.size else 0
    r, c = a.upper_edges()
    edges = kernels.block_edge_counts(r, c, g, np.int64(k))
    sizes = np.bincount(g, minlength=k).astype(np.int64)
    pairs = np.outer(sizes, sizes)
    pairs[np.diag_indices(k)] = sizes * (sizes - 1) // 2
    return edges, pairs


def estimate_block_probs(a: AdjacencyMatrix, membership, k=None, *, strict=True):
    """Empirical edge frequency table for the partition ``membership``.

    Diagonal entries divide by the number of distinct unordered pairs inside
    the block. A block with fewer than two nodes has no such pairs; this
    raises unless ``strict`` is false, in which case the entry is NaN.
    """
    edges, pairs = block_pair_counts(a, membership, k)
    if strict and np.any(pairs == 0):
        sizes = np.bincount(np.asarray(membership, dtype=np.int64), minlength=edges.shape[0])
        bad = np.flatnonzero(sizes < 2).tolist()
        raise GraphError(f"degenerate block size for block(s) {bad}")
    with np.errstate(invalid="ignore", divide="ignore"):
        G = np.where(pairs > 0, edges / np.maximum(pairs, 1), np.nan)
    return G


def sbm_log_likelihood(a: AdjacencyMatrix, membership, g_hat, eps=LIKELIHOOD_EPS):
    """Bernoulli log-likelihood of ``a`` under ``(membership, g_hat)``.

    Block probabilities are clamped into ``[eps, 1 - eps]``.

    Returns
    -------
    total : float
        Sum over unordered pairs.
    per_pair : float
        ``total`` divided by ``C(n, 2)``.
    """
    G = np.clip(np.asarray(g_hat, dtype=np.float64), eps, 1.0 - eps)
    edges, pairs = block_pair_counts(a, membership, G.shape[0])
    iu = np.triu_indices(G.shape[0])
    m = edges[iu].astype(np.float64)
    P = pairs[iu].astype(np.float64)
    g = G[iu]
    total = float(np.sum(m * np.log(g) + (P - m) * np.log1p(-g)))
    npairs = comb(a.n, 2)
    return total, (total / npairs if npairs else 0.0)


def complement_log_likelihood(a: AdjacencyMatrix, membership, g_hat, eps=LIKELIHOOD_EPS):
    """Log-likelihood of the complement graph under ``(membership, 1 - g_hat)``.

    Computed from the block counts of ``a`` so the dense complement is never
    built.
    """
    G = 1.0 - np.clip(np.asarray(g_hat, dtype=np.float64), 0.0, 1.0)
    G = np.clip(G, eps, 1.0 - eps)
    edges, pairs = block_pair_counts(a, membership, G.shape[0])
    iu = np.triu_indices(G.shape[0])
    mc = (pairs[iu] - edges[iu]).astype(np.float64)
    P = pairs[iu].astype(np.float64)
    g = G[iu]
    total = float(np.sum(mc * np.log(g) + (P - mc) * np.log1p(-g)))
    npairs = comb(a.n, 2)
    return total, (total / npairs if npairs else 0.0)


# -- scaled block matrices ------------------------------------------------------------

def clamp_probability(p_hat: float, size: int) -> float:
    """Clamp into ``[1/(N(N-1)), 1 - 1/(N(N-1))]`` so the scale stays finite."""
    lo = 1.0 / (size * (size - 1))
    return float(min(max(p_hat, lo), 1.0 - lo))


@dataclass(frozen=True, eq=False)
class ScaledBlockMatrix:
    """``view`` with every edge weighted by ``1 / sqrt(N p (1 - p))``."""

    view: BlockView
    p_hat: float
    scale: float
    mu: float
    mu_tilde: float

    @property
    def size(self) -> int:
        return self.view.size

    def entry(self, u: int, v: int) -> float:
        return self.scale if self.view.edge(u, v) else 0.0

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.view.complemented:
            return kernels.complement_matvec(
                self.view.sub.indptr.astype(np.int64),
                self.view.sub.indices.astype(np.int64),
                x,
                self.scale,
            )
        return self.scale * (self.view.sub @ x)

    def linear_operator(self) -> LinearOperator:
        n = self.size
        if self.view.complemented:
            indptr = self.view.sub.indptr.astype(np.int64)
            indices = self.view.sub.indices.astype(np.int64)
            scale = self.scale

            def mv(x):
                return kernels.complement_matvec(indptr, indices, np.ascontiguousarray(x, dtype=np.float64).ravel(), scale)

        else:
            m = (self.scale * self.view.sub).tocsr()

            def mv(x):
                return m @ np.ravel(x)

        return LinearOperator((n, n), matvec=mv, rmatvec=mv, dtype=np.float64)

    def to_dense(self):
        return self.scale * self.view.to_dense()


def scaled_block(view: BlockView, p_hat: float) -> ScaledBlockMatrix:
    """Scale the view by ``1 / sqrt(N p (1 - p))`` with ``p`` clamped."""
    n = view.size
    if not np.isfinite(p_hat) or p_hat < 0.0 or p_hat > 1.0:
        raise GraphError(f"edge probability {p_hat!r} outside [0, 1]")
    if n < 3 and (p_hat == 0.0 or p_hat == 1.0):
        raise GraphError(f"degenerate block: size {n} with edge probability {p_hat}")
    if n < 2:
        raise GraphError(f"degenerate block: size {n}")
    p = clamp_probability(p_hat, n)
    return ScaledBlockMatrix(
        view=view,
        p_hat=p,
        scale=1.0 / np.sqrt(n * p * (1.0 - p)),
        mu=n * p,
        mu_tilde=n * (1.0 - p),
    )
