"""Eigenvalue computations on scaled blocks and spectral clustering."""
from __future__ import annotations

import math

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from sklearn.cluster import KMeans

from .graph import AdjacencyMatrix, GraphError, ScaledBlockMatrix

DENSE_CUTOFF = 64
EIG_TOL = 1e-10
CLUSTER_DENSE_CUTOFF = 300


class EigenConvergenceError(RuntimeError):
    def __init__(self, size, residuals):
        self.size = size
        self.residuals = residuals
        super().__init__(
            f"Lanczos did not converge on block of size {size}; "
            f"residual norms {np.array2string(np.asarray(residuals), precision=3)}"
        )


def _start_vector(n: int):
    # fixed start vector keeps the solve deterministic
    return np.random.default_rng(n).standard_normal(n)


def second_largest_eigenvalue(m: ScaledBlockMatrix, dense_cutoff: int = DENSE_CUTOFF) -> float:
    """Second largest algebraic eigenvalue of a scaled block matrix.

    Blocks up to ``dense_cutoff`` nodes use a dense symmetric solver; larger
    ones run implicitly restarted Lanczos for the two rightmost eigenvalues
    with tolerance 1e-10 and at most ``ceil(30 sqrt(N))`` restarts.
    Complemented blocks are applied through ``(J - I - A) x`` without
    forming the complement.
    """
    n = m.size
    if n < 3:
        raise GraphError(f"block too small for an eigenvalue test: size {n}")
    if m.view.edge_count() == 0:
        # zero matrix; ARPACK cannot start on it
        return 0.0
    if n <= dense_cutoff:
        ev = np.linalg.eigvalsh(m.to_dense())
        return float(ev[-2])
    op = m.linear_operator()
    maxiter = int(math.ceil(30 * math.sqrt(n)))
    try:
        vals, vecs = eigsh(op, k=2, which="LA", tol=EIG_TOL, maxiter=maxiter, v0=_start_vector(n))
    except ArpackNoConvergence as exc:
        vecs = exc.eigenvectors
        vals = exc.eigenvalues
        res = [np.linalg.norm(op @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(vals.size)]
        raise EigenConvergenceError(n, res) from None
    return float(np.min(vals))


def _top_eigenvectors(op, n: int, k: int, dense):
    if dense is not None:
        _, v = np.linalg.eigh(dense)
        return v[:, -k:]
    _, v = eigsh(op, k=k, which="LA", tol=1e-8, v0=_start_vector(n))
    return v


def spectral_embedding(a: AdjacencyMatrix, k: int, regularize="auto", normalize_rows=False):
    """Rows of the top-``k`` eigenvectors of the (regularised) adjacency.

    With ``regularize="auto"`` the operator ``A + (dbar / n) J`` is used when
    the mean degree ``dbar`` is below ``log n`` and plain ``A`` otherwise.
    """
    n = a.n
    dbar = a.mean_degree()
    if regularize == "auto":
        reg = dbar < math.log(n)
    else:
        reg = bool(regularize)
    tau = dbar / n if reg else 0.0
    if n <= CLUSTER_DENSE_CUTOFF or k >= n - 1:
        dense = a.to_dense() + tau
        vecs = _top_eigenvectors(None, n, k, dense)
    else:
        csr = a.csr
        if reg:
            op = LinearOperator((n, n), matvec=lambda x: csr @ np.ravel(x) + tau * np.sum(x), dtype=np.float64)
        else:
            op = csr
        vecs = _top_eigenvectors(op, n, k, None)
    if normalize_rows:
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        vecs = vecs / np.where(norms > 0, norms, 1.0)
    return vecs


def spectral_clustering(
    a: AdjacencyMatrix,
    k: int,
    seed: int,
    *,
    restarts: int = 20,
    max_iter: int = 100,
    regularize="auto",
    normalize_rows: bool = False,
):
    """Partition the nodes of ``a`` into ``k`` groups.

    k-means (k-means++ seeding, ``restarts`` runs, lowest inertia kept) on
    the spectral embedding. Labels are renumbered in order of first
    appearance so the output does not depend on k-means' arbitrary label
    choice.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > a.n:
        raise ValueError(f"k={k} exceeds the number of nodes {a.n}")
    if k == 1:
        return np.zeros(a.n, dtype=np.int64)
    emb = spectral_embedding(a, k, regularize=regularize, normalize_rows=normalize_rows)
    km = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=restarts,
        max_iter=max_iter,
        random_state=np.random.RandomState(seed_to_int(seed)),
    )
    labels = km.fit_predict(emb)
    return canonical_labels(labels)


def canonical_labels(labels):
    """Relabel so labels appear in increasing order of first occurrence."""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[labels]


def seed_to_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(np.random.SeedSequence(seed).generate_state(1)[0])
