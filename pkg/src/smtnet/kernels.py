"""Inner loops shared by graph construction, block statistics and likelihoods.

Each kernel has a numba implementation (``*_nb``) and a vectorised numpy
implementation (``*_np``). The public name is bound to the numba variant
when numba is importable and not disabled through ``SMTNET_DISABLE_NUMBA``.
Integer kernels return identical results on both paths; floating point
kernels agree to rounding.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = [
    "decode_upper_pairs",
    "block_edge_counts",
    "complement_matvec",
    "csr_upper_edges",
]


# -- strict upper triangle decoding ------------------------------------------

def decode_upper_pairs_np(idx, n):
    """Map row-major indices of the strict upper triangle of an ``n x n``
    matrix to ``(row, col)`` pairs."""
    idx = np.asarray(idx, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(float(b) * b - 8.0 * idx)) / 2.0).astype(np.int64)
    i = np.clip(i, 0, max(n - 2, 0))
    # float sqrt can land one row off near row boundaries
    start = i * (b - i) // 2
    over = start > idx
    i[over] -= 1
    start = i * (b - i) // 2
    nxt = (i + 1) * (b - i - 1) // 2
    under = nxt <= idx
    i[under] += 1
    start = i * (b - i) // 2
    j = idx - start + i + 1
    return i, j


@njit
def decode_upper_pairs_nb(idx, n):
    m = idx.shape[0]
    rows = np.empty(m, dtype=np.int64)
    cols = np.empty(m, dtype=np.int64)
    b = 2 * n - 1
    for t in range(m):
        k = idx[t]
        i = np.int64(np.floor((b - np.sqrt(float(b) * b - 8.0 * k)) / 2.0))
        if i < 0:
            i = 0
        if i > n - 2:
            i = n - 2
        while i * (b - i) // 2 > k:
            i -= 1
        while (i + 1) * (b - i - 1) // 2 <= k:
            i += 1
        rows[t] = i
        cols[t] = k - i * (b - i) // 2 + i + 1
    return rows, cols


# -- edge counts between label pairs ------------------------------------------

def block_edge_counts_np(rows, cols, labels, k):
    """Symmetric ``k x k`` table of edge counts; each edge listed once."""
    a = labels[rows]
    b = labels[cols]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    flat = np.bincount(lo * k + hi, minlength=k * k).reshape(k, k)
    out = flat + flat.T
    out[np.diag_indices(k)] = np.diag(flat)
    return out.astype(np.int64)


@njit
def block_edge_counts_nb(rows, cols, labels, k):
    out = np.zeros((k, k), dtype=np.int64)
    for t in range(rows.shape[0]):
        a = labels[rows[t]]
        b = labels[cols[t]]
        out[a, b] += 1
        if a != b:
            out[b, a] += 1
    return out


# -- complement matvec --------------------------------------------------------

def complement_matvec_np(indptr, indices, x, scale):
    """``scale * (J - I - A) @ x`` for a 0/1 CSR matrix ``A`` with no diagonal."""
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(counts.shape[0]), counts)
    ax = np.bincount(rows, weights=x[indices], minlength=x.shape[0])
    return scale * (x.sum() - x - ax)


@njit
def complement_matvec_nb(indptr, indices, x, scale):
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        total += x[i]
    y = np.empty(n)
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += x[indices[p]]
        y[i] = scale * (total - x[i] - acc)
    return y


# -- CSR to upper-triangle edge list -----------------------------------------

def csr_upper_edges_np(indptr, indices):
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(counts.shape[0], dtype=np.int64), counts)
    cols = indices.astype(np.int64)
    keep = rows < cols
    return rows[keep], cols[keep]


@njit
def csr_upper_edges_nb(indptr, indices):
    n = indptr.shape[0] - 1
    m = 0
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] > i:
                m += 1
    rows = np.empty(m, dtype=np.int64)
    cols = np.empty(m, dtype=np.int64)
    t = 0
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j > i:
                rows[t] = i
                cols[t] = j
                t += 1
    return rows, cols


if HAVE_NUMBA:
    decode_upper_pairs = decode_upper_pairs_nb
    block_edge_counts = block_edge_counts_nb
    complement_matvec = complement_matvec_nb
    csr_upper_edges = csr_upper_edges_nb
else:
    decode_upper_pairs = decode_upper_pairs_np
    block_edge_counts = block_edge_counts_np
    complement_matvec = complement_matvec_np
    csr_upper_edges = csr_upper_edges_np
