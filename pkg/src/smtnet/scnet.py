"""Cell-cell networks from single-cell RNA-seq counts.

Pipeline: gene filter on count variance, cell filter on total counts,
log normalisation, Pearson correlation between cells, thresholding into an
adjacency matrix, SMT on the network, and selection of the thresholding
hyperparameters by the SBM log-likelihood of the network and its
complement. A binomial test ranks marker genes for the resulting clusters.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.stats import binom, false_discovery_control

from .graph import AdjacencyMatrix, complement_log_likelihood, sbm_log_likelihood
from .smt import SmtConfig, estimate_k_multi

log = logging.getLogger(__name__)

MODES = ("global-quantile", "row-quantile", "absolute")


class ExpressionError(ValueError):
    pass


@dataclass
class ExpressionMatrix:
    """Genes x cells matrix with labels.

    ``values`` is a scipy CSR matrix. Raw counts are non-negative integers;
    after :func:`filter_and_normalize` the values are log-normalised and
    ``normalized`` is set.
    """

    values: sp.csr_matrix
    genes: list
    cells: list
    normalized: bool = False

    def __post_init__(self):
        self.values = sp.csr_matrix(self.values)
        if self.values.shape != (len(self.genes), len(self.cells)):
            raise ExpressionError(
                f"dimension mismatch: matrix {self.values.shape} vs {len(self.genes)} genes x {len(self.cells)} cells"
            )
        if self.values.nnz and self.values.data.min() < 0:
            raise ExpressionError("negative counts")
        self.genes = dedupe_labels(self.genes)
        self.cells = dedupe_labels(self.cells)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    def total(self) -> float:
        return float(self.values.sum())

    def subset(self, gene_mask=None, cell_mask=None) -> "ExpressionMatrix":
        v = self.values
        genes, cells = self.genes, self.cells
        if gene_mask is not None:
            idx = np.flatnonzero(gene_mask)
            v = v[idx]
            genes = [genes[i] for i in idx]
        if cell_mask is not None:
            idx = np.flatnonzero(cell_mask)
            v = v[:, idx]
            cells = [cells[i] for i in idx]
        return ExpressionMatrix(v, genes, cells, self.normalized)


def dedupe_labels(labels) -> list:
    """Append ``-1``, ``-2``, ... to repeated labels."""
    seen = {}
    out = []
    taken = set(labels)
    for lab in labels:
        lab = str(lab)
        if lab not in seen:
            seen[lab] = 0
            out.append(lab)
            continue
        while True:
            seen[lab] += 1
            cand = f"{lab}-{seen[lab]}"
            if cand not in taken:
                break
        taken.add(cand)
        out.append(cand)
    return out


# -- I/O -------------------------------------------------------------------------------

def _sidecar(path: Path, kinds: Sequence[str]) -> Optional[Path]:
    stem = path.name[: -len(".mtx")] if path.name.endswith(".mtx") else path.stem
    for kind in kinds:
        for cand in (path.with_name(f"{stem}.{kind}.tsv"), path.with_name(f"{kind}.tsv")):
            if cand.exists():
                return cand
    return None


def _read_labels(path: Path, column: int = 0) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            out.append(parts[column] if len(parts) > column else parts[0])
    return out


def _parse_count(tok: str, lineno: int, integer: bool = True) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ExpressionError(f"line {lineno}: non-numeric value {tok!r}") from None
    if not math.isfinite(v):
        raise ExpressionError(f"line {lineno}: non-finite value {tok!r}")
    if v < 0:
        raise ExpressionError(f"line {lineno}: negative count {tok!r}")
    if integer and v != int(v):
        raise ExpressionError(f"line {lineno}: count {tok!r} is not an integer")
    return v


def read_mtx(path) -> sp.csr_matrix:
    """Stream a Matrix Market coordinate file of non-negative values.

    ``integer`` files must hold whole counts; ``real`` files (for example
    already normalised matrices) may hold any non-negative value.
    """
    path = Path(path)
    rows, cols, vals = [], [], []
    shape = None
    nnz = None
    integer = True
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if lineno == 1:
                if not s.lower().startswith("%%matrixmarket"):
                    raise ExpressionError("line 1: missing %%MatrixMarket header")
                parts = s.lower().split()
                if len(parts) < 5 or parts[1] != "matrix" or parts[2] != "coordinate":
                    raise ExpressionError("line 1: only 'matrix coordinate' files are supported")
                if parts[3] not in ("integer", "real"):
                    raise ExpressionError(f"line 1: unsupported field {parts[3]!r}")
                integer = parts[3] == "integer"
                if parts[4] != "general":
                    raise ExpressionError(f"line 1: unsupported symmetry {parts[4]!r}")
                continue
            if not s or s.startswith("%"):
                continue
            parts = s.split()
            if shape is None:
                if len(parts) != 3:
                    raise ExpressionError(f"line {lineno}: expected 'rows cols nnz'")
                try:
                    shape = (int(parts[0]), int(parts[1]))
                    nnz = int(parts[2])
                except ValueError:
                    raise ExpressionError(f"line {lineno}: malformed size line") from None
                continue
            if len(parts) != 3:
                raise ExpressionError(f"line {lineno}: expected 'row col value', got {s!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise ExpressionError(f"line {lineno}: malformed index") from None
            if not (1 <= i <= shape[0] and 1 <= j <= shape[1]):
                raise ExpressionError(f"line {lineno}: index ({i}, {j}) outside {shape}")
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(_parse_count(parts[2], lineno, integer))
    if shape is None:
        raise ExpressionError("missing size line")
    if len(vals) != nnz:
        raise ExpressionError(f"expected {nnz} entries, found {len(vals)}")
    m = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=shape)
    m.sum_duplicates()
    return m


def read_dense_csv(path):
    """Genes x cells CSV: header row of cell labels, first column gene labels."""
    genes, data = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ExpressionError("empty CSV file") from None
        cells = header[1:]
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(cells) + 1:
                raise ExpressionError(f"line {lineno}: expected {len(cells) + 1} fields, got {len(row)}")
            genes.append(row[0])
            data.append([_parse_count(t, lineno) for t in row[1:]])
    arr = np.asarray(data, dtype=np.float64).reshape(len(genes), len(cells))
    return sp.csr_matrix(arr), genes, cells


def load_expression(path, format=None, genes_path=None, cells_path=None) -> ExpressionMatrix:
    """Read a count matrix.

    ``format`` is ``"mtx"`` (Matrix Market triplets, genes in rows) or
    ``"csv"``; by default it follows the file suffix. For ``mtx`` the gene
    and cell labels come from ``<stem>.genes.tsv`` / ``genes.tsv`` /
    ``features.tsv`` and ``<stem>.barcodes.tsv`` / ``barcodes.tsv`` next to
    the matrix unless given explicitly; a two-column gene file contributes
    its second column.
    """
    path = Path(path)
    fmt = format or ("mtx" if path.suffix == ".mtx" else "csv" if path.suffix == ".csv" else None)
    if fmt == "csv":
        values, genes, cells = read_dense_csv(path)
        return ExpressionMatrix(values, genes, cells)
    if fmt != "mtx":
        raise ExpressionError(f"cannot infer format of {path}; pass format='mtx' or 'csv'")
    values = read_mtx(path)
    gp = Path(genes_path) if genes_path else _sidecar(path, ("genes", "features"))
    cp = Path(cells_path) if cells_path else _sidecar(path, ("barcodes",))
    genes = _read_labels(gp, 1) if gp else [f"gene{i}" for i in range(values.shape[0])]
    cells = _read_labels(cp, 0) if cp else [f"cell{j}" for j in range(values.shape[1])]
    return ExpressionMatrix(values, genes, cells)


def write_expression(x: ExpressionMatrix, path, format=None) -> None:
    path = Path(path)
    fmt = format or ("mtx" if path.suffix == ".mtx" else "csv")
    if fmt == "csv":
        dense = x.values.toarray()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gene", *x.cells])
            for g, row in zip(x.genes, dense):
                w.writerow([g, *(_fmt_num(v) for v in row)])
        return
    coo = x.values.tocoo()
    order = np.lexsort((coo.row, coo.col))
    field_type = "real" if x.normalized else "integer"
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate {field_type} general\n")
        fh.write(f"{x.n_genes} {x.n_cells} {coo.nnz}\n")
        for t in order:
            fh.write(f"{coo.row[t] + 1} {coo.col[t] + 1} {_fmt_num(coo.data[t])}\n")
    stem = path.name[: -len(".mtx")] if path.name.endswith(".mtx") else path.stem
    with open(path.with_name(f"{stem}.genes.tsv"), "w") as fh:
        fh.writelines(f"{g}\n" for g in x.genes)
    with open(path.with_name(f"{stem}.barcodes.tsv"), "w") as fh:
        fh.writelines(f"{c}\n" for c in x.cells)


def _fmt_num(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# -- filtering and normalisation ---------------------------------------------------------

def gene_variances(values: sp.csr_matrix):
    n = values.shape[1]
    mean = np.asarray(values.mean(axis=1)).ravel()
    sq = np.asarray(values.multiply(values).mean(axis=1)).ravel()
    return np.maximum(sq - mean * mean, 0.0) * n / max(n - 1, 1)


def filter_and_normalize(
    x: ExpressionMatrix,
    eta: float = 0.0,
    cell_window=(0.0, 1.0),
    log_base: float = 2.0,
    scale: float = 1e4,
) -> ExpressionMatrix:
    """Drop genes by variance quantile and cells by total count, then log-normalise.

    Genes whose variance lies below the ``eta`` quantile or above the
    ``1 - eta`` quantile are removed. Cells whose total count (over the
    remaining genes) falls outside the ``cell_window`` quantiles are removed.
    Each remaining entry becomes ``log(1 + scale * z / cell_total)`` in base
    ``log_base`` (pass ``math.e`` for the natural log). Already normalised
    input is filtered but not normalised again.
    """
    if not 0.0 <= eta < 0.5:
        raise ExpressionError(f"eta must lie in [0, 0.5), got {eta}")
    lo_q, hi_q = cell_window
    if not 0.0 <= lo_q <= hi_q <= 1.0:
        raise ExpressionError(f"invalid cell window {cell_window}")
    var = gene_variances(x.values)
    if var.size == 0:
        raise ExpressionError("empty after filtering: no genes")
    vlo, vhi = np.quantile(var, [eta, 1.0 - eta])
    gene_keep = (var >= vlo) & (var <= vhi)
    if not gene_keep.any():
        raise ExpressionError("empty after filtering: no genes left")
    y = x.subset(gene_mask=gene_keep)
    totals = np.asarray(y.values.sum(axis=0)).ravel()
    tlo, thi = np.quantile(totals, [lo_q, hi_q])
    cell_keep = (totals >= tlo) & (totals <= thi)
    if not cell_keep.any():
        raise ExpressionError("empty after filtering: no cells left")
    y = y.subset(cell_mask=cell_keep)
    if x.normalized:
        return y
    totals = np.asarray(y.values.sum(axis=0)).ravel()
    inv = np.divide(scale, totals, out=np.zeros_like(totals), where=totals > 0)
    v = sp.csr_matrix(y.values @ sp.diags(inv))
    v.data = np.log1p(v.data) / math.log(log_base)
    return ExpressionMatrix(v, y.genes, y.cells, normalized=True)


# -- correlation networks ----------------------------------------------------------------

def cell_correlation(xn: ExpressionMatrix):
    if xn.n_cells < 3:
        raise ExpressionError(f"need at least 3 cells, got {xn.n_cells}")
    X = xn.values.T.toarray()
    sd = X.std(axis=1)
    flat = np.flatnonzero(sd == 0)
    if flat.size:
        raise ExpressionError(f"cell {xn.cells[flat[0]]!r} has zero variance across genes")
    return np.corrcoef(X)


def threshold_correlation(R, kappa: float, mode: str = "row-quantile") -> AdjacencyMatrix:
    """Adjacency from a correlation matrix.

    ``global-quantile``: edge iff ``R_ij`` exceeds the ``kappa`` quantile of
    all off-diagonal entries. ``row-quantile``: edge iff ``R_ij`` exceeds the
    ``kappa`` quantile of row ``i`` or of row ``j`` (off-diagonal entries).
    ``absolute``: edge iff ``R_ij >= kappa``.
    """
    n = R.shape[0]
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "absolute":
        if not -1.0 <= kappa <= 1.0:
            raise ValueError(f"absolute threshold must lie in [-1, 1], got {kappa}")
    elif not 0.0 <= kappa <= 1.0:
        raise ValueError(f"quantile level must lie in [0, 1], got {kappa}")
    off = ~np.eye(n, dtype=bool)
    if mode == "global-quantile":
        iu = np.triu_indices(n, 1)
        E = R > np.quantile(R[iu], kappa)
    elif mode == "row-quantile":
        rows = R[off].reshape(n, n - 1)
        q = np.quantile(rows, kappa, axis=1)
        E = R > q[:, None]
        E = E | E.T
    else:
        E = R >= kappa
    E &= off
    r, c = np.nonzero(np.triu(E, 1))
    return AdjacencyMatrix(n, r, c)


def correlation_adjacency(xn: ExpressionMatrix, kappa: float, mode: str = "row-quantile") -> AdjacencyMatrix:
    return threshold_correlation(cell_correlation(xn), kappa, mode)


# -- grid selection ------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtractionGrid:
    etas: tuple = (0.0, 0.05, 0.1, 0.15, 0.2)
    kappas: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    modes: tuple = ("row-quantile",)
    alphas: tuple = (0.01, 0.05)
    cell_windows: tuple = ((0.0, 1.0),)
    log_base: float = 2.0

    def __post_init__(self):
        for name in ("etas", "kappas", "modes", "alphas", "cell_windows"):
            v = getattr(self, name)
            if isinstance(v, (str, bytes)) or not isinstance(v, (list, tuple)):
                raise ValueError(f"{name} must be a list")
            if not v:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, tuple(tuple(w) if isinstance(w, list) else w for w in v))
        for e in self.etas:
            if not 0.0 <= e < 0.5:
                raise ValueError(f"eta {e} outside [0, 0.5)")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
            for kap in self.kappas:
                lo = -1.0 if m == "absolute" else 0.0
                if not lo <= kap <= 1.0:
                    raise ValueError(f"kappa {kap} invalid for mode {m}")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha {a} outside (0, 1)")
        for w in self.cell_windows:
            if len(w) != 2 or not 0.0 <= w[0] <= w[1] <= 1.0:
                raise ValueError(f"invalid cell window {w}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionGrid":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**d)

    def size(self) -> int:
        return len(self.etas) * len(self.kappas) * len(self.modes) * len(self.alphas) * len(self.cell_windows)


@dataclass
class ExtractionResult:
    chosen: dict
    k_hat: int
    membership: np.ndarray
    cells: list
    score: float
    table: list
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen,
            "k_hat": self.k_hat,
            "score": self.score,
            "cells": list(self.cells),
            "membership": self.membership.tolist(),
            "table": self.table,
            "failures": self.failures,
            "score_definition": "[loglik(A; g, G) + loglik(complement(A); g, 1 - G)] / C(n_cells, 2)",
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def joint_score(a: AdjacencyMatrix, membership, g_hat) -> float:
    """Network plus complement log-likelihood per node pair."""
    total, _ = sbm_log_likelihood(a, membership, g_hat)
    ctotal, _ = complement_log_likelihood(a, membership, g_hat)
    pairs = math.comb(a.n, 2)
    return (total + ctotal) / pairs


def grid_select(x: ExpressionMatrix, grid: ExtractionGrid = ExtractionGrid(), cfg: SmtConfig = SmtConfig()) -> ExtractionResult:
    """Choose thresholding hyperparameters by SBM likelihood.

    Every grid point builds a network, runs SMT and is scored by
    :func:`joint_score` at the SMT estimate. The best score wins; ties go
    to the smaller ``k_hat``, then the smaller ``kappa``. Grid points whose
    network or SMT run fails are recorded in ``failures`` and skipped.
    """
    table, failures, best = [], [], None
    for window in grid.cell_windows:
        for eta in grid.etas:
            point = {"eta": eta, "cell_window": list(window)}
            try:
                xn = filter_and_normalize(x, eta, window, log_base=grid.log_base)
                R = cell_correlation(xn)
            except ExpressionError as exc:
                for mode in grid.modes:
                    for kappa in grid.kappas:
                        for alpha in grid.alphas:
                            failures.append({**point, "mode": mode, "kappa": kappa, "alpha": alpha, "error": str(exc)})
                continue
            for mode in grid.modes:
                for kappa in grid.kappas:
                    here = {**point, "mode": mode, "kappa": kappa}
                    try:
                        a = threshold_correlation(R, kappa, mode)
                        max_k = max(1, min(cfg.max_k, a.n // 3))
                        local = SmtConfig(**{**asdict(cfg), "max_k": max_k})
                        results = estimate_k_multi(a, local, grid.alphas)
                    except Exception as exc:
                        for alpha in grid.alphas:
                            failures.append({**here, "alpha": alpha, "error": f"{type(exc).__name__}: {exc}"})
                        continue
                    for alpha in grid.alphas:
                        res = results[float(alpha)]
                        if res.k_hat is None:
                            failures.append({**here, "alpha": alpha, "error": "no acceptance"})
                            continue
                        score = joint_score(a, res.membership, res.g_hat)
                        row = {
                            **here,
                            "alpha": alpha,
                            "n_cells": a.n,
                            "n_edges": a.n_edges,
                            "k_hat": res.k_hat,
                            "score": score,
                        }
                        table.append(row)
                        key = (score, -res.k_hat, -kappa)
                        if best is None or key > best[0]:
                            best = (key, row, res.membership, xn.cells)
    if best is None:
        raise ExpressionError(f"every grid point failed ({len(failures)} failures)")
    _, row, membership, cells = best
    chosen = {k: row[k] for k in ("eta", "cell_window", "mode", "kappa", "alpha")}
    return ExtractionResult(chosen, row["k_hat"], membership, list(cells), row["score"], table, failures)


# -- marker genes ----------------------------------------------------------------------------

MARKER_COLUMNS = ["cluster", "gene", "in_rate", "out_rate", "p_value", "p_adjusted", "log2_fold_change"]


def gene_markers(x: ExpressionMatrix, membership, min_cluster_size: int = 3, max_p_adjusted: Optional[float] = None) -> pd.DataFrame:
    """One-sided binomial test for genes expressed more often inside a cluster.

    A cell expresses a gene when its count is positive. For cluster ``c``
    the number of expressing cells in ``c`` is tested against
    ``Binomial(|c|, r)`` where ``r`` is the expressing fraction among cells
    outside ``c``. P-values are Benjamini-Hochberg adjusted over genes
    within each cluster. Rows are ordered by cluster, adjusted p-value and
    decreasing log2 fold change of the expressing fractions (with a 0.5
    pseudo-count).
    """
    g = np.asarray(membership)
    if g.shape != (x.n_cells,):
        raise ExpressionError(f"membership length {g.shape[0]} does not match {x.n_cells} cells")
    labels = np.unique(g)
    if labels.size < 2:
        raise ExpressionError("need at least two clusters")
    expressed = (x.values > 0).astype(np.float64).tocsc()
    total_expr = np.asarray(expressed.sum(axis=1)).ravel()
    frames = []
    for c in labels:
        in_c = g == c
        n_in = int(in_c.sum())
        if n_in < min_cluster_size:
            log.warning("cluster %s has %d cells; markers omitted", c, n_in)
            continue
        n_out = x.n_cells - n_in
        k_in = np.asarray(expressed[:, np.flatnonzero(in_c)].sum(axis=1)).ravel()
        k_out = total_expr - k_in
        in_rate = k_in / n_in
        out_rate = k_out / n_out if n_out else np.zeros_like(k_in)
        pval = binom.sf(k_in - 1, n_in, out_rate)
        padj = false_discovery_control(pval, method="bh")
        lfc = np.log2((k_in + 0.5) / (n_in + 1.0)) - np.log2((k_out + 0.5) / (n_out + 1.0))
        frames.append(
            pd.DataFrame(
                {
                    "cluster": c,
                    "gene": x.genes,
                    "in_rate": in_rate,
                    "out_rate": out_rate,
                    "p_value": pval,
                    "p_adjusted": padj,
                    "log2_fold_change": lfc,
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=MARKER_COLUMNS)
    df = pd.concat(frames, ignore_index=True)
    if max_p_adjusted is not None:
        df = df[df["p_adjusted"] <= max_p_adjusted]
    df = df.sort_values(["cluster", "p_adjusted", "log2_fold_change"], ascending=[True, True, False], kind="mergesort")
    return df.reset_index(drop=True)[MARKER_COLUMNS]


# -- synthetic data ----------------------------------------------------------------------------

def simulate_expression(
    n_cells: int = 300,
    n_groups: int = 3,
    n_genes: int = 1000,
    markers_per_group: int = 50,
    fold: float = 4.0,
    seed=0,
):
    """Poisson counts with group-specific up-regulated marker genes.

    Returns ``(matrix, labels, marker_genes)`` where ``marker_genes[c]``
    lists the indices of group ``c``'s planted markers.
    """
    rng = np.random.default_rng(seed)
    base = rng.lognormal(mean=0.0, sigma=1.0, size=n_genes)
    labels = np.repeat(np.arange(n_groups), -(-n_cells // n_groups))[:n_cells]
    labels = rng.permutation(labels)
    genes = rng.permutation(n_genes)
    markers = [np.sort(genes[c * markers_per_group:(c + 1) * markers_per_group]) for c in range(n_groups)]
    means = np.tile(base, (n_groups, 1))
    for c, m in enumerate(markers):
        means[c, m] *= fold
    size = rng.lognormal(mean=0.0, sigma=0.2, size=n_cells)
    lam = means[labels].T * size[None, :]
    counts = rng.poisson(lam)
    x = ExpressionMatrix(
        sp.csr_matrix(counts.astype(np.float64)),
        [f"g{i}" for i in range(n_genes)],
        [f"c{j}" for j in range(n_cells)],
    )
    return x, labels, markers
