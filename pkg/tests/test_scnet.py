import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.metrics import adjusted_rand_score

from smtnet.scnet import (
    MARKER_COLUMNS,
    ExpressionError,
    ExpressionMatrix,
    ExtractionGrid,
    correlation_adjacency,
    dedupe_labels,
    filter_and_normalize,
    gene_markers,
    grid_select,
    joint_score,
    load_expression,
    simulate_expression,
    threshold_correlation,
    write_expression,
)
from smtnet.smt import SmtConfig


def _matrix(counts, genes=None, cells=None):
    counts = np.asarray(counts, dtype=float)
    genes = genes or [f"g{i}" for i in range(counts.shape[0])]
    cells = cells or [f"c{j}" for j in range(counts.shape[1])]
    return ExpressionMatrix(sp.csr_matrix(counts), genes, cells)


# -- I/O ---------------------------------------------------------------------------------

def test_csv_example(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("gene,a,b\ng1,1,0\ng2,0,2\n")
    x = load_expression(p)
    assert x.total() == 3 and x.genes == ["g1", "g2"] and x.cells == ["a", "b"]


def test_mtx_five_nonzeros(tmp_path):
    p = tmp_path / "m.mtx"
    p.write_text("%%MatrixMarket matrix coordinate integer general\n% comment\n3 4 5\n1 1 2\n2 2 1\n3 3 7\n1 4 1\n3 1 3\n")
    x = load_expression(p)
    assert x.values.nnz == 5 and x.shape == (3, 4) and x.total() == 14


@pytest.mark.parametrize("fmt", ["mtx", "csv"])
def test_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(0)
    counts = sp.random(40, 25, density=0.2, random_state=rng, data_rvs=lambda k: rng.integers(1, 50, k)).toarray()
    x = _matrix(counts)
    path = tmp_path / f"x.{fmt}"
    write_expression(x, path)
    y = load_expression(path)
    np.testing.assert_array_equal(y.values.toarray(), counts)
    assert y.genes == x.genes and y.cells == x.cells


def test_normalized_mtx_round_trip(tmp_path):
    x, _, _ = simulate_expression(n_cells=30, n_genes=50, markers_per_group=5, seed=1)
    xn = filter_and_normalize(x)
    write_expression(xn, tmp_path / "n.mtx")
    y = load_expression(tmp_path / "n.mtx")
    np.testing.assert_allclose(y.values.toarray(), xn.values.toarray(), rtol=1e-15)


def test_tenx_style_sidecars(tmp_path):
    (tmp_path / "matrix.mtx").write_text("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 1\n2 2 4\n")
    (tmp_path / "features.tsv").write_text("ENSG1\tACTB\tGene Expression\nENSG2\tGAPDH\tGene Expression\n")
    (tmp_path / "barcodes.tsv").write_text("AAAC-1\nAAAG-1\n")
    x = load_expression(tmp_path / "matrix.mtx")
    assert x.genes == ["ACTB", "GAPDH"] and x.cells == ["AAAC-1", "AAAG-1"]


@pytest.mark.parametrize(
    "body, message",
    [
        ("%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 -3\n", "line 3: negative"),
        ("%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 1.5\n", "line 3: count"),
        ("%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 1\n", "line 3: index"),
        ("%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1\n", "line 3: expected"),
        ("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 1\n", "expected 2 entries"),
        ("not a header\n", "line 1"),
    ],
)
def test_mtx_errors(tmp_path, body, message):
    p = tmp_path / "bad.mtx"
    p.write_text(body)
    with pytest.raises(ExpressionError, match=message):
        load_expression(p)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("gene,a,b\ng1,1\n")
    with pytest.raises(ExpressionError, match="line 2"):
        load_expression(p)
    p.write_text("gene,a\ng1,x\n")
    with pytest.raises(ExpressionError, match="line 2: non-numeric"):
        load_expression(p)


def test_dimension_mismatch_and_dedupe():
    with pytest.raises(ExpressionError, match="dimension mismatch"):
        _matrix([[1, 2]], genes=["a", "b"])
    assert dedupe_labels(["a", "b", "a", "a", "a-1"]) == ["a", "b", "a-2", "a-3", "a-1"]
    assert len(set(_matrix([[1], [2]], genes=["x", "x"]).genes)) == 2


# -- filtering -----------------------------------------------------------------------------

def test_no_filter_is_pure_normalization():
    x, _, _ = simulate_expression(n_cells=40, n_genes=80, markers_per_group=5, seed=2)
    xn = filter_and_normalize(x, 0.0, (0.0, 1.0))
    assert xn.shape == x.shape and xn.normalized
    dense, raw = xn.values.toarray(), x.values.toarray()
    np.testing.assert_allclose(dense, np.log2(1 + 1e4 * raw / raw.sum(axis=0)), rtol=1e-12)
    # a second pass removes nothing and leaves values unchanged
    again = filter_and_normalize(xn, 0.0, (0.0, 1.0))
    np.testing.assert_array_equal(again.values.toarray(), dense)


def test_normalization_arithmetic():
    counts = np.zeros((3, 2))
    counts[0, 0], counts[1, 0] = 1, 9999
    counts[:, 1] = [3, 4, 5]
    xn = filter_and_normalize(_matrix(counts))
    assert xn.values[0, 0] == pytest.approx(1.0)
    xe = filter_and_normalize(_matrix(counts), log_base=math.e)
    assert xe.values[0, 0] == pytest.approx(math.log(2))


def test_zero_variance_genes_removed():
    rng = np.random.default_rng(3)
    counts = rng.poisson(5.0, size=(100, 30)).astype(float)
    counts[:10] = 4.0
    xn = filter_and_normalize(_matrix(counts), eta=0.15)
    assert not any(g in xn.genes for g in [f"g{i}" for i in range(10)])


def test_cell_window():
    counts = np.tile(np.arange(1, 21, dtype=float), (5, 1))
    xn = filter_and_normalize(_matrix(counts), cell_window=(0.25, 0.75))
    totals = [int(c[1:]) + 1 for c in xn.cells]
    assert min(totals) >= 5 and max(totals) <= 16 and len(totals) < 20


def test_filter_errors():
    with pytest.raises(ExpressionError):
        filter_and_normalize(_matrix([[1, 2]]), eta=0.5)
    with pytest.raises(ExpressionError):
        filter_and_normalize(_matrix([[1, 2]]), cell_window=(0.8, 0.2))


# -- correlation networks ------------------------------------------------------------------

def _two_group_profiles(n=60, genes=3000, rho=0.8, seed=0):
    rng = np.random.default_rng(seed)
    groups = np.repeat([0, 1], n // 2)
    shared = rng.standard_normal((2, genes))
    noise = rng.standard_normal((n, genes))
    X = math.sqrt(rho) * shared[groups] + math.sqrt(1 - rho) * noise
    return X, groups


def test_absolute_two_cliques():
    X, groups = _two_group_profiles()
    a = threshold_correlation(np.corrcoef(X), 0.5, "absolute")
    d = a.to_dense()
    same = groups[:, None] == groups[None, :]
    assert np.all(d[~same] == 0)
    assert d[same].sum() == same.sum() - 60  # everything but the diagonal


def test_absolute_zero_on_positive_correlations():
    R = np.full((10, 10), 0.3)
    np.fill_diagonal(R, 1.0)
    assert threshold_correlation(R, 0.0, "absolute").n_edges == 45


def test_global_quantile_density():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((200, 50))
    a = threshold_correlation(np.corrcoef(X), 0.99, "global-quantile")
    assert a.n_edges / (200 * 199 / 2) == pytest.approx(0.01, abs=0.005)


@pytest.mark.parametrize("mode", ["global-quantile", "row-quantile", "absolute"])
def test_adjacency_symmetric_zero_diagonal(mode):
    X, _ = _two_group_profiles(n=30, genes=200, rho=0.3, seed=2)
    d = threshold_correlation(np.corrcoef(X), 0.5, mode).to_dense()
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)


def test_row_quantile_or_symmetrization():
    X, _ = _two_group_profiles(n=40, genes=100, rho=0.2, seed=4)
    R = np.corrcoef(X)
    d = threshold_correlation(R, 0.9, "row-quantile").to_dense()
    rows = R[~np.eye(40, dtype=bool)].reshape(40, 39)
    q = np.quantile(rows, 0.9, axis=1)
    E = (R > q[:, None]) & ~np.eye(40, dtype=bool)
    np.testing.assert_array_equal(d.astype(bool), E | E.T)
    assert np.all(d.sum(1) >= 3)


def test_zero_variance_cell_named():
    counts = np.array([[1, 2, 3, 5], [4, 5, 6, 5], [0, 1, 0, 5]], dtype=float)
    xn = ExpressionMatrix(sp.csr_matrix(counts), ["a", "b", "c"], ["w", "x", "y", "flat"], normalized=True)
    with pytest.raises(ExpressionError, match="'flat'"):
        correlation_adjacency(xn, 0.5)


def test_mode_validation():
    R = np.eye(5)
    with pytest.raises(ValueError):
        threshold_correlation(R, 0.5, "median")
    with pytest.raises(ValueError):
        threshold_correlation(R, 1.5, "row-quantile")
    with pytest.raises(ValueError):
        threshold_correlation(R, -2.0, "absolute")


# -- grid selection -----------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        ExtractionGrid(etas=(0.6,))
    with pytest.raises(ValueError):
        ExtractionGrid(kappas=())
    with pytest.raises(ValueError):
        ExtractionGrid.from_dict({"kapas": [0.5]})
    with pytest.raises(ValueError):
        ExtractionGrid(modes=("absolute",), kappas=(1.5,))
    assert ExtractionGrid.from_dict({"kappas": [0.8, 0.9]}).size() == 5 * 2 * 1 * 2 * 1


def test_one_point_grid():
    x, labels, _ = simulate_expression(n_cells=90, n_genes=300, markers_per_group=30, seed=5)
    grid = ExtractionGrid(etas=(0.0,), kappas=(0.9,), alphas=(0.05,))
    res = grid_select(x, grid, SmtConfig(max_k=6))
    assert res.chosen == {"eta": 0.0, "cell_window": [0.0, 1.0], "mode": "row-quantile", "kappa": 0.9, "alpha": 0.05}
    assert len(res.table) == 1 and res.table[0]["k_hat"] == res.k_hat
    doc = json.loads(res.to_json())
    assert doc["k_hat"] == res.k_hat and len(doc["membership"]) == len(doc["cells"])


def test_grid_deterministic_and_best_score():
    x, _, _ = simulate_expression(n_cells=90, n_genes=300, markers_per_group=30, seed=6)
    grid = ExtractionGrid(etas=(0.0, 0.1), kappas=(0.7, 0.9), alphas=(0.01, 0.05))
    r1 = grid_select(x, grid, SmtConfig(max_k=6))
    r2 = grid_select(x, grid, SmtConfig(max_k=6))
    assert r1.to_json() == r2.to_json()
    assert r1.score == max(row["score"] for row in r1.table)


def test_joint_score_invariant_to_cell_order():
    x, _, _ = simulate_expression(n_cells=60, n_genes=200, markers_per_group=20, seed=7)
    xn = filter_and_normalize(x)
    a = correlation_adjacency(xn, 0.8)
    g = np.random.default_rng(0).integers(0, 3, a.n)
    from smtnet.graph import AdjacencyMatrix, estimate_block_probs

    perm = np.random.default_rng(1).permutation(a.n)
    b = AdjacencyMatrix.from_dense(a.to_dense()[np.ix_(perm, perm)])
    s1 = joint_score(a, g, estimate_block_probs(a, g))
    s2 = joint_score(b, g[perm], estimate_block_probs(b, g[perm]))
    assert s1 == pytest.approx(s2, rel=1e-12)


def test_all_failed_grid():
    x = _matrix(np.ones((5, 4)))
    with pytest.raises(ExpressionError, match="every grid point failed"):
        grid_select(x, ExtractionGrid(etas=(0.0,), kappas=(0.5,), alphas=(0.05,)))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_synthetic_three_groups(seed):
    x, labels, _ = simulate_expression(seed=seed)
    res = grid_select(x, ExtractionGrid(), SmtConfig())
    idx = [int(c[1:]) for c in res.cells]
    assert res.k_hat == 3
    assert adjusted_rand_score(res.membership, labels[idx]) >= 0.9


# -- markers ------------------------------------------------------------------------------

def test_marker_extreme_case():
    counts = np.zeros((3, 20))
    counts[0, :10] = 5  # expressed in cluster 0 only
    counts[1] = 1  # expressed everywhere
    counts[2, ::2] = 2
    g = np.repeat([0, 1], 10)
    df = gene_markers(_matrix(counts), g)
    assert list(df.columns) == MARKER_COLUMNS
    top = df[df.cluster == 0].iloc[0]
    assert top.gene == "g0" and top.p_value < 1e-6
    flat = df[(df.cluster == 0) & (df.gene == "g1")].iloc[0]
    assert flat.p_adjusted == pytest.approx(1.0)
    assert "g1" not in gene_markers(_matrix(counts), g, max_p_adjusted=0.05).gene.tolist()


def test_marker_sorting_and_small_clusters(caplog):
    rng = np.random.default_rng(0)
    counts = rng.poisson(1.0, size=(30, 25))
    g = np.array([0] * 12 + [1] * 11 + [2] * 2)
    df = gene_markers(_matrix(counts), g)
    assert set(df.cluster) == {0, 1}
    assert "cluster 2" in caplog.text
    for _, sub in df.groupby("cluster"):
        assert sub.p_adjusted.is_monotonic_increasing
    with pytest.raises(ExpressionError):
        gene_markers(_matrix(counts), np.zeros(25, int))


def test_planted_markers_recovered():
    rng = np.random.default_rng(2)
    n_cells, n_genes = 150, 200
    g = np.repeat([0, 1, 2], 50)
    planted = {c: list(range(c * 10, c * 10 + 10)) for c in range(3)}
    expr = rng.random((n_genes, n_cells)) < 0.3
    for c, genes in planted.items():
        for j in genes:
            expr[j] = np.where(g == c, rng.random(n_cells) < 0.9, rng.random(n_cells) < 0.1)
    df = gene_markers(_matrix(expr.astype(float)), g)
    for c, genes in planted.items():
        top = df[df.cluster == c].gene.head(10).tolist()
        assert set(top) == {f"g{j}" for j in genes}
