import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smtnet.graph import AdjacencyMatrix, BlockModel, GraphError, extract_blocks, sample_sbm, scaled_block
from smtnet.smt import (
    SmtConfig,
    SmtError,
    _decide,
    BlockTestRecord,
    block_statistic,
    bonferroni_threshold,
    estimate_k,
    estimate_k_multi,
    smt_test_at_k,
)
from smtnet.spectral import second_largest_eigenvalue
from smtnet.tracy_widom import tw1_quantile


def _er_view(n, p, seed):
    a = sample_sbm(BlockModel(np.zeros(n, int), [[p]]), seed)
    return extract_blocks(a, np.zeros(n, int))[0]


def test_config_validation():
    for bad in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            SmtConfig(alpha=bad)
    with pytest.raises(ValueError):
        SmtConfig(max_k=0)
    with pytest.raises(ValueError):
        SmtConfig(regularize="sometimes")


def test_statistic_formula():
    v = _er_view(200, 0.2, 0)
    p = v.edge_count() / (200 * 199 / 2)
    rec = block_statistic(v, p)
    lam2 = second_largest_eigenvalue(scaled_block(v, p))
    assert not rec.used_complement
    assert rec.statistic == pytest.approx(200 ** (2 / 3) * (lam2 - 2 - 1 / (200 * p)), rel=1e-12)
    assert rec.mu == pytest.approx(200 * p)


def test_dense_block_uses_complement():
    v = _er_view(120, 0.7, 1)
    rec = block_statistic(v, 0.7)
    assert rec.used_complement
    direct = block_statistic(v.complement(), 0.3)
    assert not direct.used_complement
    assert rec.statistic == pytest.approx(direct.statistic, rel=1e-10)
    # shift written as 1 / (N - mu) with mu = N p_hat
    lam2 = second_largest_eigenvalue(scaled_block(v.complement(), 0.3))
    assert rec.statistic == pytest.approx(120 ** (2 / 3) * (lam2 - 2 - 1 / (120 - rec.mu)), rel=1e-10)


def test_empty_block_accepts():
    v = extract_blocks(AdjacencyMatrix(90), np.zeros(90, int))[0]
    rec = block_statistic(v, 0.0)
    mu = 90 * rec.p_hat
    assert rec.statistic == pytest.approx(90 ** (2 / 3) * (-2 - 1 / mu))
    assert rec.statistic < 0
    _, _, accepted = _decide([rec], 1, 0.05)
    assert accepted


def test_block_too_small_for_statistic():
    a = AdjacencyMatrix(2, [0], [1])
    with pytest.raises(GraphError):
        block_statistic(extract_blocks(a, [0, 0])[0], 1.0)


@given(st.integers(3, 40), st.floats(0.0, 1.0), st.integers(0, 10_000))
@settings(max_examples=200, deadline=None)
def test_complement_selection_property(n, p, seed):
    v = _er_view(n, p, seed)
    p_hat = v.edge_count() / (n * (n - 1) / 2)
    rec = block_statistic(v, p_hat)
    assert rec.used_complement == (rec.p_hat > 0.5)
    assert min(rec.p_hat, 1 - rec.p_hat) <= 0.5
    assert np.isfinite(rec.statistic)


@pytest.mark.parametrize("k", [1, 2, 3, 7, 20])
@pytest.mark.parametrize("alpha", [0.01, 0.05])
def test_bonferroni_threshold(alpha, k):
    assert bonferroni_threshold(alpha, k) == tw1_quantile(1 - alpha / k)


def test_decide_rules():
    ok = BlockTestRecord(0, 50, 0.2, False, 10.0, -1.0)
    bad = BlockTestRecord(1, 50, 0.2, False, 10.0, 5.0)
    tiny = BlockTestRecord(2, 2, float("nan"), False, float("nan"), float("nan"), skipped="block size 2 < 3")
    assert _decide([ok], 2, 0.05)[2]
    thr, stat, acc = _decide([ok, bad], 2, 0.05)
    assert stat == 5.0 and not acc and thr == bonferroni_threshold(0.05, 2)
    assert not _decide([ok, tiny], 2, 0.05)[2]
    with pytest.raises(SmtError, match="block 2"):
        _decide([tiny], 2, 0.05)


def test_candidate_statistic_is_max_over_records():
    a = sample_sbm(BlockModel.planted(300, 3, 0.3, 0.02), 0)
    t = smt_test_at_k(a, 3, SmtConfig(max_k=5))
    assert t.statistic == max(r.statistic for r in t.records)
    assert t.accepted and t.decision == "accept"
    with pytest.raises(ValueError):
        smt_test_at_k(a, 6, SmtConfig(max_k=5))


def test_strong_signal_recovers_k():
    m = BlockModel.planted(450, 3, 0.3, 0.02)
    res = estimate_k(sample_sbm(m, 1), SmtConfig(max_k=6))
    assert res.k_hat == 3 and res.status == "accepted"
    decisions = [c.decision for c in res.trace]
    assert decisions == ["reject", "reject", "accept"]


def test_er_graph_gives_one():
    a = sample_sbm(BlockModel(np.zeros(400, int), [[0.1]]), 2)
    assert estimate_k(a, SmtConfig(max_k=4)).k_hat == 1


def test_k_planted_two_rejects_at_one():
    m = BlockModel.planted(500, 2, 0.25, 0.0)
    assert not smt_test_at_k(sample_sbm(m, 0), 1, SmtConfig()).accepted


@pytest.mark.parametrize("seed", range(3))
def test_determinism(seed):
    a = sample_sbm(BlockModel.planted(300, 3, 0.2, 0.05), seed)
    cfg = SmtConfig(max_k=5, seed=seed)
    assert estimate_k(a, cfg).to_json() == estimate_k(a, cfg).to_json()


def test_no_acceptance():
    # four cliques with max_k=2: both candidates reject
    d = np.kron(np.eye(4, dtype=int), np.ones((30, 30), dtype=int))
    np.fill_diagonal(d, 0)
    a = AdjacencyMatrix.from_dense(d)
    res = estimate_k(a, SmtConfig(max_k=2))
    assert res.k_hat is None and res.status == "no-acceptance"
    assert [c.decision for c in res.trace] == ["reject", "reject"]
    doc = json.loads(res.to_json())
    assert doc["k_hat"] is None and doc["membership"] is None


def test_graph_too_small_for_max_k():
    with pytest.raises(ValueError):
        estimate_k(AdjacencyMatrix(20), SmtConfig(max_k=7))


def test_json_schema():
    a = sample_sbm(BlockModel.planted(200, 2, 0.3, 0.02), 3)
    doc = json.loads(estimate_k(a, SmtConfig(max_k=4)).to_json())
    assert {"k_hat", "alpha", "status", "trace", "membership", "g_hat", "warnings"} <= set(doc)
    assert len(doc["membership"]) == 200
    assert np.array(doc["g_hat"]).shape == (doc["k_hat"], doc["k_hat"])
    for c in doc["trace"]:
        assert {"k", "threshold", "statistic", "decision", "records", "warnings"} <= set(c)
        for r in c["records"]:
            assert {"block", "size", "p_hat", "used_complement", "mu", "statistic"} <= set(r)


@given(st.integers(0, 10_000), st.integers(2, 4), st.floats(0.0, 0.5))
@settings(max_examples=15, deadline=None)
def test_sequential_monotonicity(seed, k, r):
    m = BlockModel.planted(120, k, 0.4, 0.4 * r)
    res = estimate_k(sample_sbm(m, seed), SmtConfig(max_k=6, seed=seed))
    decisions = [c.decision for c in res.trace]
    if res.k_hat is None:
        assert set(decisions) == {"reject"} and len(decisions) == 6
    else:
        assert decisions == ["reject"] * (res.k_hat - 1) + ["accept"]
        assert [c.k for c in res.trace] == list(range(1, res.k_hat + 1))


def test_multi_alpha_matches_single_runs():
    a = sample_sbm(BlockModel.planted(300, 3, 0.15, 0.06), 5)
    cfg = SmtConfig(max_k=6)
    multi = estimate_k_multi(a, cfg, [0.01, 0.05, 0.2])
    for alpha, res in multi.items():
        single = estimate_k(a, SmtConfig(alpha=alpha, max_k=6))
        assert res.to_json() == single.to_json()


def test_validity_warnings():
    # sparse blocks fall below the N^(-2/3) edge-probability condition
    m = BlockModel.planted(600, 2, 0.012, 0.0)
    t = smt_test_at_k(sample_sbm(m, 0), 2, SmtConfig())
    assert any("N^(-2/3)" in w for w in t.warnings)


@pytest.mark.slow
def test_block_statistic_null_percentile():
    # empirical 95th percentile of T on ER(500, 0.3) blocks against the TW1 quantile
    stats = [block_statistic(_er_view(500, 0.3, s), 0.3).statistic for s in range(500)]
    assert abs(np.percentile(stats, 95) - tw1_quantile(0.95)) <= 0.15
