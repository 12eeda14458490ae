"""Sequential multiple testing estimate of the number of SBM communities.

For each candidate ``k = 1, 2, ...`` the graph is clustered into ``k``
groups and every group is tested for being an Erdos-Renyi graph through its
centred and scaled second eigenvalue. The groups are tested jointly with a
Bonferroni threshold on the Tracy-Widom quantile and the first ``k`` whose
largest statistic falls under the threshold is returned.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .graph import (
    AdjacencyMatrix,
    BlockView,
    GraphError,
    clamp_probability,
    estimate_block_probs,
    extract_blocks,
    is_assortative,
    scaled_block,
)
from .spectral import second_largest_eigenvalue, spectral_clustering
from .tracy_widom import tw1_quantile

MIN_BLOCK_SIZE = 3
IMBALANCE_RATIO = 3.0


class SmtError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmtConfig:
    alpha: float = 0.05
    max_k: int = 20
    seed: int = 0
    restarts: int = 20
    max_iter: int = 100
    regularize: object = "auto"
    normalize_rows: bool = False

    def __post_init__(self):
        if not (isinstance(self.alpha, (int, float)) and 0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if int(self.max_k) < 1:
            raise ValueError(f"max_k must be >= 1, got {self.max_k!r}")
        if self.regularize not in ("auto", True, False):
            raise ValueError(f"regularize must be 'auto', True or False, got {self.regularize!r}")

    def clustering_seed(self, k: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.seed), int(k)])


@dataclass
class BlockTestRecord:
    block: int
    size: int
    p_hat: float
    used_complement: bool
    mu: float
    statistic: float
    eigenvalue: float = float("nan")
    skipped: Optional[str] = None


@dataclass
class CandidateTest:
    k: int
    threshold: float
    statistic: float
    accepted: bool
    records: list
    warnings: list = field(default_factory=list)
    membership: Optional[np.ndarray] = field(default=None, repr=False)
    g_hat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def decision(self) -> str:
        return "accept" if self.accepted else "reject"


@dataclass
class SmtResult:
    k_hat: Optional[int]
    alpha: float
    membership: Optional[np.ndarray]
    g_hat: Optional[np.ndarray]
    trace: list
    warnings: list = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.k_hat is not None

    @property
    def status(self) -> str:
        return "accepted" if self.accepted else "no-acceptance"

    def to_dict(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "alpha": self.alpha,
            "status": self.status,
            "trace": [_candidate_dict(c) for c in self.trace],
            "membership": None if self.membership is None else self.membership.tolist(),
            "g_hat": None if self.g_hat is None else _nan_to_none(self.g_hat.tolist()),
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _nan_to_none(x):
    if isinstance(x, list):
        return [_nan_to_none(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _candidate_dict(c: CandidateTest) -> dict:
    return {
        "k": c.k,
        "threshold": c.threshold,
        "statistic": _nan_to_none(c.statistic),
        "decision": c.decision,
        "records": [{k: _nan_to_none(v) for k, v in asdict(r).items()} for r in c.records],
        "warnings": list(c.warnings),
    }


def block_statistic(view: BlockView, p_hat: float, block: int = 0) -> BlockTestRecord:
    """Centred and scaled second eigenvalue of one candidate block.

    When the block's edge frequency exceeds one half the complement view
    is tested instead, at edge probability ``1 - p_hat``; the centring term
    is then ``1 / (N - mu)`` with ``mu = N p_hat``.
    """
    n = view.size
    if n < MIN_BLOCK_SIZE:
        raise GraphError(f"block {block} too small for an eigenvalue test: size {n}")
    p = clamp_probability(float(p_hat), n)
    use_complement = p > 0.5
    if use_complement:
        target, p_eff = view.complement(), 1.0 - p
    else:
        target, p_eff = view, p
    m = scaled_block(target, p_eff)
    lam2 = second_largest_eigenvalue(m)
    mu_shift = m.mu
    stat = n ** (2.0 / 3.0) * (lam2 - 2.0 - 1.0 / mu_shift)
    return BlockTestRecord(
        block=block,
        size=n,
        p_hat=p,
        used_complement=use_complement,
        mu=n * p,
        statistic=float(stat),
        eigenvalue=lam2,
    )


def bonferroni_threshold(alpha: float, k: int) -> float:
    return tw1_quantile(1.0 - alpha / k)


def _cluster(a: AdjacencyMatrix, k: int, cfg: SmtConfig):
    return spectral_clustering(
        a,
        k,
        cfg.clustering_seed(k),
        restarts=cfg.restarts,
        max_iter=cfg.max_iter,
        regularize=cfg.regularize,
        normalize_rows=cfg.normalize_rows,
    )


def evaluate_candidate(a: AdjacencyMatrix, k: int, cfg: SmtConfig):
    """Cluster into ``k`` groups and compute every block statistic.

    Returns ``(records, membership, g_hat, warnings)``. The result does not
    depend on ``cfg.alpha``.
    """
    membership = _cluster(a, k, cfg)
    g_hat = estimate_block_probs(a, membership, k, strict=False)
    views = extract_blocks(a, membership)
    sizes = np.bincount(membership, minlength=k)
    warnings = []
    records = []
    label_of_view = np.unique(membership)
    for label in range(k):
        if sizes[label] < MIN_BLOCK_SIZE:
            records.append(
                BlockTestRecord(
                    block=label,
                    size=int(sizes[label]),
                    p_hat=float(g_hat[label, label]) if sizes[label] >= 2 else float("nan"),
                    used_complement=False,
                    mu=float("nan"),
                    statistic=float("nan"),
                    skipped=f"block size {int(sizes[label])} < {MIN_BLOCK_SIZE}",
                )
            )
            continue
        view = views[int(np.searchsorted(label_of_view, label))]
        rec = block_statistic(view, g_hat[label, label], block=label)
        records.append(rec)
        p_eff = min(rec.p_hat, 1.0 - rec.p_hat)
        if p_eff < rec.size ** (-2.0 / 3.0):
            warnings.append(
                f"block {label}: edge probability {p_eff:.4g} below N^(-2/3)={rec.size ** (-2.0 / 3.0):.4g}; "
                "null approximation may be poor"
            )
    populated = sizes[sizes > 0]
    if populated.size > 1 and populated.max() > IMBALANCE_RATIO * populated.min():
        warnings.append(
            f"block sizes range from {int(populated.min())} to {int(populated.max())}; balanced-size assumption violated"
        )
    if k > 1 and np.all(sizes >= 2) and not is_assortative(g_hat):
        warnings.append("estimated block probabilities are not assortative")
    return records, membership, g_hat, warnings


def _decide(records, k: int, alpha: float):
    threshold = bonferroni_threshold(alpha, k)
    tested = [r.statistic for r in records if r.skipped is None]
    skipped = [r for r in records if r.skipped is not None]
    if not tested:
        blocks = ", ".join(f"block {r.block} (size {r.size})" for r in skipped)
        raise SmtError(f"no testable block at k={k}: {blocks}")
    stat = float(max(tested))
    accepted = (stat <= threshold) and not skipped
    return threshold, stat, accepted


def smt_test_at_k(a: AdjacencyMatrix, k: int, cfg: SmtConfig) -> CandidateTest:
    """Joint Erdos-Renyi test of the ``k`` blocks found by spectral clustering.

    Accepts iff every block statistic is at most the TW1 quantile at
    ``1 - alpha / k``. Blocks with fewer than three nodes cannot be tested;
    their presence makes the candidate a rejection, and if no block is
    testable an :class:`SmtError` is raised.
    """
    if not 1 <= k <= cfg.max_k:
        raise ValueError(f"k={k} outside [1, max_k={cfg.max_k}]")
    records, membership, g_hat, warnings = evaluate_candidate(a, k, cfg)
    threshold, stat, accepted = _decide(records, k, cfg.alpha)
    return CandidateTest(k, threshold, stat, accepted, records, warnings, membership, g_hat)


def estimate_k(a: AdjacencyMatrix, cfg: SmtConfig) -> SmtResult:
    """Smallest ``k`` whose candidate test accepts, scanning ``1..max_k``."""
    if a.n < MIN_BLOCK_SIZE * cfg.max_k:
        raise ValueError(f"graph with {a.n} nodes is too small for max_k={cfg.max_k} (need n >= {MIN_BLOCK_SIZE * cfg.max_k})")
    trace = []
    warnings = []
    for k in range(1, cfg.max_k + 1):
        test = smt_test_at_k(a, k, cfg)
        trace.append(test)
        if test.accepted:
            warnings.extend(f"k={k}: {w}" for w in test.warnings)
            return SmtResult(k, cfg.alpha, test.membership, test.g_hat, trace, warnings)
    warnings.append(f"no candidate accepted up to max_k={cfg.max_k}")
    return SmtResult(None, cfg.alpha, None, None, trace, warnings)


def estimate_k_multi(a: AdjacencyMatrix, cfg: SmtConfig, alphas) -> dict:
    """Run :func:`estimate_k` for several significance levels at once.

    Candidate evaluations are shared between levels; each result is the
    same as a separate :func:`estimate_k` call with ``alpha`` replaced.
    """
    if a.n < MIN_BLOCK_SIZE * cfg.max_k:
        raise ValueError(f"graph with {a.n} nodes is too small for max_k={cfg.max_k} (need n >= {MIN_BLOCK_SIZE * cfg.max_k})")
    alphas = [float(x) for x in alphas]
    for x in alphas:
        SmtConfig(alpha=x, max_k=cfg.max_k)
    traces = {x: [] for x in alphas}
    done = {}
    for k in range(1, cfg.max_k + 1):
        pending = [x for x in alphas if x not in done]
        if not pending:
            break
        records, membership, g_hat, warns = evaluate_candidate(a, k, cfg)
        for x in pending:
            threshold, stat, accepted = _decide(records, k, x)
            test = CandidateTest(k, threshold, stat, accepted, records, warns, membership, g_hat)
            traces[x].append(test)
            if accepted:
                done[x] = SmtResult(k, x, membership, g_hat, traces[x], [f"k={k}: {w}" for w in warns])
    for x in alphas:
        if x not in done:
            done[x] = SmtResult(None, x, None, None, traces[x], [f"no candidate accepted up to max_k={cfg.max_k}"])
    return done
