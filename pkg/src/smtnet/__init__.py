"""Estimate the number of communities of a stochastic block model by
sequential multiple testing of block second eigenvalues against TW1."""

__version__ = "0.1.0"

from .graph import (
    AdjacencyMatrix,
    BlockModel,
    BlockView,
    ScaledBlockMatrix,
    estimate_block_probs,
    extract_blocks,
    read_edge_list,
    sample_sbm,
    sbm_log_likelihood,
    scaled_block,
    write_edge_list,
)
from .smt import SmtConfig, SmtResult, block_statistic, estimate_k, smt_test_at_k
from .spectral import second_largest_eigenvalue, spectral_clustering
from .tracy_widom import tw1_cdf, tw1_quantile

__all__ = [
    "AdjacencyMatrix",
    "BlockModel",
    "BlockView",
    "ScaledBlockMatrix",
    "SmtConfig",
    "SmtResult",
    "block_statistic",
    "estimate_block_probs",
    "estimate_k",
    "extract_blocks",
    "read_edge_list",
    "sample_sbm",
    "sbm_log_likelihood",
    "scaled_block",
    "second_largest_eigenvalue",
    "smt_test_at_k",
    "spectral_clustering",
    "tw1_cdf",
    "tw1_quantile",
    "write_edge_list",
]
