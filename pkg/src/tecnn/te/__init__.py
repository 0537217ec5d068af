from .estimator import (
    PairSet, TEMatrix, compute_te_matrix, pair_count, select_pairs, te_from_counts, te_pair,
    te_pair_oracle, triplet_counts,
)
from .windows import BinaryWindow, Recorder, binarize

__all__ = [
    "BinaryWindow", "Recorder", "binarize", "PairSet", "TEMatrix", "compute_te_matrix",
    "pair_count", "select_pairs", "te_from_counts", "te_pair", "te_pair_oracle", "triplet_counts",
]
