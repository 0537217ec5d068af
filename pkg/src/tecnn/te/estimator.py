"""Plug-in transfer entropy between binary event streams.

Single-step histories: for a source J and destination I the estimate uses
the empirical distribution of triplets ``(i[t+1], i[t], j[t])``, encoded as
``4 * i[t+1] + 2 * i[t] + j[t]``. Counts stay integer until the final
evaluation.
"""
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, EstimatorUnavailable
from .windows import BinaryWindow

POLICIES = ("epoch", "window")


def _as_bits(w):
    if isinstance(w, BinaryWindow):
        if w.width != 1:
            raise ContractViolation("expected a single-channel window")
        if not w.full:
            raise EstimatorUnavailable(f"window holds {len(w)} of {w.capacity} events")
        return w.bits()
    return np.asarray(w, dtype=np.uint8).reshape(-1)


def _check_aligned(src, dst):
    if src.shape != dst.shape:
        raise ContractViolation(f"windows differ in length: {src.size} vs {dst.size}")
    if src.size < 3:
        raise EstimatorUnavailable("need at least 3 events")


def triplet_counts(src_bits, dst_bits):
    """Counts of the 8 ``(i[t+1], i[t], j[t])`` states as a length-8 int array."""
    src_bits = np.asarray(src_bits, dtype=np.int64)
    dst_bits = np.asarray(dst_bits, dtype=np.int64)
    code = 4 * dst_bits[1:] + 2 * dst_bits[:-1] + src_bits[:-1]
    return np.bincount(code, minlength=8)


def te_from_counts(counts, base=2.0):
    """Transfer entropy from the 8 triplet counts.

    Sum over observed triplets of ``p(a, b, c) * log(p(a | b, c) / p(a | b))``
    with ``a = i[t+1]``, ``b = i[t]``, ``c = j[t]``.
    """
    n = [int(v) for v in counts]
    total = sum(n)
    if total == 0:
        return 0.0
    te = 0.0
    for b in (0, 1):
        n_b = n[2 * b] + n[2 * b + 1] + n[4 + 2 * b] + n[4 + 2 * b + 1]
        for c in (0, 1):
            n_bc = n[2 * b + c] + n[4 + 2 * b + c]
            for a in (0, 1):
                n_abc = n[4 * a + 2 * b + c]
                if n_abc == 0:
                    continue
                n_ab = n[4 * a + 2 * b] + n[4 * a + 2 * b + 1]
                # integer ratio: exactly 1 when the source adds nothing
                te += n_abc / total * math.log((n_abc * n_b) / (n_bc * n_ab), base)
    return max(te, 0.0)


def te_pair(src, dst, base=2.0):
    """TE from ``src`` (J) to ``dst`` (I) over aligned, full windows.

    Accepts ``BinaryWindow`` objects (must be full) or 1-D bit arrays.
    Raises ``EstimatorUnavailable`` when the windows are not ready.
    """
    s, d = _as_bits(src), _as_bits(dst)
    _check_aligned(s, d)
    return te_from_counts(triplet_counts(s, d), base)


def _entropy(counter, total, base):
    return -sum(c / total * math.log(c / total, base) for c in counter.values() if c)


def te_pair_oracle(src, dst, base=2.0):
    """Independent check of ``te_pair``: ``H(I+ | I) - H(I+ | I, J)``.

    Triplets are tallied by a plain Python loop and conditional entropies
    are formed as joint-minus-marginal entropies.
    """
    s, d = _as_bits(src), _as_bits(dst)
    _check_aligned(s, d)
    s, d = s.tolist(), d.tolist()
    triples = Counter()
    for t in range(len(d) - 1):
        triples[(d[t + 1], d[t], s[t])] += 1
    total = len(d) - 1
    nxt_own, own, own_src = Counter(), Counter(), Counter()
    for (a, b, c), k in triples.items():
        nxt_own[(a, b)] += k
        own[b] += k
        own_src[(b, c)] += k
    h_next_given_own = _entropy(nxt_own, total, base) - _entropy(own, total, base)
    h_next_given_both = _entropy(triples, total, base) - _entropy(own_src, total, base)
    return h_next_given_own - h_next_given_both


@dataclass
class PairSet:
    """Monitored (source, destination) index pairs."""

    src: np.ndarray
    dst: np.ndarray
    fraction: float = 1.0
    policy: str = "epoch"

    def __len__(self):
        return len(self.src)

    @property
    def pairs(self):
        return list(zip(self.src.tolist(), self.dst.tolist()))


def pair_count(n_src, n_dst, fraction):
    return max(1, math.floor(fraction * n_src * n_dst + 0.5))


def select_pairs(n_src, n_dst, fraction=1.0, policy="epoch", rng=None):
    """Draw ``max(1, round(fraction * n_src * n_dst))`` distinct pairs uniformly.

    ``rng`` is a ``numpy.random.Generator`` or a seed. With ``fraction == 1``
    all pairs are returned and no randomness is consumed. Pairs come back
    sorted in row-major (source, destination) order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"pair fraction must lie in (0, 1], got {fraction}")
    if policy not in POLICIES:
        raise ValueError(f"pair policy must be one of {POLICIES}, got {policy!r}")
    total = n_src * n_dst
    k = min(pair_count(n_src, n_dst, fraction), total)
    if k == total:
        flat = np.arange(total)
    else:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        flat = np.sort(rng.choice(total, size=k, replace=False))
    return PairSet(flat // n_dst, flat % n_dst, float(fraction), policy)


@dataclass
class TEMatrix:
    """Source x destination TE values in bits; entries outside ``active`` are 0."""

    values: np.ndarray
    active: np.ndarray
    warmup: bool = False
    elapsed_s: float = field(default=0.0, compare=False)

    @classmethod
    def zeros(cls, n_src, n_dst, warmup=False):
        return cls(np.zeros((n_src, n_dst)), np.zeros((n_src, n_dst), dtype=bool), warmup)

    @property
    def active_pairs(self):
        return int(self.active.sum())

    @property
    def mean(self):
        return float(self.values[self.active].mean()) if self.active.any() else 0.0

    @property
    def std(self):
        return float(self.values[self.active].std()) if self.active.any() else 0.0


def compute_te_matrix(rec, pairs, base=2.0):
    """TE for every selected pair from the recorder's current windows.

    Returns an all-zero matrix flagged ``warmup`` while the windows are
    still filling.
    """
    if not rec.full or rec.capacity < 3:
        return TEMatrix.zeros(rec.n_src, rec.n_dst, warmup=True)
    out = TEMatrix.zeros(rec.n_src, rec.n_dst)
    if len(pairs) == 0:
        return out
    src = rec.src.snapshot().T.astype(np.int64)
    dst = rec.dst.snapshot().T.astype(np.int64)
    src_prev = src[:, :-1]
    dst_code = 4 * dst[:, 1:] + 2 * dst[:, :-1]
    for i, j in zip(pairs.src.tolist(), pairs.dst.tolist()):
        counts = np.bincount(dst_code[j] + src_prev[i], minlength=8)
        out.values[i, j] = te_from_counts(counts, base)
        out.active[i, j] = True
    return out
