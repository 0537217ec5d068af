import numpy as np

from ..errors import ContractViolation

PROB_FLOOR = 1e-12


def softmax_cross_entropy(probs, labels, stats=None):
    """Mean negative log-likelihood of the correct class.

    Returns ``(loss, dlogits)`` where ``dlogits = (probs - onehot) / batch``
    is the gradient with respect to the pre-softmax logits. Probabilities
    below ``PROB_FLOOR`` are clamped; if ``stats`` is a dict its
    ``"clamped"`` counter is incremented by the number of clamped rows.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ContractViolation(f"probs {probs.shape} / labels {labels.shape} mismatch")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ContractViolation("label out of range")
    row_sums = probs.sum(axis=1, dtype=np.float64)
    if not np.all(np.abs(row_sums - 1.0) <= 1e-5):
        raise ContractViolation("probability rows must sum to 1")
    b = probs.shape[0]
    rows = np.arange(b)
    p_correct = probs[rows, labels].astype(np.float64)
    clamped = p_correct < PROB_FLOOR
    if clamped.any() and stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + int(clamped.sum())
    loss = float(-np.log(np.maximum(p_correct, PROB_FLOOR)).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= probs.dtype.type(b)
    return loss, grad
