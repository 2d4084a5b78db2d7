from __future__ import annotations

import numpy as np


def accuracy(predictions, targets) -> float:
    """Fraction of positions where ``predictions == targets``."""
    p = np.asarray(predictions).reshape(-1)
    t = np.asarray(targets).reshape(-1)
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if p.size != t.size:
        raise ValueError(f"accuracy: {p.size} predictions for {t.size} targets")
    return float(np.count_nonzero(p == t)) / p.size


def threshold_accuracy(scores, real: bool, threshold: float = 0.5) -> float:
    """Accuracy of score thresholding when every input has the same truth.

    Real inputs are classified correctly when ``score >= threshold``, generated
    inputs when ``score < threshold``.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    predicted_real = s >= threshold
    return accuracy(predicted_real, np.full(s.shape, bool(real)))
