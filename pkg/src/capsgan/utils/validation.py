from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_images(X, *, value_range: str = "raw01", shape=None) -> np.ndarray:
    """Validate an image batch [N, C, H, W] of finite floats inside ``value_range``."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_min_samples=1)
    if X.ndim != 4:
        raise ValueError(f"expected images of shape [N, C, H, W], got {X.shape}")
    if shape is not None and tuple(X.shape[1:]) != tuple(shape):
        raise ValueError(f"expected images of shape [N, {', '.join(map(str, shape))}], got {X.shape}")
    lo, hi = (0.0, 1.0) if value_range == "raw01" else (-1.0, 1.0)
    if X.min() < lo or X.max() > hi:
        raise ValueError(f"image values must lie in [{lo}, {hi}] for range {value_range!r}")
    return X
