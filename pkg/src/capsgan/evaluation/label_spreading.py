"""Label spreading over a symmetric-normalised affinity graph.

The iteration ``F <- alpha S F + (1 - alpha) Y`` starts from ``F = Y`` and
converges to ``(1 - alpha) (I - alpha S)^-1 Y`` for ``0 < alpha < 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.neighbors import NearestNeighbors
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from ..datasets import LabeledDataset, to_raw01


class ZeroLabelMassWarning(UserWarning):
    """Some nodes received no label mass and copied their nearest reached node."""


@dataclass(frozen=True)
class LabelSpreadConfig:
    alpha: float = 0.2
    kernel: str = "knn"
    n_neighbors: int = 7
    gamma: float = 20.0
    max_iter: int = 1000
    tol: float = 1e-6

    def to_dict(self) -> dict:
        return asdict(self)

    def estimator(self) -> "LabelSpreading":
        return LabelSpreading(**self.to_dict())


def mutual_knn_affinity(X: np.ndarray, k: int) -> sp.csr_matrix:
    """Unit-weight edges between points that are in each other's k nearest neighbours."""
    k = min(k, len(X) - 1)
    if k < 1:
        return sp.csr_matrix((len(X), len(X)))
    directed = NearestNeighbors(n_neighbors=k).fit(X).kneighbors_graph(mode="connectivity")
    W = directed.minimum(directed.T).tocsr()
    W.setdiag(0)
    W.eliminate_zeros()
    return W


def rbf_affinity(X: np.ndarray, gamma: float) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    W = np.exp(-gamma * d2)
    np.fill_diagonal(W, 0.0)
    return W


def normalized_affinity(W):
    """``D^-1/2 W D^-1/2``; isolated nodes get an all-zero row."""
    deg = np.asarray(W.sum(axis=1)).reshape(-1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    if sp.issparse(W):
        D = sp.diags(inv)
        return (D @ W @ D).tocsr()
    return W * inv[:, None] * inv[None, :]


class LabelSpreading(ClassifierMixin, BaseEstimator):
    """Transductive graph classifier.

    Follows the scikit-learn semi-supervised convention: ``y == -1`` marks an
    unlabeled sample.  After ``fit``, ``transduction_`` holds a label for every
    training point; ``predict`` extends it to new points by copying the label
    of the nearest fitted point.

    Parameters
    ----------
    alpha : float in (0, 1)
        Weight of the propagated term against the clamped initial labels.
    kernel : {"knn", "rbf"}
        Mutual k-nearest-neighbour graph with unit weights, or a dense RBF graph.
    n_neighbors : int
        k for the ``knn`` kernel.
    gamma : float
        RBF width for the ``rbf`` kernel.
    max_iter, tol
        Stop when the largest entrywise change in ``F`` drops below ``tol``.
    """

    def __init__(self, alpha=0.2, kernel="knn", n_neighbors=7, gamma=20.0, max_iter=1000, tol=1e-6):
        self.alpha = alpha
        self.kernel = kernel
        self.n_neighbors = n_neighbors
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol

    def _affinity(self, X):
        if self.kernel == "knn":
            return mutual_knn_affinity(X, self.n_neighbors)
        if self.kernel == "rbf":
            return rbf_affinity(X, self.gamma)
        raise ValueError(f"unknown kernel {self.kernel!r}")

    def fit(self, X, y):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        X = check_array(X, dtype=np.float64)
        y = column_or_1d(y).astype(np.int64)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} samples but {len(y)} labels")
        labeled = y != -1
        if not labeled.any():
            raise ValueError("label spreading needs at least one labeled sample")
        self.classes_ = np.unique(y[labeled])
        Y = np.zeros((len(X), len(self.classes_)))
        Y[np.flatnonzero(labeled), np.searchsorted(self.classes_, y[labeled])] = 1.0

        S = normalized_affinity(self._affinity(X))
        F = Y.copy()
        self.diff_history_ = []
        self.n_iter_ = 0
        for _ in range(self.max_iter):
            F_next = self.alpha * (S @ F) + (1.0 - self.alpha) * Y
            delta = F_next - F
            F = F_next
            self.n_iter_ += 1
            self.diff_history_.append(float(np.linalg.norm(delta)))
            if np.abs(delta).max() < self.tol:
                break

        dead = F.sum(axis=1) <= 0
        dist = F.copy()
        if dead.any():
            # mutual-kNN leaves some nodes cut off from every labeled point
            warnings.warn(f"{int(dead.sum())} nodes lie in components without labeled points; "
                          "copying the nearest node that received label mass", ZeroLabelMassWarning)
            live = np.flatnonzero(~dead)
            nn = NearestNeighbors(n_neighbors=1).fit(X[live])
            dist[dead] = F[live[nn.kneighbors(X[dead], return_distance=False)[:, 0]]]
        self.F_ = F
        self.label_distributions_ = dist / dist.sum(axis=1, keepdims=True)
        self.transduction_ = self.classes_[np.argmax(self.label_distributions_, axis=1)]
        self.X_ = X
        self._nn = NearestNeighbors(n_neighbors=1).fit(X)
        return self

    def _nearest(self, X):
        check_is_fitted(self, "transduction_")
        X = check_array(X, dtype=np.float64)
        return self._nn.kneighbors(X, return_distance=False)[:, 0]

    def predict(self, X):
        return self.transduction_[self._nearest(X)]

    def predict_proba(self, X):
        return self.label_distributions_[self._nearest(X)]


def label_spread_fit(labeled: LabeledDataset, unlabeled: np.ndarray,
                     cfg: LabelSpreadConfig = LabelSpreadConfig()) -> LabelSpreading:
    """Fit on raw-pixel features: labeled images followed by unlabeled ones.

    ``unlabeled`` must already be in [0, 1]; ``labeled`` is converted if it
    is stored in the signed range.  Images are flattened per sample.
    """
    images = labeled.images if labeled.value_range == "raw01" else to_raw01(labeled.images)
    x_lab = images.reshape(len(labeled), -1)
    x_unl = np.asarray(unlabeled, dtype=np.float64).reshape(len(unlabeled), -1)
    X = np.concatenate([x_lab, x_unl])
    y = np.concatenate([labeled.labels, np.full(len(x_unl), -1)])
    return cfg.estimator().fit(X, y)
