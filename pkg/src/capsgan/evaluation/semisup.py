"""Semi-supervised classification with GAN-generated images as the unlabeled pool."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff.rng import derive_seed, uniform01
from ..datasets import LabeledDataset, to_raw01
from ..gan.model import GanModel, generate
from .label_spreading import LabelSpreadConfig
from .metrics import accuracy

# Error rates from the full-scale experiments (rows: model, columns: n labeled).
PUBLISHED_SEMISUP_ERRORS = {
    "mnist": {
        "convolutional": {100: 0.2900, 1000: 0.1539, 10000: 0.0702},
        "capsule": {100: 0.2724, 1000: 0.1142, 10000: 0.0531},
    },
    "cifar10": {
        "convolutional": {100: 0.8305, 1000: 0.7587, 10000: 0.7209},
        "capsule": {100: 0.7983, 1000: 0.7496, 10000: 0.7102},
    },
}


class StratificationError(ValueError):
    pass


@dataclass
class SemiSupReport:
    n_labeled: int
    n_unlabeled: int
    n_test: int
    error_rate: float
    accuracy: float
    majority_baseline_error: float
    model_variant: str
    seed: int
    label_spreading: dict = field(default_factory=dict)
    n_iter: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _raw01(ds: LabeledDataset) -> np.ndarray:
    x = ds.images if ds.value_range == "raw01" else to_raw01(ds.images)
    return x.reshape(len(ds), -1)


def stratified_indices(labels: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Pick ``n`` indices with per-class counts proportional to class frequency.

    Counts are floored, then the leftover slots go to the largest fractional
    parts (lowest class index on ties).  Every class present in ``labels``
    must receive at least one slot.
    """
    labels = np.asarray(labels)
    if not 1 <= n <= len(labels):
        raise StratificationError(f"cannot draw {n} labeled points from {len(labels)}")
    classes, counts = np.unique(labels, return_counts=True)
    exact = n * counts / counts.sum()
    alloc = np.floor(exact).astype(int)
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[: n - alloc.sum()]:
        alloc[i] += 1
    missing = classes[alloc == 0]
    if missing.size:
        raise StratificationError(
            f"classes {missing.tolist()} absent from a labeled sample of size {n}")
    chosen = []
    for c, k in zip(classes, alloc):
        members = np.flatnonzero(labels == c)
        keys = uniform01(len(members), derive_seed(seed, "stratify", int(c)))
        chosen.append(members[np.argsort(keys, kind="stable")[:k]])
    return np.sort(np.concatenate(chosen))


def semi_sup_experiment(model: GanModel, real_train: LabeledDataset, real_test: LabeledDataset,
                        n_labeled: int, cfg: LabelSpreadConfig = LabelSpreadConfig(),
                        seed: int = 0, n_unlabeled: int = 50_000) -> SemiSupReport:
    """Label spreading over labeled real images, generated images and the test images.

    Test images join the graph as unlabeled nodes; their transductive labels are
    scored against the true test labels.
    """
    if n_labeled > len(real_train):
        raise StratificationError(f"n_labeled={n_labeled} exceeds training set size {len(real_train)}")
    idx = stratified_indices(real_train.labels, n_labeled, derive_seed(seed, "labeled"))
    x_lab = _raw01(real_train)[idx]
    y_lab = real_train.labels[idx]
    fake = to_raw01(generate(model, n_unlabeled, derive_seed(seed, "unlabeled")))
    x_test = _raw01(real_test)
    X = np.concatenate([x_lab, fake.reshape(n_unlabeled, -1), x_test])
    y = np.concatenate([y_lab, np.full(n_unlabeled + len(x_test), -1)])
    clf = cfg.estimator().fit(X, y)
    pred = clf.transduction_[-len(x_test):]
    acc = accuracy(pred, real_test.labels)
    majority = np.bincount(y_lab).argmax()
    baseline = 1.0 - accuracy(np.full(len(x_test), majority), real_test.labels)
    return SemiSupReport(n_labeled, n_unlabeled, len(x_test), 1.0 - acc, acc, baseline,
                         model.variant, seed, cfg.to_dict(), clf.n_iter_)
