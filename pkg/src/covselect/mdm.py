"""Minimum-distance-to-mean classification of covariance trials.

A trial is assigned the label of the nearest class mean under the
affine-invariant metric.  Ties go to the smallest label value, which keeps
predictions deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .geometry import class_means, sq_dists_to


@dataclass(frozen=True)
class MdmModel:
    """Fitted classifier state: one Karcher mean per class.

    ``labels`` is sorted ascending and ``means[k]`` is the stacked mean for
    ``labels[k]``; the model is immutable after fitting.
    """

    labels: tuple[int, ...]
    means: np.ndarray  # shape (n_classes, dim, dim)

    @property
    def dim(self) -> int:
        return self.means.shape[-1]

    def class_mean(self, label: int) -> np.ndarray:
        return self.means[self.labels.index(label)]


def mdm_fit(covs, labels, tol: float = 1e-8, max_iter: int = 200) -> MdmModel:
    """Fit class means; requires at least two classes with >= 1 trial each."""
    covs = np.asarray(covs, dtype=np.float64)
    labels = np.asarray(labels)
    means = class_means(covs, labels, tol=tol, max_iter=max_iter)
    if len(means) < 2:
        raise InputError(f"mdm_fit: need >= 2 classes, got {sorted(means)}")
    ordered = tuple(sorted(means))
    return MdmModel(labels=ordered, means=np.stack([means[k] for k in ordered]))


def _sq_dists(model: MdmModel, covs: np.ndarray) -> np.ndarray:
    """Squared distances to every class mean, shape (n_classes, n_trials)."""
    if covs.shape[-1] != model.dim:
        raise InputError(
            f"mdm: query dimension {covs.shape[-1]} != model dimension {model.dim}"
        )
    return np.stack([sq_dists_to(m, covs) for m in model.means])


def mdm_predict(model: MdmModel, c: np.ndarray) -> int:
    """Label of the nearest class mean (smallest label wins ties)."""
    c = np.asarray(c, dtype=np.float64)
    d2 = _sq_dists(model, c[None])[:, 0]
    # argmin returns the first minimum; labels are sorted ascending, so ties
    # break toward the smallest label by construction.
    return model.labels[int(np.argmin(d2))]


def mdm_predict_many(model: MdmModel, covs) -> np.ndarray:
    covs = np.asarray(covs, dtype=np.float64)
    d2 = _sq_dists(model, covs)
    idx = np.argmin(d2, axis=0)
    return np.asarray(model.labels)[idx]


def mdm_accuracy(model: MdmModel, covs, labels) -> float:
    """Fraction of trials whose prediction matches the true label."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InputError("mdm_accuracy: empty trial set")
    pred = mdm_predict_many(model, covs)
    return float(np.mean(pred == labels))
