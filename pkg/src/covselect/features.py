"""Per-subject summary statistics and (source, target) pair features.

The pair feature vector has 18 entries, grouped as six squared distances
between class means, six dispersions, the source's intra-subject accuracy,
and five differences of the preceding entries.  Everything except the
accuracy is computed after re-centering each dataset about its own overall
geometric mean (alignment step 1) but before any rotation, so the features
are exactly the quantities a calibration session can measure cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import SubjectData
from .exceptions import InputError
from .folds import stratified_folds
from .geometry import class_means, dispersion, karcher_mean, sq_dists_to
from .mdm import mdm_accuracy, mdm_fit
from .rpa import recenter

CLASS_LABELS = (1, 2)


@dataclass(frozen=True)
class SubjectStats:
    """Summary of one subject's full recording."""

    subject_id: str
    overall_mean: np.ndarray
    class_mean_1: np.ndarray
    class_mean_2: np.ndarray
    overall_dispersion: float
    class_dispersion_1: float
    class_dispersion_2: float
    intra_accuracy: float


@dataclass(frozen=True)
class PairFeatures:
    """The 18 predictor inputs for one (source, target) pair, in file order."""

    d2_t1_t2: float
    d2_s1_s2: float
    d2_t1_s1: float
    d2_t1_s2: float
    d2_t2_s1: float
    d2_t2_s2: float
    disp_t: float
    disp_t1: float
    disp_t2: float
    disp_s: float
    disp_s1: float
    disp_s2: float
    source_intra_accuracy: float
    d2_t1_t2_minus_d2_s1_s2: float
    d2_t1_s2_minus_d2_t1_s1: float
    d2_t2_s1_minus_d2_t2_s2: float
    disp_s1_minus_disp_t1: float
    disp_s2_minus_disp_t2: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "PairFeatures":
        a = np.asarray(a, dtype=np.float64)
        names = [f.name for f in fields(cls)]
        if a.shape != (len(names),):
            raise InputError(f"PairFeatures.from_array: expected {len(names)} values")
        return cls(**{n: float(v) for n, v in zip(names, a)})


FEATURE_NAMES = tuple(f.name for f in fields(PairFeatures))
N_FEATURES = len(FEATURE_NAMES)


def _require_both_classes(labels, who: str) -> None:
    present = set(np.unique(labels).tolist())
    missing = set(CLASS_LABELS) - present
    if missing:
        raise InputError(f"{who}: missing class labels {sorted(missing)}")


def intra_subject_accuracy(covs, labels, cv_folds: int = 5, seed=0) -> float:
    """Calibration-style cross-validated self accuracy.

    Stratified folds; each fold in turn is the (small) training split and
    the remaining folds are the test set, mirroring how little data a new
    user provides.  Returns the mean accuracy over folds.
    """
    labels = np.asarray(labels)
    folds = stratified_folds(labels, cv_folds, seed)
    all_idx = np.arange(labels.shape[0])
    accs = []
    for f in folds:
        train = f
        test = np.setdiff1d(all_idx, f, assume_unique=False)
        model = mdm_fit(covs[train], labels[train])
        accs.append(mdm_accuracy(model, covs[test], labels[test]))
    return float(np.mean(accs))


def subject_stats(subject: SubjectData, cv_folds: int = 5, seed=0) -> SubjectStats:
    """Means, dispersions, and cross-validated intra-subject accuracy."""
    _require_both_classes(subject.labels, f"subject_stats({subject.subject_id})")
    overall = karcher_mean(subject.covs)
    by_class = class_means(subject.covs, subject.labels)
    class_disp = {
        k: dispersion(subject.covs[subject.labels == k], by_class[k])
        for k in CLASS_LABELS
    }
    return SubjectStats(
        subject_id=subject.subject_id,
        overall_mean=overall,
        class_mean_1=by_class[1],
        class_mean_2=by_class[2],
        overall_dispersion=dispersion(subject.covs, overall),
        class_dispersion_1=class_disp[1],
        class_dispersion_2=class_disp[2],
        intra_accuracy=intra_subject_accuracy(
            subject.covs, subject.labels, cv_folds=cv_folds, seed=seed
        ),
    )


@dataclass(frozen=True)
class RecenteredSummary:
    """Class means and dispersions of one dataset after re-centering."""

    class_mean_1: np.ndarray
    class_mean_2: np.ndarray
    overall_dispersion: float
    class_dispersion_1: float
    class_dispersion_2: float


def recentered_summary(covs, labels) -> RecenteredSummary:
    """Recenter about the overall mean, then class means and dispersions.

    The overall dispersion is measured about the identity, which is the
    recentered set's geometric mean by construction.
    """
    covs = np.asarray(covs, dtype=np.float64)
    labels = np.asarray(labels)
    mean = karcher_mean(covs)
    rc = recenter(covs, mean)
    means = class_means(rc, labels)
    ident = np.eye(rc.shape[-1])
    return RecenteredSummary(
        class_mean_1=means[1],
        class_mean_2=means[2],
        overall_dispersion=dispersion(rc, ident),
        class_dispersion_1=dispersion(rc[labels == 1], means[1]),
        class_dispersion_2=dispersion(rc[labels == 2], means[2]),
    )


def assemble_pair_features(
    source: RecenteredSummary,
    target: RecenteredSummary,
    source_intra_accuracy: float,
) -> PairFeatures:
    """Build the 18-entry vector from two recentered summaries."""

    def d2(a, b) -> float:
        return float(sq_dists_to(a, b[None])[0])

    s_means = {1: source.class_mean_1, 2: source.class_mean_2}
    t_means = {1: target.class_mean_1, 2: target.class_mean_2}
    s_disps = {1: source.class_dispersion_1, 2: source.class_dispersion_2}
    t_disps = {1: target.class_dispersion_1, 2: target.class_dispersion_2}
    disp_s = source.overall_dispersion
    disp_t = target.overall_dispersion

    d2_t1_t2 = d2(t_means[1], t_means[2])
    d2_s1_s2 = d2(s_means[1], s_means[2])
    d2_t1_s1 = d2(t_means[1], s_means[1])
    d2_t1_s2 = d2(t_means[1], s_means[2])
    d2_t2_s1 = d2(t_means[2], s_means[1])
    d2_t2_s2 = d2(t_means[2], s_means[2])
    return PairFeatures(
        d2_t1_t2=d2_t1_t2,
        d2_s1_s2=d2_s1_s2,
        d2_t1_s1=d2_t1_s1,
        d2_t1_s2=d2_t1_s2,
        d2_t2_s1=d2_t2_s1,
        d2_t2_s2=d2_t2_s2,
        disp_t=disp_t,
        disp_t1=t_disps[1],
        disp_t2=t_disps[2],
        disp_s=disp_s,
        disp_s1=s_disps[1],
        disp_s2=s_disps[2],
        source_intra_accuracy=source_intra_accuracy,
        d2_t1_t2_minus_d2_s1_s2=d2_t1_t2 - d2_s1_s2,
        d2_t1_s2_minus_d2_t1_s1=d2_t1_s2 - d2_t1_s1,
        d2_t2_s1_minus_d2_t2_s2=d2_t2_s1 - d2_t2_s2,
        disp_s1_minus_disp_t1=s_disps[1] - t_disps[1],
        disp_s2_minus_disp_t2=s_disps[2] - t_disps[2],
    )


def pair_features(
    source: SubjectData,
    target_train: SubjectData,
    source_stats: SubjectStats,
) -> PairFeatures:
    """Assemble the 18 features for one (source, target-training-set) pair.

    Both sides are recentered about their own overall mean first; the
    source side uses the subject's full recording, the target side only the
    training trials handed in (test trials must never reach this function).
    """
    _require_both_classes(source.labels, f"pair_features source {source.subject_id}")
    _require_both_classes(
        target_train.labels, f"pair_features target {target_train.subject_id}"
    )
    if source.dim != target_train.dim:
        raise InputError("pair_features: source and target dimensions differ")
    return assemble_pair_features(
        recentered_summary(source.covs, source.labels),
        recentered_summary(target_train.covs, target_train.labels),
        source_stats.intra_accuracy,
    )
