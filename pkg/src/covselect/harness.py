"""Experiment machinery: pairwise transfer accuracies, the method-comparison
matrix with significance testing, and the candidate-count sweep.

Evaluation discipline, per target: the target's trials are split into five
stratified folds; each fold in turn plays the (small) training role while
the other four are the test set, and the transfer accuracy is the mean over
the five rounds.  For selection experiments, subjects are partitioned into
leave-groups-out folds: predictors and best-teacher counts for a test
target are built strictly from the training users of its fold.

All randomness flows from explicit seeds through per-subject derived
streams, so results are identical for identical seeds at any parallelism
degree.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.stats

from .data import SubjectData
from .exceptions import InputError
from .features import (
    assemble_pair_features,
    intra_subject_accuracy,
    recentered_summary,
    subject_stats,
)
from .folds import leave_groups_out_folds, stratified_folds, subject_seed
from .mdm import MdmModel, mdm_accuracy, mdm_fit
from .predictor import MlpRegressor, RobustScaler, TrainConfig, mlp_train, scaler_fit
from .rpa import DomainSide, RpaConfig, prepare_domain, rpa_align
from .selection import (
    ALL_METHODS,
    METHOD_INTRA,
    METHOD_MAX_OF,
    METHOD_ORACLE,
    RANKABLE_METHODS,
    RankedCandidates,
    SelectionContext,
    max_of_methods,
    rank_sources,
    select_best,
)

__all__ = [
    "AccuracyMatrix",
    "MethodComparison",
    "SelectionOutcome",
    "build_accuracy_matrix",
    "build_feature_table",
    "candidate_sweep",
    "compare_methods",
    "compute_all_stats",
    "evaluate_selection",
    "filter_by_intra",
    "leave_groups_out_folds",
    "train_fold_predictors",
    "transfer_accuracy",
    "wilcoxon_signed_rank",
]

N_TARGET_FOLDS = 5


def target_folds(target: SubjectData, fold_seed: int, n_folds: int = N_TARGET_FOLDS):
    """The target's seeded stratified folds, fixed across all sources."""
    return stratified_folds(
        target.labels, n_folds, subject_seed(fold_seed, target.subject_id)
    )


def _mdm_from_rotated_means(class_mean_map: dict, rotation: np.ndarray) -> MdmModel:
    """MDM model over congruence-transformed class means.

    The geometric mean commutes with congruences, so the class means of the
    rotated source trials are exactly the rotated class means; building the
    model from them skips re-running the mean iteration per fold.
    """
    labels = tuple(sorted(class_mean_map))
    means = np.stack([rotation @ class_mean_map[k] @ rotation.T for k in labels])
    return MdmModel(labels=labels, means=0.5 * (means + np.swapaxes(means, -1, -2)))


def _pair_accuracy(
    source: SubjectData,
    target: SubjectData,
    folds: list,
    fold_seed: int,
    cfg: RpaConfig,
    source_side: DomainSide | None = None,
    target_sides: list | None = None,
) -> float:
    """Mean over folds of the aligned-source MDM accuracy for one pair.

    ``source_side``/``target_sides`` are optional precomputed
    re-centerings; passing them changes nothing but the amount of
    repeated work.
    """
    if source_side is None:
        source_side = prepare_domain(source.covs, source.labels)
    all_idx = np.arange(target.n_trials)
    accs = []
    for f_idx, train_idx in enumerate(folds):
        test_idx = np.setdiff1d(all_idx, train_idx)
        rot_seed = subject_seed(
            fold_seed, f"{source.subject_id}->{target.subject_id}", f_idx
        )
        result = rpa_align(
            source.covs,
            source.labels,
            target.covs[train_idx],
            target.labels[train_idx],
            cfg,
            seed=rot_seed,
            source_side=source_side,
            target_side=None if target_sides is None else target_sides[f_idx],
        )
        if cfg.equalize_dispersion:
            model = mdm_fit(*result.aligned_source)
        else:
            model = _mdm_from_rotated_means(source_side.class_means, result.rotation)
        test_covs = result.transform_target(target.covs[test_idx])
        accs.append(mdm_accuracy(model, test_covs, target.labels[test_idx]))
    return float(np.mean(accs))


def transfer_accuracy(
    source: SubjectData,
    target: SubjectData,
    fold_seed: int = 0,
    cfg: RpaConfig = RpaConfig(),
    n_folds: int = N_TARGET_FOLDS,
) -> float:
    """Cross-subject accuracy of MDM trained on aligned source data.

    Per fold: align all source trials to the target training split, train
    on the aligned source trials, whiten the target test trials with the
    stored whitener, and score.  Returns the mean over folds.
    """
    folds = target_folds(target, fold_seed, n_folds)
    return _pair_accuracy(source, target, folds, fold_seed, cfg)


@dataclass
class AccuracyMatrix:
    """Dense target-by-source transfer accuracies plus intra diagonal.

    ``values[i, j]`` is the accuracy for target ``target_ids[i]`` with
    source ``source_ids[j]``; diagonal entries carry the intra-subject
    accuracy.  Sort orders are by descending off-diagonal row/column sums.
    """

    target_ids: list
    source_ids: list
    values: np.ndarray
    intra: np.ndarray
    row_order: np.ndarray
    col_order: np.ndarray

    def lookup(self, target_id, source_id) -> float:
        i = self.target_ids.index(target_id)
        j = self.source_ids.index(source_id)
        return float(self.values[i, j])

    def submatrix(self, ids) -> "AccuracyMatrix":
        """Restriction to a subject subset (used for leave-groups-out)."""
        idx = [self.target_ids.index(s) for s in ids]
        vals = self.values[np.ix_(idx, idx)]
        intra = self.intra[idx]
        row_order, col_order = _sort_orders(vals)
        return AccuracyMatrix(
            target_ids=list(ids),
            source_ids=list(ids),
            values=vals,
            intra=intra,
            row_order=row_order,
            col_order=col_order,
        )


def _sort_orders(values: np.ndarray):
    off = values.copy()
    np.fill_diagonal(off, 0.0)
    row_sums = off.sum(axis=1)
    col_sums = off.sum(axis=0)
    return (
        np.argsort(-row_sums, kind="stable"),
        np.argsort(-col_sums, kind="stable"),
    )


def _target_fold_sides(target: SubjectData, folds: list) -> list:
    return [
        prepare_domain(target.covs[train_idx], target.labels[train_idx])
        for train_idx in folds
    ]


def _row_task(args):
    """All accuracies for one target row (its own column gets the intra value)."""
    target, sources, fold_seed, cfg, n_folds = args
    folds = target_folds(target, fold_seed, n_folds)
    sides = _target_fold_sides(target, folds)
    row = np.zeros(len(sources) + 1)
    for j, src in enumerate(sources):
        row[j] = _pair_accuracy(
            src, target, folds, fold_seed, cfg, target_sides=sides
        )
    row[-1] = intra_subject_accuracy(
        target.covs,
        target.labels,
        cv_folds=n_folds,
        seed=subject_seed(fold_seed, target.subject_id),
    )
    return row


def build_accuracy_matrix(
    subjects: list[SubjectData],
    fold_seed: int = 0,
    cfg: RpaConfig = RpaConfig(),
    n_folds: int = N_TARGET_FOLDS,
    jobs: int | None = 1,
) -> AccuracyMatrix:
    """Evaluate every ordered (target, source) pair plus the intra diagonal.

    Rows (targets) are independent tasks, so the computation parallelizes
    across processes; per-pair results depend only on the pair's data and
    the seed, making the output identical at any parallelism degree.
    """
    if len(subjects) < 2:
        raise InputError("build_accuracy_matrix: need at least 2 subjects")
    ids = [s.subject_id for s in subjects]
    if len(set(ids)) != len(ids):
        raise InputError("build_accuracy_matrix: duplicate subject ids")
    n = len(subjects)
    values = np.zeros((n, n))
    intra = np.zeros(n)
    if jobs is not None and jobs <= 1:
        source_sides = {
            s.subject_id: prepare_domain(s.covs, s.labels) for s in subjects
        }
        for i, tgt in enumerate(subjects):
            folds = target_folds(tgt, fold_seed, n_folds)
            sides = _target_fold_sides(tgt, folds)
            for j, src in enumerate(subjects):
                if i == j:
                    continue
                values[i, j] = _pair_accuracy(
                    src,
                    tgt,
                    folds,
                    fold_seed,
                    cfg,
                    source_side=source_sides[src.subject_id],
                    target_sides=sides,
                )
            intra[i] = intra_subject_accuracy(
                tgt.covs,
                tgt.labels,
                cv_folds=n_folds,
                seed=subject_seed(fold_seed, tgt.subject_id),
            )
    else:
        tasks = [
            (tgt, [s for s in subjects if s.subject_id != tgt.subject_id],
             fold_seed, cfg, n_folds)
            for tgt in subjects
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_row_task, tasks, chunksize=1))
        for i, row in enumerate(rows):
            values[i, :i] = row[:i]
            values[i, i + 1 :] = row[i : len(subjects) - 1]
            intra[i] = row[-1]
    values[np.diag_indices(n)] = intra
    row_order, col_order = _sort_orders(values)
    return AccuracyMatrix(
        target_ids=ids,
        source_ids=list(ids),
        values=values,
        intra=intra,
        row_order=row_order,
        col_order=col_order,
    )


def wilcoxon_signed_rank(diffs) -> float:
    """Two-sided signed-rank test of zero median.

    Zero differences are dropped and tied absolute values get averaged
    ranks.  The null distribution is enumerated exactly (via dynamic
    programming over the 2^n sign assignments) for n <= 25; larger samples
    use the normal approximation with tie correction and continuity
    correction.  All differences zero gives p = 1.
    """
    d = np.asarray(diffs, dtype=np.float64).ravel()
    if d.size == 0:
        raise InputError("wilcoxon_signed_rank: need at least one difference")
    if not np.all(np.isfinite(d)):
        raise InputError("wilcoxon_signed_rank: non-finite differences")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = scipy.stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= 25:
        return _wilcoxon_exact(ranks, w_plus)
    return _wilcoxon_normal(ranks, w_plus)


def _wilcoxon_exact(ranks: np.ndarray, w_plus: float) -> float:
    # Doubled ranks are integers even with averaged ties.
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w2 = int(np.rint(2.0 * w_plus))
    n_total = counts.sum()
    p_le = counts[: w2 + 1].sum() / n_total
    p_ge = counts[w2:].sum() / n_total
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def _wilcoxon_normal(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return 1.0
    dev = w_plus - mu
    z = (dev - 0.5 * np.sign(dev)) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


@dataclass
class MethodComparison:
    """Pairwise mean accuracy differences plus distinguishability flags.

    ``mean_diff[i, j]`` is the mean over targets of (method i accuracy -
    method j accuracy), skew-symmetric by construction.  ``not_different``
    is True where the per-target differences fail the signed-rank test at
    p = 0.05, i.e. the two methods cannot be told apart.
    """

    methods: list
    mean_diff: np.ndarray
    not_different: np.ndarray
    p_values: np.ndarray


@dataclass
class SelectionOutcome:
    """Per-target achieved accuracies for every method at every k."""

    methods: list
    k_values: list
    target_ids: list
    # accuracy[k][method] -> np.ndarray aligned with target_ids
    accuracy: dict


def evaluate_selection(
    stats: dict,
    matrix: AccuracyMatrix,
    feature_table: dict,
    lgo_folds: list,
    fold_predictors: list,
    k_values: list,
    methods=ALL_METHODS,
    seed: int = 0,
) -> SelectionOutcome:
    """Run every selection method for every test target at every k.

    ``feature_table`` maps (source_id, target_id) to PairFeatures;
    ``fold_predictors`` holds one (scaler, model) per leave-groups-out
    fold.  Candidate evaluation reads precomputed accuracies from the
    matrix, mirroring a retrospective benchmark.
    """
    k_values = sorted(k_values)
    methods = list(methods)
    target_rows: dict = {m: {} for m in methods}

    for fold_idx, (train_ids, test_ids) in enumerate(lgo_folds):
        sub = matrix.submatrix(train_ids)
        predictor = fold_predictors[fold_idx] if fold_predictors else None
        for tid in test_ids:
            pool = list(train_ids)
            ctx = SelectionContext(
                target_id=tid,
                pool_ids=pool,
                pool_stats=stats,
                pair_features={s: feature_table[(s, tid)] for s in pool},
                training_matrix=sub.values,
                training_ids=list(train_ids),
                predictor=predictor,
                seed=subject_seed(seed, tid).generate_state(1)[0],
            )
            evaluator = lambda sid: matrix.lookup(tid, sid)  # noqa: E731
            intra_acc = float(matrix.intra[matrix.target_ids.index(tid)])
            oracle_id, oracle_acc = select_best(
                ctx,
                RankedCandidates(method=METHOD_ORACLE, ids=tuple(pool)),
                len(pool),
                evaluator,
            )
            rankings = {m: rank_sources(m, ctx) for m in RANKABLE_METHODS if m in methods}
            for m in methods:
                per_k = {}
                for k in k_values:
                    if m == METHOD_INTRA:
                        per_k[k] = intra_acc
                    elif m == METHOD_ORACLE:
                        per_k[k] = oracle_acc
                    elif m == METHOD_MAX_OF:
                        if k % 3 != 0:
                            per_k[k] = np.nan
                        else:
                            cands = max_of_methods(ctx, k // 3)
                            per_k[k] = select_best(ctx, cands, k, evaluator)[1]
                    else:
                        per_k[k] = select_best(ctx, rankings[m], k, evaluator)[1]
                target_rows[m][tid] = {
                    **target_rows[m].get(tid, {}),
                    **per_k,
                }

    ordered_targets = [t for t in matrix.target_ids if t in target_rows[methods[0]]]
    accuracy = {
        k: {
            m: np.array([target_rows[m][t][k] for t in ordered_targets])
            for m in methods
        }
        for k in k_values
    }
    return SelectionOutcome(
        methods=methods,
        k_values=k_values,
        target_ids=ordered_targets,
        accuracy=accuracy,
    )


def compare_methods(outcome: SelectionOutcome, k: int, alpha: float = 0.05) -> MethodComparison:
    """Pairwise mean differences at one candidate count, with significance."""
    if k not in outcome.accuracy:
        raise InputError(f"compare_methods: no results at k={k}")
    methods = outcome.methods
    acc = outcome.accuracy[k]
    n = len(methods)
    mean_diff = np.zeros((n, n))
    p_values = np.ones((n, n))
    not_different = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(not_different, True)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = acc[methods[i]], acc[methods[j]]
            if np.any(np.isnan(a)) or np.any(np.isnan(b)):
                mean_diff[i, j] = mean_diff[j, i] = np.nan
                p_values[i, j] = p_values[j, i] = np.nan
                not_different[i, j] = not_different[j, i] = True
                continue
            diffs = a - b
            d = float(np.mean(diffs))
            mean_diff[i, j] = d
            mean_diff[j, i] = -d
            p = wilcoxon_signed_rank(diffs)
            p_values[i, j] = p_values[j, i] = p
            nd = bool(p >= alpha)
            not_different[i, j] = not_different[j, i] = nd
    return MethodComparison(
        methods=list(methods),
        mean_diff=mean_diff,
        not_different=not_different,
        p_values=p_values,
    )


def candidate_sweep(outcome: SelectionOutcome) -> list[tuple[str, int, float]]:
    """Mean gap to Oracle per (method, k); Max-of-methods only at multiples of 3."""
    rows = []
    for k in outcome.k_values:
        acc = outcome.accuracy[k]
        oracle = acc[METHOD_ORACLE]
        for m in outcome.methods:
            if m == METHOD_MAX_OF and k % 3 != 0:
                continue
            gap = float(np.mean(oracle - acc[m]))
            rows.append((m, k, gap))
    return rows


def compute_all_stats(
    subjects: list[SubjectData], fold_seed: int = 0, n_folds: int = N_TARGET_FOLDS
) -> dict:
    """SubjectStats for every subject, with per-subject derived fold seeds."""
    return {
        s.subject_id: subject_stats(
            s, cv_folds=n_folds, seed=subject_seed(fold_seed, s.subject_id)
        )
        for s in subjects
    }


def filter_by_intra(
    subjects: list[SubjectData], stats: dict, threshold: float
) -> list[SubjectData]:
    """Drop subjects whose intra-subject accuracy is at or below threshold."""
    return [s for s in subjects if stats[s.subject_id].intra_accuracy > threshold]


def build_feature_table(
    subjects: list[SubjectData],
    stats: dict,
    fold_seed: int = 0,
    n_folds: int = N_TARGET_FOLDS,
) -> dict:
    """PairFeatures for every ordered (source, target) pair.

    The target side uses the training split of the target's first fold -
    the same split that opens the transfer-accuracy cross-validation - so
    ranking features and evaluation stay consistent and leakage-free.
    """
    source_summaries = {}
    target_summaries = {}
    for s in subjects:
        source_summaries[s.subject_id] = recentered_summary(s.covs, s.labels)
        train_idx = target_folds(s, fold_seed, n_folds)[0]
        target_summaries[s.subject_id] = recentered_summary(
            s.covs[train_idx], s.labels[train_idx]
        )
    table = {}
    for src in subjects:
        for tgt in subjects:
            if src.subject_id == tgt.subject_id:
                continue
            table[(src.subject_id, tgt.subject_id)] = assemble_pair_features(
                source_summaries[src.subject_id],
                target_summaries[tgt.subject_id],
                stats[src.subject_id].intra_accuracy,
            )
    return table


def train_fold_predictors(
    feature_table: dict,
    matrix: AccuracyMatrix,
    lgo_folds: list,
    train_cfg: TrainConfig = TrainConfig(),
) -> list[tuple[RobustScaler, MlpRegressor]]:
    """One predictor per leave-groups-out fold, trained only on pairs whose
    source and target are both training users of that fold."""
    models = []
    for fold_idx, (train_ids, _test_ids) in enumerate(lgo_folds):
        train_set = set(train_ids)
        rows = []
        targets = []
        for (src, tgt), feats in sorted(feature_table.items()):
            if src in train_set and tgt in train_set:
                rows.append(feats.to_array())
                targets.append(matrix.lookup(tgt, src))
        x = np.asarray(rows)
        y = np.asarray(targets)
        if x.shape[0] < 2:
            raise InputError(
                f"train_fold_predictors: fold {fold_idx} has {x.shape[0]} training pairs"
            )
        scaler = scaler_fit(x)
        cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate,
            batch_size=train_cfg.batch_size,
            max_epochs=train_cfg.max_epochs,
            patience=train_cfg.patience,
            validation_fraction=train_cfg.validation_fraction,
            seed=train_cfg.seed + fold_idx,
        )
        models.append((scaler, mlp_train(scaler.apply(x), y, cfg)))
    return models
