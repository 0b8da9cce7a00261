"""Source-selection strategies and the k-candidate evaluation protocol.

Candidate ranking is cheap (no transfer-learning runs); only the top-k
candidates of a ranking are then evaluated with the full alignment +
classification procedure, and the best evaluated candidate wins.  The
Oracle evaluates the whole pool (the performance ceiling) and the
intra-subject baseline uses no source at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import SubjectData
from .exceptions import CovselectError, InputError
from .features import PairFeatures, SubjectStats
from .predictor import MlpRegressor, RobustScaler

log = logging.getLogger(__name__)

METHOD_INTRA = "intra-subject"
METHOD_RANDOM = "random"
METHOD_DISTANCE = "distance"
METHOD_BEST_SOURCE = "best-source"
METHOD_BEST_TEACHER = "best-teacher"
METHOD_MAX_OF = "max-of-methods"
METHOD_TPP = "tpp"  # transfer-performance prediction
METHOD_ORACLE = "oracle"

ALL_METHODS = (
    METHOD_INTRA,
    METHOD_RANDOM,
    METHOD_DISTANCE,
    METHOD_BEST_SOURCE,
    METHOD_BEST_TEACHER,
    METHOD_MAX_OF,
    METHOD_TPP,
    METHOD_ORACLE,
)
RANKABLE_METHODS = (
    METHOD_RANDOM,
    METHOD_DISTANCE,
    METHOD_BEST_SOURCE,
    METHOD_BEST_TEACHER,
    METHOD_TPP,
)


@dataclass
class SelectionContext:
    """Everything one target's selection round may legitimately see.

    The pool holds training-fold users only (never the target, never any
    other held-out user); the training accuracy matrix is restricted the
    same way, so nothing about held-out users can leak into a ranking.
    """

    target_id: str
    pool_ids: list  # candidate source ids, fixed order
    pool_stats: dict  # id -> SubjectStats
    pair_features: dict  # (source_id) -> PairFeatures vs. this target's train split
    training_matrix: np.ndarray | None = None  # (n_train, n_train) accuracies
    training_ids: list = field(default_factory=list)  # row/col ids of training_matrix
    predictor: tuple[RobustScaler, MlpRegressor] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.target_id in self.pool_ids:
            raise InputError(
                f"SelectionContext: target {self.target_id!r} present in pool"
            )


@dataclass(frozen=True)
class RankedCandidates:
    method: str
    ids: tuple
    scores: tuple | None = None


def _ranked(method, ids_scores, descending: bool) -> RankedCandidates:
    """Stable sort by score (pool order breaks ties)."""
    sign = -1.0 if descending else 1.0
    order = sorted(range(len(ids_scores)), key=lambda i: (sign * ids_scores[i][1], i))
    return RankedCandidates(
        method=method,
        ids=tuple(ids_scores[i][0] for i in order),
        scores=tuple(ids_scores[i][1] for i in order),
    )


def _best_teacher_scores(ctx: SelectionContext) -> dict:
    """Win counts: how often each training user is the argmax source column
    for another training user, excluding self-pairs; ties by column mean."""
    if ctx.training_matrix is None or not ctx.training_ids:
        raise InputError("best-teacher ranking needs the training accuracy matrix")
    m = np.asarray(ctx.training_matrix, dtype=np.float64)
    ids = list(ctx.training_ids)
    n = len(ids)
    if m.shape != (n, n):
        raise InputError("best-teacher: matrix shape does not match training ids")
    wins = np.zeros(n)
    col_sum = np.zeros(n)
    col_cnt = np.zeros(n)
    for i in range(n):
        row = m[i].copy()
        row[i] = -np.inf
        wins[int(np.argmax(row))] += 1.0
        for j in range(n):
            if j != i:
                col_sum[j] += m[i, j]
                col_cnt[j] += 1.0
    col_mean = np.divide(col_sum, np.maximum(col_cnt, 1.0))
    return {sid: (float(wins[j]), float(col_mean[j])) for j, sid in enumerate(ids)}


def rank_sources(method: str, ctx: SelectionContext) -> RankedCandidates:
    """Full ordering of the candidate pool under one strategy (best first)."""
    if not ctx.pool_ids:
        raise InputError("rank_sources: empty candidate pool")
    if method == METHOD_RANDOM:
        rng = np.random.default_rng(ctx.seed)
        order = rng.permutation(len(ctx.pool_ids))
        return RankedCandidates(
            method=method, ids=tuple(ctx.pool_ids[i] for i in order), scores=None
        )
    if method == METHOD_DISTANCE:
        pairs = []
        for sid in ctx.pool_ids:
            f = ctx.pair_features[sid]
            pairs.append((sid, 0.5 * (f.d2_t1_s1 + f.d2_t2_s2)))
        return _ranked(method, pairs, descending=False)
    if method == METHOD_BEST_SOURCE:
        pairs = [(sid, ctx.pool_stats[sid].intra_accuracy) for sid in ctx.pool_ids]
        return _ranked(method, pairs, descending=True)
    if method == METHOD_BEST_TEACHER:
        scores = _best_teacher_scores(ctx)
        pairs = [(sid, scores[sid]) for sid in ctx.pool_ids]
        sign = lambda s: (-s[0], -s[1])  # noqa: E731 - wins first, then column mean
        order = sorted(range(len(pairs)), key=lambda i: (*sign(pairs[i][1]), i))
        return RankedCandidates(
            method=method,
            ids=tuple(pairs[i][0] for i in order),
            scores=tuple(pairs[i][1][0] for i in order),
        )
    if method == METHOD_TPP:
        if ctx.predictor is None:
            raise InputError("rank_sources: TPP requested but no predictor configured")
        scaler, model = ctx.predictor
        pairs = []
        for sid in ctx.pool_ids:
            x = scaler.apply(ctx.pair_features[sid].to_array())
            pairs.append((sid, float(model.predict_raw(x)[0])))
        return _ranked(method, pairs, descending=True)
    raise InputError(f"rank_sources: {method!r} is not a rankable method")


def max_of_methods(ctx: SelectionContext, per_method_count: int) -> RankedCandidates:
    """Round-robin union of the Best-source, Best-teacher, and TPP shortlists.

    Takes the top ``per_method_count`` of each, interleaves them, drops
    duplicates keeping the first occurrence, and backfills from TPP's
    next-ranked candidates until 3 * per_method_count distinct ids (or the
    pool runs out, which just truncates the list).
    """
    if per_method_count < 1:
        raise InputError("max_of_methods: per_method_count must be >= 1")
    rankings = [
        rank_sources(METHOD_BEST_SOURCE, ctx),
        rank_sources(METHOD_BEST_TEACHER, ctx),
        rank_sources(METHOD_TPP, ctx),
    ]
    want = min(3 * per_method_count, len(ctx.pool_ids))
    seen = []
    for rank in range(per_method_count):
        for r in rankings:
            if rank < len(r.ids) and r.ids[rank] not in seen:
                seen.append(r.ids[rank])
    for sid in rankings[2].ids:
        if len(seen) >= want:
            break
        if sid not in seen:
            seen.append(sid)
    return RankedCandidates(method=METHOD_MAX_OF, ids=tuple(seen[:want]), scores=None)


def select_best(
    ctx: SelectionContext,
    candidates: RankedCandidates,
    k: int,
    evaluator,
) -> tuple[str, float]:
    """Evaluate the top-k candidates and return the winner.

    ``evaluator(source_id) -> accuracy`` runs the full alignment +
    classification procedure (or reads a precomputed value).  Ties go to
    the earlier rank; failed evaluations are skipped with a warning.
    """
    if k < 1:
        raise InputError("select_best: k must be >= 1")
    short = candidates.ids[:k]
    if not short:
        raise InputError("select_best: empty candidate list")
    best_id, best_acc = None, -np.inf
    for sid in short:
        try:
            acc = float(evaluator(sid))
        except CovselectError as exc:
            log.warning(
                "select_best: evaluation of source %r for target %r failed: %s",
                sid,
                ctx.target_id,
                exc,
            )
            continue
        if acc > best_acc:
            best_id, best_acc = sid, acc
    if best_id is None:
        raise InputError(
            f"select_best: every candidate evaluation failed for target "
            f"{ctx.target_id!r}"
        )
    return best_id, best_acc
