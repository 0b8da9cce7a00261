"""Selection strategies: rankings, shortlist merging, candidate evaluation."""

import numpy as np
import pytest

from covselect.exceptions import InputError
from covselect.features import PairFeatures, SubjectStats
from covselect.predictor import MlpRegressor, RobustScaler
from covselect.selection import (
    METHOD_BEST_SOURCE,
    METHOD_BEST_TEACHER,
    METHOD_DISTANCE,
    METHOD_RANDOM,
    METHOD_TPP,
    RankedCandidates,
    SelectionContext,
    max_of_methods,
    rank_sources,
    select_best,
)


def fake_features(d11=1.0, d22=1.0, extra=0.0):
    vals = dict.fromkeys(
        [
            "d2_t1_t2", "d2_s1_s2", "d2_t1_s1", "d2_t1_s2", "d2_t2_s1", "d2_t2_s2",
            "disp_t", "disp_t1", "disp_t2", "disp_s", "disp_s1", "disp_s2",
            "source_intra_accuracy",
            "d2_t1_t2_minus_d2_s1_s2", "d2_t1_s2_minus_d2_t1_s1",
            "d2_t2_s1_minus_d2_t2_s2", "disp_s1_minus_disp_t1", "disp_s2_minus_disp_t2",
        ],
        0.5,
    )
    vals["d2_t1_s1"] = d11
    vals["d2_t2_s2"] = d22
    vals["disp_s"] = 0.5 + extra
    return PairFeatures(**vals)


def fake_stats(sid, intra):
    eye = np.eye(2)
    return SubjectStats(
        subject_id=sid, overall_mean=eye, class_mean_1=eye, class_mean_2=eye,
        overall_dispersion=1.0, class_dispersion_1=1.0, class_dispersion_2=1.0,
        intra_accuracy=intra,
    )


def constant_predictor(weights_scale=0.0, bias=0.5):
    weights = [np.zeros((18, 50)), np.zeros((50, 50)), np.zeros((50, 1))]
    biases = [np.zeros(50), np.zeros(50), np.array([bias])]
    scaler = RobustScaler(median=np.zeros(18), iqr=np.ones(18))
    return scaler, MlpRegressor(weights, biases)


def linear_predictor(coeffs):
    """Predictor whose raw output is a fixed linear function of the features."""
    w1 = np.zeros((18, 50))
    w1[:, 0] = coeffs
    w1[:, 1] = -np.asarray(coeffs)
    w2 = np.zeros((50, 50))
    w2[0, 0] = 1.0
    w2[1, 1] = 1.0
    w3 = np.zeros((50, 1))
    w3[0, 0] = 1.0
    w3[1, 0] = -1.0  # relu(x) - relu(-x) = x
    biases = [np.zeros(50), np.zeros(50), np.zeros(1)]
    scaler = RobustScaler(median=np.zeros(18), iqr=np.ones(18))
    return scaler, MlpRegressor([w1, w2, w3], biases)


def make_ctx(pool, features, stats=None, matrix=None, training_ids=None,
             predictor=None, seed=0):
    return SelectionContext(
        target_id="T",
        pool_ids=list(pool),
        pool_stats=stats or {},
        pair_features=features,
        training_matrix=matrix,
        training_ids=training_ids or [],
        predictor=predictor,
        seed=seed,
    )


class TestRankSources:
    def test_pool_of_one(self):
        ctx = make_ctx(["a"], {"a": fake_features()}, stats={"a": fake_stats("a", 0.7)})
        for method in (METHOD_RANDOM, METHOD_DISTANCE, METHOD_BEST_SOURCE):
            assert rank_sources(method, ctx).ids == ("a",)

    def test_distance_prefers_duplicate_of_target(self):
        features = {
            "twin": fake_features(d11=0.0, d22=0.0),
            "far": fake_features(d11=2.0, d22=3.0),
        }
        ctx = make_ctx(["far", "twin"], features)
        ranked = rank_sources(METHOD_DISTANCE, ctx)
        assert ranked.ids[0] == "twin"
        assert ranked.scores[0] == 0.0
        assert ranked.scores[1] == pytest.approx(2.5)

    def test_best_source_orders_by_intra(self):
        stats = {s: fake_stats(s, a) for s, a in [("a", 0.6), ("b", 0.9), ("c", 0.75)]}
        ctx = make_ctx(["a", "b", "c"], {}, stats=stats)
        assert rank_sources(METHOD_BEST_SOURCE, ctx).ids == ("b", "c", "a")

    def test_best_teacher_constructed_matrix(self):
        # column 1 ('b') is the row-max for every other row
        ids = ["a", "b", "c"]
        m = np.array([
            [0.70, 0.90, 0.60],
            [0.65, 0.70, 0.60],
            [0.62, 0.95, 0.70],
        ])
        ctx = make_ctx(ids, {}, matrix=m, training_ids=ids)
        ranked = rank_sources(METHOD_BEST_TEACHER, ctx)
        assert ranked.ids[0] == "b"
        assert ranked.scores[0] == 2.0

    def test_best_teacher_tie_broken_by_column_mean(self):
        ids = ["a", "b", "c", "d"]
        m = np.array([
            [0.5, 0.9, 0.1, 0.1],
            [0.9, 0.5, 0.1, 0.1],
            [0.1, 0.1, 0.5, 0.9],
            [0.1, 0.1, 0.9, 0.5],
        ])
        # wins: b=1 (row a), a=1 (row b), d=1 (row c), c=1 (row d); tie on
        # wins for all four, so descending column mean decides
        ctx = make_ctx(ids, {}, matrix=m, training_ids=ids)
        ranked = rank_sources(METHOD_BEST_TEACHER, ctx)
        col_means = [(m[:, j].sum() - m[j, j]) / 3 for j in range(4)]
        best = ids[int(np.argmax(col_means))]
        assert ranked.ids[0] == best

    def test_random_deterministic_and_seed_dependent(self):
        features = {s: fake_features() for s in "abcdef"}
        ctx1 = make_ctx(list("abcdef"), features, seed=42)
        ctx2 = make_ctx(list("abcdef"), features, seed=42)
        ctx3 = make_ctx(list("abcdef"), features, seed=43)
        assert rank_sources(METHOD_RANDOM, ctx1).ids == rank_sources(METHOD_RANDOM, ctx2).ids
        assert rank_sources(METHOD_RANDOM, ctx1).ids != rank_sources(METHOD_RANDOM, ctx3).ids

    def test_tpp_ranks_by_raw_prediction(self):
        features = {
            "good": fake_features(extra=-0.4),
            "bad": fake_features(extra=0.4),
        }
        coeffs = np.zeros(18)
        coeffs[9] = -1.0  # prediction decreases with disp_s
        ctx = make_ctx(["bad", "good"], features, predictor=linear_predictor(coeffs))
        ranked = rank_sources(METHOD_TPP, ctx)
        assert ranked.ids == ("good", "bad")

    def test_tpp_without_predictor_rejected(self):
        ctx = make_ctx(["a"], {"a": fake_features()})
        with pytest.raises(InputError, match="predictor"):
            rank_sources(METHOD_TPP, ctx)

    def test_target_in_pool_rejected(self):
        with pytest.raises(InputError):
            SelectionContext(
                target_id="T", pool_ids=["T", "a"], pool_stats={},
                pair_features={},
            )


class TestMaxOfMethods:
    def _ctx_with_rankings(self, bs_order, bt_order, tpp_order):
        """Craft stats/matrix/predictor so the three shortlists are fixed."""
        ids = sorted(set(bs_order) | set(bt_order) | set(tpp_order))
        stats = {
            s: fake_stats(s, 1.0 - bs_order.index(s) * 0.01) for s in ids
        }
        n = len(ids)
        m = np.full((n, n), 0.5)
        # graded column bumps: the top column wins every row except its own
        # (where the runner-up wins), and column means settle the rest
        for rank, s in enumerate(bt_order):
            m[:, ids.index(s)] += (len(bt_order) - rank) * 1e-3
        coeffs = np.zeros(18)
        coeffs[9] = -1.0
        features = {
            s: fake_features(extra=tpp_order.index(s) * 0.1) for s in ids
        }
        ctx = make_ctx(ids, features, stats=stats, matrix=m, training_ids=ids,
                       predictor=linear_predictor(coeffs))
        return ctx

    def test_disjoint_top_lists_round_robin(self):
        ctx = self._ctx_with_rankings(
            bs_order=["a", "b", "c", "d", "e", "f"],
            bt_order=["c", "d", "a", "b", "e", "f"],
            tpp_order=["e", "f", "a", "b", "c", "d"],
        )
        got = max_of_methods(ctx, 2)
        assert got.ids == ("a", "c", "e", "b", "d", "f")

    def test_identical_rankings_take_prefix(self):
        order = ["a", "b", "c", "d", "e", "f"]
        ctx = self._ctx_with_rankings(order, order, order)
        got = max_of_methods(ctx, 2)
        assert got.ids == tuple(order)

    def test_duplicate_backfilled_from_tpp(self):
        ctx = self._ctx_with_rankings(
            bs_order=["a", "b", "c", "d"],
            bt_order=["a", "c", "b", "d"],  # duplicate 'a' at rank 0
            tpp_order=["b", "d", "a", "c"],
        )
        got = max_of_methods(ctx, 1)
        # round robin gives a, (a dup), b; backfill from tpp: d
        assert got.ids == ("a", "b", "d")
        assert len(got.ids) == 3

    def test_truncates_when_pool_small(self):
        ctx = self._ctx_with_rankings(
            bs_order=["a", "b"], bt_order=["a", "b"], tpp_order=["b", "a"]
        )
        got = max_of_methods(ctx, 2)
        assert set(got.ids) == {"a", "b"}


class TestSelectBest:
    def test_k1_takes_top_ranked(self):
        ctx = make_ctx(["a", "b"], {})
        acc = {"a": 0.6, "b": 0.9}
        cands = RankedCandidates(method="x", ids=("b", "a"))
        assert select_best(ctx, cands, 1, acc.__getitem__) == ("b", 0.9)

    def test_exhaustive_equals_oracle(self):
        ctx = make_ctx(list("abcd"), {})
        acc = {"a": 0.4, "b": 0.8, "c": 0.9, "d": 0.1}
        cands = RankedCandidates(method="x", ids=("d", "a", "b", "c"))
        assert select_best(ctx, cands, 4, acc.__getitem__) == ("c", 0.9)

    def test_monotone_in_k(self):
        ctx = make_ctx(list("abcdef"), {})
        rng = np.random.default_rng(0)
        acc = {s: float(rng.random()) for s in "abcdef"}
        cands = RankedCandidates(method="x", ids=tuple("abcdef"))
        prev = -1.0
        for k in range(1, 7):
            _, a = select_best(ctx, cands, k, acc.__getitem__)
            assert a >= prev
            prev = a

    def test_tie_goes_to_earlier_rank(self):
        ctx = make_ctx(["a", "b"], {})
        cands = RankedCandidates(method="x", ids=("b", "a"))
        assert select_best(ctx, cands, 2, lambda s: 0.7)[0] == "b"

    def test_failures_skipped_with_warning(self, caplog):
        from covselect.exceptions import NumericalError

        ctx = make_ctx(["a", "b"], {})

        def evaluator(s):
            if s == "a":
                raise NumericalError("boom")
            return 0.5

        cands = RankedCandidates(method="x", ids=("a", "b"))
        with caplog.at_level("WARNING"):
            got = select_best(ctx, cands, 2, evaluator)
        assert got == ("b", 0.5)
        assert any("boom" in r.message for r in caplog.records)

    def test_all_failures_raise(self):
        from covselect.exceptions import NumericalError

        ctx = make_ctx(["a"], {})

        def evaluator(s):
            raise NumericalError("nope")

        with pytest.raises(InputError, match="every candidate"):
            select_best(ctx, RankedCandidates(method="x", ids=("a",)), 1, evaluator)
