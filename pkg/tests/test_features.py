"""Subject statistics and the 18-entry pair feature vector."""

import numpy as np
import pytest

from covselect.data import SubjectData, SynthConfig, synth_generate
from covselect.exceptions import InputError
from covselect.features import (
    FEATURE_NAMES,
    PairFeatures,
    intra_subject_accuracy,
    pair_features,
    subject_stats,
)
from covselect.folds import subject_seed
from covselect.geometry import random_spd

RNG = np.random.default_rng(77)


def synth_subject(seed=0, n_per=10, dim=4, sep=1.5, disp=0.3):
    cfg = SynthConfig(n_subjects=1, trials_per_class=n_per, dim=dim,
                      class_separation=sep, subject_dispersion=disp,
                      domain_shift_scale=0.3, seed=seed)
    sub = synth_generate(cfg)[0]
    sub.subject_id = f"sub{seed}"
    return sub


class TestSubjectStats:
    def test_constant_classes_have_zero_dispersion(self):
        c1, c2 = random_spd(RNG, 3, 0.5), random_spd(RNG, 3, 0.5)
        covs = np.stack([c1] * 5 + [c2] * 5)
        labels = np.array([1] * 5 + [2] * 5)
        st = subject_stats(SubjectData("x", covs, labels), cv_folds=5)
        assert st.class_dispersion_1 == pytest.approx(0.0, abs=1e-12)
        assert st.class_dispersion_2 == pytest.approx(0.0, abs=1e-12)

    def test_separated_subject_has_high_intra(self):
        sub = synth_subject(seed=1, n_per=20, sep=3.0, disp=0.15)
        st = subject_stats(sub, seed=3)
        assert st.intra_accuracy >= 0.99

    def test_deterministic_given_seed(self):
        sub = synth_subject(seed=2)
        a = subject_stats(sub, seed=subject_seed(5, sub.subject_id))
        b = subject_stats(sub, seed=subject_seed(5, sub.subject_id))
        assert a.intra_accuracy == b.intra_accuracy
        assert np.array_equal(a.overall_mean, b.overall_mean)

    def test_too_few_trials_for_folds(self):
        sub = synth_subject(n_per=3)
        with pytest.raises(InputError, match="fewer than"):
            subject_stats(sub, cv_folds=5)

    def test_missing_class_rejected(self):
        covs = np.stack([random_spd(RNG, 3, 0.5) for _ in range(6)])
        with pytest.raises(InputError, match="missing class"):
            subject_stats(SubjectData("x", covs, np.ones(6, dtype=int)))

    def test_intra_accuracy_trains_on_one_fold(self):
        # 5 folds, train on one fold, test on the remaining four
        sub = synth_subject(seed=3, n_per=10)
        acc = intra_subject_accuracy(sub.covs, sub.labels, cv_folds=5, seed=0)
        assert 0.0 <= acc <= 1.0


class TestPairFeatures:
    def test_exactly_18_entries_in_documented_order(self):
        assert len(FEATURE_NAMES) == 18
        assert FEATURE_NAMES[0] == "d2_t1_t2"
        assert FEATURE_NAMES[12] == "source_intra_accuracy"
        assert FEATURE_NAMES[-1] == "disp_s2_minus_disp_t2"

    def test_same_data_pair_has_zero_cross_distances(self):
        sub = synth_subject(seed=4)
        st = subject_stats(sub)
        f = pair_features(sub, sub, st)
        assert f.d2_t1_s1 == pytest.approx(0.0, abs=1e-10)
        assert f.d2_t2_s2 == pytest.approx(0.0, abs=1e-10)
        assert f.d2_t1_t2_minus_d2_s1_s2 == 0.0
        assert f.d2_t1_s2_minus_d2_t1_s1 == pytest.approx(f.d2_t1_s2, abs=1e-12)
        assert f.disp_s1_minus_disp_t1 == 0.0
        assert f.disp_s2_minus_disp_t2 == 0.0

    def test_nonnegative_distance_and_dispersion_entries(self):
        src, tgt = synth_subject(seed=5), synth_subject(seed=6)
        f = pair_features(src, tgt, subject_stats(src))
        arr = f.to_array()
        assert np.all(arr[:12] >= 0.0)

    def test_differences_equal_entry_subtraction_exactly(self):
        src, tgt = synth_subject(seed=7), synth_subject(seed=8)
        f = pair_features(src, tgt, subject_stats(src))
        assert f.d2_t1_t2_minus_d2_s1_s2 == f.d2_t1_t2 - f.d2_s1_s2
        assert f.d2_t1_s2_minus_d2_t1_s1 == f.d2_t1_s2 - f.d2_t1_s1
        assert f.d2_t2_s1_minus_d2_t2_s2 == f.d2_t2_s1 - f.d2_t2_s2
        assert f.disp_s1_minus_disp_t1 == f.disp_s1 - f.disp_t1
        assert f.disp_s2_minus_disp_t2 == f.disp_s2 - f.disp_t2

    def test_scalar_congruence_invariance(self):
        # recentring absorbs a scaling congruence completely
        src, tgt = synth_subject(seed=9), synth_subject(seed=10)
        st = subject_stats(src)
        base = pair_features(src, tgt, st).to_array()
        moved = SubjectData(src.subject_id, 7.3 * src.covs, src.labels.copy())
        got = pair_features(moved, tgt, st).to_array()
        assert np.allclose(got, base, atol=1e-6)

    def test_within_domain_entries_invariant_under_general_congruence(self):
        # a general congruence leaves an orthogonal residual after
        # recentring; that rotates the cross distances (by design - the
        # alignment step exists to remove it) but every within-domain
        # entry is invariant
        src, tgt = synth_subject(seed=9), synth_subject(seed=10)
        st = subject_stats(src)
        base = pair_features(src, tgt, st)
        a = RNG.standard_normal((4, 4)) + 2.5 * np.eye(4)
        moved = SubjectData(
            src.subject_id,
            np.einsum("ab,nbc,dc->nad", a, src.covs, a),
            src.labels.copy(),
        )
        got = pair_features(moved, tgt, st)
        for name in (
            "d2_t1_t2", "d2_s1_s2", "disp_t", "disp_t1", "disp_t2",
            "disp_s", "disp_s1", "disp_s2", "source_intra_accuracy",
        ):
            assert getattr(got, name) == pytest.approx(
                getattr(base, name), abs=1e-6
            )

    def test_accuracy_entry_comes_from_source_stats(self):
        src, tgt = synth_subject(seed=11), synth_subject(seed=12)
        st = subject_stats(src)
        f = pair_features(src, tgt, st)
        assert f.source_intra_accuracy == st.intra_accuracy

    def test_array_round_trip(self):
        src, tgt = synth_subject(seed=13), synth_subject(seed=14)
        f = pair_features(src, tgt, subject_stats(src))
        back = PairFeatures.from_array(f.to_array())
        assert back == f

    def test_missing_class_rejected(self):
        src, tgt = synth_subject(seed=15), synth_subject(seed=16)
        bad = SubjectData("b", tgt.covs, np.ones_like(tgt.labels))
        with pytest.raises(InputError):
            pair_features(src, bad, subject_stats(src))
