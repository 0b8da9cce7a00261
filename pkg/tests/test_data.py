"""Covset file format and synthetic generator properties."""

import gzip
import json

import numpy as np
import pytest

from covselect.data import (
    SubjectData,
    SynthConfig,
    covset_read,
    covset_write,
    dataset_is_synthetic,
    synth_generate,
)
from covselect.exceptions import InputError, ValidationError
from covselect.features import intra_subject_accuracy
from covselect.geometry import airm_distance, dispersion, karcher_mean, random_spd

RNG = np.random.default_rng(31)


def make_subjects(n=3, trials=4, dim=3):
    subs = []
    for i in range(n):
        covs = np.stack([random_spd(RNG, dim, 0.5) for _ in range(trials)])
        labels = np.array([1, 2] * (trials // 2))
        subs.append(
            SubjectData(f"P{i}", covs, labels, metadata={"site": "lab", "index": i})
        )
    return subs


class TestCovsetRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path):
        subs = make_subjects()
        path = tmp_path / "d.covset.json"
        covset_write(path, subs)
        back = covset_read(path)
        assert [s.subject_id for s in back] == [s.subject_id for s in subs]
        for a, b in zip(subs, back):
            assert np.array_equal(a.covs, b.covs)
            assert np.array_equal(a.labels, b.labels)
            assert a.metadata == b.metadata

    def test_gzip_round_trip_deterministic(self, tmp_path):
        subs = make_subjects()
        p1, p2 = tmp_path / "a.covset.json.gz", tmp_path / "b.covset.json.gz"
        covset_write(p1, subs)
        covset_write(p2, subs)
        assert p1.read_bytes() == p2.read_bytes()
        back = covset_read(p1)
        assert np.array_equal(back[0].covs, subs[0].covs)

    def test_empty_covset(self, tmp_path):
        path = tmp_path / "empty.covset.json"
        covset_write(path, [], dim=9)
        assert covset_read(path) == []

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.covset.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ValidationError, match="line"):
            covset_read(path)

    def test_full_matrix_entry_accepted(self, tmp_path):
        c = random_spd(RNG, 3, 0.5)
        doc = {
            "version": 1,
            "dim": 3,
            "subjects": [
                {"id": "X", "metadata": {}, "trials": [{"label": 1, "matrix": c.ravel().tolist()}]}
            ],
        }
        path = tmp_path / "full.covset.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        back = covset_read(path)
        assert np.allclose(back[0].covs[0], c)

    def test_asymmetric_full_matrix_rejected(self, tmp_path):
        c = random_spd(RNG, 3, 0.5)
        c[0, 1] += 0.01
        doc = {
            "version": 1,
            "dim": 3,
            "subjects": [
                {"id": "X", "metadata": {}, "trials": [{"label": 1, "matrix": c.ravel().tolist()}]}
            ],
        }
        path = tmp_path / "asym.covset.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ValidationError, match="asymmetric"):
            covset_read(path)

    def test_non_pd_trial_names_subject_and_index(self, tmp_path):
        doc = {
            "version": 1,
            "dim": 2,
            "subjects": [
                {"id": "P7", "metadata": {},
                 "trials": [{"label": 1, "matrix": [1.0, 0.0, 1.0]},
                            {"label": 2, "matrix": [-1.0, 0.0, -2.0]}]}
            ],
        }
        path = tmp_path / "npd.covset.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ValidationError, match="'P7' trial 1"):
            covset_read(path)

    def test_write_validates_matrices(self, tmp_path):
        sub = make_subjects(n=1)[0]
        sub.covs[0] = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(ValidationError):
            covset_write(tmp_path / "x.covset.json", [sub])


class TestSynthGenerate:
    def test_zero_dispersion_trials_equal_class_means(self):
        cfg = SynthConfig(n_subjects=2, trials_per_class=3, dim=4,
                          class_separation=1.0, subject_dispersion=0.0,
                          domain_shift_scale=0.4, seed=1)
        for sub in synth_generate(cfg):
            for lab in (1, 2):
                group = sub.covs[sub.labels == lab]
                assert np.allclose(group, group[0], atol=1e-12)

    def test_zero_shift_shares_class_means(self):
        cfg = SynthConfig(n_subjects=3, trials_per_class=2, dim=4,
                          class_separation=1.5, subject_dispersion=0.0,
                          domain_shift_scale=0.0, seed=2)
        subs = synth_generate(cfg)
        for lab in (1, 2):
            ref = subs[0].covs[subs[0].labels == lab][0]
            for sub in subs[1:]:
                assert np.allclose(sub.covs[sub.labels == lab][0], ref, atol=1e-12)

    def test_planted_class_separation(self):
        cfg = SynthConfig(n_subjects=1, trials_per_class=1, dim=5,
                          class_separation=1.7, subject_dispersion=0.0,
                          domain_shift_scale=0.5, seed=3)
        sub = synth_generate(cfg)[0]
        c1 = sub.covs[sub.labels == 1][0]
        c2 = sub.covs[sub.labels == 2][0]
        assert airm_distance(c1, c2) == pytest.approx(1.7, rel=1e-9)

    def test_deterministic_given_seed(self):
        cfg = SynthConfig(n_subjects=3, trials_per_class=4, dim=4, seed=9)
        a = synth_generate(cfg)
        b = synth_generate(cfg)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.covs, sb.covs)
            assert np.array_equal(sa.labels, sb.labels)

    def test_generated_trials_pass_validation(self, tmp_path):
        cfg = SynthConfig(n_subjects=2, trials_per_class=5, dim=9,
                          subject_dispersion=0.4, seed=4)
        covset_write(tmp_path / "g.covset.json", synth_generate(cfg))

    def test_metadata_marks_synthetic(self):
        subs = synth_generate(SynthConfig(n_subjects=2, trials_per_class=2, seed=0))
        assert dataset_is_synthetic(subs)
        assert not dataset_is_synthetic(make_subjects())

    def test_dispersion_second_moment(self):
        # Monte-Carlo oracle: the tangent noise is a symmetric Gaussian with
        # diagonal variance s^2 and off-diagonal variance s^2/2, so the
        # expected squared distance from the class mean is
        # E||Z||_F^2 = s^2 * d(d+1)/2.
        dim, s = 9, 0.3
        cfg = SynthConfig(n_subjects=1, trials_per_class=200, dim=dim,
                          class_separation=1.0, subject_dispersion=s,
                          domain_shift_scale=0.0, seed=5)
        sub = synth_generate(cfg)[0]
        expected = s**2 * dim * (dim + 1) / 2.0
        for lab in (1, 2):
            covs = sub.covs[sub.labels == lab]
            d = dispersion(covs, karcher_mean(covs))
            assert d == pytest.approx(expected, rel=0.2)

    def test_separation_increases_intra_accuracy(self):
        medians = []
        for sep in (0.25, 0.6, 1.4):
            accs = []
            for seed in range(10):
                cfg = SynthConfig(n_subjects=1, trials_per_class=15, dim=5,
                                  class_separation=sep, subject_dispersion=0.35,
                                  domain_shift_scale=0.3, seed=100 + seed)
                sub = synth_generate(cfg)[0]
                accs.append(intra_subject_accuracy(sub.covs, sub.labels, seed=seed))
            medians.append(float(np.median(accs)))
        assert medians[0] < medians[1] < medians[2]

    def test_group_assignment_roundrobin_and_explicit(self):
        ts = {"n_groups": 3}
        cfg = SynthConfig(n_subjects=6, trials_per_class=2, dim=3,
                          transferability_structure=ts, seed=0)
        groups = [s.metadata["group"] for s in synth_generate(cfg)]
        assert groups == [0, 1, 2, 0, 1, 2]
        ts2 = {"assignments": [1, 1, 0, 0, 1, 0]}
        cfg2 = SynthConfig(n_subjects=6, trials_per_class=2, dim=3,
                           transferability_structure=ts2, seed=0)
        groups2 = [s.metadata["group"] for s in synth_generate(cfg2)]
        assert groups2 == [1, 1, 0, 0, 1, 0]

    def test_config_validation(self):
        with pytest.raises(InputError):
            SynthConfig(n_subjects=0, trials_per_class=2)
        with pytest.raises(InputError):
            SynthConfig(n_subjects=2, trials_per_class=2, subject_dispersion=-1.0)
        with pytest.raises(InputError):
            SynthConfig.from_dict({"n_subjects": 2, "trials_per_class": 2, "bogus": 1})
