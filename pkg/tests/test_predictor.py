"""Robust scaler and MLP regressor, including the gradient oracle."""

import numpy as np
import pytest

from covselect.exceptions import InputError
from covselect.predictor import (
    LAYER_SIZES,
    MlpRegressor,
    TrainConfig,
    _init_params,
    load_model,
    loss_and_grad,
    mlp_train,
    predict_accuracy,
    predict_accuracy_raw,
    save_model,
    scaler_apply,
    scaler_fit,
)

RNG = np.random.default_rng(17)


class TestRobustScaler:
    def test_constant_column_passes_through(self):
        x = RNG.standard_normal((20, 3))
        x[:, 1] = 4.2
        scaler = scaler_fit(x)
        out = scaler_apply(scaler, x)
        assert np.allclose(out[:, 1], 4.2)

    def test_fit_apply_normalizes_median_and_iqr(self):
        x = RNG.standard_normal((101, 5)) * [1, 10, 0.1, 3, 7] + [0, 5, -2, 1, 0]
        out = scaler_apply(scaler_fit(x), x)
        med = np.median(out, axis=0)
        iqr = np.percentile(out, 75, axis=0) - np.percentile(out, 25, axis=0)
        assert np.allclose(med, 0.0, atol=1e-12)
        assert np.allclose(iqr, 1.0, atol=1e-12)

    def test_matches_sort_based_quantile_oracle(self):
        x = RNG.standard_normal((57, 4))
        scaler = scaler_fit(x)

        def quantile(col, q):
            # sort-based with linear interpolation between order statistics
            s = np.sort(col)
            pos = q * (len(s) - 1)
            lo, hi = int(np.floor(pos)), int(np.ceil(pos))
            frac = pos - lo
            return s[lo] * (1 - frac) + s[hi] * frac

        for j in range(4):
            assert scaler.median[j] == pytest.approx(quantile(x[:, j], 0.5), abs=1e-12)
            assert scaler.iqr[j] == pytest.approx(
                quantile(x[:, j], 0.75) - quantile(x[:, j], 0.25), abs=1e-12
            )

    def test_needs_two_samples(self):
        with pytest.raises(InputError):
            scaler_fit(np.ones((1, 3)))


class TestGradients:
    def test_backprop_matches_central_differences(self):
        # the load-bearing numerical check: 10 random coordinates x 5 seeds
        for seed in range(5):
            rng = np.random.default_rng(seed)
            weights, biases = _init_params(rng, (6, 8, 8, 1))
            x = rng.standard_normal((12, 6))
            y = rng.standard_normal(12)
            _, g_w, g_b = loss_and_grad(weights, biases, x, y)
            params = weights + biases
            grads = g_w + g_b
            h = 1e-6
            for _ in range(10):
                p_idx = rng.integers(len(params))
                flat = params[p_idx].reshape(-1)
                c_idx = rng.integers(flat.size)
                orig = flat[c_idx]
                flat[c_idx] = orig + h
                lp = loss_and_grad(weights, biases, x, y)[0]
                flat[c_idx] = orig - h
                lm = loss_and_grad(weights, biases, x, y)[0]
                flat[c_idx] = orig
                fd = (lp - lm) / (2 * h)
                assert grads[p_idx].reshape(-1)[c_idx] == pytest.approx(
                    fd, rel=1e-5, abs=1e-10
                )


class TestTraining:
    def test_overfits_linear_map(self):
        # weight decay keeps the interpolation linear enough to also cover
        # the internal validation split, so the fit holds on every sample
        rng = np.random.default_rng(3)
        x = rng.standard_normal((50, 6))
        w = rng.standard_normal(6) * 0.3
        y = x @ w + 0.1
        cfg = TrainConfig(max_epochs=3000, patience=3000, weight_decay=1.0, seed=0)
        model = mlp_train(x, y, cfg)
        final = float(np.mean((model.predict_raw(x) - y) ** 2))
        assert final < 1e-3

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        cfg = TrainConfig(max_epochs=50, seed=11)
        a = mlp_train(x, y, cfg)
        b = mlp_train(x, y, cfg)
        assert np.array_equal(a.predict_raw(x), b.predict_raw(x))

    def test_architecture_is_fixed(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((30, 18))
        y = rng.random(30)
        model = mlp_train(x, y, TrainConfig(max_epochs=5, seed=0))
        assert model.layer_sizes == LAYER_SIZES

    def test_weight_decay_shrinks_weights(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((60, 5))
        y = rng.random(60)
        plain = mlp_train(x, y, TrainConfig(max_epochs=60, patience=60, seed=0))
        decayed = mlp_train(
            x, y, TrainConfig(max_epochs=60, patience=60, weight_decay=5.0, seed=0)
        )
        assert sum(np.abs(w).sum() for w in decayed.weights) < sum(
            np.abs(w).sum() for w in plain.weights
        )

    def test_input_validation(self):
        with pytest.raises(InputError):
            mlp_train(np.ones((1, 3)), np.ones(1))
        with pytest.raises(InputError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InputError):
            TrainConfig(weight_decay=-1.0)


class TestPrediction:
    def test_pure_function(self):
        rng = np.random.default_rng(7)
        weights, biases = _init_params(rng)
        model = MlpRegressor(weights, biases)
        f = rng.standard_normal(18)
        scaler = scaler_fit(rng.standard_normal((10, 18)))
        assert predict_accuracy(scaler, model, f) == predict_accuracy(scaler, model, f)

    def test_zero_weight_network_outputs_bias(self):
        weights = [np.zeros((18, 50)), np.zeros((50, 50)), np.zeros((50, 1))]
        biases = [np.zeros(50), np.zeros(50), np.array([0.37])]
        model = MlpRegressor(weights, biases)
        assert model.predict_raw(np.ones((1, 18)))[0] == pytest.approx(0.37)

    def test_clip_applied_after_ranking_order(self):
        weights = [np.zeros((2, 50)), np.zeros((50, 50)), np.zeros((50, 1))]
        biases = [np.zeros(50), np.zeros(50), np.array([1.7])]
        model = MlpRegressor(weights, biases)
        raw = model.predict_raw(np.zeros((3, 2)))
        clipped = model.predict(np.zeros((3, 2)))
        assert np.all(clipped <= 1.0)
        assert np.array_equal(np.argsort(raw), np.argsort(clipped, kind="stable"))

    def test_raw_vs_clipped_helpers(self):
        rng = np.random.default_rng(8)
        weights, biases = _init_params(rng)
        biases[-1][:] = 5.0  # force predictions above 1
        model = MlpRegressor(weights, biases)
        scaler = scaler_fit(rng.standard_normal((10, 18)))
        f = rng.standard_normal(18)
        assert predict_accuracy(scaler, model, f) == 1.0
        assert predict_accuracy_raw(scaler, model, f) > 1.0


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((40, 18))
        y = rng.random(40)
        scaler = scaler_fit(x)
        model = mlp_train(scaler.apply(x), y, TrainConfig(max_epochs=20, seed=2))
        path = tmp_path / "model.json"
        save_model(path, scaler, model)
        scaler2, model2 = load_model(path)
        assert np.array_equal(scaler.median, scaler2.median)
        assert np.array_equal(scaler.iqr, scaler2.iqr)
        assert model2.train_seed == 2
        probe = rng.standard_normal((5, 18))
        assert np.array_equal(model.predict_raw(probe), model2.predict_raw(probe))

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99}', encoding="utf-8")
        with pytest.raises(InputError):
            load_model(path)
