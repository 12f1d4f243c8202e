"""Learner examples and invariants: exactness, limits, gradients, stopping."""

import numpy as np
import pytest

from oracles import best_split_by_enumeration, knn_prediction_by_enumeration
from slice_forecast.datasetgen import WindowedDataset
from slice_forecast.learners import (Hyperparams, LearnerError, fit, predict,
                                     predict_batch)
from slice_forecast.learners.linear import ridge_solve
from slice_forecast.learners.mlp import forward, init_weights, loss_and_grads
from slice_forecast.learners.tree import build_tree, tree_apply


def dataset_from(X3d, y, target_channel=None, tag="train"):
    X3d = np.asarray(X3d, float)
    return WindowedDataset(X=X3d, y=np.asarray(y, float).reshape(-1, 1),
                           window=X3d.shape[1], stride=1,
                           feature_names=tuple(f"f{i}" for i in range(X3d.shape[2])),
                           split_tag=tag, target_channel=target_channel)


def toy_dataset(m=30, w=4, f=3, seed=0, fn=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, w, f))
    if fn is None:
        fn = lambda X: X[:, :, 0].mean(axis=1)
    return dataset_from(X, fn(X))


class TestKnn:
    def test_self_query_exact(self):
        ds = toy_dataset(seed=1)
        model = fit("knn", ds, Hyperparams(k=1), 0)
        for i in range(ds.n_windows):
            assert predict(model, ds.X[i]) == ds.y[i, 0]

    def test_k_equals_training_size_is_global_mean(self):
        ds = toy_dataset(m=12, seed=2)
        model = fit("knn", ds, Hyperparams(k=12), 0)
        assert predict(model, np.zeros((4, 3))) == pytest.approx(ds.y.mean())

    def test_tie_broken_by_lower_index(self):
        X = np.zeros((3, 1, 1))
        X[0, 0, 0], X[1, 0, 0], X[2, 0, 0] = 1.0, -1.0, 5.0
        ds = dataset_from(X, [10.0, 20.0, 30.0])
        model = fit("knn", ds, Hyperparams(k=1), 0)
        # query 0 is equidistant from windows 0 and 1; index 0 wins
        assert predict(model, np.zeros((1, 1))) == 10.0

    def test_k_larger_than_training_rejected(self):
        ds = toy_dataset(m=5)
        with pytest.raises(LearnerError, match="exceeds training size"):
            fit("knn", ds, Hyperparams(k=6), 0)

    def test_matches_enumeration_oracle(self):
        ds = toy_dataset(m=40, seed=3)
        flat = ds.X.reshape(40, -1)
        model = fit("knn", ds, Hyperparams(k=5), 0)
        rng = np.random.default_rng(4)
        for _ in range(20):
            q = rng.normal(size=(4, 3))
            want = knn_prediction_by_enumeration(flat, ds.y.ravel(),
                                                 q.reshape(-1), 5)
            assert predict(model, q) == pytest.approx(want, abs=1e-12)


class TestTree:
    def test_constant_targets_single_leaf(self):
        ds = toy_dataset(fn=lambda X: np.full(X.shape[0], 3.25))
        model = fit("tree", ds, Hyperparams(), 0)
        root = model.params["root"]
        assert root.is_leaf and root.value == 3.25

    def test_zero_training_error_unlimited_depth(self):
        ds = toy_dataset(m=60, seed=5)
        model = fit("tree", ds, Hyperparams(max_depth=None, min_samples_leaf=1), 0)
        preds = predict_batch(model, ds.X)
        assert np.allclose(preds, ds.y.ravel(), atol=1e-12)

    def test_hand_enumerated_first_split(self):
        X = np.array([[0.0], [1.0], [10.0]]).reshape(3, 1, 1)
        ds = dataset_from(X, [0.0, 0.0, 100.0])
        model = fit("tree", ds, Hyperparams(), 0)
        assert model.params["root"].threshold == 5.5

    def test_split_matches_enumeration_oracle(self):
        rng = np.random.default_rng(6)
        for trial in range(25):
            X = rng.normal(size=(rng.integers(5, 40), rng.integers(1, 6)))
            y = rng.normal(size=X.shape[0])
            hp = Hyperparams(max_depth=1,
                             min_samples_leaf=int(rng.integers(1, 3)))
            root = build_tree(X, y, hp)
            want_sse, want_j, want_thr = best_split_by_enumeration(
                X, y, hp.min_samples_leaf)
            if want_j is None:
                assert root.is_leaf
            else:
                assert root.feature == want_j
                assert root.threshold == pytest.approx(want_thr, abs=1e-12)


class TestForest:
    def test_degenerate_forest_equals_tree(self):
        ds = toy_dataset(m=50, seed=7)
        hp = Hyperparams(n_trees=1, bootstrap=False, feature_frac=1.0,
                         max_depth=None, min_samples_leaf=1)
        forest = fit("forest", ds, hp, 123)
        tree = fit("tree", ds, hp, 123)
        queries = np.random.default_rng(8).normal(size=(30, 4, 3))
        for q in queries:
            assert predict(forest, q) == predict(tree, q)  # bit-exact

    def test_prediction_within_tree_envelope(self):
        ds = toy_dataset(m=60, seed=9)
        hp = Hyperparams(n_trees=7, feature_frac=0.5, max_depth=5)
        model = fit("forest", ds, hp, 0)
        q = np.random.default_rng(10).normal(size=(4, 3))
        singles = [tree_apply(root, q.reshape(-1))
                   for root in model.params["roots"]]
        assert min(singles) <= predict(model, q) <= max(singles)

    def test_deterministic_across_fits(self):
        ds = toy_dataset(m=40, seed=11)
        hp = Hyperparams(n_trees=5, feature_frac=0.6)
        a = fit("forest", ds, hp, 99)
        b = fit("forest", ds, hp, 99)
        q = np.random.default_rng(12).normal(size=(10, 4, 3))
        assert np.array_equal(predict_batch(a, q), predict_batch(b, q))


class TestRidge:
    def test_exact_recovery_lambda_zero(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(40, 5))
        coef = rng.normal(size=5)
        y = X @ coef + 2.5
        got_coef, got_intercept = ridge_solve(X, y, 0.0)
        assert np.allclose(got_coef, coef, atol=1e-8)
        assert got_intercept == pytest.approx(2.5, abs=1e-8)

    def test_large_lambda_shrinks_to_mean(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        coef, intercept = ridge_solve(X, y, 1e12)
        assert np.allclose(coef, 0.0, atol=1e-9)
        assert intercept == pytest.approx(y.mean(), abs=1e-6)

    def test_hand_solved_normal_equations(self):
        # fixed 3x2 system, lambda=1: (Xc'Xc + I) beta = Xc'yc solved directly
        X = np.array([[1.0, 2.0], [2.0, 0.0], [4.0, 1.0]])
        y = np.array([1.0, 2.0, 5.0])
        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        want = np.linalg.solve(Xc.T @ Xc + np.eye(2), Xc.T @ yc)
        got, intercept = ridge_solve(X, y, 1.0)
        assert np.allclose(got, want, atol=1e-9)
        assert intercept == pytest.approx(y.mean() - X.mean(axis=0) @ want,
                                          abs=1e-9)

    def test_singular_lambda_zero_advises(self):
        X = np.ones((5, 3))  # rank deficient after centering
        y = np.arange(5.0)
        with pytest.raises(LearnerError, match="ridge_lambda > 0"):
            ridge_solve(X, y, 0.0)

    def test_scale_consistency(self):
        # fitting on z-scored targets and inverse-scaling equals raw fitting
        from slice_forecast.datasetgen import Scaler
        ds = toy_dataset(m=50, seed=15)
        y = ds.y.ravel()
        mu, sigma = float(y.mean()), float(y.std())
        scaled = dataset_from(ds.X, (y - mu) / sigma)
        hp = Hyperparams(ridge_lambda=1.0)
        raw_model = fit("ridge", ds, hp, 0)
        scaled_model = fit("ridge", scaled, hp, 0)
        q = np.random.default_rng(16).normal(size=(20, 4, 3))
        raw_preds = predict_batch(raw_model, q)
        undone = predict_batch(scaled_model, q) * sigma + mu
        assert np.allclose(raw_preds, undone, atol=1e-8)


class TestMlp:
    def test_zero_epoch_budget_predicts_finite(self):
        ds = toy_dataset(m=20, seed=17)
        model = fit("mlp", ds, Hyperparams(epochs=0), 0)
        assert np.isfinite(predict(model, ds.X[0]))

    def test_learns_mean_of_first_feature(self):
        ds = toy_dataset(m=200, seed=18)
        hp = Hyperparams(num_layers=2, hidden_size=50, learning_rate=0.001,
                         epochs=100, patience=100, batch_size=16)
        model = fit("mlp", ds, hp, 42)
        assert model.metadata["final_train_loss"] < 1e-3

    def test_gradient_check_small(self):
        rng = np.random.default_rng(19)
        checked = 0
        while checked < 10:
            weights = init_weights([5, 6, 1], rng)
            X = rng.normal(size=(8, 5))
            y = rng.normal(size=8)
            h = rng.normal  # noqa: F841
            pre = X @ weights[0][0] + weights[0][1]
            if np.abs(pre).min() < 1e-3:
                continue  # avoid finite differences straddling a ReLU kink
            checked += 1
            _, grads = loss_and_grads(weights, X, y)
            step = 1e-5
            for li, (W, b) in enumerate(weights):
                for arr, g in ((W, grads[li][0]), (b, grads[li][1])):
                    it = np.nditer(arr, flags=["multi_index"])
                    for _ in it:
                        ix = it.multi_index
                        old = arr[ix]
                        arr[ix] = old + step
                        lp, _ = loss_and_grads(weights, X, y)
                        arr[ix] = old - step
                        lm, _ = loss_and_grads(weights, X, y)
                        arr[ix] = old
                        num = (lp - lm) / (2 * step)
                        denom = max(abs(num), abs(g[ix]), 1e-8)
                        assert abs(num - g[ix]) / denom < 1e-4

    def test_early_stopping_bound(self):
        ds = toy_dataset(m=80, seed=20, fn=lambda X: np.random.default_rng(0)
                         .normal(size=X.shape[0]))  # unlearnable noise
        hp = Hyperparams(epochs=100, patience=5, learning_rate=0.01)
        model = fit("mlp", ds, hp, 0)
        meta = model.metadata
        assert meta["epochs_run"] <= meta["best_epoch"] + hp.patience + 1

    def test_divergence_reports_learning_rate(self):
        ds = toy_dataset(m=40, seed=21, fn=lambda X: X[:, :, 0].mean(axis=1) * 1e6)
        hp = Hyperparams(learning_rate=0.1, optimizer="sgd", epochs=50,
                         hidden_size=200, num_layers=3)
        with pytest.raises(LearnerError, match="learning_rate"):
            fit("mlp", ds, hp, 0)

    def test_deterministic_same_seed(self):
        ds = toy_dataset(m=50, seed=22)
        hp = Hyperparams(epochs=10, learning_rate=0.001)
        a = fit("mlp", ds, hp, 7)
        b = fit("mlp", ds, hp, 7)
        q = ds.X[:5]
        assert np.allclose(predict_batch(a, q), predict_batch(b, q), atol=1e-12)


class TestPersistence:
    def test_requires_lagged_target(self):
        ds = toy_dataset()
        with pytest.raises(LearnerError, match="lagged target"):
            fit("persistence", ds, Hyperparams(), 0)

    def test_constant_series_zero_error(self):
        X = np.zeros((10, 3, 2))
        X[:, :, 1] = 7.0  # lagged-target channel
        ds = dataset_from(X, np.full(10, 7.0), target_channel=1)
        model = fit("persistence", ds, Hyperparams(), 0)
        assert predict_batch(model, ds.X) == pytest.approx(ds.y.ravel())

    def test_step_series_unit_error(self):
        X = np.zeros((1, 4, 1))
        ds = dataset_from(X, [1.0], target_channel=0)  # step happens at target
        model = fit("persistence", ds, Hyperparams(), 0)
        assert predict(model, ds.X[0]) == 0.0  # repeats last seen 0, misses 1

    def test_mae_equals_mean_abs_delta(self):
        rng = np.random.default_rng(23)
        series = rng.normal(size=40)
        windows = np.array([series[i:i + 3] for i in range(37)])[:, :, None]
        ds = dataset_from(windows, series[3:], target_channel=0)
        model = fit("persistence", ds, Hyperparams(), 0)
        preds = predict_batch(model, ds.X)
        mae = np.mean(np.abs(preds - ds.y.ravel()))
        assert mae == pytest.approx(np.mean(np.abs(np.diff(series[2:]))))


class TestContract:
    def test_unknown_kind(self):
        with pytest.raises(LearnerError, match="unknown model kind"):
            fit("lstm", toy_dataset(), Hyperparams(), 0)

    def test_window_shape_checked(self):
        model = fit("knn", toy_dataset(), Hyperparams(k=1), 0)
        with pytest.raises(LearnerError, match="does not match"):
            predict(model, np.zeros((3, 3)))
