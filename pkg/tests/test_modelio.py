"""Model files: bit-exact round trips, header validation, content addressing."""

import json

import numpy as np
import pytest

from slice_forecast.learners import Hyperparams, fit, predict_batch
from slice_forecast.modelio import (ModelFormatError, content_hash, load_model,
                                    save_model)

KIND_HP = {
    "knn": Hyperparams(k=3),
    "tree": Hyperparams(max_depth=6, min_samples_leaf=2),
    "forest": Hyperparams(n_trees=4, feature_frac=0.6, max_depth=6),
    "ridge": Hyperparams(ridge_lambda=2.0),
    "mlp": Hyperparams(epochs=5, learning_rate=0.001, num_layers=2,
                       hidden_size=20),
}


@pytest.fixture(scope="module")
def small_splits(frozen_table):
    from slice_forecast.datasetgen import build_splits
    return build_splits(frozen_table, window=10, provenance="small")


@pytest.mark.parametrize("kind", sorted(KIND_HP))
def test_round_trip_bit_exact(kind, small_splits, tmp_path):
    train, test, scaler = small_splits
    model = fit(kind, train, KIND_HP[kind], 7, scaler=scaler)
    path = tmp_path / f"{kind}.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.kind == model.kind
    assert loaded.feature_names == model.feature_names
    queries = test.X[:20]
    assert np.array_equal(predict_batch(model, queries),
                          predict_batch(loaded, queries))


def test_persistence_round_trip(frozen_table, tmp_path):
    from slice_forecast.datasetgen import build_splits
    train, test, scaler = build_splits(frozen_table, window=10,
                                       include_lagged_target=True)
    model = fit("persistence", train, Hyperparams(), 0, scaler=scaler)
    path = tmp_path / "p.json"
    save_model(model, path)
    loaded = load_model(path)
    assert np.array_equal(predict_batch(model, test.X[:10]),
                          predict_batch(loaded, test.X[:10]))


def test_scaler_survives_round_trip(small_splits, tmp_path):
    train, _test, scaler = small_splits
    model = fit("ridge", train, KIND_HP["ridge"], 7, scaler=scaler)
    path = tmp_path / "m.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.scaler is not None
    assert np.array_equal(loaded.scaler.feature_mean, scaler.feature_mean)
    assert loaded.scaler.target_std == scaler.target_std


def test_corrupted_header_names_field(small_splits, tmp_path):
    train, _test, scaler = small_splits
    model = fit("ridge", train, KIND_HP["ridge"], 7, scaler=scaler)
    path = tmp_path / "m.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    del doc["kind"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="kind"):
        load_model(path)


def test_version_mismatch_reports_expected_and_found(small_splits, tmp_path):
    train, _test, scaler = small_splits
    model = fit("ridge", train, KIND_HP["ridge"], 7, scaler=scaler)
    path = tmp_path / "m.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="expected 1.*found 99"):
        load_model(path)


def test_not_json_rejected(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("not a model")
    with pytest.raises(ModelFormatError, match="not valid model JSON"):
        load_model(path)


def test_content_hash_stable(small_splits, tmp_path):
    train, _test, scaler = small_splits
    model = fit("tree", train, KIND_HP["tree"], 7, scaler=scaler)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    d1 = save_model(model, p1)
    d2 = save_model(model, p2)
    assert d1 == d2 == content_hash(p1) == content_hash(p2)
