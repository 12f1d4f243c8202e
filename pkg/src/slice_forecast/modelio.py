"""Single-file model persistence with bit-exact float round trips.

Models are JSON documents with a versioned header (kind, hyperparams, seed,
scaler statistics) and kind-specific parameters. Every float is written as a
17-significant-digit decimal string, so load(save(m)) reproduces predictions
exactly on any platform. Files are content-addressed by their SHA-256.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .datasetgen import Scaler
from .learners.base import Hyperparams, TrainedModel
from .learners.tree import _Node

FORMAT_NAME = "slice-forecast-model"
FORMAT_VERSION = 1

_HEADER_FIELDS = ("format", "version", "kind", "seed", "window",
                  "feature_names", "hyperparams", "scaler", "params")


class ModelFormatError(ValueError):
    pass


def _enc(x: float) -> str:
    return format(float(x), ".17g")


def _enc_vec(v) -> list[str]:
    return [_enc(x) for x in np.asarray(v, dtype=float).ravel()]


def _enc_mat(m) -> list[list[str]]:
    return [[_enc(x) for x in row] for row in np.asarray(m, dtype=float)]


def _dec_vec(v) -> np.ndarray:
    return np.array([float(x) for x in v], dtype=float)


def _dec_mat(m) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in m], dtype=float)


def _tree_to_rows(root: _Node) -> list[dict]:
    rows: list[dict] = []

    def walk(node: _Node) -> int:
        idx = len(rows)
        rows.append(None)  # reserve slot; children get appended after
        if node.is_leaf:
            rows[idx] = {"value": _enc(node.value)}
        else:
            left = walk(node.left)
            right = walk(node.right)
            rows[idx] = {"feature": node.feature, "threshold": _enc(node.threshold),
                         "left": left, "right": right, "value": _enc(node.value)}
        return idx

    walk(root)
    return rows


def _tree_from_rows(rows: list[dict]) -> _Node:
    def build(idx: int) -> _Node:
        row = rows[idx]
        node = _Node(float(row["value"]))
        if "feature" in row:
            node.feature = int(row["feature"])
            node.threshold = float(row["threshold"])
            node.left = build(int(row["left"]))
            node.right = build(int(row["right"]))
        return node

    return build(0)


def _encode_params(kind: str, params) -> dict:
    if kind == "knn":
        return {"k": params["k"], "train_x": _enc_mat(params["train_x"]),
                "train_y": _enc_vec(params["train_y"])}
    if kind == "tree":
        return {"nodes": _tree_to_rows(params["root"])}
    if kind == "forest":
        return {"trees": [_tree_to_rows(root) for root in params["roots"]]}
    if kind == "ridge":
        return {"coef": _enc_vec(params["coef"]), "intercept": _enc(params["intercept"])}
    if kind == "mlp":
        return {"layer_sizes": params["layer_sizes"],
                "layers": [{"W": _enc_mat(W), "b": _enc_vec(b)}
                           for W, b in params["weights"]]}
    if kind == "persistence":
        return {"target_channel": params["target_channel"]}
    raise ModelFormatError(f"cannot serialize model kind {kind!r}")


def _decode_params(kind: str, blob: dict):
    if kind == "knn":
        return {"k": int(blob["k"]), "train_x": _dec_mat(blob["train_x"]),
                "train_y": _dec_vec(blob["train_y"])}
    if kind == "tree":
        return {"root": _tree_from_rows(blob["nodes"])}
    if kind == "forest":
        return {"roots": [_tree_from_rows(rows) for rows in blob["trees"]]}
    if kind == "ridge":
        return {"coef": _dec_vec(blob["coef"]), "intercept": float(blob["intercept"])}
    if kind == "mlp":
        return {"layer_sizes": [int(s) for s in blob["layer_sizes"]],
                "weights": [(_dec_mat(layer["W"]), _dec_vec(layer["b"]))
                            for layer in blob["layers"]]}
    if kind == "persistence":
        return {"target_channel": int(blob["target_channel"])}
    raise ModelFormatError(f"cannot load model kind {kind!r}")


def _encode_hyperparams(hp: Hyperparams) -> dict:
    doc = {}
    for key, value in asdict(hp).items():
        doc[key] = _enc(value) if isinstance(value, float) else value
    return doc


def _decode_hyperparams(doc: dict) -> Hyperparams:
    kwargs = {}
    defaults = Hyperparams()
    for key, value in doc.items():
        current = getattr(defaults, key, None)
        kwargs[key] = float(value) if isinstance(current, float) else value
    return Hyperparams(**kwargs)


def save_model(model: TrainedModel, path) -> str:
    """Write the model file; returns its content hash (the catalog id)."""
    scaler_doc = None
    if model.scaler is not None:
        s = model.scaler
        scaler_doc = {"feature_names": list(s.feature_names),
                      "feature_mean": _enc_vec(s.feature_mean),
                      "feature_std": _enc_vec(s.feature_std),
                      "target_mean": _enc(s.target_mean),
                      "target_std": _enc(s.target_std)}
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "window": model.window,
        "feature_names": list(model.feature_names),
        "target_channel": model.target_channel,
        "hyperparams": _encode_hyperparams(model.hyperparams),
        "scaler": scaler_doc,
        "params": _encode_params(model.kind, model.params),
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")
    return hashlib.sha256((text + "\n").encode()).hexdigest()


def load_model(path) -> TrainedModel:
    """Read a model file back; names the offending header field on mismatch."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid model JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: header field 'format': document is not an object")
    for fieldname in _HEADER_FIELDS:
        if fieldname not in doc:
            raise ModelFormatError(f"{path}: missing header field {fieldname!r}")
    if doc["format"] != FORMAT_NAME:
        raise ModelFormatError(
            f"{path}: header field 'format': expected {FORMAT_NAME!r}, "
            f"found {doc['format']!r}")
    if doc["version"] != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: header field 'version': expected {FORMAT_VERSION}, "
            f"found {doc['version']!r}")
    scaler = None
    if doc["scaler"] is not None:
        s = doc["scaler"]
        scaler = Scaler(tuple(s["feature_names"]), _dec_vec(s["feature_mean"]),
                        _dec_vec(s["feature_std"]), float(s["target_mean"]),
                        float(s["target_std"]))
    try:
        params = _decode_params(doc["kind"], doc["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: header field 'params': {exc}") from exc
    return TrainedModel(kind=doc["kind"], params=params,
                        hyperparams=_decode_hyperparams(doc["hyperparams"]),
                        seed=int(doc["seed"]),
                        feature_names=tuple(doc["feature_names"]),
                        window=int(doc["window"]), scaler=scaler,
                        target_channel=doc.get("target_channel"),
                        metadata={})


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
