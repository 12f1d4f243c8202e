"""HTTP predictor: load persisted models, forecast latency, check SLA bounds.

Wire format is versioned JSON with every float carried as a 17-significant-
digit decimal string, so a served prediction is bit-identical to the
in-process one. Models are immutable artifacts addressed by the SHA-256 of
their file; loading the same file twice yields the same catalog entry.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse

from .learners import LearnerError, TrainedModel, forecast_ms
from .modelio import ModelFormatError, content_hash, load_model

WIRE_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str = "") -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def response(self) -> JSONResponse:
        return JSONResponse(status_code=self.status,
                            content={"code": self.code, "message": self.message,
                                     "detail": self.detail})


class ModelCatalog:
    """Immutable models behind a content-hash id; loads are serialized."""

    def __init__(self, model_dir: Path) -> None:
        self.model_dir = Path(model_dir)
        self._models: dict[str, TrainedModel] = {}
        self._paths: dict[str, Path] = {}
        self._lock = threading.Lock()

    def load_path(self, path: Path) -> str:
        digest = content_hash(path)
        with self._lock:
            if digest not in self._models:
                self._models[digest] = load_model(path)
                self._paths[digest] = Path(path)
        return digest

    def load_directory(self) -> list[str]:
        ids = []
        if self.model_dir.is_dir():
            for path in sorted(self.model_dir.glob("*.json")):
                try:
                    ids.append(self.load_path(path))
                except ModelFormatError:
                    continue  # unrelated json files are not models
        return ids

    def add_bytes(self, blob: bytes, name_hint: str = "model") -> str:
        self.model_dir.mkdir(parents=True, exist_ok=True)
        import hashlib
        digest = hashlib.sha256(blob).hexdigest()
        with self._lock:
            if digest in self._models:
                return digest
        path = self.model_dir / f"{Path(name_hint).stem or 'model'}-{digest[:12]}.json"
        path.write_bytes(blob)
        return self.load_path(path)

    def get(self, model_id: str) -> TrainedModel:
        model = self._models.get(model_id)
        if model is None:
            raise ServiceError(404, "model_not_found",
                               f"no model with id {model_id!r}",
                               "use GET /models for the catalog")
        return model

    def entries(self) -> list[dict]:
        out = []
        for digest, model in sorted(self._models.items()):
            out.append({"id": digest, "kind": model.kind,
                        "window": model.window,
                        "feature_names": list(model.feature_names),
                        "seed": model.seed,
                        "file": str(self._paths[digest])})
        return out


def _parse_window(model: TrainedModel, body: dict) -> np.ndarray:
    window = body.get("window")
    if not isinstance(window, list):
        raise ServiceError(422, "validation_error", "missing window",
                           "expected 'window' as a list of rows")
    if len(window) != model.window:
        raise ServiceError(422, "validation_error",
                           f"expected {model.window} rows, got {len(window)}",
                           f"model window length is {model.window}")
    names = body.get("feature_names")
    if names is not None and list(names) != list(model.feature_names):
        raise ServiceError(422, "validation_error",
                           "feature names do not match the model schema",
                           f"expected {list(model.feature_names)}")
    rows = []
    for i, row in enumerate(window):
        if not isinstance(row, list) or len(row) != model.n_features:
            raise ServiceError(422, "validation_error",
                               f"row {i}: expected {model.n_features} values",
                               "every row must list one value per feature")
        try:
            rows.append([float(v) for v in row])
        except (TypeError, ValueError):
            raise ServiceError(422, "validation_error",
                               f"row {i}: values must be numbers or decimal strings",
                               "")
    return np.array(rows, dtype=float)


def _forecast(catalog: ModelCatalog, body: dict) -> tuple[str, float]:
    if body.get("version") not in (None, WIRE_VERSION):
        raise ServiceError(422, "validation_error",
                           f"unsupported wire version {body.get('version')!r}",
                           f"this service speaks version {WIRE_VERSION}")
    model_id = body.get("model_id")
    if not model_id:
        raise ServiceError(422, "validation_error", "missing model_id", "")
    model = catalog.get(model_id)
    window = _parse_window(model, body)
    try:
        return model_id, forecast_ms(model, window)
    except LearnerError as exc:
        raise ServiceError(422, "validation_error", str(exc), "")


def create_app(model_dir, max_body_bytes: int = 16 * 1024 * 1024) -> FastAPI:
    app = FastAPI(title="slice-forecast predictor", version=str(WIRE_VERSION))
    catalog = ModelCatalog(Path(model_dir))
    catalog.load_directory()
    app.state.catalog = catalog

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return exc.response()

    @app.middleware("http")
    async def _limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > max_body_bytes:
            return JSONResponse(status_code=413, content={
                "code": "body_too_large",
                "message": f"request body exceeds {max_body_bytes} bytes",
                "detail": ""})
        return await call_next(request)

    @app.get("/health")
    async def health():
        return {"status": "ok", "models": len(catalog.entries())}

    @app.get("/models")
    async def models():
        return {"models": catalog.entries()}

    @app.post("/models")
    async def upload_model(file: UploadFile):
        blob = await file.read()
        try:
            model_id = catalog.add_bytes(blob, file.filename or "model")
        except ModelFormatError as exc:
            raise ServiceError(422, "model_format_error", str(exc), "")
        model = catalog.get(model_id)
        return {"id": model_id, "kind": model.kind, "window": model.window,
                "feature_names": list(model.feature_names)}

    @app.post("/predict")
    async def predict(request: Request):
        body = await _json_body(request)
        model_id, value = _forecast(catalog, body)
        return {"model_id": model_id, "forecast_ms": _fmt(value)}

    @app.post("/sla/check")
    async def sla_check(request: Request):
        body = await _json_body(request)
        threshold = body.get("threshold_ms")
        try:
            threshold = float(threshold)
        except (TypeError, ValueError):
            raise ServiceError(422, "validation_error",
                               "threshold_ms must be a positive number", "")
        if threshold <= 0:
            raise ServiceError(422, "validation_error",
                               "threshold_ms must be > 0", "")
        model_id, value = _forecast(catalog, body)
        # inclusive boundary: a forecast exactly at the threshold conforms
        conforms = value <= threshold
        return {"model_id": model_id, "forecast_ms": _fmt(value),
                "threshold_ms": _fmt(threshold), "conforms": conforms,
                "margin_ms": _fmt(threshold - value)}

    return app


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise ServiceError(400, "bad_request", "body is not valid JSON", "")
    if not isinstance(body, dict):
        raise ServiceError(400, "bad_request", "body must be a JSON object", "")
    return body


def serve(model_dir, host: str = "127.0.0.1", port: int = 8080,
          max_body_bytes: int = 16 * 1024 * 1024) -> None:
    """Blocking uvicorn entry point used by the CLI."""
    import uvicorn
    app = create_app(model_dir, max_body_bytes)
    uvicorn.run(app, host=host, port=port, log_level="info")
