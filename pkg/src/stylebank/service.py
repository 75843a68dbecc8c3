"""HTTP inference service backing the fusion UI.

JSON in, JSON out (images travel as base64 PNG). One immutable model serves
all requests; swapping in a newly trained model is a single attribute
assignment, so in-flight requests finish on the model they started with.

Status codes: 400 malformed body, 404 unknown style, 413 image too large,
422 mask/assignment inconsistencies.
"""

from __future__ import annotations

import base64
import binascii
import logging
import warnings
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .images import ImageBuffer, label_map_from_png_bytes, label_map_to_png_bytes, png_size
from .losses import FeatureExtractor
from .model import StyleBankModel, fuse_linear
from .pipeline import fuse_regions_image, segment_image, stylize_image, stylize_with_bank
from .tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_PORT = 8787
DEFAULT_MAX_SIDE = 1024


class ModelHolder:
    """Atomic pointer to the live model; assignment swaps it wholesale."""

    def __init__(self, model: StyleBankModel, extractor: Optional[FeatureExtractor] = None):
        self.model = model
        self.extractor = extractor


def _bad_request(detail: str) -> HTTPException:
    return HTTPException(status_code=400, detail=detail)


async def _json_body(request: Request) -> dict:
    try:
        payload = await request.json()
    except Exception:
        raise _bad_request("body is not valid JSON")
    if not isinstance(payload, dict):
        raise _bad_request("body must be a JSON object")
    return payload


def _decode_png_field(payload: dict, field: str, max_side: int) -> bytes:
    value = payload.get(field)
    if not isinstance(value, str):
        raise _bad_request(f"missing or non-string field {field!r}")
    try:
        blob = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise _bad_request(f"field {field!r} is not valid base64")
    try:
        h, w = png_size(blob)
    except Exception:
        raise _bad_request(f"field {field!r} is not a decodable image")
    if h > max_side or w > max_side:
        raise HTTPException(
            status_code=413,
            detail=f"image {h}x{w} exceeds the {max_side}px side cap",
        )
    return blob


def _image_tensor(blob: bytes) -> Tensor:
    try:
        return ImageBuffer.from_png_bytes(blob).to_tensor()
    except Exception:
        raise _bad_request("image could not be decoded")


def _b64(blob: bytes) -> str:
    return base64.b64encode(blob).decode("ascii")


def create_app(
    holder: ModelHolder,
    max_side: int = DEFAULT_MAX_SIDE,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="stylebank inference service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/styles")
    def styles():
        model = holder.model
        return {
            "styles": [
                {"name": bank.name, "kernel_size": bank.kernel_size}
                for bank in model.banks.values()
            ]
        }

    @app.post("/stylize")
    async def stylize_endpoint(request: Request):
        payload = await _json_body(request)
        model = holder.model
        style = payload.get("style")
        if not isinstance(style, str):
            raise _bad_request("missing or non-string field 'style'")
        blob = _decode_png_field(payload, "image", max_side)
        if style not in model.banks:
            raise HTTPException(status_code=404, detail=f"unknown style {style!r}")
        try:
            result = stylize_image(model, _image_tensor(blob), style)
        except ValueError as err:
            raise _bad_request(str(err))
        return {"image": _b64(result.to_png_bytes())}

    @app.post("/fuse")
    async def fuse_endpoint(request: Request):
        payload = await _json_body(request)
        model = holder.model
        weights = payload.get("weights")
        if not isinstance(weights, dict) or not weights:
            raise _bad_request("'weights' must be a non-empty object of style: weight")
        blob = _decode_png_field(payload, "image", max_side)
        names, values = [], []
        for name, value in weights.items():
            if name not in model.banks:
                raise HTTPException(status_code=404, detail=f"unknown style {name!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise _bad_request(f"weight for {name!r} must be a number")
            names.append(name)
            values.append(float(value))
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                bank = fuse_linear([model.bank(n) for n in names], values)
            for w in caught:
                logger.info("fuse: %s", w.message)
            result = stylize_with_bank(model, _image_tensor(blob), bank)
        except ValueError as err:
            raise _bad_request(str(err))
        return {"image": _b64(result.to_png_bytes())}

    @app.post("/segment")
    async def segment_endpoint(request: Request):
        payload = await _json_body(request)
        model = holder.model
        k = payload.get("k")
        if not isinstance(k, int) or isinstance(k, bool):
            raise _bad_request("'k' must be an integer")
        blob = _decode_png_field(payload, "image", max_side)
        try:
            labels = segment_image(model, _image_tensor(blob), k)
        except ValueError as err:
            raise _bad_request(str(err))
        return {"labels": _b64(label_map_to_png_bytes(labels)), "k": k}

    @app.post("/fuse-regions")
    async def fuse_regions_endpoint(request: Request):
        payload = await _json_body(request)
        model = holder.model
        assignment_raw = payload.get("assignment")
        if not isinstance(assignment_raw, dict) or not assignment_raw:
            raise _bad_request("'assignment' must be a non-empty object of label: style")
        assignment = {}
        for key, style in assignment_raw.items():
            try:
                label = int(key)
            except (TypeError, ValueError):
                raise _bad_request(f"assignment key {key!r} is not an integer label")
            if not isinstance(style, str):
                raise _bad_request(f"assignment for label {key} must be a style name")
            assignment[label] = style
        image_blob = _decode_png_field(payload, "image", max_side)
        labels_value = payload.get("labels")
        if not isinstance(labels_value, str):
            raise _bad_request("missing or non-string field 'labels'")
        try:
            labels = label_map_from_png_bytes(
                base64.b64decode(labels_value, validate=True)
            )
        except Exception:
            raise _bad_request("'labels' is not a base64 PNG label map")
        for style in assignment.values():
            if style not in model.banks:
                raise HTTPException(status_code=404, detail=f"unknown style {style!r}")
        image = _image_tensor(image_blob)
        if min(image.dims[2], image.dims[3]) < 8:
            raise _bad_request("image is smaller than the 8px minimum")
        try:
            result = fuse_regions_image(model, image, labels, assignment)
        except ValueError as err:
            # Mask geometry or assignment coverage problems.
            raise HTTPException(status_code=422, detail=str(err))
        return {"image": _b64(result.to_png_bytes())}

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception):
        logger.exception("unhandled service error")
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
