"""Standalone HTTP synthesis endpoint exposing the inpainting wire contract.

Serves POST /inpaint (multipart: crop, mask, prompt_id, seed -> PNG) on
top of any backend, the deterministic mock by default. Lets the remote
client be exercised end to end and doubles as a drop-in stand-in for a
real model server during development.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Response, UploadFile
from pydantic import BaseModel

from . import imgio
from .synthesis import InpaintBackend, MockInpaintBackend, PromptEntry


class InpaintServiceInfo(BaseModel):
    service: str = "morphcanvas-inpaint"
    backend: str = "mock"


def make_inpaint_app(backend: InpaintBackend | None = None) -> FastAPI:
    backend = backend or MockInpaintBackend(simulated_latency_ms=0)
    app = FastAPI(title="morphcanvas inpaint backend")

    @app.get("/healthz", response_model=InpaintServiceInfo)
    def healthz():
        return InpaintServiceInfo(backend=type(backend).__name__)

    @app.post("/inpaint")
    async def inpaint(
        crop: UploadFile = File(...),
        mask: UploadFile = File(...),
        prompt_id: int = Form(...),
        seed: int = Form(...),
    ):
        try:
            crop_rgb = imgio.decode_png_rgb(await crop.read())
            mask_gray = imgio.decode_png_gray(await mask.read())
        except Exception:
            raise HTTPException(status_code=400, detail="crop/mask must be PNG images")
        if mask_gray.shape != crop_rgb.shape[:2]:
            raise HTTPException(status_code=400, detail="crop and mask dimensions differ")
        prompt = PromptEntry.make(prompt_id, f"prompt-{prompt_id}")
        try:
            result = backend.inpaint(crop_rgb, (mask_gray > 127).astype(np.uint8), prompt, seed)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return Response(content=imgio.encode_png(result), media_type="image/png")

    return app
