"""HTTP service for the mask studio: health, mask simulation on the request
path, and a single-consumer inpainting job queue.

Images cross the wire as base64 PNG inside JSON. The job table lives in
memory (ring of 100); restarting the service clears it.
"""

from __future__ import annotations

import base64
import io
import queue
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from . import masks, pipeline
from .errors import DomainError, EmptyMask, PainterError, ShapeError
from .train import ModelBundle

JOB_RING_SIZE = 100
_STATE_FLOW = {"queued": {"running"}, "running": {"done", "failed"}, "done": set(), "failed": set()}


@dataclass
class Job:
    id: str
    request: pipeline.InpaintRequest
    state: str = "queued"
    result: pipeline.InpaintResult | None = None
    error: str | None = None

    def transition(self, new_state: str) -> None:
        if new_state not in _STATE_FLOW[self.state]:
            raise DomainError(f"illegal job transition {self.state} -> {new_state}")
        self.state = new_state


@dataclass
class JobTable:
    capacity: int = JOB_RING_SIZE
    _jobs: OrderedDict = field(default_factory=OrderedDict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, job: Job) -> None:
        with self._lock:
            self._jobs[job.id] = job
            while len(self._jobs) > self.capacity:
                self._jobs.popitem(last=False)

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)


def png_to_array(b64: str, mode: str) -> np.ndarray:
    try:
        blob = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(blob)) as im:
            return np.asarray(im.convert(mode))
    except Exception as exc:  # noqa: BLE001 - client payload, report as 400
        raise HTTPException(status_code=400, detail=f"bad PNG payload: {exc}") from exc


def array_to_png_b64(arr: np.ndarray, mode: str) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class InpaintBody(BaseModel):
    image: str
    mask: str
    prompt: str
    steps: int = pipeline.DEFAULT_STEPS
    guidance: float = pipeline.DEFAULT_GUIDANCE
    w: float = 1.0
    seed: int = 0


class SimulateBody(BaseModel):
    seg: str
    kind: str
    seed: int = 0


def create_app(
    bundle: ModelBundle | None = None,
    inpaint_fn: Callable[[pipeline.InpaintRequest], pipeline.InpaintResult] | None = None,
    preset: str | None = None,
    static_dir: str | None = None,
    mask_params: masks.MaskGenParams | None = None,
) -> FastAPI:
    """Build the service app. ``inpaint_fn`` overrides the bundled model
    (tests inject slow/stub executors through it)."""
    if inpaint_fn is None:
        if bundle is None:
            raise DomainError("create_app needs a model bundle or an inpaint_fn")
        inpaint_fn = lambda req: pipeline.inpaint(req, bundle)  # noqa: E731
    preset = preset or (bundle.preset if bundle else "custom")
    params = mask_params or masks.MaskGenParams()

    app = FastAPI(title="painter")
    jobs = JobTable()
    work: queue.Queue[Job] = queue.Queue()

    def worker() -> None:
        while True:
            job = work.get()
            job.transition("running")
            try:
                job.result = inpaint_fn(job.request)
                job.transition("done")
            except Exception as exc:  # noqa: BLE001 - job must land in failed, not kill the worker
                job.error = f"{type(exc).__name__}: {exc}"
                job.transition("failed")
            finally:
                work.task_done()

    threading.Thread(target=worker, daemon=True, name="painter-inference").start()

    @app.get("/api/health")
    def health():
        return {"status": "ok", "preset": preset}

    @app.post("/api/inpaint")
    def submit(body: InpaintBody):
        image = png_to_array(body.image, "RGB")
        mask = (png_to_array(body.mask, "L") >= 128).astype(np.uint8)
        try:
            request = pipeline.InpaintRequest(
                image=image, mask=mask, local_prompt=body.prompt,
                steps=body.steps, guidance=body.guidance, w=body.w, seed=body.seed,
            )
        except (ShapeError, DomainError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        job = Job(id=uuid.uuid4().hex, request=request)
        jobs.add(job)
        work.put(job)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    def job_state(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        doc = {"id": job.id, "state": job.state, "error": job.error, "result": None}
        if job.result is not None:
            doc["result"] = {
                "image": array_to_png_b64(job.result.image, "RGB"),
                "timing_s": job.result.timing_s,
                "settings": job.result.settings,
            }
        return doc

    @app.post("/api/mask/simulate")
    def simulate(body: SimulateBody):
        if body.kind not in ("box", "irr", "seg", "mix"):
            raise HTTPException(status_code=400, detail=f"unknown mask kind {body.kind!r}")
        seg = (png_to_array(body.seg, "L") >= 128).astype(np.uint8)
        rng = np.random.default_rng(body.seed)
        try:
            if body.kind == "seg":
                out = seg.copy()
            elif body.kind == "box":
                out = masks.gen_box_mask(seg, params, rng)
            elif body.kind == "irr":
                out = masks.gen_irregular_mask(seg, params, rng)
            else:
                out, _ = masks.sample_mask(seg, rng.uniform(), params, rng)
        except EmptyMask as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except PainterError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"mask": array_to_png_b64((out * 255).astype(np.uint8), "L")}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="studio")

    return app


def serve(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8787,
          static_dir: str | None = None) -> None:
    import uvicorn

    app = create_app(bundle=bundle, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
