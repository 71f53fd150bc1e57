import base64
import io
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from painter import server
from painter.errors import DomainError
from painter.pipeline import InpaintResult
from painter.server import Job, create_app
from painter.train import build_toy_bundle

from conftest import random_blob


def png_b64(arr, mode):
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_mask(b64):
    blob = base64.b64decode(b64)
    return (np.asarray(Image.open(io.BytesIO(blob)).convert("L")) >= 128).astype(np.uint8)


def wait_for(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        if doc["state"] in ("done", "failed"):
            return doc
        time.sleep(0.02)
    raise TimeoutError(job_id)


@pytest.fixture(scope="module")
def toy_client():
    bundle = build_toy_bundle(seed=0, schedule_T=10)
    app = create_app(bundle=bundle)
    with TestClient(app) as client:
        yield client


class TestHealth:
    def test_health_reports_preset(self, toy_client):
        doc = toy_client.get("/api/health").json()
        assert doc == {"status": "ok", "preset": "toy"}


class TestInpaintJobs:
    def test_round_trip(self, toy_client):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        mask = random_blob(np.random.default_rng(1), size=64)
        resp = toy_client.post(
            "/api/inpaint",
            json={"image": png_b64(img, "RGB"), "mask": png_b64(mask * 255, "L"),
                  "prompt": "a red circle", "steps": 3, "seed": 5},
        )
        assert resp.status_code == 200
        job_id = resp.json()["job_id"]
        doc = wait_for(toy_client, job_id)
        assert doc["state"] == "done"
        out = np.asarray(
            Image.open(io.BytesIO(base64.b64decode(doc["result"]["image"]))).convert("RGB")
        )
        assert out.shape == img.shape
        keep = mask == 0
        assert np.array_equal(out[keep], img[keep])

    def test_unknown_job_404(self, toy_client):
        assert toy_client.get("/api/jobs/nope").status_code == 404

    def test_dims_mismatch_422(self, toy_client):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        mask = np.zeros((16, 16), dtype=np.uint8)
        resp = toy_client.post(
            "/api/inpaint",
            json={"image": png_b64(img, "RGB"), "mask": png_b64(mask, "L"), "prompt": "x"},
        )
        assert resp.status_code == 422

    def test_bad_png_400(self, toy_client):
        resp = toy_client.post(
            "/api/inpaint",
            json={"image": base64.b64encode(b"not a png").decode(), "mask": "AA==",
                  "prompt": "x"},
        )
        assert resp.status_code == 400

    def test_fifo_second_waits_for_first(self):
        release = threading.Event()
        started = []

        def slow(req):
            started.append(req.seed)
            release.wait(timeout=10)
            return InpaintResult(image=req.image, timing_s=0.0, settings=req.settings())

        app = create_app(inpaint_fn=slow, preset="stub")
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        mask = np.ones((16, 16), dtype=np.uint8)
        body = {"image": png_b64(img, "RGB"), "mask": png_b64(mask * 255, "L"), "prompt": "x"}
        with TestClient(app) as client:
            first = client.post("/api/inpaint", json={**body, "seed": 1}).json()["job_id"]
            second = client.post("/api/inpaint", json={**body, "seed": 2}).json()["job_id"]
            time.sleep(0.2)
            assert client.get(f"/api/jobs/{first}").json()["state"] == "running"
            assert client.get(f"/api/jobs/{second}").json()["state"] == "queued"
            assert started == [1]
            release.set()
            assert wait_for(client, first)["state"] == "done"
            assert wait_for(client, second)["state"] == "done"

    def test_failure_lands_in_failed_state(self):
        def broken(req):
            raise RuntimeError("kaboom")

        app = create_app(inpaint_fn=broken, preset="stub")
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        mask = np.ones((16, 16), dtype=np.uint8)
        with TestClient(app) as client:
            job_id = client.post(
                "/api/inpaint",
                json={"image": png_b64(img, "RGB"), "mask": png_b64(mask * 255, "L"),
                      "prompt": "x"},
            ).json()["job_id"]
            doc = wait_for(client, job_id)
            assert doc["state"] == "failed"
            assert "kaboom" in doc["error"]


class TestMaskSimulate:
    def test_seg_echoes_input(self, toy_client):
        blob = random_blob(np.random.default_rng(2), size=32)
        resp = toy_client.post(
            "/api/mask/simulate",
            json={"seg": png_b64(blob * 255, "L"), "kind": "seg", "seed": 0},
        )
        assert resp.status_code == 200
        assert np.array_equal(decode_mask(resp.json()["mask"]), blob)

    @pytest.mark.parametrize("kind", ["box", "irr", "mix"])
    def test_generated_kinds_are_supersets(self, toy_client, kind):
        blob = random_blob(np.random.default_rng(3), size=32)
        resp = toy_client.post(
            "/api/mask/simulate",
            json={"seg": png_b64(blob * 255, "L"), "kind": kind, "seed": 7},
        )
        out = decode_mask(resp.json()["mask"])
        assert (out >= blob).all()

    def test_invalid_kind_400(self, toy_client):
        blob = random_blob(np.random.default_rng(3), size=32)
        resp = toy_client.post(
            "/api/mask/simulate",
            json={"seg": png_b64(blob * 255, "L"), "kind": "spiral", "seed": 0},
        )
        assert resp.status_code == 400

    def test_empty_mask_422(self, toy_client):
        empty = np.zeros((32, 32), dtype=np.uint8)
        resp = toy_client.post(
            "/api/mask/simulate",
            json={"seg": png_b64(empty, "L"), "kind": "box", "seed": 0},
        )
        assert resp.status_code == 422


class TestJobStateMachine:
    def test_legal_flow(self):
        job = Job(id="j", request=None)
        job.transition("running")
        job.transition("done")
        assert job.state == "done"

    def test_illegal_transitions(self):
        job = Job(id="j", request=None)
        with pytest.raises(DomainError):
            job.transition("done")
        job.transition("running")
        job.transition("failed")
        with pytest.raises(DomainError):
            job.transition("running")

    def test_ring_buffer_evicts_oldest(self):
        table = server.JobTable(capacity=2)
        for i in range(3):
            table.add(Job(id=f"j{i}", request=None))
        assert table.get("j0") is None
        assert table.get("j2") is not None
