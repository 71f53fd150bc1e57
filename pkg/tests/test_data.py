import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from painter import data, masks
from painter.clients import (
    ClientSet,
    FixedSimilarity,
    IdentityShortener,
    StubCaptioner,
    TruncatingShortener,
    call_client,
    stub_clients,
)
from painter.errors import ClientError, EmptyMask, SchemaError

from conftest import random_blob


def bbox_oracle(mask):
    """Brute-force scan, independent of the production bbox path."""
    rows = [r for r in range(mask.shape[0]) if mask[r].any()]
    cols = [c for c in range(mask.shape[1]) if mask[:, c].any()]
    return rows[0], cols[0], rows[-1], cols[-1]


def tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestCropObject:
    def test_full_frame_mask_pad_zero(self):
        img = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
        crop = data.crop_object(img, np.ones((4, 4), dtype=np.uint8), pad_frac=0.0)
        assert np.array_equal(crop, img)

    def test_single_pixel(self):
        img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
        m = np.zeros((8, 8), dtype=np.uint8)
        m[3, 5] = 1
        crop = data.crop_object(img, m, pad_frac=0.0)
        assert crop.shape == (1, 1, 3)
        assert np.array_equal(crop[0, 0], img[3, 5])

    def test_bbox_matches_oracle_with_padding(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        m = np.zeros((64, 64), dtype=np.uint8)
        m[10:21, 30:51] = 1
        crop = data.crop_object(img, m, pad_frac=0.1)
        r0, c0, r1, c1 = bbox_oracle(m)
        pr = round(0.1 * (r1 - r0 + 1))
        pc = round(0.1 * (c1 - c0 + 1))
        want = img[r0 - pr : r1 + pr + 1, c0 - pc : c1 + pc + 1]
        assert np.array_equal(crop, want)

    def test_empty_mask(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(EmptyMask):
            data.crop_object(img, np.zeros((4, 4), dtype=np.uint8))

    @given(seed=st.integers(0, 2000), pad=st.floats(0, 0.5))
    @settings(max_examples=40, deadline=None)
    def test_crop_always_contains_bbox(self, seed, pad):
        rng = np.random.default_rng(seed)
        m = random_blob(rng, size=32)
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        crop = data.crop_object(img, m, pad_frac=pad)
        r0, c0, r1, c1 = bbox_oracle(m)
        assert crop.shape[0] >= r1 - r0 + 1
        assert crop.shape[1] >= c1 - c0 + 1


class TestMakeLocalPrompt:
    def _io(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        m = np.zeros((32, 32), dtype=np.uint8)
        m[8:20, 8:20] = 1
        return img, m

    def test_accepts_above_threshold(self):
        img, m = self._io()
        out = data.make_local_prompt(
            img, m, StubCaptioner(), IdentityShortener(), FixedSimilarity(0.25)
        )
        assert isinstance(out, str) and out

    def test_rejects_at_threshold_boundary(self):
        img, m = self._io()
        assert data.make_local_prompt(
            img, m, StubCaptioner(), IdentityShortener(), FixedSimilarity(0.20)
        ) is None
        assert data.make_local_prompt(
            img, m, StubCaptioner(), IdentityShortener(), FixedSimilarity(0.21)
        ) is not None

    def test_identity_shortener_passthrough(self):
        img, m = self._io()
        caption = StubCaptioner().caption(data.crop_object(img, m))
        out = data.make_local_prompt(
            img, m, StubCaptioner(), IdentityShortener(), FixedSimilarity(1.0)
        )
        assert out == caption

    def test_monotone_in_score(self):
        img, m = self._io()
        accepted = set()
        for value in (0.1, 0.2, 0.3, 0.9):
            got = data.make_local_prompt(
                img, m, StubCaptioner(), IdentityShortener(), FixedSimilarity(value)
            )
            accepted.add((value, got is not None))
        kept = sorted(v for v, ok in accepted if ok)
        dropped = sorted(v for v, ok in accepted if not ok)
        assert all(d < k for d in dropped for k in kept)

    def test_client_error_carries_record_id(self):
        img, m = self._io()

        class Broken:
            def caption(self, crop):
                raise RuntimeError("boom")

        with pytest.raises(ClientError, match="rec-7"):
            data.make_local_prompt(
                img, m, Broken(), IdentityShortener(), FixedSimilarity(1.0),
                record_id="rec-7",
            )


class TestCallClient:
    def test_retries_then_succeeds(self):
        calls = []

        def flaky(x):
            calls.append(x)
            if len(calls) < 3:
                raise RuntimeError("transient")
            return "ok"

        assert call_client(flaky, 1, attempts=3) == "ok"
        assert len(calls) == 3

    def test_bounded_attempts(self):
        calls = []

        def broken():
            calls.append(1)
            raise RuntimeError("always")

        with pytest.raises(ClientError):
            call_client(broken, attempts=3)
        assert len(calls) == 3

    def test_timeout(self):
        import time

        def slow():
            time.sleep(0.5)
            return "late"

        with pytest.raises(ClientError):
            call_client(slow, attempts=1, timeout=0.05)


class TestBuildShard:
    def test_empty_input(self, tmp_path):
        stats = data.build_shard([], masks.MaskGenParams(), stub_clients(), tmp_path)
        assert stats.total == 0 and stats.written == 0
        assert data.load_bench(tmp_path) == []

    def test_round_trip_exact(self, tmp_path):
        sources = data.synthesize_records(6, size=64, seed=3)
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), tmp_path, seed=1)
        records = data.load_bench(tmp_path)
        assert len(records) == 6
        by_id = {s.id: s for s in sources}
        for rec in records:
            src = by_id[rec.id]
            assert np.array_equal(rec.image, src.image)
            assert np.array_equal(rec.seg_mask, src.seg_mask)
            assert rec.eval_mask is not None and rec.local_prompt
            assert rec.category == src.category

    def test_kind_histogram_tracks_mixing(self, tmp_path):
        sources = data.synthesize_records(1000, size=24, seed=5)
        stats = data.build_shard(
            sources, masks.MaskGenParams(), stub_clients(), tmp_path, seed=2
        )
        n = stats.written
        assert n == 1000
        assert abs(stats.kind_hist.get("box", 0) / n - 0.25) < 0.05
        assert abs(stats.kind_hist.get("irr", 0) / n - 0.50) < 0.05
        assert abs(stats.kind_hist.get("seg", 0) / n - 0.25) < 0.05

    def test_byte_identical_reruns(self, tmp_path):
        sources = data.synthesize_records(5, size=48, seed=9)
        a, b = tmp_path / "a", tmp_path / "b"
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), a, seed=4)
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), b, seed=4)
        assert tree_digest(a) == tree_digest(b)

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        sources = data.synthesize_records(8, size=48, seed=2)
        a, b = tmp_path / "a", tmp_path / "b"
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), a, seed=4, workers=1)
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), b, seed=4, workers=4)
        assert tree_digest(a) == tree_digest(b)

    def test_rejections_counted_and_dropped(self, tmp_path):
        sources = data.synthesize_records(4, size=48, seed=1)
        stats = data.build_shard(
            sources, masks.MaskGenParams(), stub_clients(similarity_value=0.0),
            tmp_path, seed=0,
        )
        assert stats.rejected == 4 and stats.written == 0
        assert stats.rejection_rate == 1.0

    def test_partial_failure_keeps_going(self, tmp_path):
        sources = data.synthesize_records(4, size=48, seed=1)

        class FlakyCaptioner:
            def caption(self, crop):
                # deterministic failure on exactly one record's crop shape
                if crop.shape[0] % 2 == 1:
                    raise RuntimeError("bad crop")
                return "a thing"

        cs = ClientSet(captioner=FlakyCaptioner(), shortener=IdentityShortener(),
                       similarity=FixedSimilarity(1.0))
        stats = data.build_shard(sources, masks.MaskGenParams(), cs, tmp_path, seed=0)
        assert stats.written + stats.failed == 4
        assert stats.failed >= 1
        assert len(data.load_bench(tmp_path)) == stats.written


class TestLoadBench:
    def _well_formed(self, tmp_path, n=4):
        sources = data.synthesize_records(n, size=48, seed=7)
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), tmp_path, seed=0)
        return tmp_path

    def test_loads_fixture(self, tmp_path):
        root = self._well_formed(tmp_path)
        assert len(data.load_bench(root)) == 4

    def test_mismatched_mask_dims_schema_error(self, tmp_path):
        root = self._well_formed(tmp_path)
        line = json.loads((root / "manifest.jsonl").read_text().splitlines()[0])
        bad = np.zeros((7, 9), dtype=np.uint8)
        bad[2, 3] = 1
        masks.save_mask_png(bad, root / line["seg_mask"])
        with pytest.raises(SchemaError, match=line["id"]):
            data.load_bench(root)

    def test_missing_field_schema_error(self, tmp_path):
        root = self._well_formed(tmp_path)
        lines = (root / "manifest.jsonl").read_text().splitlines()
        doc = json.loads(lines[0])
        del doc["prompt"]
        lines[0] = json.dumps(doc)
        (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="missing"):
            data.load_bench(root)

    def test_duplicate_id_schema_error(self, tmp_path):
        root = self._well_formed(tmp_path)
        lines = (root / "manifest.jsonl").read_text().splitlines()
        (root / "manifest.jsonl").write_text("\n".join(lines + [lines[0]]) + "\n")
        with pytest.raises(SchemaError, match="duplicate"):
            data.load_bench(root)

    def test_uniform_category_fixture(self, tmp_path):
        sources = data.synthesize_records(12, size=48, seed=3)
        data.build_shard(sources, masks.MaskGenParams(), stub_clients(), tmp_path, seed=0)
        records = data.load_bench(tmp_path)
        hist = data.category_histogram(records)
        # independent scan of the manifest
        manifest_counts = {}
        for line in (tmp_path / "manifest.jsonl").read_text().splitlines():
            cat = json.loads(line)["category"]
            manifest_counts[cat] = manifest_counts.get(cat, 0) + 1
        assert hist == manifest_counts
        assert set(hist.values()) == {2}  # 12 records over 6 categories


class TestShorteners:
    def test_truncating_keeps_object_words(self):
        s = TruncatingShortener(max_words=2)
        assert s.shorten("a photo of a red circle") == "red circle"

    def test_nonempty_stays_nonempty(self):
        s = TruncatingShortener()
        assert s.shorten("the a an of") != ""


class TestSources:
    def test_source_round_trip(self, tmp_path):
        sources = data.synthesize_records(3, size=32, seed=0)
        data.save_sources(sources, tmp_path)
        back = data.load_sources(tmp_path)
        assert [s.id for s in back] == [s.id for s in sources]
        for a, b in zip(back, sources):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.seg_mask, b.seg_mask)
