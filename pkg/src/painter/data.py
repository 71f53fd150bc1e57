"""Dataset construction: object crops, local caption generation with a
similarity filter, shard serialization, and benchmark loading.

A shard is a directory with a JSON-lines manifest (one record per line:
id, relative asset paths, prompt, mask kind, category) plus PNG assets.
Records whose caption pipeline fails or whose caption scores at or below the
similarity threshold are dropped, never retried forever, and counted in the
shard stats.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import masks
from .clients import ClientSet, call_client
from .errors import ClientError, EmptyMask, SchemaError, ShapeError

CATEGORIES = ("human", "animal", "cartoon", "indoor", "outdoor", "other")
MANIFEST = "manifest.jsonl"
STATS = "stats.json"
DEFAULT_CROP_PAD = 0.1
DEFAULT_SIM_THRESHOLD = 0.2


@dataclass
class SourceRecord:
    """Raw input to the pipeline: an image and its segmentation mask."""

    id: str
    image: np.ndarray
    seg_mask: np.ndarray
    category: str = "other"


@dataclass
class BenchRecord:
    """One serialized unit: image, masks, local prompt, category."""

    id: str
    image: np.ndarray
    seg_mask: np.ndarray
    eval_mask: np.ndarray | None
    local_prompt: str
    category: str
    kind: str = "seg"

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise SchemaError(f"record {self.id}: image must be (H, W, 3)")
        for name, m in (("seg_mask", self.seg_mask), ("eval_mask", self.eval_mask)):
            if m is None:
                continue
            if m.shape != self.image.shape[:2]:
                raise SchemaError(
                    f"record {self.id}: {name} dims {m.shape} do not match "
                    f"image {self.image.shape[:2]}"
                )
            masks.validate_binary_mask(m)
        if not self.local_prompt:
            raise SchemaError(f"record {self.id}: empty local prompt")
        if self.category not in CATEGORIES:
            raise SchemaError(f"record {self.id}: unknown category {self.category!r}")


@dataclass
class ShardStats:
    total: int = 0
    written: int = 0
    rejected: int = 0
    failed: int = 0
    kind_hist: dict = field(default_factory=dict)

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "written": self.written,
            "rejected": self.rejected,
            "failed": self.failed,
            "kind_hist": dict(sorted(self.kind_hist.items())),
            "rejection_rate": self.rejection_rate,
        }


def crop_object(image: np.ndarray, seg_mask: np.ndarray, pad_frac: float = DEFAULT_CROP_PAD) -> np.ndarray:
    """Crop the image to the mask bbox expanded by pad_frac per side."""
    if image.shape[:2] != seg_mask.shape:
        raise ShapeError(f"image {image.shape[:2]} and mask {seg_mask.shape} disagree")
    r0, c0, r1, c1 = masks.mask_bbox(seg_mask)
    pad_r = int(round(pad_frac * (r1 - r0 + 1)))
    pad_c = int(round(pad_frac * (c1 - c0 + 1)))
    r0 = max(0, r0 - pad_r)
    r1 = min(seg_mask.shape[0] - 1, r1 + pad_r)
    c0 = max(0, c0 - pad_c)
    c1 = min(seg_mask.shape[1] - 1, c1 + pad_c)
    return image[r0 : r1 + 1, c0 : c1 + 1]


def make_local_prompt(
    image: np.ndarray,
    seg_mask: np.ndarray,
    captioner,
    shortener,
    sim,
    threshold: float = DEFAULT_SIM_THRESHOLD,
    pad_frac: float = DEFAULT_CROP_PAD,
    record_id: str = "",
    attempts: int = 3,
    timeout: float | None = None,
) -> str | None:
    """Caption the object crop, shorten it, and keep it only if the
    crop/caption similarity strictly exceeds the threshold. Returns None for
    rejected captions; client failures raise ClientError tagged with the
    record id."""
    crop = crop_object(image, seg_mask, pad_frac)
    kwargs = dict(attempts=attempts, timeout=timeout, context=record_id)
    caption = call_client(captioner.caption, crop, **kwargs)
    short = call_client(shortener.shorten, caption, **kwargs)
    score = call_client(sim.score, crop, short, **kwargs)
    return short if score > threshold else None


def _record_rng(seed: int, record_id: str) -> np.random.Generator:
    digest = hashlib.blake2s(record_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def _png_path(assets: Path, record_id: str, tag: str) -> Path:
    return assets / (f"{record_id}.png" if tag == "image" else f"{record_id}.{tag}.png")


def build_shard(
    source_records,
    mask_params: masks.MaskGenParams,
    clients: ClientSet,
    out_dir,
    seed: int = 0,
    threshold: float = DEFAULT_SIM_THRESHOLD,
    workers: int = 1,
) -> ShardStats:
    """Build a training/benchmark shard from raw records.

    Per record: draw the mixing number k, synthesize the mask, generate the
    local prompt through the clients, and serialize. One bad record never
    aborts the shard; it is dropped and counted. Output order and all
    randomness depend only on (seed, record id), so reruns are byte-identical
    regardless of worker count.
    """
    out = Path(out_dir)
    assets = out / "assets"
    assets.mkdir(parents=True, exist_ok=True)
    stats = ShardStats()

    def process(src: SourceRecord):
        rng = _record_rng(seed, src.id)
        k = rng.uniform()
        mask, kind = masks.sample_mask(src.seg_mask, k, mask_params, rng)
        prompt = make_local_prompt(
            src.image, src.seg_mask, clients.captioner, clients.shortener,
            clients.similarity, threshold=threshold, record_id=src.id,
        )
        return src, mask, kind, prompt

    sources = sorted(source_records, key=lambda s: s.id)
    stats.total = len(sources)
    results = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(src.id, pool.submit(process, src)) for src in sources]
            for rid, fut in futures:
                try:
                    results.append(fut.result())
                except (ClientError, EmptyMask) as exc:
                    stats.failed += 1
                    results.append(("failed", rid, exc))
    else:
        for src in sources:
            try:
                results.append(process(src))
            except (ClientError, EmptyMask) as exc:
                stats.failed += 1
                results.append(("failed", src.id, exc))

    lines = []
    for item in results:
        if item[0] == "failed":
            continue
        src, mask, kind, prompt = item
        if prompt is None:
            stats.rejected += 1
            continue
        Image.fromarray(src.image, mode="RGB").save(_png_path(assets, src.id, "image"))
        masks.save_mask_png(src.seg_mask, _png_path(assets, src.id, "seg"))
        masks.save_mask_png(mask, _png_path(assets, src.id, "eval"))
        lines.append(
            {
                "id": src.id,
                "image": f"assets/{src.id}.png",
                "seg_mask": f"assets/{src.id}.seg.png",
                "eval_mask": f"assets/{src.id}.eval.png",
                "prompt": prompt,
                "kind": kind,
                "category": src.category,
            }
        )
        stats.written += 1
        stats.kind_hist[kind] = stats.kind_hist.get(kind, 0) + 1

    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    (out / STATS).write_text(json.dumps(stats.to_json(), indent=2, sort_keys=True) + "\n")
    return stats


_REQUIRED_FIELDS = ("id", "image", "seg_mask", "prompt", "kind", "category")


def load_bench(path) -> list[BenchRecord]:
    """Load and validate a shard/bench directory into records."""
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise SchemaError(f"no {MANIFEST} under {root}")
    records: list[BenchRecord] = []
    seen: set[str] = set()
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{MANIFEST} line {n}: invalid JSON: {exc}") from exc
        missing = [f for f in _REQUIRED_FIELDS if f not in doc]
        if missing:
            raise SchemaError(f"{MANIFEST} line {n}: missing fields {missing}")
        rid = doc["id"]
        if rid in seen:
            raise SchemaError(f"duplicate record id {rid!r}")
        seen.add(rid)
        try:
            with Image.open(root / doc["image"]) as im:
                image = np.asarray(im.convert("RGB"))
            seg = masks.load_mask_png(root / doc["seg_mask"])
            ev = masks.load_mask_png(root / doc["eval_mask"]) if doc.get("eval_mask") else None
        except OSError as exc:
            raise SchemaError(f"record {rid}: cannot read asset: {exc}") from exc
        record = BenchRecord(
            id=rid, image=image, seg_mask=seg, eval_mask=ev,
            local_prompt=doc["prompt"], category=doc["category"], kind=doc["kind"],
        )
        record.validate()
        records.append(record)
    return records


def category_histogram(records) -> dict[str, int]:
    hist = {c: 0 for c in CATEGORIES}
    for r in records:
        hist[r.category] = hist.get(r.category, 0) + 1
    return {k: v for k, v in hist.items() if v}


def load_sources(path) -> list[SourceRecord]:
    """Read raw segmentation-corpus inputs: sources.jsonl with {id, image,
    seg_mask, category?} relative asset paths."""
    root = Path(path)
    manifest = root / "sources.jsonl"
    if not manifest.exists():
        raise SchemaError(f"no sources.jsonl under {root}")
    out = []
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        try:
            with Image.open(root / doc["image"]) as im:
                image = np.asarray(im.convert("RGB"))
            seg = masks.load_mask_png(root / doc["seg_mask"])
        except (OSError, KeyError) as exc:
            raise SchemaError(f"sources.jsonl line {n}: {exc}") from exc
        out.append(SourceRecord(id=doc["id"], image=image, seg_mask=seg,
                                category=doc.get("category", "other")))
    return out


def save_sources(records, path) -> None:
    root = Path(path)
    assets = root / "assets"
    assets.mkdir(parents=True, exist_ok=True)
    with open(root / "sources.jsonl", "w", encoding="utf-8") as fh:
        for rec in sorted(records, key=lambda r: r.id):
            Image.fromarray(rec.image, mode="RGB").save(_png_path(assets, rec.id, "image"))
            masks.save_mask_png(rec.seg_mask, _png_path(assets, rec.id, "seg"))
            fh.write(json.dumps({
                "id": rec.id,
                "image": f"assets/{rec.id}.png",
                "seg_mask": f"assets/{rec.id}.seg.png",
                "category": rec.category,
            }, sort_keys=True) + "\n")


def synthesize_records(n: int, size: int = 128, seed: int = 0) -> list[SourceRecord]:
    """Deterministic toy corpus: one solid shape per image on a flat
    background, segmentation mask matching the shape exactly."""
    rng = np.random.default_rng(seed)
    palette = [
        ("red", (220, 50, 50)),
        ("green", (60, 180, 75)),
        ("blue", (50, 80, 220)),
        ("yellow", (230, 220, 60)),
        ("magenta", (220, 60, 220)),
        ("cyan", (70, 210, 210)),
    ]
    records = []
    for i in range(n):
        bg = rng.integers(90, 166, size=3)
        image = np.full((size, size, 3), bg, dtype=np.uint8)
        _, color = palette[int(rng.integers(len(palette)))]
        mask = np.zeros((size, size), dtype=np.uint8)
        cy, cx = rng.integers(size // 4, 3 * size // 4, size=2)
        radius = int(rng.integers(size // 8, size // 4))
        if rng.uniform() < 0.5:
            yy, xx = np.ogrid[:size, :size]
            mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = 1
        else:
            r0, r1 = max(0, cy - radius), min(size, cy + radius)
            c0, c1 = max(0, cx - radius), min(size, cx + radius)
            mask[r0:r1, c0:c1] = 1
        image[mask == 1] = color
        records.append(
            SourceRecord(
                id=f"synth-{i:04d}",
                image=image,
                seg_mask=mask,
                category=CATEGORIES[i % len(CATEGORIES)],
            )
        )
    return records
