"""Benchmark runner: global and local text-image similarity, detector-based
local accuracy, optional pluggable reward/aesthetic scorers, and a report
shaped as JSON plus a rendered text table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import data
from .clients import DetectorClient, SimilarityClient, call_client
from .errors import ClientError, EmptyMask
from .pipeline import InpaintRequest, InpaintResult

LOCAL_CROP_PAD = 0.05
DETECT_CONFIDENCE = 0.35
_ARTICLES = {"a", "an", "the"}

TABLE_COLUMNS = ("IR", "AS", "CLIP Sim", "Local CLIP Sim", "Gdino Acc")


def clip_sim(image: np.ndarray, prompt: str, sim: SimilarityClient) -> float:
    """Full-image text similarity on the benchmark's 100x scale."""
    return 100.0 * call_client(sim.score, image, prompt)


def local_clip_sim(
    image: np.ndarray,
    mask: np.ndarray,
    prompt: str,
    sim: SimilarityClient,
    pad_frac: float = LOCAL_CROP_PAD,
) -> float:
    """Text similarity of the masked region's crop, 100x scale."""
    crop = data.crop_object(image, mask, pad_frac)  # EmptyMask on all-zero mask
    return 100.0 * call_client(sim.score, crop, prompt)


def phrase_matches(phrase: str, prompt: str) -> bool:
    """Head-noun test: the prompt's final non-article token must appear among
    the predicted phrase's tokens (case-folded)."""
    def tokens(text):
        return [t for t in "".join(c if c.isalnum() else " " for c in text.lower()).split()]

    prompt_tokens = [t for t in tokens(prompt) if t not in _ARTICLES]
    if not prompt_tokens:
        return False
    return prompt_tokens[-1] in set(tokens(phrase))


def gdino_hit(
    image: np.ndarray,
    mask: np.ndarray,
    prompt: str,
    detector: DetectorClient,
    confidence: float = DETECT_CONFIDENCE,
    pad_frac: float = LOCAL_CROP_PAD,
) -> bool:
    crop = data.crop_object(image, mask, pad_frac)
    detections = call_client(detector.detect, crop, prompt)
    return any(
        d.confidence >= confidence and phrase_matches(d.phrase, prompt) for d in detections
    )


def gdino_acc(
    records: Sequence[data.BenchRecord],
    images: Sequence[np.ndarray],
    detector: DetectorClient,
    confidence: float = DETECT_CONFIDENCE,
    pad_frac: float = LOCAL_CROP_PAD,
) -> float:
    """Fraction of records whose generated region yields a matching phrase.
    Client failures count as misses."""
    if len(records) != len(images):
        raise ValueError("records and images must align")
    if not records:
        return 0.0
    hits = 0
    for record, image in zip(records, images):
        mask = record.eval_mask if record.eval_mask is not None else record.seg_mask
        try:
            hits += int(gdino_hit(image, mask, record.local_prompt, detector,
                                  confidence, pad_frac))
        except (ClientError, EmptyMask):
            continue
    return hits / len(records)


@dataclass
class EvalClients:
    similarity: SimilarityClient
    detector: DetectorClient
    image_reward: Callable[[np.ndarray], float] | None = None
    aesthetic: Callable[[np.ndarray], float] | None = None


@dataclass
class MetricsRow:
    id: str
    category: str
    clip_sim: float | None = None
    local_clip_sim: float | None = None
    gdino_hit: bool | None = None
    ir: float | None = None
    aesthetic: float | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "clip_sim": self.clip_sim,
            "local_clip_sim": self.local_clip_sim,
            "gdino_hit": self.gdino_hit,
            "ir": self.ir,
            "as": self.aesthetic,
            "error": self.error,
        }


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    per_category: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rows": [r.to_json() for r in self.rows],
            "aggregates": self.aggregates,
            "per_category": self.per_category,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _mean(values: list) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return float(sum(float(v) for v in vals) / len(vals))


def _aggregate(rows: Sequence[MetricsRow]) -> dict:
    return {
        "ir": _mean([r.ir for r in rows]),
        "as": _mean([r.aesthetic for r in rows]),
        "clip_sim": _mean([r.clip_sim for r in rows]),
        "local_clip_sim": _mean([r.local_clip_sim for r in rows]),
        "gdino_acc": _mean([float(r.gdino_hit) if r.gdino_hit is not None else 0.0 for r in rows])
        if rows
        else None,
        "records": len(rows),
    }


def _evaluate_record(
    record: data.BenchRecord,
    record_seed: int,
    inpaint_fn: Callable[[InpaintRequest], InpaintResult],
    clients: EvalClients,
    steps: int,
    guidance: float,
    w: float,
) -> MetricsRow:
    row = MetricsRow(id=record.id, category=record.category)
    mask = record.eval_mask if record.eval_mask is not None else record.seg_mask
    try:
        result = inpaint_fn(
            InpaintRequest(
                image=record.image,
                mask=mask,
                local_prompt=record.local_prompt,
                steps=steps,
                guidance=guidance,
                w=w,
                seed=record_seed,
            )
        )
        generated = result.image
        row.clip_sim = clip_sim(generated, record.local_prompt, clients.similarity)
        row.local_clip_sim = local_clip_sim(
            generated, mask, record.local_prompt, clients.similarity
        )
        row.gdino_hit = gdino_hit(generated, mask, record.local_prompt, clients.detector)
        if clients.image_reward is not None:
            row.ir = float(clients.image_reward(generated))
        if clients.aesthetic is not None:
            row.aesthetic = float(clients.aesthetic(generated))
    except Exception as exc:  # noqa: BLE001 - a bad record must not kill the run
        row.error = f"{type(exc).__name__}: {exc}"
        row.gdino_hit = row.gdino_hit or False
    return row


def run_benchmark(
    records: Sequence[data.BenchRecord],
    inpaint_fn: Callable[[InpaintRequest], InpaintResult],
    clients: EvalClients,
    seed: int = 0,
    steps: int = 50,
    guidance: float = 7.5,
    w: float = 1.0,
    workers: int = 1,
) -> MetricsReport:
    """Inpaint every record (per-record seed = seed + index over id-sorted
    records), score it, and aggregate. Per-record failures are recorded in
    the row and the run continues. With workers > 1 records are evaluated on
    a thread pool (inpaint_fn must then tolerate concurrent calls, e.g. one
    model instance per thread); assembly stays id-sorted either way."""
    report = MetricsReport()
    ordered = sorted(records, key=lambda r: r.id)
    jobs = [(record, seed + index) for index, record in enumerate(ordered)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.rows = list(
                pool.map(
                    lambda job: _evaluate_record(
                        job[0], job[1], inpaint_fn, clients, steps, guidance, w
                    ),
                    jobs,
                )
            )
    else:
        report.rows = [
            _evaluate_record(record, s, inpaint_fn, clients, steps, guidance, w)
            for record, s in jobs
        ]

    report.aggregates = _aggregate(report.rows)
    cats = sorted({r.category for r in report.rows})
    report.per_category = {
        cat: _aggregate([r for r in report.rows if r.category == cat]) for cat in cats
    }
    return report


def render_table(report: MetricsReport, label: str = "toy") -> str:
    """Text table mirroring the benchmark column order."""
    agg = report.aggregates

    def cell(value, digits=2):
        return "-" if value is None else f"{value:.{digits}f}"

    values = (
        cell(agg.get("ir")),
        cell(agg.get("as")),
        cell(agg.get("clip_sim")),
        cell(agg.get("local_clip_sim")),
        cell(agg.get("gdino_acc")),
    )
    header = ["Method", *TABLE_COLUMNS]
    rows = [[label, *values]]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)
