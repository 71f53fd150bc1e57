"""Interfaces to the external scoring/captioning models, plus deterministic
offline stubs so the whole pipeline runs hermetically.

Real deployments wrap live multimodal captioners, caption shorteners, CLIP
scorers and open-vocabulary detectors behind these call shapes; every call
site goes through call_client() which adds bounded retries and an optional
per-call timeout.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ClientError


class CaptionerClient(Protocol):
    def caption(self, crop: np.ndarray) -> str: ...


class ShortenerClient(Protocol):
    def shorten(self, caption: str) -> str: ...


class SimilarityClient(Protocol):
    def score(self, image: np.ndarray, text: str) -> float: ...


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    phrase: str
    confidence: float


class DetectorClient(Protocol):
    def detect(self, image: np.ndarray, text: str) -> Sequence[Detection]: ...


def call_client(fn: Callable, *args, attempts: int = 3, timeout: float | None = None,
                context: str = ""):
    """Invoke a client call with up to ``attempts`` tries; raises ClientError
    carrying ``context`` (typically the record id) once they are spent."""
    last = None
    for _ in range(max(1, attempts)):
        try:
            if timeout is None:
                return fn(*args)
            with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
                return pool.submit(fn, *args).result(timeout=timeout)
        except Exception as exc:  # noqa: BLE001 - anything a client throws counts as one failed try
            last = exc
    where = f" [{context}]" if context else ""
    raise ClientError(f"client call failed after {attempts} attempts{where}: {last}") from last


_COLOR_NAMES = {
    "red": (220, 50, 50),
    "green": (60, 180, 75),
    "blue": (50, 80, 220),
    "yellow": (230, 220, 60),
    "magenta": (220, 60, 220),
    "cyan": (70, 210, 210),
    "orange": (240, 150, 40),
    "white": (240, 240, 240),
    "black": (20, 20, 20),
    "gray": (128, 128, 128),
}


class StubCaptioner:
    """Names the dominant color of the crop center; deterministic."""

    def caption(self, crop: np.ndarray) -> str:
        h, w = crop.shape[:2]
        center = crop[h // 4 : max(h // 4 + 1, 3 * h // 4), w // 4 : max(w // 4 + 1, 3 * w // 4)]
        mean = center.reshape(-1, crop.shape[2]).mean(axis=0)
        name = min(_COLOR_NAMES, key=lambda n: float(np.sum((mean - _COLOR_NAMES[n]) ** 2)))
        return f"a {name} object"


class IdentityShortener:
    def shorten(self, caption: str) -> str:
        return caption


class TruncatingShortener:
    """Keeps the trailing object words, dropping filler/articles."""

    drop = {"a", "an", "the", "photo", "of", "picture", "image", "there", "is"}

    def __init__(self, max_words: int = 3):
        self.max_words = max_words

    def shorten(self, caption: str) -> str:
        words = [w for w in caption.lower().split() if w not in self.drop]
        kept = words[-self.max_words :] if words else caption.split()
        return " ".join(kept) if kept else caption


@dataclass(frozen=True)
class FixedSimilarity:
    value: float = 1.0

    def score(self, image: np.ndarray, text: str) -> float:
        return self.value


@dataclass(frozen=True)
class PromptKeyedSimilarity:
    """Returns a programmed score per prompt text; handy for exact-value tests."""

    table: dict
    default: float = 0.0

    def score(self, image: np.ndarray, text: str) -> float:
        return float(self.table.get(text, self.default))


@dataclass(frozen=True)
class EchoDetector:
    """Always detects the queried text over the full frame."""

    confidence: float = 0.9

    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        h, w = image.shape[:2]
        return [Detection(box=(0.0, 0.0, float(w), float(h)), phrase=text,
                          confidence=self.confidence)]


class SilentDetector:
    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        return []


@dataclass(frozen=True)
class KeyedDetector:
    """Programmed detections per prompt: {prompt: (phrase, confidence)}."""

    table: dict
    box: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        if text not in self.table:
            return []
        phrase, conf = self.table[text]
        return [Detection(box=self.box, phrase=phrase, confidence=conf)]


@dataclass
class ClientSet:
    """The caption pipeline's three collaborators bundled together."""

    captioner: CaptionerClient = field(default_factory=StubCaptioner)
    shortener: ShortenerClient = field(default_factory=TruncatingShortener)
    similarity: SimilarityClient = field(default_factory=FixedSimilarity)


def stub_clients(similarity_value: float = 1.0) -> ClientSet:
    return ClientSet(similarity=FixedSimilarity(similarity_value))
