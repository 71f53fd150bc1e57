"""Self-contained stand-ins for the pretrained companions of a real
diffusion stack: a hash-vocabulary tokenizer, a fixed random-basis text
encoder, and an exactly invertible space-to-channel autoencoder.

Real checkpoints plug in behind the same call surfaces: tokenize() to a
fixed length with start/end markers, encode() text to (L, dim), and an
image<->latent pair whose round trip preserves shape.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from einops import rearrange

from .errors import ShapeError
from .losses import TokenizedPrompt

PAD_ID = 0
SOT_ID = 1
EOT_ID = 2
_FIRST_WORD_ID = 3


class ToyTokenizer:
    """Whitespace/punctuation splitter with a stable hashed vocabulary."""

    def __init__(self, length: int = 77, vocab_size: int = 4096):
        if length < 2:
            raise ShapeError("token length must fit at least the start/end markers")
        self.length = length
        self.vocab_size = vocab_size

    def _word_id(self, word: str) -> int:
        digest = hashlib.blake2s(word.encode("utf-8"), digest_size=8).digest()
        span = self.vocab_size - _FIRST_WORD_ID
        return _FIRST_WORD_ID + int.from_bytes(digest, "little") % span

    def tokenize(self, prompt: str) -> TokenizedPrompt:
        words = [w for w in _split_words(prompt)][: self.length - 2]
        ids = [SOT_ID] + [self._word_id(w) for w in words] + [EOT_ID]
        actual_len = len(ids)
        ids.extend([PAD_ID] * (self.length - actual_len))
        return TokenizedPrompt(ids=tuple(ids), actual_len=actual_len)


def _split_words(prompt: str):
    word = []
    for ch in prompt.lower():
        if ch.isalnum() or ch == "'":
            word.append(ch)
        elif word:
            yield "".join(word)
            word = []
    if word:
        yield "".join(word)


class ToyTextEncoder:
    """Deterministic embedding lookup: token table plus positional offsets,
    both drawn once from a seeded generator."""

    def __init__(self, dim: int = 64, vocab_size: int = 4096, length: int = 77, seed: int = 1234):
        self.dim = dim
        self.vocab_size = vocab_size
        self.length = length
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._table = rng.standard_normal((vocab_size, dim)).astype(np.float32) * 0.3
        self._pos = rng.standard_normal((length, dim)).astype(np.float32) * 0.1

    def encode(self, prompt: TokenizedPrompt) -> torch.Tensor:
        if prompt.length != self.length:
            raise ShapeError(
                f"prompt length {prompt.length} does not match encoder length {self.length}"
            )
        ids = np.asarray(prompt.ids, dtype=np.int64)
        emb = self._table[ids] + self._pos
        return torch.from_numpy(emb.copy())


@dataclass(frozen=True)
class SpaceToChannelVae:
    """Lossless autoencoder: folds f x f pixel blocks into channels.

    encode maps uint8 RGB (H, W, 3) to float32 latents (3 * f * f, H/f, W/f)
    scaled to [-1, 1]; decode inverts exactly (integer pixel values survive
    the round trip bit-for-bit).
    """

    factor: int = 8
    image_channels: int = 3

    @property
    def latent_channels(self) -> int:
        return self.image_channels * self.factor * self.factor

    def encode(self, image: np.ndarray) -> torch.Tensor:
        if image.ndim != 3 or image.shape[2] != self.image_channels:
            raise ShapeError(f"expected (H, W, {self.image_channels}) image, got {image.shape}")
        h, w = image.shape[:2]
        if h % self.factor or w % self.factor:
            raise ShapeError(f"image dims {h}x{w} must be divisible by {self.factor}")
        scaled = image.astype(np.float32) / 127.5 - 1.0
        lat = rearrange(
            torch.from_numpy(scaled),
            "(h p) (w q) c -> (c p q) h w",
            p=self.factor,
            q=self.factor,
        )
        return lat

    def decode(self, latent: torch.Tensor) -> np.ndarray:
        if latent.ndim != 3 or latent.shape[0] != self.latent_channels:
            raise ShapeError(
                f"expected ({self.latent_channels}, h, w) latent, got {tuple(latent.shape)}"
            )
        img = rearrange(
            latent.detach().to(torch.float32),
            "(c p q) h w -> (h p) (w q) c",
            c=self.image_channels,
            p=self.factor,
            q=self.factor,
        ).numpy()
        return np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
