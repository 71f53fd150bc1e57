"""Training objectives: noise-prediction MSE, the actual-token attention
loss over captured cross-attention maps, and their weighted combination.

Reduction convention: both losses average over elements (not sum), so their
magnitudes are resolution-independent and the default combination weight
stays meaningful from toy to full scale. ``reduce="sum"`` on the attention
loss restores the plain squared-norm-over-positions form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import masks
from .errors import DomainError, EmptyPrompt, ShapeError

BETA_DEFAULT = 0.00001


@dataclass(frozen=True)
class TokenizedPrompt:
    """Fixed-length token id sequence plus the count of non-pad positions.

    The tokenizer guarantees position 0 holds the start marker and position
    ``actual_len - 1`` the end marker; everything in between is prompt
    content, everything after is padding.
    """

    ids: tuple[int, ...]
    actual_len: int

    def __post_init__(self) -> None:
        if not 2 <= self.actual_len <= len(self.ids):
            raise DomainError(
                f"actual_len must be in [2, {len(self.ids)}], got {self.actual_len}"
            )

    @property
    def length(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TokenIndexSet:
    """Strictly increasing positions of the actual prompt tokens."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.indices) == 0:
            raise EmptyPrompt("token index set is empty")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise DomainError(f"indices must be strictly increasing: {self.indices}")
        if self.indices[0] < 1:
            raise DomainError("index 0 (start marker) can never be an actual token")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class LossBreakdown:
    diff: float
    atal: float
    beta: float
    total: float

    def __post_init__(self) -> None:
        if self.total != self.diff + self.beta * self.atal:
            raise DomainError("total must equal diff + beta * atal exactly")


@dataclass(frozen=True)
class CapturedMap:
    """One layer's cross-attention map: row-stochastic (B, HW, L) probs plus
    the spatial dims needed to resize the target mask onto it."""

    probs: torch.Tensor
    spatial: tuple[int, int]
    layer: int = -1

    def __post_init__(self) -> None:
        h, w = self.spatial
        if self.probs.ndim != 3 or self.probs.shape[1] != h * w:
            raise ShapeError(
                f"attention map must be (B, {h * w}, L), got {tuple(self.probs.shape)}"
            )


def actual_token_indices(p: TokenizedPrompt) -> TokenIndexSet:
    """Positions of the real prompt tokens: everything between the start and
    end markers. Raises EmptyPrompt when the prompt has no content."""
    if p.actual_len <= 2:
        raise EmptyPrompt("prompt holds only the start/end markers")
    return TokenIndexSet(tuple(range(1, p.actual_len - 1)))


def diffusion_loss(eps: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error between sampled and predicted noise."""
    if eps.shape != eps_pred.shape:
        raise ShapeError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_pred.shape)}")
    d = eps - eps_pred
    return (d * d).mean()


def atal_loss(
    maps: Sequence[CapturedMap],
    index_set: TokenIndexSet,
    m: np.ndarray,
    reduce: str = "mean",
) -> torch.Tensor:
    """Attention-to-mask alignment loss.

    Per layer: average the map columns at the actual-token positions into one
    spatial response, area-resize the inpainting mask to the layer's grid,
    and accumulate the squared difference (mean over positions by default).
    The result is averaged over layers.
    """
    if len(maps) == 0:
        raise ShapeError("need at least one attention map")
    if reduce not in ("mean", "sum"):
        raise DomainError(f"reduce must be 'mean' or 'sum', got {reduce!r}")
    if len(index_set) == 0:
        raise EmptyPrompt("no actual tokens to attend to")

    idx = list(index_set.indices)
    total = None
    for cm in maps:
        probs = cm.probs
        if max(idx) >= probs.shape[-1]:
            raise ShapeError(
                f"token index {max(idx)} out of range for map width {probs.shape[-1]}"
            )
        h, w = cm.spatial
        target = masks.resize_mask(m, h, w).reshape(-1)
        m_i = torch.as_tensor(target, dtype=probs.dtype, device=probs.device)
        a_i = probs[:, :, idx].mean(dim=-1)  # (B, HW)
        d = a_i - m_i
        per_layer = (d * d).mean() if reduce == "mean" else (d * d).sum(dim=-1).mean()
        total = per_layer if total is None else total + per_layer
    return total / len(maps)


def total_loss(diff: float, atal: float, beta: float = BETA_DEFAULT) -> LossBreakdown:
    """Combine the two loss terms; beta weights the attention term."""
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    diff = float(diff)
    atal = float(atal)
    return LossBreakdown(diff=diff, atal=atal, beta=beta, total=diff + beta * atal)
