"""Dual-branch denoiser: a compact convolutional noise predictor with
cross-attention, plus the control branch that shadows it.

The branch is a copy of the base denoiser whose input stem is widened from C
to 2C+1 channels (noisy latent, masked-image latent, downsampled mask). Its
per-layer outputs and cross-attention outputs feed back into the frozen base
through zero-initialized 1x1 projections scaled by the preservation scale w:
layer contributions are added to the base layer inputs, attention
contributions to the base attention outputs (input-side anchoring available
via ``attn_inject="pre"``). With all projections at zero the joint forward
reproduces the base exactly, so training starts from the pretrained
behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import MissingTap, ShapeError
from .losses import CapturedMap


@dataclass(frozen=True)
class AttentionSite:
    layer: int
    heads: int = 2
    head_dim: int = 32


@dataclass(frozen=True)
class DenoiserSpec:
    """Architecture card for the noise predictor.

    widths: per-layer channel counts (layer i maps widths[i-1] -> widths[i],
    the stem feeds layer 0 at widths[0]). Attention sites name the layers
    that carry text cross-attention.
    """

    widths: tuple[int, ...] = (32, 32, 32, 32)
    attention: tuple[AttentionSite, ...] = (AttentionSite(layer=2),)
    latent_channels: int = 4
    latent_size: tuple[int, int] = (16, 16)
    text_dim: int = 64
    token_len: int = 77
    time_dim: int = 32
    groups: int = 8
    attn_inject: str = "post"

    def __post_init__(self) -> None:
        if len(self.widths) < 1:
            raise ShapeError("need at least one layer")
        for site in self.attention:
            if not 0 <= site.layer < len(self.widths):
                raise ShapeError(f"attention site index {site.layer} out of range")
        if len({s.layer for s in self.attention}) != len(self.attention):
            raise ShapeError("duplicate attention site")
        if self.attn_inject not in ("pre", "post"):
            raise ShapeError(f"attn_inject must be 'pre' or 'post', got {self.attn_inject!r}")
        for w in self.widths:
            if w % self.groups:
                raise ShapeError(f"width {w} not divisible by norm groups {self.groups}")

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    @property
    def branch_in_channels(self) -> int:
        return 2 * self.latent_channels + 1

    def layer_in_width(self, i: int) -> int:
        return self.widths[i - 1] if i > 0 else self.widths[0]

    def attention_at(self, i: int) -> AttentionSite | None:
        for site in self.attention:
            if site.layer == i:
                return site
        return None


@dataclass
class BranchInput:
    """Conditioning stack for the control branch: noisy latent, masked-image
    latent, and the mask resampled to latent resolution. Channel total is
    2C+1 (9 for the standard 4-channel latent space)."""

    z_t: torch.Tensor
    z0_m: torch.Tensor
    m: torch.Tensor

    def __post_init__(self) -> None:
        if self.z_t.shape != self.z0_m.shape:
            raise ShapeError(
                f"z_t {tuple(self.z_t.shape)} and z0_m {tuple(self.z0_m.shape)} disagree"
            )
        if self.m.ndim != 4 or self.m.shape[1] != 1:
            raise ShapeError(f"mask must be (B, 1, h, w), got {tuple(self.m.shape)}")
        if self.m.shape[0] != self.z_t.shape[0] or self.m.shape[2:] != self.z_t.shape[2:]:
            raise ShapeError("mask batch/spatial dims disagree with latents")

    def stacked(self) -> torch.Tensor:
        return torch.cat([self.z_t, self.z0_m, self.m], dim=1)


def attention_probs(q: torch.Tensor, k: torch.Tensor, head_dim: int | None = None) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) along the key axis; q (..., HW, d), k (..., L, d)."""
    d = head_dim if head_dim is not None else q.shape[-1]
    logits = q @ k.transpose(-1, -2) / math.sqrt(d)
    return torch.softmax(logits, dim=-1)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of the timestep, (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class CrossAttention(nn.Module):
    """Text cross-attention over flattened spatial positions."""

    def __init__(self, width: int, text_dim: int, heads: int, head_dim: int, groups: int):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.norm = nn.GroupNorm(groups, width)
        self.to_q = nn.Conv2d(width, inner, 1)
        self.to_k = nn.Linear(text_dim, inner, bias=False)
        self.to_v = nn.Linear(text_dim, inner, bias=False)
        self.to_out = nn.Conv2d(inner, width, 1)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (block output (B, width, h, w), head-averaged map (B, HW, L))."""
        b, _, h, w = x.shape
        q = self.to_q(self.norm(x)).reshape(b, self.heads, self.head_dim, h * w)
        q = q.permute(0, 1, 3, 2)  # (B, heads, HW, d)
        k = self.to_k(c).reshape(b, -1, self.heads, self.head_dim).permute(0, 2, 1, 3)
        v = self.to_v(c).reshape(b, -1, self.heads, self.head_dim).permute(0, 2, 1, 3)
        probs = attention_probs(q, k, self.head_dim)  # (B, heads, HW, L)
        o = probs @ v  # (B, heads, HW, d)
        o = o.permute(0, 1, 3, 2).reshape(b, self.heads * self.head_dim, h, w)
        return self.to_out(o), probs.mean(dim=1)


class LayerBlock(nn.Module):
    def __init__(self, in_w: int, out_w: int, spec: DenoiserSpec, site: AttentionSite | None):
        super().__init__()
        self.conv = nn.Conv2d(in_w, out_w, 3, padding=1)
        self.norm = nn.GroupNorm(spec.groups, out_w)
        self.time_proj = nn.Linear(spec.time_dim, out_w)
        self.skip = nn.Conv2d(in_w, out_w, 1) if in_w != out_w else nn.Identity()
        self.attn = (
            CrossAttention(out_w, spec.text_dim, site.heads, site.head_dim, spec.groups)
            if site is not None
            else None
        )
        self.attn_inject = spec.attn_inject

    def forward(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        c: torch.Tensor,
        attn_injection: torch.Tensor | None = None,
    ):
        h = self.conv(x)
        h = self.norm(h)
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = torch.nn.functional.silu(h)
        out = h + self.skip(x)
        attn_out = None
        amap = None
        if self.attn is not None:
            attn_in = out
            if attn_injection is not None and self.attn_inject == "pre":
                attn_in = attn_in + attn_injection
            attn_out, amap = self.attn(attn_in, c)
            augmented = attn_out
            if attn_injection is not None and self.attn_inject == "post":
                augmented = augmented + attn_injection
            out = out + augmented
        return out, attn_out, amap


@dataclass
class BranchCapture:
    """Per-layer branch activations consumed by the taps and the attention
    loss: layer outputs, attention-block outputs, head-averaged maps."""

    layer_outputs: list[torch.Tensor] = field(default_factory=list)
    attn_outputs: dict[int, torch.Tensor] = field(default_factory=dict)
    maps: list[CapturedMap] = field(default_factory=list)


@dataclass
class TapInjection:
    layer: list[torch.Tensor]
    attn: dict[int, torch.Tensor]


class Denoiser(nn.Module):
    """Noise predictor over latents, optionally capturing activations (for
    the branch) or consuming additive injections (for the base)."""

    def __init__(self, spec: DenoiserSpec, in_channels: int | None = None):
        super().__init__()
        self.spec = spec
        self.in_channels = spec.latent_channels if in_channels is None else in_channels
        self.stem = nn.Conv2d(self.in_channels, spec.widths[0], 3, padding=1)
        self.blocks = nn.ModuleList(
            [
                LayerBlock(spec.layer_in_width(i), spec.widths[i], spec, spec.attention_at(i))
                for i in range(spec.n_layers)
            ]
        )
        self.head_norm = nn.GroupNorm(spec.groups, spec.widths[-1])
        self.head = nn.Conv2d(spec.widths[-1], spec.latent_channels, 3, padding=1)

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        c: torch.Tensor,
        inject: TapInjection | None = None,
        capture: bool = False,
    ) -> tuple[torch.Tensor, BranchCapture | None]:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (B, {self.in_channels}, h, w) input, got {tuple(x.shape)}"
            )
        if c.ndim != 3 or c.shape[-1] != self.spec.text_dim:
            raise ShapeError(f"text embedding must be (B, L, {self.spec.text_dim})")
        if t.ndim == 0:
            t = t[None]
        t_emb = timestep_embedding(t, self.spec.time_dim)

        cap = BranchCapture() if capture else None
        h = self.stem(x)
        for i, block in enumerate(self.blocks):
            if inject is not None and inject.layer[i] is not None:
                h = h + inject.layer[i]
            attn_injection = inject.attn.get(i) if inject is not None else None
            h, attn_out, amap = block(h, t_emb, c, attn_injection)
            if cap is not None:
                cap.layer_outputs.append(h)
                if attn_out is not None:
                    cap.attn_outputs[i] = attn_out
                    hh, ww = h.shape[2], h.shape[3]
                    cap.maps.append(CapturedMap(probs=amap, spatial=(hh, ww), layer=i))
        eps = self.head(torch.nn.functional.silu(self.head_norm(h)))
        return eps, cap


class Taps(nn.Module):
    """Zero-initialized 1x1 projections, one per layer and one per attention
    site, bridging branch activations into the base."""

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        self.layer_projs = nn.ModuleList(
            [nn.Conv2d(spec.widths[i], spec.layer_in_width(i), 1) for i in range(spec.n_layers)]
        )
        self.attn_projs = nn.ModuleDict(
            {str(site.layer): nn.Conv2d(spec.widths[site.layer], spec.widths[site.layer], 1)
             for site in spec.attention}
        )
        for proj in list(self.layer_projs) + list(self.attn_projs.values()):
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def control_points(self) -> list["ControlPointTap"]:
        points = [
            ControlPointTap(site="layer", index=i, projection=p)
            for i, p in enumerate(self.layer_projs)
        ]
        points += [
            ControlPointTap(site="attention", index=int(i), projection=p)
            for i, p in self.attn_projs.items()
        ]
        return points


@dataclass(frozen=True)
class ControlPointTap:
    site: str
    index: int
    projection: nn.Module


def init_branch(spec: DenoiserSpec, base: Denoiser) -> tuple[Denoiser, Taps]:
    """Clone the base into a control branch with a widened input stem.

    The branch stem accepts 2C+1 channels; the first C input slices reuse the
    base stem weights, the new slices start at zero so a zero-padded input
    reproduces the base stem output. All other parameters are copied. Base
    parameters are frozen in place.
    """
    if base.spec != spec:
        raise ShapeError("base model was built from a different spec")
    if base.in_channels != spec.latent_channels:
        raise ShapeError("base model input width disagrees with the spec")

    branch = Denoiser(spec, in_channels=spec.branch_in_channels)
    state = {k: v.clone() for k, v in base.state_dict().items()}
    stem_w = state.pop("stem.weight")
    widened = torch.zeros(
        stem_w.shape[0], spec.branch_in_channels, *stem_w.shape[2:], dtype=stem_w.dtype
    )
    widened[:, : spec.latent_channels] = stem_w
    state["stem.weight"] = widened
    branch.load_state_dict(state)

    taps = Taps(spec)
    for p in base.parameters():
        p.requires_grad_(False)
    return branch, taps


def _check_taps(spec: DenoiserSpec, taps: Taps) -> None:
    if len(taps.layer_projs) != spec.n_layers:
        raise MissingTap(
            f"expected {spec.n_layers} layer taps, got {len(taps.layer_projs)}"
        )
    want = {str(site.layer) for site in spec.attention}
    have = set(taps.attn_projs.keys())
    if want != have:
        raise MissingTap(f"attention taps {sorted(have)} do not cover sites {sorted(want)}")


def forward_joint(
    base: Denoiser,
    branch: Denoiser,
    taps: Taps,
    binput: BranchInput,
    t: torch.Tensor,
    c: torch.Tensor,
    w: float = 1.0,
) -> tuple[torch.Tensor, BranchCapture]:
    """Run the branch on the conditioning stack, project its activations
    through the taps scaled by w, and run the base with those additive
    contributions. Returns the base noise prediction and the branch capture
    (attention maps included) for the training losses."""
    _check_taps(base.spec, taps)
    if binput.z_t.shape[1] != base.spec.latent_channels:
        raise ShapeError(
            f"latents must have {base.spec.latent_channels} channels, got {binput.z_t.shape[1]}"
        )
    _, cap = branch(binput.stacked(), t, c, capture=True)
    injection = TapInjection(
        layer=[w * proj(out) for proj, out in zip(taps.layer_projs, cap.layer_outputs)],
        attn={i: w * taps.attn_projs[str(i)](out) for i, out in cap.attn_outputs.items()},
    )
    eps, _ = base(binput.z_t, t, c, inject=injection)
    return eps, cap


def capture_attention_maps(
    branch: Denoiser, binput: BranchInput, t: torch.Tensor, c: torch.Tensor
) -> list[CapturedMap]:
    """Branch-only forward that returns the head-averaged cross-attention
    maps, one per attention site."""
    if not branch.spec.attention:
        raise MissingTap("branch has no attention sites to capture")
    _, cap = branch(binput.stacked(), t, c, capture=True)
    return cap.maps


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def toy_latent_spec(token_len: int = 77, text_dim: int = 64) -> DenoiserSpec:
    """Small 4-channel-latent card for fast oracle tests (instantiates in
    well under a second)."""
    return DenoiserSpec(
        widths=(32, 32, 32, 32),
        attention=(AttentionSite(layer=2, heads=2, head_dim=32),),
        latent_channels=4,
        latent_size=(16, 16),
        text_dim=text_dim,
        token_len=token_len,
    )


def toy_image_spec(token_len: int = 77, text_dim: int = 64) -> DenoiserSpec:
    """Card matched to the space-to-channel autoencoder (factor 8 on RGB,
    192 latent channels); spatial size is nominal, the network is fully
    convolutional."""
    return DenoiserSpec(
        widths=(32, 32, 32, 32),
        attention=(AttentionSite(layer=2, heads=2, head_dim=32),),
        latent_channels=192,
        latent_size=(16, 16),
        text_dim=text_dim,
        token_len=token_len,
    )
