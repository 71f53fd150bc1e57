"""Text-conditioned inpainting: classifier-free-guided denoising with the
control branch attached, latent blending so unmasked latents track the
source image, and a final pixel paste that preserves untouched pixels
bit-exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from . import masks
from .errors import DomainError, EmptyPrompt, ModelNotLoaded, ShapeError
from .losses import actual_token_indices
from .model import BranchInput, forward_joint
from .train import ModelBundle, add_noise

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 7.5


@dataclass
class InpaintRequest:
    image: np.ndarray
    mask: np.ndarray
    local_prompt: str
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE
    w: float = 1.0
    seed: int = 0
    negative_prompt: str = ""

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeError(f"image must be (H, W, 3), got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ShapeError(
                f"mask {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        masks.validate_binary_mask(self.mask)
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise DomainError(f"guidance must be >= 0, got {self.guidance}")
        if self.w < 0:
            raise DomainError(f"w must be >= 0, got {self.w}")

    def settings(self) -> dict:
        return {
            "prompt": self.local_prompt,
            "steps": self.steps,
            "guidance": self.guidance,
            "w": self.w,
            "seed": self.seed,
        }


@dataclass
class InpaintResult:
    image: np.ndarray
    timing_s: float
    settings: dict = field(default_factory=dict)


def blend_preserve(generated: np.ndarray, original: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Per-pixel select: mask 1 takes the generated pixel, 0 the original."""
    if generated.shape != original.shape:
        raise ShapeError(f"shapes disagree: {generated.shape} vs {original.shape}")
    if m.shape != original.shape[:2]:
        raise ShapeError(f"mask {m.shape} does not fit image {original.shape[:2]}")
    masks.validate_binary_mask(m)
    return np.where(m[..., None] == 1, generated, original)


def plan_timesteps(T: int, steps: int) -> list[int]:
    """Descending sub-schedule of `steps` distinct timesteps from T to 1."""
    ts = np.unique(np.round(np.linspace(T, 1, num=min(steps, T))).astype(int))[::-1]
    return [int(t) for t in ts]


def _fit_to_factor(image: np.ndarray, mask: np.ndarray, factor: int):
    h, w = image.shape[:2]
    wh = max(factor, int(round(h / factor)) * factor)
    ww = max(factor, int(round(w / factor)) * factor)
    if (wh, ww) == (h, w):
        return image, mask, False
    img = np.asarray(
        Image.fromarray(image, mode="RGB").resize((ww, wh), Image.BILINEAR)
    )
    msk = np.asarray(
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").resize((ww, wh), Image.NEAREST)
    )
    return img, (msk >= 128).astype(np.uint8), True


def inpaint(req: InpaintRequest, models: ModelBundle) -> InpaintResult:
    """Denoise the masked region under the local prompt.

    Each step runs the joint forward twice (conditional and unconditional)
    unless guidance is 0 or the prompt has no actual tokens, combines them as
    uncond + guidance * (cond - uncond), steps the deterministic
    noise-prediction sampler, and re-anchors unmasked latents to the forward-
    noised source. The decoded result is pasted over the source through the
    binary mask, so pixels with mask 0 come back untouched.
    """
    if models is None or models.base is None or models.branch is None:
        raise ModelNotLoaded("inpaint needs a loaded model bundle")
    started = time.perf_counter()

    work_img, work_mask, resized = _fit_to_factor(req.image, req.mask, models.vae.factor)
    rng = np.random.default_rng(req.seed)
    sched = models.schedule

    c_cond, tokenized = models.embed_prompt(req.local_prompt)
    try:
        actual_token_indices(tokenized)
        conditional = True
    except EmptyPrompt:
        conditional = False
    c_uncond, _ = models.embed_prompt(req.negative_prompt)
    use_cfg = conditional and req.guidance > 0

    with torch.no_grad():
        z0_clean = models.vae.encode(work_img)[None]
        hole = work_mask[..., None].astype(work_img.dtype)
        z0m = models.vae.encode(work_img * (1 - hole))[None]
        h, w = z0_clean.shape[2], z0_clean.shape[3]
        m_lat = torch.from_numpy(
            masks.resize_mask(work_mask, h, w).astype(np.float32)
        )[None, None]

        z = torch.from_numpy(
            rng.standard_normal(z0_clean.shape).astype(np.float32)
        )
        times = plan_timesteps(sched.T, req.steps)
        for i, t in enumerate(times):
            t_next = times[i + 1] if i + 1 < len(times) else 0
            tt = torch.as_tensor([t], dtype=torch.long)
            binput = BranchInput(z_t=z, z0_m=z0m, m=m_lat)
            eps_u, _ = forward_joint(
                models.base, models.branch, models.taps, binput, tt, c_uncond, w=req.w,
            )
            if use_cfg:
                eps_c, _ = forward_joint(
                    models.base, models.branch, models.taps, binput, tt, c_cond, w=req.w
                )
                eps_hat = eps_u + req.guidance * (eps_c - eps_u)
            else:
                eps_hat = eps_u

            a_t, s_t = sched.coeffs(t)
            z0_hat = (z - s_t * eps_hat) / a_t
            if t_next >= 1:
                a_n, s_n = sched.coeffs(t_next)
                z = a_n * z0_hat + s_n * eps_hat
                blend_eps = torch.from_numpy(
                    rng.standard_normal(z0_clean.shape).astype(np.float32)
                )
                z_known = add_noise(z0_clean, t_next, blend_eps, sched)
            else:
                z = z0_hat
                z_known = z0_clean
            z = m_lat * z + (1 - m_lat) * z_known

        decoded = models.vae.decode(z[0])

    if resized:
        decoded = np.asarray(
            Image.fromarray(decoded, mode="RGB").resize(
                (req.image.shape[1], req.image.shape[0]), Image.BILINEAR
            )
        )
    out = blend_preserve(decoded, req.image, req.mask)
    return InpaintResult(
        image=out,
        timing_s=time.perf_counter() - started,
        settings=req.settings(),
    )
