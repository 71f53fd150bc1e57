"""Mask synthesis for inpainting training and evaluation.

Three mask families are produced from a segmentation base mask: filled
bounding boxes, irregular finger-like scribbles (dilation followed by random
line/circle/square strokes), and the segmentation mask itself. A uniform
random number k selects the family: k <= 0.25 box, 0.25 < k <= 0.75
irregular, otherwise segmentation.

Polarity everywhere: 1 = region to inpaint, 0 = keep. PNG serialization maps
1 -> 255.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image

from .errors import DomainError, EmptyMask, ShapeError

# Kind selection thresholds for the uniform mixing number k.
BOX_MAX_K = 0.25
IRR_MAX_K = 0.75


@dataclass(frozen=True)
class MaskGenParams:
    """Knobs for box/irregular mask synthesis.

    ``dilation_kernel_range`` and ``dilation_iter_range`` are the endpoints of
    the coverage-keyed schedule: a mask covering nothing gets the max kernel /
    max iterations, a full-frame mask gets the min of each, interpolated
    linearly in the coverage ratio. Small masks are dilated harder so the
    scribble strokes stay connected.
    """

    seed: int = 0
    box_expand_range: tuple[float, float] = (0.0, 0.3)
    dilation_kernel_range: tuple[int, int] = (3, 15)
    dilation_iter_range: tuple[int, int] = (1, 3)
    draw_count_range: tuple[int, int] = (1, 4)
    sub_iter_range: tuple[int, int] = (4, 12)
    brush_width_range: tuple[int, int] = (4, 16)
    stroke_length_range: tuple[int, int] = (10, 50)

    def __post_init__(self) -> None:
        for name in (
            "box_expand_range",
            "dilation_kernel_range",
            "dilation_iter_range",
            "draw_count_range",
            "sub_iter_range",
            "brush_width_range",
            "stroke_length_range",
        ):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < 0:
                raise DomainError(f"{name} must be nonnegative, got {(lo, hi)}")
            if lo > hi:
                raise DomainError(f"{name} needs min <= max, got {(lo, hi)}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def validate_binary_mask(m: np.ndarray) -> None:
    """Raise unless m is a 2-D raster whose values are all exactly 0 or 1."""
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"binary mask must be a 2-D array, got {getattr(m, 'shape', None)}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"binary mask needs H, W >= 1, got {m.shape}")
    bad = (m != 0) & (m != 1)
    if bad.any():
        raise DomainError("binary mask contains values outside {0, 1}")


def coverage_ratio(m: np.ndarray) -> float:
    """Fraction of set pixels: sum(m) / (H * W)."""
    validate_binary_mask(m)
    return float(m.sum()) / float(m.shape[0] * m.shape[1])


def mask_bbox(m: np.ndarray) -> tuple[int, int, int, int]:
    """Inclusive bounding box (r0, c0, r1, c1) of the nonzero pixels."""
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise EmptyMask("mask has no set pixels")
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def _lerp(a: float, b: float, t: float) -> float:
    return a + (b - a) * t


def gen_box_mask(
    m_seg: np.ndarray, params: MaskGenParams, rng: np.random.Generator
) -> np.ndarray:
    """Filled rectangle covering m_seg's bbox, each side pushed outward by a
    random fraction of the corresponding bbox side length, clipped to bounds.
    """
    validate_binary_mask(m_seg)
    r0, c0, r1, c1 = mask_bbox(m_seg)  # raises EmptyMask on all-zero input
    box_h = r1 - r0 + 1
    box_w = c1 - c0 + 1
    lo, hi = params.box_expand_range
    top, bottom, left, right = rng.uniform(lo, hi, size=4)
    r0 = max(0, r0 - int(round(top * box_h)))
    r1 = min(m_seg.shape[0] - 1, r1 + int(round(bottom * box_h)))
    c0 = max(0, c0 - int(round(left * box_w)))
    c1 = min(m_seg.shape[1] - 1, c1 + int(round(right * box_w)))
    out = np.zeros_like(m_seg, dtype=np.uint8)
    out[r0 : r1 + 1, c0 : c1 + 1] = 1
    return out


def _dilation_schedule(r: float, params: MaskGenParams) -> tuple[int, int]:
    """Coverage-keyed dilation strength: sparse masks dilate hardest."""
    k_min, k_max = params.dilation_kernel_range
    i_min, i_max = params.dilation_iter_range
    kernel = int(round(_lerp(k_max, k_min, r)))
    iters = int(round(_lerp(i_max, i_min, r)))
    return max(1, kernel), max(0, iters)


def gen_irregular_mask(
    m_seg: np.ndarray, params: MaskGenParams, rng: np.random.Generator
) -> np.ndarray:
    """Finger-like scribble mask: dilate m_seg, then draw random strokes.

    Dilation strength is keyed on the coverage ratio. Each drawing pass walks
    from a random point of the dilated mask, stamping lines, circles or
    squares with random angle, length and brush width. Every step only adds
    pixels, so the output is a pixelwise superset of m_seg. An all-zero input
    short-circuits to an all-zero output.
    """
    validate_binary_mask(m_seg)
    h, w = m_seg.shape
    r = coverage_ratio(m_seg)
    kernel_size, iters = _dilation_schedule(r, params)

    m_d = m_seg.astype(np.uint8).copy()
    if iters > 0:
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (kernel_size, kernel_size))
        m_d = cv2.dilate(m_d, kernel, iterations=iters)

    ys, xs = np.nonzero(m_d)
    if ys.size == 0:
        return m_d

    lo, hi = params.draw_count_range
    n_passes = int(rng.integers(lo, hi + 1))
    for _ in range(n_passes):
        pick = int(rng.integers(ys.size))
        cur = np.array([xs[pick], ys[pick]], dtype=np.float64)  # cv2 wants (x, y)
        s_lo, s_hi = params.sub_iter_range
        n_sub = int(rng.integers(s_lo, s_hi + 1))
        for _ in range(n_sub):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            length = rng.uniform(*params.stroke_length_range)
            width = int(rng.integers(params.brush_width_range[0], params.brush_width_range[1] + 1))
            width = max(1, width)
            nxt = cur + length * np.array([np.cos(angle), np.sin(angle)])
            nxt = np.clip(nxt, [0, 0], [w - 1, h - 1])
            shape = int(rng.integers(3))
            p0 = tuple(int(round(v)) for v in cur)
            p1 = tuple(int(round(v)) for v in nxt)
            if shape == 0:
                cv2.line(m_d, p0, p1, color=1, thickness=width)
            elif shape == 1:
                cv2.circle(m_d, p0, radius=max(1, width // 2 + 1), color=1, thickness=-1)
            else:
                half = max(1, width // 2 + 1)
                cv2.rectangle(
                    m_d,
                    (p0[0] - half, p0[1] - half),
                    (p0[0] + half, p0[1] + half),
                    color=1,
                    thickness=-1,
                )
            cur = nxt

    return m_d


def mask_kind_for(k: float) -> str:
    """Map the uniform mixing number k to a mask family name."""
    if not 0.0 <= k <= 1.0:
        raise DomainError(f"mixing number k must be in [0, 1], got {k}")
    if k <= BOX_MAX_K:
        return "box"
    if k <= IRR_MAX_K:
        return "irr"
    return "seg"


def sample_mask(
    m_seg: np.ndarray,
    k: float,
    params: MaskGenParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, str]:
    """Pick a mask family via k and synthesize the mask.

    Box generation on an empty segmentation falls back to the segmentation
    mask itself with kind "seg".
    """
    kind = mask_kind_for(k)
    if kind == "box":
        try:
            return gen_box_mask(m_seg, params, rng), "box"
        except EmptyMask:
            return m_seg.copy(), "seg"
    if kind == "irr":
        return gen_irregular_mask(m_seg, params, rng), "irr"
    validate_binary_mask(m_seg)
    return m_seg.copy(), "seg"


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    """(dst x src) matrix of raw interval overlap lengths (rows sum to
    src/dst up to float dust; callers normalize against that same dust)."""
    scale = src / dst
    mat = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), src)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                mat[i, j] = overlap
    return mat


def resize_mask(m: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Area-average resample of a mask raster to (target_h, target_w).

    Every output cell is the coverage-weighted mean of the input cells it
    overlaps, so values stay within [0, 1] and a constant mask stays
    constant (the normalizer is computed through the identical summation, so
    it cancels exactly). Matching dims return a copy; exactly-divisible dims
    reduce to a block mean.
    """
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"mask must be a 2-D array, got {getattr(m, 'shape', None)}")
    if target_h < 1 or target_w < 1:
        raise DomainError(f"target dims must be >= 1, got {(target_h, target_w)}")
    h, w = m.shape
    src = m.astype(np.float64)
    if (h, w) == (target_h, target_w):
        return src.copy()
    if h % target_h == 0 and w % target_w == 0:
        fh = h // target_h
        fw = w // target_w
        return src.reshape(target_h, fh, target_w, fw).mean(axis=(1, 3))
    rh = _overlap_matrix(h, target_h)
    rw = _overlap_matrix(w, target_w)
    numer = rh @ src @ rw.T
    denom = rh @ np.ones_like(src) @ rw.T
    return numer / denom


def save_mask_png(m: np.ndarray, path) -> None:
    """Write a binary mask as 8-bit single-channel PNG, 255 = inpaint."""
    validate_binary_mask(m)
    Image.fromarray((m * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    """Read an 8-bit single-channel PNG into a {0, 1} mask (>=128 -> 1)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)
