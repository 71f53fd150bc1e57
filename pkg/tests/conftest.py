import numpy as np
import pytest
import torch

from painter import masks
from painter.adapters import ToyTextEncoder, ToyTokenizer
from painter.model import AttentionSite, Denoiser, DenoiserSpec, init_branch

torch.set_num_threads(2)


def random_blob(rng: np.random.Generator, size: int = 64, n_shapes: int = 3) -> np.ndarray:
    """Nonempty union of random ellipses and rectangles."""
    m = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.ogrid[:size, :size]
    for _ in range(n_shapes):
        cy, cx = rng.integers(0, size, size=2)
        ry, rx = rng.integers(2, max(3, size // 4), size=2)
        if rng.uniform() < 0.5:
            m[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1] = 1
        else:
            m[max(0, cy - ry) : cy + ry, max(0, cx - rx) : cx + rx] = 1
    if m.sum() == 0:
        m[size // 2, size // 2] = 1
    return m


@pytest.fixture(scope="session")
def tiny_spec() -> DenoiserSpec:
    """Small latent-space card used by the model/loss oracles."""
    return DenoiserSpec(
        widths=(16, 16, 16, 16),
        attention=(AttentionSite(layer=2, heads=2, head_dim=8),),
        latent_channels=4,
        latent_size=(8, 8),
        text_dim=16,
        token_len=8,
        groups=4,
    )


@pytest.fixture(scope="session")
def tiny_models(tiny_spec):
    torch.manual_seed(0)
    base = Denoiser(tiny_spec)
    branch, taps = init_branch(tiny_spec, base)
    return base, branch, taps


@pytest.fixture(scope="session")
def tiny_text(tiny_spec):
    tokenizer = ToyTokenizer(length=tiny_spec.token_len)
    encoder = ToyTextEncoder(dim=tiny_spec.text_dim, length=tiny_spec.token_len)
    return tokenizer, encoder


def random_branch_input(spec: DenoiserSpec, rng: np.random.Generator, batch: int = 1):
    from painter.model import BranchInput

    h, w = spec.latent_size
    c = spec.latent_channels
    return BranchInput(
        z_t=torch.from_numpy(rng.standard_normal((batch, c, h, w)).astype(np.float32)),
        z0_m=torch.from_numpy(rng.standard_normal((batch, c, h, w)).astype(np.float32)),
        m=torch.from_numpy(
            (rng.uniform(size=(batch, 1, h, w)) < 0.4).astype(np.float32)
        ),
    )


@pytest.fixture
def mask_params() -> masks.MaskGenParams:
    return masks.MaskGenParams()
