"""painter: plug-and-play dual-branch diffusion inpainting toolkit."""

from . import adapters, bench, checkpoint, clients, data, losses, masks, model, pipeline
from .errors import PainterError
from .losses import BETA_DEFAULT, LossBreakdown, TokenizedPrompt, total_loss
from .masks import MaskGenParams, coverage_ratio, resize_mask, sample_mask
from .model import DenoiserSpec, forward_joint, init_branch
from .pipeline import InpaintRequest, InpaintResult, inpaint
from .train import ModelBundle, NoiseSchedule, TrainConfig, add_noise, build_bundle, train_step

__version__ = "0.1.0"

__all__ = [
    "adapters",
    "bench",
    "checkpoint",
    "clients",
    "data",
    "losses",
    "masks",
    "model",
    "pipeline",
    "PainterError",
    "BETA_DEFAULT",
    "LossBreakdown",
    "TokenizedPrompt",
    "total_loss",
    "MaskGenParams",
    "coverage_ratio",
    "resize_mask",
    "sample_mask",
    "DenoiserSpec",
    "forward_joint",
    "init_branch",
    "InpaintRequest",
    "InpaintResult",
    "inpaint",
    "ModelBundle",
    "NoiseSchedule",
    "TrainConfig",
    "add_noise",
    "build_bundle",
    "train_step",
    "__version__",
]
