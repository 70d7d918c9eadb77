"""Masked autoencoder for dual-contrast 3D volumes."""

from .model import (
    MaeConfig,
    MaeHistory,
    MaeModel,
    extract_embedding,
    mae_forward,
    psnr,
    sinusoidal_positions,
    train_mae,
)
from .patches import MaskPlan, PatchGrid, foreground_flags, patchify, sample_mask, unpatchify
from .volume import Volume4D, load_volume, make_phantoms, save_volume

__all__ = [
    "MaeConfig",
    "MaeHistory",
    "MaeModel",
    "MaskPlan",
    "PatchGrid",
    "Volume4D",
    "extract_embedding",
    "foreground_flags",
    "load_volume",
    "mae_forward",
    "make_phantoms",
    "patchify",
    "psnr",
    "sample_mask",
    "save_volume",
    "sinusoidal_positions",
    "train_mae",
    "unpatchify",
]
