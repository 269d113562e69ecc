"""Numpy neural substrate: layers, the matting model and checkpoints."""

from diffmatte.net.checkpoint import load_checkpoint, save_checkpoint
from diffmatte.net.layers import conv2d
from diffmatte.net.model import DecoderConfig, MattingModel, ModelConfig

__all__ = [
    "DecoderConfig",
    "MattingModel",
    "ModelConfig",
    "conv2d",
    "load_checkpoint",
    "save_checkpoint",
]
