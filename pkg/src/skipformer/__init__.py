"""Similarity-gated early exiting for a toy encoder-decoder
vision-language transformer: tied dual-pass encoder, per-step decoder
exits, layer-wise task loss, and an expected-time-reduction benchmark."""

from .exitpolicy import ExitPolicyConfig
from .model import ModelConfig, ModelParams

__all__ = ["ModelConfig", "ModelParams", "ExitPolicyConfig"]
__version__ = "0.1.0"
