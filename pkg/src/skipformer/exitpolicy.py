"""Exit decision logic: similarity signals, thresholds, baseline policies.

Similarity policies gate both encoder passes (static per-modality
thresholds) and the decoder (static or decaying threshold). The
confidence and patience baselines read intermediate decoder predictions
through the shared output head and therefore cannot gate the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HiddenState
from .numerics import cosine_sim, softmax_rows

KINDS = ("never", "static", "decay", "confidence", "patience")


@dataclass
class ExitPolicyConfig:
    kind: str = "never"
    theta: float = 0.95          # decoder static threshold
    theta_image: float = 0.9     # image-encoder static threshold
    theta_text: float = 0.95     # text-encoder static threshold
    beta: float = 0.95
    tau: float = 1.0
    total_steps: int = 16        # generation budget N in the decay schedule
    confidence_level: float = 0.9
    patience: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must be in [0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    @property
    def gates_encoder(self) -> bool:
        return self.kind in ("static", "decay")


@dataclass
class ExitDecision:
    exit_now: bool
    signal_value: float
    threshold_used: float


def similarity_signal(prev: HiddenState, curr: HiddenState) -> float:
    """Layer-to-layer cosine similarity between consecutive hidden states."""
    if prev.modality != curr.modality:
        raise ValueError(
            f"modality mismatch: {prev.modality} vs {curr.modality}")
    if prev.layer != curr.layer - 1:
        raise ValueError(
            f"expected consecutive layers, got {prev.layer} and {curr.layer}")
    return cosine_sim(prev.data, curr.data)


def static_decision(signal: float, theta: float) -> ExitDecision:
    """Exit iff the signal strictly exceeds the threshold."""
    return ExitDecision(signal > theta, signal, theta)


def decay_threshold(t: int, cfg: ExitPolicyConfig) -> float:
    """Decaying decoder threshold: beta*theta + (1-beta)*exp(-tau*t/N)."""
    if t < 0:
        raise ValueError("step index must be nonnegative")
    return (cfg.beta * cfg.theta
            + (1.0 - cfg.beta) * math.exp(-cfg.tau * t / cfg.total_steps))


def decoder_threshold(t: int, cfg: ExitPolicyConfig) -> float:
    if cfg.kind == "decay":
        return decay_threshold(t, cfg)
    return cfg.theta


def confidence_decision(logits_row: np.ndarray, level: float) -> ExitDecision:
    """Exit iff the max softmax probability strictly exceeds `level`."""
    row = np.atleast_2d(logits_row)
    if row.shape[0] != 1:
        raise ValueError("confidence_decision expects a single logits row")
    p_max = float(softmax_rows(row).max())
    return ExitDecision(p_max > level, p_max, level)


def patience_decision(argmax_history, patience: int) -> ExitDecision:
    """Exit once the trailing `patience` layer predictions all agree."""
    hist = list(argmax_history)
    if len(hist) < patience:
        return ExitDecision(False, float(len(hist)), float(patience))
    tail = hist[-patience:]
    agree = all(t == tail[0] for t in tail)
    # signal counts how many trailing predictions agree
    run = 1
    for a, b in zip(reversed(hist), list(reversed(hist))[1:]):
        if a == b:
            run += 1
        else:
            break
    return ExitDecision(agree, float(run), float(patience))
