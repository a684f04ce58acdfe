"""Layer-wise task loss, gradients, finite-difference oracle, optimizer.

Training always runs full depth (no exiting); the loss averages the
teacher-forced cross-entropy over every decoder layer through the shared
output head, or uses the final layer only when the layer-wise objective is
disabled (the ablation switch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as m
from .data import BOS, SyntheticExample
from .model import HiddenState, ModelConfig, ModelParams
from .numerics import SeededRng


@dataclass
class LossReport:
    total: float
    per_layer: list[float]
    token_count: int


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    steps: int = 200
    batch_size: int = 8
    seed: int = 0
    layerwise_loss: bool = True
    optimizer: str = "adam"     # adam | sgd
    max_grad_norm: float = 1.0  # global-norm clip; <= 0 disables
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def forward_all_layers(ex: SyntheticExample, p, cfg: ModelConfig):
    """Per-decoder-layer teacher-forced logits at full encoder depth.

    Returns a list of n_dec_layers logits tensors of shape |y| x vocab.
    """
    targets = ex.target_with_eos()
    if not targets:
        raise ValueError("example has an empty target")
    img = m.run_encoder_full(m.embed_image(ex.grid, p, cfg), p, cfg)[-1]
    txt = m.run_encoder_full(m.embed_text(ex.text, p, cfg), p, cfg)[-1]
    enc_out = ad.concat_rows([img.tensor, txt.tensor])
    dec_in = [BOS] + targets[:-1]
    x = ad.gather_rows(p["emb"], dec_in)
    mask = m.causal_mask(len(dec_in))
    per_layer = []
    for i in range(1, cfg.n_dec_layers + 1):
        x = m.decoder_layer_full(x, i, enc_out, p, cfg, mask)
        per_layer.append(m.head_logits(x, p, cfg))
    return per_layer, targets


def layerwise_loss(per_layer_logits, targets):
    """Mean over layers of the summed cross-entropy; returns the loss node
    (Var when logits are Vars) and its LossReport."""
    if not per_layer_logits:
        raise ValueError("no logits supplied")
    losses = [ad.cross_entropy(lg, targets) for lg in per_layer_logits]
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    total = ad.scale(total, 1.0 / len(losses))
    report = LossReport(float(ad.data_of(total)),
                        [float(ad.data_of(l)) for l in losses],
                        len(list(targets)))
    return total, report


def example_loss(ex: SyntheticExample, p, cfg: ModelConfig,
                 layerwise: bool = True):
    per_layer, targets = forward_all_layers(ex, p, cfg)
    if not layerwise:
        per_layer = per_layer[-1:]
    return layerwise_loss(per_layer, targets)


def backward_with_report(ex: SyntheticExample, params: ModelParams,
                         train_cfg: TrainConfig):
    params.zero_grads()
    loss, report = example_loss(ex, params.tensors, params.cfg,
                                train_cfg.layerwise_loss)
    ad.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
             for k, v in params.tensors.items()}
    params.zero_grads()
    return grads, report


def backward(ex: SyntheticExample, params: ModelParams,
             train_cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the configured loss per parameter."""
    return backward_with_report(ex, params, train_cfg)[0]


def finite_diff_grad(ex: SyntheticExample, params: ModelParams, name: str,
                     flat_index: int, epsilon: float = 1e-5,
                     layerwise: bool = True) -> float:
    """Central-difference derivative of the loss at one scalar coordinate.

    Runs forward-only on the raw ndarray view; independent of `backward`.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t = params.tensors[name].data
    flat = t.reshape(-1)
    orig = flat[flat_index]
    raw = params.raw()
    try:
        flat[flat_index] = orig + epsilon
        _, rep_plus = example_loss(ex, raw, params.cfg, layerwise)
        flat[flat_index] = orig - epsilon
        _, rep_minus = example_loss(ex, raw, params.cfg, layerwise)
    finally:
        flat[flat_index] = orig
    return (rep_plus.total - rep_minus.total) / (2.0 * epsilon)


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        b1c = 1.0 - c.adam_beta1 ** self.t
        b2c = 1.0 - c.adam_beta2 ** self.t
        for k, var in params.tensors.items():
            g = grads[k]
            self.m[k] = c.adam_beta1 * self.m[k] + (1 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1 - c.adam_beta2) * g * g
            update = (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + c.adam_eps)
            var.data -= c.learning_rate * update


class _Sgd:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for k, var in params.tensors.items():
            var.data -= self.cfg.learning_rate * grads[k]


def train(dataset: list[SyntheticExample], params: ModelParams,
          train_cfg: TrainConfig) -> list[LossReport]:
    """Deterministic mini-batch training; returns the per-step loss curve."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = SeededRng(train_cfg.seed)
    opt = (_Adam if train_cfg.optimizer == "adam" else _Sgd)(params, train_cfg)
    curve: list[LossReport] = []
    n_layers = params.cfg.n_dec_layers if train_cfg.layerwise_loss else 1
    for step in range(train_cfg.steps):
        batch = [dataset[rng.randint(0, len(dataset))]
                 for _ in range(train_cfg.batch_size)]
        acc = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        totals, per_layer_acc, tok = [], np.zeros(n_layers), 0
        for ex in batch:
            grads, rep = backward_with_report(ex, params, train_cfg)
            for k in acc:
                acc[k] += grads[k]
            totals.append(rep.total)
            per_layer_acc += np.array(rep.per_layer)
            tok += rep.token_count
        for k in acc:
            acc[k] /= len(batch)
        mean_total = float(np.mean(totals))
        if not np.isfinite(mean_total):
            raise RuntimeError(
                f"training diverged at step {step}: loss={mean_total}")
        if train_cfg.max_grad_norm > 0:
            norm = math.sqrt(sum(float(np.sum(g * g))
                                 for g in acc.values()))
            if norm > train_cfg.max_grad_norm:
                scale = train_cfg.max_grad_norm / norm
                for k in acc:
                    acc[k] *= scale
        opt.step(params, acc)
        if not params.all_finite():
            raise RuntimeError(
                f"non-finite parameter after optimizer step {step}")
        curve.append(LossReport(mean_total,
                                list(per_layer_acc / len(batch)), tok))
    return curve
