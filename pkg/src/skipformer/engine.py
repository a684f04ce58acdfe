"""Inference orchestration: dual encoder passes with independent exits,
autoregressive greedy decoding with per-step decoder exits, KV caches,
skipped-layer state propagation, and exit-trace recording.

Runs on raw ndarrays (ModelParams.raw()); no tape is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exitpolicy as xp
from . import model as m
from .data import BOS, EOS, SyntheticExample
from .model import HiddenState, ModelConfig
from .numerics import cosine_sim, layer_norm, softmax_rows


@dataclass
class ExitTrace:
    image_exit_layer: int
    text_exit_layer: int
    per_token_decoder_exit: list[int] = field(default_factory=list)
    image_tokens: int = 0
    text_tokens: int = 0
    per_layer_similarities: dict | None = None  # only when profiling


@dataclass
class GenerationOutput:
    tokens: list[int]           # ends with EOS or at the budget
    trace: ExitTrace
    hit_budget: bool = False    # stopped without emitting EOS

    def content_tokens(self) -> list[int]:
        return [t for t in self.tokens if t != EOS]


class DecoderCaches:
    """Per-layer self-attention K/V over generated positions plus the
    fixed cross-attention K/V computed once from the encoder output."""

    def __init__(self, enc_out: np.ndarray, p, cfg: ModelConfig):
        if enc_out.shape[0] == 0:
            raise ValueError("empty encoder output for cross-attention")
        d = cfg.d_model
        self.cfg = cfg
        self.self_k = [np.zeros((0, d)) for _ in range(cfg.n_dec_layers)]
        self.self_v = [np.zeros((0, d)) for _ in range(cfg.n_dec_layers)]
        self.cross_k = []
        self.cross_v = []
        for i in range(cfg.n_dec_layers):
            prefix = f"dec.{i}.cross"
            self.cross_k.append(enc_out @ p[f"{prefix}.wk"])
            self.cross_v.append(enc_out @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"])

    def positions(self) -> list[int]:
        return [k.shape[0] for k in self.self_k]

    def append_self(self, layer: int, x_row: np.ndarray, p) -> None:
        """Project x_row through layer's self-attn K/V and append."""
        prefix = f"dec.{layer}"
        h = layer_norm(x_row, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
        self.self_k[layer] = np.concatenate(
            [self.self_k[layer], h @ p[f"{prefix}.self.wk"]])
        self.self_v[layer] = np.concatenate(
            [self.self_v[layer], h @ p[f"{prefix}.self.wv"] + p[f"{prefix}.self.bv"]])


def _attend(q_row: np.ndarray, k_all: np.ndarray, v_all: np.ndarray,
            p, prefix: str, cfg: ModelConfig) -> np.ndarray:
    """Single-query multi-head attention against cached K/V."""
    scale = 1.0 / np.sqrt(cfg.d_head)
    outs = []
    for h in range(cfg.n_heads):
        lo, hi = h * cfg.d_head, (h + 1) * cfg.d_head
        scores = (q_row[:, lo:hi] @ k_all[:, lo:hi].T) * scale
        attn = softmax_rows(scores)
        outs.append(attn @ v_all[:, lo:hi])
    return np.concatenate(outs, axis=1) @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _decoder_layer_incremental(x: np.ndarray, layer: int,
                               caches: DecoderCaches, p,
                               cfg: ModelConfig) -> np.ndarray:
    """One decoder block for the current position; appends to self cache."""
    prefix = f"dec.{layer}"
    h = layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    q = h @ p[f"{prefix}.self.wq"] + p[f"{prefix}.self.bq"]
    caches.append_self(layer, x, p)
    x = x + _attend(q, caches.self_k[layer], caches.self_v[layer],
                    p, f"{prefix}.self", cfg)
    h = layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    q = h @ p[f"{prefix}.cross.wq"] + p[f"{prefix}.cross.bq"]
    x = x + _attend(q, caches.cross_k[layer], caches.cross_v[layer],
                    p, f"{prefix}.cross", cfg)
    h = layer_norm(x, p[f"{prefix}.ln3.g"], p[f"{prefix}.ln3.b"])
    return x + m.feed_forward(h, p, prefix)


def run_encoder(state0: HiddenState, p, cfg: ModelConfig,
                threshold: float | None, max_layers: int | None = None
                ) -> tuple[HiddenState, int, list[float]]:
    """Run encoder layers, exiting on the first strict threshold crossing.

    threshold None disables similarity gating; max_layers (when given)
    forces an exit at that depth regardless of signals.
    """
    if state0.layer != 0:
        raise ValueError("encoder input must be a layer-0 state")
    depth = cfg.n_enc_layers if max_layers is None else min(
        max_layers, cfg.n_enc_layers)
    bias = (m.relative_bias_2d(cfg.grid_side, p, cfg)
            if state0.modality == "image"
            else m.relative_bias_1d(state0.data.shape[0], p, cfg))
    prev = state0
    signals: list[float] = []
    for i in range(1, depth + 1):
        curr = m.encoder_layer_forward(prev, i, p, cfg, bias)
        sig = xp.similarity_signal(prev, curr)
        signals.append(sig)
        if threshold is not None and sig > threshold:
            return curr, i, signals
        prev = curr
    return prev, depth, signals


def encode_example(ex: SyntheticExample, p, cfg: ModelConfig,
                   policy: xp.ExitPolicyConfig,
                   force_image_exit: int | None = None,
                   force_text_exit: int | None = None):
    """Two independent passes over the shared encoder stack; C = [I_p; T_q]."""
    thr_img = policy.theta_image if policy.gates_encoder else None
    thr_txt = policy.theta_text if policy.gates_encoder else None
    if force_image_exit is not None:
        thr_img = None
    if force_text_exit is not None:
        thr_txt = None
    img_state, pexit, img_sigs = run_encoder(
        m.embed_image(ex.grid, p, cfg), p, cfg, thr_img, force_image_exit)
    txt_state, qexit, txt_sigs = run_encoder(
        m.embed_text(ex.text, p, cfg), p, cfg, thr_txt, force_text_exit)
    enc_out = np.concatenate([img_state.data, txt_state.data], axis=0)
    trace = ExitTrace(pexit, qexit,
                      image_tokens=img_state.data.shape[0],
                      text_tokens=txt_state.data.shape[0])
    return enc_out, trace, img_sigs, txt_sigs


def decode_step(caches: DecoderCaches, prev_token: int, t: int, p,
                cfg: ModelConfig, policy: xp.ExitPolicyConfig
                ) -> tuple[int, int, list[float]]:
    """One generation step with per-layer exit checks and state propagation
    into the self caches of skipped deeper layers."""
    x = p["emb"][prev_token:prev_token + 1]
    signals: list[float] = []
    argmax_hist: list[int] = []
    exit_layer = cfg.n_dec_layers
    for i in range(cfg.n_dec_layers):
        x_new = _decoder_layer_incremental(x, i, caches, p, cfg)
        sig = cosine_sim(x, x_new)
        signals.append(sig)
        x = x_new
        if policy.kind in ("static", "decay"):
            dec = xp.static_decision(sig, xp.decoder_threshold(t, policy))
        elif policy.kind == "confidence":
            logits = m.head_logits(x, p, cfg)
            dec = xp.confidence_decision(logits, policy.confidence_level)
        elif policy.kind == "patience":
            logits = m.head_logits(x, p, cfg)
            argmax_hist.append(int(np.argmax(logits[0])))
            dec = xp.patience_decision(argmax_hist, policy.patience)
        else:
            dec = xp.ExitDecision(False, sig, float("inf"))
        if dec.exit_now:
            exit_layer = i + 1
            break
    for j in range(exit_layer, cfg.n_dec_layers):
        caches.append_self(j, x, p)
    logits = m.head_logits(x, p, cfg)
    return int(np.argmax(logits[0])), exit_layer, signals


def generation_budget(ex: SyntheticExample, cfg: ModelConfig) -> int:
    """Max emitted tokens including EOS: 2 for classification (one label
    token plus EOS), max_gen_len otherwise."""
    return 2 if ex.task == "entail" else cfg.max_gen_len


def generate(ex: SyntheticExample, p, cfg: ModelConfig,
             policy: xp.ExitPolicyConfig,
             record_signals: bool = False,
             force_image_exit: int | None = None,
             force_text_exit: int | None = None,
             max_tokens: int | None = None) -> GenerationOutput:
    """Greedy decoding from BOS until EOS or the generation budget."""
    enc_out, trace, img_sigs, txt_sigs = encode_example(
        ex, p, cfg, policy, force_image_exit, force_text_exit)
    caches = DecoderCaches(enc_out, p, cfg)
    budget = max_tokens if max_tokens is not None else generation_budget(ex, cfg)
    tokens: list[int] = []
    dec_sigs: list[list[float]] = []
    prev = BOS
    for t in range(budget):
        tok, exit_layer, sigs = decode_step(caches, prev, t, p, cfg, policy)
        tokens.append(tok)
        trace.per_token_decoder_exit.append(exit_layer)
        dec_sigs.append(sigs)
        if tok == EOS:
            break
        prev = tok
    if record_signals:
        trace.per_layer_similarities = {
            "image": img_sigs, "text": txt_sigs, "decoder": dec_sigs}
    return GenerationOutput(tokens, trace, hit_budget=(tokens[-1] != EOS))


def classify(ex: SyntheticExample, p, cfg: ModelConfig,
             policy: xp.ExitPolicyConfig, **kw) -> int:
    """Single-step generation returning the content (label) token."""
    if ex.task != "entail":
        raise ValueError("classify applies to classification examples")
    out = generate(ex, p, cfg, policy, max_tokens=2, **kw)
    return out.tokens[0]
