"""Unified encoder-decoder transformer with a tied dual-pass encoder.

One shared encoder parameter stack serves both the image pass and the text
pass; the decoder adds cross-attention over the concatenated encoder
output. Positional information is purely relative: bucketed 1-D bias for
text, bucketed row+column 2-D bias for the image grid. The output head is
weight-tied to the token embedding table.

All forward functions run on either autodiff `Var` params (training) or
raw ndarrays (inference); see `autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var, data_of
from .numerics import SeededRng, ShapeError

BOS, EOS, PAD = 0, 1, 2


@dataclass
class ModelConfig:
    n_enc_layers: int = 6
    n_dec_layers: int = 6
    d_model: int = 64
    n_heads: int = 4
    vocab_size: int = 64
    grid_side: int = 4
    max_text_len: int = 8
    max_gen_len: int = 16
    rel_bucket_count: int = 16
    tie_output_head: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("n_enc_layers", "n_dec_layers", "d_model", "n_heads",
                     "vocab_size", "grid_side", "max_text_len",
                     "max_gen_len", "rel_bucket_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model


@dataclass
class HiddenState:
    tensor: object  # Var or ndarray, tokens x d_model
    modality: str   # image | text | decoder
    layer: int      # 0 = embedding output

    @property
    def data(self) -> np.ndarray:
        return data_of(self.tensor)


# No bias on the key projection: softmax is invariant to a constant shift
# of each score row, so a key bias would be inert and untrainable.
_ATTN_NAMES = ("wq", "bq", "wk", "wv", "bv", "wo", "bo")


class ModelParams:
    """Named parameter tensors; a single shared encoder stack.

    Both encoder passes read the same `enc.*` tensors, so any update is
    observed identically by the image and text passes.
    """

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Var]):
        self.cfg = cfg
        self.tensors = tensors

    @staticmethod
    def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
        d, ff, r, h = cfg.d_model, cfg.d_ff, cfg.rel_bucket_count, cfg.n_heads
        shapes: dict[str, tuple[int, int]] = {
            "emb": (cfg.vocab_size, d),
            "img_proj": (d, d),
            "rel1d": (r, h),
            "rel2d_row": (r, h),
            "rel2d_col": (r, h),
        }

        def block(prefix: str, cross: bool):
            shapes[f"{prefix}.ln1.g"] = (1, d)
            shapes[f"{prefix}.ln1.b"] = (1, d)
            for nm in _ATTN_NAMES:
                shapes[f"{prefix}.self.{nm}"] = (d, d) if nm[0] == "w" else (1, d)
            if cross:
                shapes[f"{prefix}.ln2.g"] = (1, d)
                shapes[f"{prefix}.ln2.b"] = (1, d)
                for nm in _ATTN_NAMES:
                    shapes[f"{prefix}.cross.{nm}"] = (d, d) if nm[0] == "w" else (1, d)
            lnf = "ln3" if cross else "ln2"
            shapes[f"{prefix}.{lnf}.g"] = (1, d)
            shapes[f"{prefix}.{lnf}.b"] = (1, d)
            shapes[f"{prefix}.ffn.w1"] = (d, ff)
            shapes[f"{prefix}.ffn.b1"] = (1, ff)
            shapes[f"{prefix}.ffn.w2"] = (ff, d)
            shapes[f"{prefix}.ffn.b2"] = (1, d)

        for i in range(cfg.n_enc_layers):
            block(f"enc.{i}", cross=False)
        for i in range(cfg.n_dec_layers):
            block(f"dec.{i}", cross=True)
        shapes["head_ln.g"] = (1, d)
        shapes["head_ln.b"] = (1, d)
        if not cfg.tie_output_head:
            shapes["head.w"] = (cfg.vocab_size, d)
        return shapes

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int, stddev: float = 0.02
             ) -> "ModelParams":
        rng = SeededRng(seed)
        tensors: dict[str, Var] = {}
        for name, (r, c) in cls.param_shapes(cfg).items():
            last = name.rsplit(".", 1)[-1]
            if last == "g":
                data = np.ones((r, c))
            elif last.startswith("b"):
                data = np.zeros((r, c))
            else:
                data = rng.normal(r, c, stddev)
            tensors[name] = Var(data)
        return cls(cfg, tensors)

    def raw(self) -> dict[str, np.ndarray]:
        """Plain-ndarray view of every tensor (shared storage, no tape)."""
        return {k: v.data for k, v in self.tensors.items()}

    def zero_grads(self) -> None:
        for v in self.tensors.values():
            v.grad = None

    def all_finite(self) -> bool:
        return all(np.isfinite(v.data).all() for v in self.tensors.values())


# ---------------------------------------------------------------------------
# relative position biases

def _bucket(offsets: np.ndarray, n_buckets: int) -> np.ndarray:
    lo, hi = -(n_buckets // 2), n_buckets // 2 - 1
    return np.clip(offsets, lo, hi) + n_buckets // 2


def _bias_from_buckets(table, buckets: np.ndarray, n_heads: int, length: int):
    """(length x length) additive bias per head from a bucket index grid."""
    flat = ad.gather_rows(table, buckets.reshape(-1))
    return [ad.reshape(ad.slice_cols(flat, h, h + 1), (length, length))
            for h in range(n_heads)]


def relative_bias_1d(length: int, p, cfg: ModelConfig):
    idx = np.arange(length)
    buckets = _bucket(idx[None, :] - idx[:, None], cfg.rel_bucket_count)
    return _bias_from_buckets(p["rel1d"], buckets, cfg.n_heads, length)


def relative_bias_2d(grid_side: int, p, cfg: ModelConfig):
    n = grid_side * grid_side
    rows = np.arange(n) // grid_side
    cols = np.arange(n) % grid_side
    rb = _bucket(rows[None, :] - rows[:, None], cfg.rel_bucket_count)
    cb = _bucket(cols[None, :] - cols[:, None], cfg.rel_bucket_count)
    row_part = _bias_from_buckets(p["rel2d_row"], rb, cfg.n_heads, n)
    col_part = _bias_from_buckets(p["rel2d_col"], cb, cfg.n_heads, n)
    return [ad.add(a, b) for a, b in zip(row_part, col_part)]


# ---------------------------------------------------------------------------
# embeddings

def embed_text(tokens, p, cfg: ModelConfig) -> HiddenState:
    tokens = list(tokens)
    if len(tokens) > cfg.max_text_len:
        raise ValueError(
            f"text length {len(tokens)} exceeds max_text_len {cfg.max_text_len}")
    _check_ids(tokens, cfg.vocab_size)
    if not tokens:
        return HiddenState(np.zeros((0, cfg.d_model)), "text", 0)
    return HiddenState(ad.gather_rows(p["emb"], tokens), "text", 0)


def embed_image(grid, p, cfg: ModelConfig) -> HiddenState:
    grid = list(grid)
    if len(grid) != cfg.grid_side ** 2:
        raise ShapeError(
            f"grid has {len(grid)} cells, expected {cfg.grid_side ** 2}")
    _check_ids(grid, cfg.vocab_size)
    e = ad.gather_rows(p["emb"], grid)
    out = ad.add(e, ad.matmul(e, p["img_proj"]))
    return HiddenState(out, "image", 0)


def _check_ids(ids, vocab: int) -> None:
    for t in ids:
        if not (0 <= t < vocab):
            raise IndexError(f"token id {t} out of vocab range [0, {vocab})")


# ---------------------------------------------------------------------------
# attention building blocks

def project(x, p, prefix: str, which: str):
    """Linear projection {wq,wk,wv,wo} for one attention module.

    q, v and o carry biases; k does not (see _ATTN_NAMES).
    """
    out = ad.matmul(x, p[f"{prefix}.w{which}"])
    if which != "k":
        out = ad.add(out, p[f"{prefix}.b{which}"])
    return out


def multi_head_attention(q_in, k_in, v_in, p, prefix: str, cfg: ModelConfig,
                         bias=None, mask: np.ndarray | None = None):
    """Standard multi-head attention over already-normalized inputs.

    bias: optional per-head list of (Lq x Lk) additive score biases.
    mask: optional (Lq x Lk) ndarray added to scores (0 / -inf causal mask).
    """
    q = project(q_in, p, prefix, "q")
    k = project(k_in, p, prefix, "k")
    v = project(v_in, p, prefix, "v")
    scale = 1.0 / np.sqrt(cfg.d_head)
    heads = []
    for h in range(cfg.n_heads):
        lo, hi = h * cfg.d_head, (h + 1) * cfg.d_head
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), scale)
        if bias is not None:
            scores = ad.add(scores, bias[h])
        if mask is not None:
            scores = ad.add(scores, mask)
        attn = ad.softmax_rows(scores)
        heads.append(ad.matmul(attn, vh))
    return project(ad.concat_cols(heads), p, prefix, "o")


def feed_forward(x, p, prefix: str):
    h = ad.gelu(ad.add(ad.matmul(x, p[f"{prefix}.ffn.w1"]),
                       p[f"{prefix}.ffn.b1"]))
    return ad.add(ad.matmul(h, p[f"{prefix}.ffn.w2"]), p[f"{prefix}.ffn.b2"])


def causal_mask(n: int) -> np.ndarray:
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


# ---------------------------------------------------------------------------
# layer forwards

def encoder_layer_forward(state: HiddenState, layer_index: int, p,
                          cfg: ModelConfig, bias) -> HiddenState:
    """Pre-norm block: x + MHA(LN(x)) then x + FFN(LN(x))."""
    if not (1 <= layer_index <= cfg.n_enc_layers):
        raise ValueError(f"encoder layer index {layer_index} out of range")
    prefix = f"enc.{layer_index - 1}"
    x = state.tensor
    h = ad.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = ad.add(x, multi_head_attention(h, h, h, p, f"{prefix}.self", cfg,
                                       bias=bias))
    h = ad.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    x = ad.add(x, feed_forward(h, p, prefix))
    return HiddenState(x, state.modality, layer_index)


def decoder_layer_full(x, layer_index: int, enc_out, p, cfg: ModelConfig,
                       mask: np.ndarray):
    """Teacher-forced decoder block over a whole target prefix."""
    prefix = f"dec.{layer_index - 1}"
    h = ad.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = ad.add(x, multi_head_attention(h, h, h, p, f"{prefix}.self", cfg,
                                       mask=mask))
    h = ad.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    x = ad.add(x, multi_head_attention(h, enc_out, enc_out, p,
                                       f"{prefix}.cross", cfg))
    h = ad.layer_norm(x, p[f"{prefix}.ln3.g"], p[f"{prefix}.ln3.b"])
    x = ad.add(x, feed_forward(h, p, prefix))
    return x


def output_head(state: HiddenState, p, cfg: ModelConfig):
    """Final norm then logits = state x embedding^T (weight tying)."""
    if state.modality != "decoder":
        raise ValueError("output head applies to decoder states only")
    return head_logits(state.tensor, p, cfg)


def head_logits(x, p, cfg: ModelConfig):
    """output_head without the HiddenState wrapper (internal helper).

    The final layer norm keeps decoder states from every depth on a
    comparable scale before the shared projection, which the layer-wise
    loss and the intermediate-exit baselines rely on.
    """
    w = p["emb"] if cfg.tie_output_head else p["head.w"]
    h = ad.layer_norm(x, p["head_ln.g"], p["head_ln.b"])
    return ad.matmul(h, ad.transpose(w))


def run_encoder_full(state0: HiddenState, p, cfg: ModelConfig) -> list:
    """All encoder layers, no exiting; returns states for layers 0..n."""
    bias = (relative_bias_2d(cfg.grid_side, p, cfg)
            if state0.modality == "image"
            else relative_bias_1d(state0.data.shape[0], p, cfg))
    states = [state0]
    for i in range(1, cfg.n_enc_layers + 1):
        states.append(encoder_layer_forward(states[-1], i, p, cfg, bias))
    return states
