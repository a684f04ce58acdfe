"""Dense float64 kernels and seeded randomness.

Tensors are plain 2-D numpy float64 arrays (row-major). Everything downstream
(model, engine, training) is built on the handful of kernels here, in
particular the cosine-similarity signal that drives all exit decisions.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "SeededRng",
    "tensor",
    "zeros",
    "matmul",
    "softmax_rows",
    "log_softmax_rows",
    "layer_norm",
    "cosine_sim",
    "cross_entropy",
]


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


def tensor(data) -> np.ndarray:
    """Build a 2-D float64 array, promoting 1-D input to a single row."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D data, got ndim={a.ndim}")
    return a


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization followed by an affine map.

    gain and bias are 1 x cols row vectors.
    """
    gain = np.atleast_2d(gain)
    bias = np.atleast_2d(bias)
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match "
            f"input cols {x.shape[1]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gain + bias


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity over the flattened (Frobenius) views of a and b.

    Returns 0.0 when either norm is zero so a degenerate hidden state can
    never trigger an exit.
    """
    if a.shape != b.shape:
        raise ShapeError(f"cosine_sim shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    v = float(np.vdot(a, b) / (na * nb))
    # clamp tiny numerical overshoot
    return max(-1.0, min(1.0, v))


def cross_entropy(logits: np.ndarray, targets) -> float:
    """Sum of negative log-softmax probabilities of the target ids.

    One logits row per target position; an empty target list gives 0.0.
    """
    targets = list(targets)
    if len(targets) == 0:
        return 0.0
    if logits.shape[0] != len(targets):
        raise ShapeError(
            f"cross_entropy: {logits.shape[0]} logit rows vs "
            f"{len(targets)} targets")
    vocab = logits.shape[1]
    for t in targets:
        if not (0 <= t < vocab):
            raise IndexError(f"target id {t} out of vocab range [0, {vocab})")
    lsm = log_softmax_rows(logits)
    return float(-lsm[np.arange(len(targets)), targets].sum())


# SplitMix64 constants (Steele, Lea & Flood 2014); widely published 64-bit
# generator with a closed-form k-th state, which keeps vectorized draws
# bit-identical to sequential ones.
_GAMMA = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF


class SeededRng:
    """SplitMix64 stream with Box-Muller normals.

    The draw sequence for a given seed is platform independent and
    bit-exact; all randomness in the package flows through this class.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def _next_block(self, n: int) -> np.ndarray:
        """Advance the stream by n and return the n raw 64-bit outputs."""
        base = np.uint64(self.state)
        idx = (np.arange(1, n + 1, dtype=np.uint64)
               * np.uint64(_GAMMA) + base)
        self.state = (self.state + n * _GAMMA) & _MASK
        with np.errstate(over="ignore"):
            z = idx
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        return z

    def next_uint64(self) -> int:
        return int(self._next_block(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) with 53 random bits each."""
        return (self._next_block(n) >> np.uint64(11)) * (2.0 ** -53)

    def normal(self, rows: int, cols: int, stddev: float = 1.0) -> np.ndarray:
        """rows x cols Box-Muller normals, mean 0, given stddev."""
        if stddev < 0:
            raise ValueError("stddev must be nonnegative")
        n = rows * cols
        if n == 0:
            return zeros(rows, cols)
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        u1 = np.maximum(u1, 2.0 ** -53)  # avoid log(0)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * math.pi * u2),
                            r * np.sin(2.0 * math.pi * u2)])[:n]
        return (z * stddev).reshape(rows, cols)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi) via rejection-free modulo (toy-scale use)."""
        if hi <= lo:
            raise ValueError("empty range")
        return lo + self.next_uint64() % (hi - lo)

    def choice(self, seq):
        return seq[self.randint(0, len(seq))]

    def shuffle(self, seq: list) -> None:
        """Fisher-Yates in place."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(0, i + 1)
            seq[i], seq[j] = seq[j], seq[i]


def seeded_normal(rng: SeededRng, rows: int, cols: int,
                  stddev: float) -> np.ndarray:
    return rng.normal(rows, cols, stddev)
