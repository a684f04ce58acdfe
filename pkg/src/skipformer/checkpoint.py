"""Bit-exact binary checkpoints.

Layout (all integers little-endian):
  magic   4 bytes "MUE1"
  version uint32 (currently 1)
  count   uint32 number of tensors
  per tensor: uint32 name length, UTF-8 name, uint32 rows, uint32 cols
  payload: concatenated float64 LE values in manifest order
  checksum: uint64 = sum of payload bytes mod 2^64
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Var
from .model import ModelConfig, ModelParams

MAGIC = b"MUE1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class BadChecksumError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def save_checkpoint(params: ModelParams, path) -> None:
    names = list(params.tensors)
    payload = b"".join(
        params.tensors[n].data.astype("<f8").tobytes() for n in names)
    checksum = sum(payload) & 0xFFFFFFFFFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(names)))
        for n in names:
            nb = n.encode("utf-8")
            r, c = params.tensors[n].data.shape
            f.write(struct.pack("<I", len(nb)) + nb + struct.pack("<II", r, c))
        f.write(payload)
        f.write(struct.pack("<Q", checksum))


def load_checkpoint(path, cfg: ModelConfig) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint file")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise BadMagicError(f"bad magic in {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", take(4))
    manifest: list[tuple[str, int, int]] = []
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        r, c = struct.unpack("<II", take(8))
        manifest.append((name, r, c))
    total = sum(r * c for _, r, c in manifest)
    payload = take(total * 8)
    (checksum,) = struct.unpack("<Q", take(8))
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if sum(payload) & 0xFFFFFFFFFFFFFFFF != checksum:
        raise BadChecksumError(f"checksum mismatch in {path}")

    expected = ModelParams.param_shapes(cfg)
    if [n for n, _, _ in manifest] != list(expected):
        raise ShapeMismatchError(
            "checkpoint tensor set does not match the model config "
            f"(first difference near {_first_diff(manifest, expected)})")
    tensors: dict[str, Var] = {}
    ofs = 0
    for name, r, c in manifest:
        if expected[name] != (r, c):
            raise ShapeMismatchError(
                f"tensor {name}: checkpoint shape {(r, c)} vs "
                f"config shape {expected[name]}")
        n = r * c
        arr = np.frombuffer(payload, dtype="<f8", count=n,
                            offset=ofs * 8).astype(np.float64).reshape(r, c)
        tensors[name] = Var(arr.copy())
        ofs += n
    return ModelParams(cfg, tensors)


def _first_diff(manifest, expected) -> str:
    got = [n for n, _, _ in manifest]
    want = list(expected)
    for g, w in zip(got, want):
        if g != w:
            return f"{g!r} vs {w!r}"
    return f"count {len(got)} vs {len(want)}"
