"""Attention tensors: validation, JSON/binary I/O, and a miniature transformer.

The miniature transformer exists so the filter can be exercised without any
external model. Embeddings and projection weights come from a keyed
splitmix64 stream, so the same (tokens, config) always yields the same tensor.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hashrand
from .corpus import TokenSequence
from .errors import EmptySequence, FormatError, InvariantViolation

ROW_SUM_TOL = 1e-5
MAGIC = b"ATTN"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True, eq=False)
class AttentionTensor:
    """Weights shaped ``(layers, heads, seq_len, seq_len)``, stored as float32."""

    weights: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def num_heads(self) -> int:
        return self.weights.shape[1]

    @property
    def seq_len(self) -> int:
        return self.weights.shape[2]

    def __eq__(self, other):
        if not isinstance(other, AttentionTensor):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)


@dataclass(frozen=True)
class MiniTransformerConfig:
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    seed: int = 0
    causal: bool = True

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "model_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")


def validate(weights, tol: float = ROW_SUM_TOL) -> AttentionTensor:
    """Check shape, range and row-stochasticity; return a frozen tensor."""
    w = np.array(weights, dtype=np.float32)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or 0 in w.shape:
        raise FormatError(f"expected non-empty L x H x n x n array, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvariantViolation("non-finite attention weight")
    if w.min() < 0.0 or w.max() > 1.0:
        raise InvariantViolation("attention weights must lie in [0, 1]")
    sums = w.astype(np.float64).sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if len(bad):
        layer, head, row = (int(x) for x in bad[0])
        raise InvariantViolation(
            f"row {row} of layer {layer}, head {head} sums to {sums[layer, head, row]:.6g}"
        )
    w.setflags(write=False)
    return AttentionTensor(w)


# -- file formats -----------------------------------------------------------

def save_json(tensor: AttentionTensor, path) -> None:
    doc = {
        "layers": tensor.num_layers,
        "heads": tensor.num_heads,
        "seq_len": tensor.seq_len,
        "weights": tensor.weights.astype(np.float64).tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def save_binary(tensor: AttentionTensor, path) -> None:
    L, H, n, _ = tensor.weights.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, L, H, n))
        fh.write(tensor.weights.astype("<f4").tobytes(order="C"))


def _load_json(raw: bytes) -> AttentionTensor:
    try:
        doc = json.loads(raw)
        dims = (int(doc["layers"]), int(doc["heads"]), int(doc["seq_len"]))
        weights = np.asarray(doc["weights"], dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad JSON attention tensor: {exc}") from exc
    expected = dims + (dims[2],)
    if weights.shape != expected:
        raise FormatError(f"weights shape {weights.shape} does not match header {expected}")
    return validate(weights)


def _load_binary(raw: bytes) -> AttentionTensor:
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header")
    magic, L, H, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("bad magic bytes")
    count = L * H * n * n
    body = raw[_HEADER.size:]
    if len(body) != 4 * count:
        raise FormatError(f"expected {4 * count} payload bytes, found {len(body)}")
    weights = np.frombuffer(body, dtype="<f4").reshape(L, H, n, n)
    return validate(weights.astype(np.float32))


def load_attention(path) -> AttentionTensor:
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return _load_binary(raw)
    return _load_json(raw)


def save_attention(tensor: AttentionTensor, path) -> None:
    if str(path).endswith(".json"):
        save_json(tensor, path)
    else:
        save_binary(tensor, path)


# -- miniature transformer --------------------------------------------------

_Q, _K, _V = 1, 2, 3


def _embeddings(seq: TokenSequence, cfg: MiniTransformerConfig) -> np.ndarray:
    keys = hashrand.derive_keys(cfg.seed, seq.vocab_ids, seq.positions)
    return hashrand.uniform(keys, cfg.model_dim)


def _projection(cfg: MiniTransformerConfig, layer: int, kind: int) -> np.ndarray:
    d = cfg.model_dim
    key = hashrand.derive_key(cfg.seed, 0x5EED, layer, kind)
    flat = hashrand.uniform([key], d * d)
    return flat.reshape(d, d) / math.sqrt(d)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def compute_attention(seq: TokenSequence, cfg: MiniTransformerConfig | None = None) -> AttentionTensor:
    cfg = cfg or MiniTransformerConfig()
    n = len(seq)
    if n == 0:
        raise EmptySequence("cannot compute attention for an empty sequence")
    H = cfg.num_heads
    head_dim = cfg.model_dim // H
    mask = np.triu(np.ones((n, n), dtype=bool), k=1) if cfg.causal else None

    x = _embeddings(seq, cfg)
    out = np.empty((cfg.num_layers, H, n, n), dtype=np.float64)
    for layer in range(cfg.num_layers):
        q = (x @ _projection(cfg, layer, _Q)).reshape(n, H, head_dim).transpose(1, 0, 2)
        k = (x @ _projection(cfg, layer, _K)).reshape(n, H, head_dim).transpose(1, 0, 2)
        v = (x @ _projection(cfg, layer, _V)).reshape(n, H, head_dim).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(head_dim)
        if mask is not None:
            scores = np.where(mask, -np.inf, scores)
        attn = _softmax_rows(scores)
        out[layer] = attn
        x = (attn @ v).transpose(1, 0, 2).reshape(n, cfg.model_dim)
    return validate(out)
