"""Context-preserving token filtering.

Head-averaged attention is blended across layers with weights
``w_l = alpha + (1 - alpha) * l / L``; each token gets an importance score and
the top ``k = max(1, floor(r * n))`` tokens are kept in their original order.

Two scoring modes are offered. ``received`` (default) scores token ``i`` by
the attention it receives (column mean of each blended matrix). ``literal``
takes the row mean, which is ``1/n`` for every token of a row-stochastic
matrix and therefore cannot discriminate; it is kept for comparison.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionTensor
from .corpus import TokenSequence, detokenize
from .errors import ConfigError, LayerOutOfRange, LengthMismatch, ShapeMismatch

SCORING_MODES = ("received", "literal")


@dataclass(frozen=True)
class FilterConfig:
    retention_ratio: float = 0.5
    alpha: float = 0.5
    scoring_mode: str = "received"

    def __post_init__(self):
        if not 0.0 < self.retention_ratio <= 1.0:
            raise ConfigError(f"retention_ratio must be in (0, 1], got {self.retention_ratio}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.scoring_mode not in SCORING_MODES:
            raise ConfigError(f"scoring_mode must be one of {SCORING_MODES}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReducedNote:
    tokens: tuple
    positions: tuple
    source_note_id: str
    config: FilterConfig
    original_len: int

    def __len__(self):
        return len(self.tokens)

    @property
    def compression_ratio(self) -> float:
        return len(self.tokens) / self.original_len if self.original_len else 1.0

    def to_json(self) -> dict:
        return {
            "note_id": self.source_note_id,
            "tokens": list(self.tokens),
            "positions": list(self.positions),
            "text": reconstruct(self),
            "original_len": self.original_len,
            "kept": len(self.tokens),
            "compression_ratio": self.compression_ratio,
            "config": self.config.to_json(),
        }


def layer_weights(num_layers: int, alpha: float) -> list[float]:
    if num_layers < 1:
        raise ConfigError(f"layer count must be >= 1, got {num_layers}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    # same value as alpha + (1 - alpha) * l / L, written so the last layer is exactly 1.0
    return [1.0 - (1.0 - alpha) * (num_layers - l) / num_layers for l in range(1, num_layers + 1)]


def average_heads(tensor: AttentionTensor, layer: int) -> np.ndarray:
    """Mean over heads of layer ``layer`` (1-based), in float64."""
    if not 1 <= layer <= tensor.num_layers:
        raise LayerOutOfRange(f"layer {layer} outside 1..{tensor.num_layers}")
    return tensor.weights[layer - 1].astype(np.float64).mean(axis=0)


def compute_importance(tensor: AttentionTensor, config: FilterConfig) -> np.ndarray:
    n = tensor.seq_len
    if tensor.weights.shape[2:] != (n, n):
        raise ShapeMismatch(f"attention matrices must be square, got {tensor.weights.shape[2:]}")
    weights = layer_weights(tensor.num_layers, config.alpha)
    axis = 0 if config.scoring_mode == "received" else 1
    scores = np.zeros(n, dtype=np.float64)
    for l, w in enumerate(weights, start=1):
        blended = average_heads(tensor, l)
        # strip float32 storage drift so rows sum to 1 in float64
        blended /= blended.sum(axis=1, keepdims=True)
        scores += w * blended.sum(axis=axis) / n
    return scores


def retained_count(n: int, retention_ratio: float) -> int:
    return max(1, math.floor(retention_ratio * n))


def top_k_indices(scores, k: int) -> list[int]:
    """Indices of the k largest scores, ties to the smaller index, returned ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    # lexsort: last key is primary
    order = np.lexsort((np.arange(len(scores)), -scores))
    return sorted(int(i) for i in order[:k])


def select_tokens(scores, seq: TokenSequence, config: FilterConfig, note_id: str = "") -> ReducedNote:
    n = len(seq)
    if len(scores) != n:
        raise LengthMismatch(f"{len(scores)} scores for {n} tokens")
    if n == 0:
        raise LengthMismatch("cannot filter an empty sequence")
    keep = top_k_indices(scores, retained_count(n, config.retention_ratio))
    return ReducedNote(
        tokens=tuple(seq.tokens[i] for i in keep),
        positions=tuple(seq.positions[i] for i in keep),
        source_note_id=note_id,
        config=config,
        original_len=n,
    )


def reconstruct(reduced: ReducedNote) -> str:
    return detokenize(reduced.tokens)


def filter_note(seq: TokenSequence, tensor: AttentionTensor, config: FilterConfig,
                note_id: str = "") -> ReducedNote:
    if tensor.seq_len != len(seq):
        raise LengthMismatch(f"attention covers {tensor.seq_len} tokens, sequence has {len(seq)}")
    return select_tokens(compute_importance(tensor, config), seq, config, note_id)
