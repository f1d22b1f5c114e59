"""Summary quality and efficiency metrics.

BLEU-n here is the per-order score (clipped n-gram precision times brevity
penalty), not the geometric mean over orders. ROUGE-L is the balanced
(beta = 1) LCS F-measure. The embedding score is a greedy cosine matcher
over a pluggable token embedder, reported after the affine map (1 + cos) / 2.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import hashrand
from .corpus import split_tokens, token_id
from .errors import EmptyInput, EmptyRecords, EmptyReferences

BLEU_EPSILON = 1e-9
METRIC_NAMES = ("bleu1", "bleu2", "rouge_l", "embed_p", "embed_r", "embed_f1")

REPORT_HEADER = (
    "BLEU-n: sentence-level clipped n-gram precision x brevity penalty, zero-match epsilon 1e-9; "
    "ROUGE-L: LCS F-measure, beta=1; "
    "embed_*: greedy cosine matching mapped by (1+cos)/2 (not comparable to BERTScore values)"
)


def metric_tokens(text: str) -> list[str]:
    return [t.lower() for t in split_tokens(text)]


# -- BLEU --------------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: Sequence[str], references: Sequence[Sequence[str]], n: int) -> float:
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    if not references:
        raise EmptyReferences("BLEU needs at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    cand_counts = _ngrams(candidate, n)
    total = sum(cand_counts.values())
    if total == 0:
        return 0.0
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in _ngrams(ref, n).items():
            max_ref[gram] = max(max_ref[gram], count)
    matches = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
    precision = (matches if matches else BLEU_EPSILON) / total
    # closest reference length, shorter on ties
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return precision * bp


# -- ROUGE-L ---------------------------------------------------------------------

def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


# -- embeddings --------------------------------------------------------------------

class HashEmbedder:
    """Pseudorandom unit vectors keyed by token vocab id."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(tokens) if t not in self._cache]
        if missing:
            keys = [hashrand.derive_key(self.seed, 0xE3BED, token_id(t)) for t in missing]
            vecs = hashrand.uniform(keys, self.dim)
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            for t, v in zip(missing, vecs):
                self._cache[t] = v
        return np.array([self._cache[t] for t in tokens]).reshape(len(tokens), self.dim)


class FileEmbedder:
    """Token -> vector table loaded from JSON ``{"token": [floats], ...}``.

    Tokens absent from the table fall back to hashed vectors of the same width.
    """

    def __init__(self, path, seed: int = 0):
        table = json.loads(Path(path).read_text(encoding="utf-8"))
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        dims = {v.shape for v in self.table.values()}
        if len(dims) != 1:
            raise ValueError("embedding table vectors must share one width")
        self.dim = dims.pop()[0]
        self._fallback = HashEmbedder(self.dim, seed)

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        rows = [self.table[t] if t in self.table else self._fallback([t])[0] for t in tokens]
        return np.array(rows).reshape(len(tokens), self.dim)


def _unit_rows(vecs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / np.where(norms == 0, 1.0, norms)


def cosine_matrix(candidate: Sequence[str], reference: Sequence[str], embedder) -> np.ndarray:
    sims = _unit_rows(embedder(candidate)) @ _unit_rows(embedder(reference)).T
    same = np.array([[c == r for r in reference] for c in candidate], dtype=bool)
    sims[same] = 1.0
    return np.clip(sims, -1.0, 1.0)


def embed_score(candidate: Sequence[str], reference: Sequence[str], embedder=None):
    """Greedy-matching (P, R, F1), each mapped into [0, 1]."""
    if not candidate or not reference:
        raise EmptyInput("embedding score needs non-empty candidate and reference")
    embedder = embedder or HashEmbedder()
    sims = cosine_matrix(candidate, reference, embedder)
    p = (1.0 + sims.max(axis=1).mean()) / 2.0
    r = (1.0 + sims.max(axis=0).mean()) / 2.0
    p, r = min(max(p, 0.0), 1.0), min(max(r, 0.0), 1.0)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


def similarity(original: Sequence[str], reduced: Sequence[str], embedder=None) -> float:
    """Cosine between mean-pooled token embeddings (raw, in [-1, 1])."""
    if not original or not reduced:
        raise EmptyInput("similarity needs non-empty token lists")
    if list(original) == list(reduced):
        return 1.0
    embedder = embedder or HashEmbedder()
    a = embedder(original).mean(axis=0)
    b = embedder(reduced).mean(axis=0)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.clip(a @ b / denom, -1.0, 1.0))


# -- per-note and aggregate reports ----------------------------------------------

def score_pair(candidate_text: str, reference_text: str, embedder=None) -> dict:
    cand = metric_tokens(candidate_text)
    ref = metric_tokens(reference_text)
    row = {
        "bleu1": bleu_n(cand, [ref], 1),
        "bleu2": bleu_n(cand, [ref], 2),
        "rouge_l": rouge_l(cand, ref),
    }
    if cand and ref:
        row["embed_p"], row["embed_r"], row["embed_f1"] = embed_score(cand, ref, embedder)
    else:
        row["embed_p"] = row["embed_r"] = row["embed_f1"] = 0.0
    return row


@dataclass
class MetricReport:
    per_note: dict = field(default_factory=dict)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    count: int = 0

    def to_json(self) -> dict:
        return {"header": REPORT_HEADER, **asdict(self)}


def aggregate(per_note: dict) -> MetricReport:
    """Mean and population std of every metric present in the rows.

    ``per_note`` maps note_id -> {metric: value}.
    """
    report = MetricReport(per_note=dict(sorted(per_note.items())), count=len(per_note))
    names = sorted({k for row in per_note.values() for k in row})
    for name in names:
        # sorted values: summation order must not depend on row order
        values = sorted(row[name] for row in per_note.values() if name in row)
        if not values:
            continue
        mean = math.fsum(values) / len(values)
        var = math.fsum((v - mean) ** 2 for v in values) / len(values)
        report.mean[name] = mean
        report.std[name] = math.sqrt(var)
    return report


def render_table(rows: dict, metrics: Sequence[str] = METRIC_NAMES) -> str:
    """Plain-text table of ``mean ± std`` cells, scaled by 100.

    ``rows`` maps a row label (e.g. variant name) to a MetricReport.
    """
    labels = list(rows)
    width = max([len("Model")] + [len(l) for l in labels])
    head = "Model".ljust(width) + " | " + " | ".join(m.rjust(13) for m in metrics)
    lines = [head, "-" * len(head)]
    for label in labels:
        rep = rows[label]
        cells = []
        for m in metrics:
            if m in rep.mean:
                cells.append(f"{100 * rep.mean[m]:.2f} ± {100 * rep.std[m]:.1f}".rjust(13))
            else:
                cells.append("-".rjust(13))
        lines.append(label.ljust(width) + " | " + " | ".join(cells))
    return "\n".join(lines)


# -- efficiency ------------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyReport:
    throughput: float
    latency_mean: float
    latency_std: float
    wall_time: float
    count: int

    def to_json(self) -> dict:
        return asdict(self)


def efficiency(records, wall_time: float) -> EfficiencyReport:
    records = list(records)
    if not records:
        raise EmptyRecords("no summary records to measure")
    if wall_time <= 0:
        raise ValueError("wall_time must be positive")
    lat = np.array([r.latency_seconds for r in records], dtype=np.float64)
    return EfficiencyReport(
        throughput=len(records) / wall_time,
        latency_mean=float(lat.mean()),
        latency_std=float(lat.std()),
        wall_time=wall_time,
        count=len(records),
    )
