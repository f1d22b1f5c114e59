"""End-to-end orchestration: filter, knowledge-graph context, prompt, generate, evaluate."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import os
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import kg as kgmod
from .attention import MiniTransformerConfig, compute_attention, load_attention
from .corpus import ClinicalNote, count_tokens, detokenize, flatten_note, load_corpus, tokenize
from .cptf import FilterConfig, filter_note, reconstruct
from .errors import ConfigError, ContextualError, IdMismatch
from .gateway import GenerationConfig, HttpBackend, MockBackend, generate, judge
from .metrics import (
    METRIC_NAMES,
    FileEmbedder,
    HashEmbedder,
    aggregate,
    efficiency,
    metric_tokens,
    score_pair,
    similarity,
)
from .prompts import DEFAULT_INSTRUCTION, STRATEGIES, PromptSpec, build_prompt, default_examples, examples_for, load_examples

log = logging.getLogger(__name__)

SCHEMA_ID = 1
VARIANTS = ("vanilla", "cptf_only", "contextual")
BACKENDS = ("mock-extractive", "mock-fixed", "http")
SWEEP_KEYS = ("temperature", "max_tokens", "alpha")
PATH_KEYS = ("notes", "annotations", "graph", "lexicon", "attention_dir", "exemplars", "out")


def interpolate_env(value):
    """Expand ``${VAR}`` references in every string of a JSON-like value."""
    if isinstance(value, str):
        return string.Template(value).safe_substitute(os.environ)
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    return value


@dataclass
class RunConfig:
    notes: str
    variant: str = "contextual"
    strategy: str = "few_shot"
    instruction: str = DEFAULT_INSTRUCTION
    annotations: str | None = None
    graph: str | None = None
    lexicon: str | None = None
    attention_dir: str | None = None
    exemplars: str | None = None
    filter: FilterConfig = field(default_factory=FilterConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    transformer: MiniTransformerConfig = field(default_factory=MiniTransformerConfig)
    backend: dict = field(default_factory=lambda: {"kind": "mock-extractive"})
    judge: dict | None = None
    embedding: dict = field(default_factory=dict)
    hops: int = 1
    parallelism: int = 1
    out: str = "run"
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.backend.get("kind") not in BACKENDS:
            raise ConfigError(f"backend.kind must be one of {BACKENDS}")
        if self.judge is not None and self.judge.get("kind") not in BACKENDS:
            raise ConfigError(f"judge.kind must be one of {BACKENDS}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.hops < 1:
            raise ConfigError("hops must be >= 1")
        for key, values in self.sweep.items():
            if key not in SWEEP_KEYS:
                raise ConfigError(f"unknown sweep key {key!r}; expected one of {SWEEP_KEYS}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep list {key!r} must be a non-empty list")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "RunConfig":
        doc = interpolate_env(copy.deepcopy(doc))
        if "notes" not in doc:
            raise ConfigError("config needs a 'notes' path")
        if base_dir is not None:
            for key in PATH_KEYS:
                if doc.get(key):
                    doc[key] = str(Path(base_dir, doc[key]))
        try:
            doc["filter"] = FilterConfig(**doc.get("filter", {}))
            doc["generation"] = GenerationConfig(**doc.get("generation", {}))
            doc["transformer"] = MiniTransformerConfig(**doc.get("transformer", {}))
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def snapshot(self) -> dict:
        doc = {
            "notes": self.notes,
            "variant": self.variant,
            "strategy": self.strategy,
            "instruction": self.instruction,
            "annotations": self.annotations,
            "graph": self.graph,
            "lexicon": self.lexicon,
            "attention_dir": self.attention_dir,
            "exemplars": self.exemplars,
            "filter": self.filter.to_json(),
            "generation": self.generation.to_json(),
            "transformer": vars(self.transformer).copy(),
            "backend": {k: v for k, v in self.backend.items() if k != "api_key"},
            "judge": None if self.judge is None else {k: v for k, v in self.judge.items() if k != "api_key"},
            "embedding": dict(self.embedding),
            "hops": self.hops,
            "parallelism": self.parallelism,
            "out": self.out,
            "sweep": dict(self.sweep),
        }
        return doc

    def replace(self, **changes) -> "RunConfig":
        new = copy.copy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        new.__post_init__()
        return new


def make_backend(spec: dict):
    kind = spec.get("kind")
    if kind == "mock-extractive":
        return MockBackend("extractive", delay=spec.get("delay", 0.0),
                           delay_per_token=spec.get("delay_per_token", 0.0))
    if kind == "mock-fixed":
        return MockBackend("fixed", text=spec.get("text", ""), delay=spec.get("delay", 0.0),
                           delay_per_token=spec.get("delay_per_token", 0.0))
    if kind == "http":
        return HttpBackend(
            base_url=spec.get("base_url"),
            api_key=spec.get("api_key"),
            timeout=spec.get("timeout", 60.0),
            max_retries=spec.get("max_retries", 3),
            backoff=spec.get("backoff", 0.5),
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def make_embedder(spec: dict):
    if spec.get("file"):
        return FileEmbedder(spec["file"], seed=spec.get("seed", 0))
    return HashEmbedder(dim=spec.get("dim", 64), seed=spec.get("seed", 0))


def attention_for(note_id: str, seq, attention_dir, transformer: MiniTransformerConfig):
    if attention_dir:
        for suffix in (".attn", ".json"):
            path = Path(attention_dir, note_id + suffix)
            if path.exists():
                return load_attention(path)
        raise FileNotFoundError(f"no attention file for {note_id!r} in {attention_dir}")
    return compute_attention(seq, transformer)


def build_run_graph(cfg: RunConfig, notes) -> kgmod.KnowledgeGraph:
    if cfg.graph:
        return kgmod.load_graph(cfg.graph)
    if cfg.annotations:
        return kgmod.build_graph(kgmod.load_annotations(cfg.annotations))
    if cfg.lexicon:
        lexicon = kgmod.load_lexicon(cfg.lexicon)
        anns = [a for note in notes for a in kgmod.lexicon_extract(note, lexicon)]
        if anns:
            return kgmod.build_graph(anns)
    return kgmod.KnowledgeGraph().freeze()


# -- single run -------------------------------------------------------------------------

@dataclass(frozen=True)
class _Shared:
    cfg: RunConfig
    graph: kgmod.KnowledgeGraph
    examples: tuple
    backend: object
    judge_backend: object
    embedder: object


def model_input(note: ClinicalNote, cfg: RunConfig, graph) -> tuple[str, int, int]:
    """Text fed to the prompt for one note under the configured variant.

    Returns (text, original token count, reduced token count).
    """
    seq = tokenize(flatten_note(note))
    if len(seq) == 0:
        raise ContextualError(f"note {note.note_id!r} has no tokens")
    if cfg.variant == "vanilla":
        return detokenize(seq.tokens), len(seq), len(seq)
    tensor = attention_for(note.note_id, seq, cfg.attention_dir, cfg.transformer)
    reduced = filter_note(seq, tensor, cfg.filter, note.note_id)
    if cfg.variant == "cptf_only":
        return reconstruct(reduced), len(seq), len(reduced)
    context = kgmod.retrieve_context(graph, note.patient_id, cfg.hops)
    return kgmod.enrich(reduced, context), len(seq), len(reduced)


def _process_note(note: ClinicalNote, shared: _Shared) -> tuple[dict, float | None]:
    cfg = shared.cfg
    row = {"note_id": note.note_id, "patient_id": note.patient_id}
    try:
        text, n_orig, n_kept = model_input(note, cfg, shared.graph)
        row.update(original_tokens=n_orig, kept_tokens=n_kept)
        if cfg.variant != "vanilla":
            reduced_part = text.split("\n" + kgmod.SEPARATOR)[0]
            row["retention_similarity"] = similarity(
                metric_tokens(flatten_note(note)), metric_tokens(reduced_part), shared.embedder
            )
        spec = PromptSpec(cfg.strategy, cfg.instruction, text, examples_for(cfg.strategy, shared.examples))
        prompt = build_prompt(spec)
        rec = generate(prompt, cfg.generation, shared.backend, note.note_id)
        row.update(
            prompt=prompt,
            prompt_tokens=rec.prompt_tokens,
            summary=rec.summary_text,
            completion_tokens=rec.completion_tokens,
            retry_count=rec.retry_count,
            empty=rec.empty,
        )
        if note.reference_summary:
            row["metrics"] = score_pair(rec.summary_text, note.reference_summary, shared.embedder)
            if shared.judge_backend is not None and rec.summary_text.strip():
                row["judge"] = judge(note.reference_summary, rec.summary_text,
                                     cfg.generation, shared.judge_backend).to_json()
        return row, rec.latency_seconds
    except Exception as exc:  # per-note isolation: record and continue
        log.warning("note %s failed: %s", note.note_id, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None


class _LatencyRecord:
    def __init__(self, latency_seconds):
        self.latency_seconds = latency_seconds


def run_pipeline(cfg: RunConfig, notes=None, graph=None) -> dict:
    """Execute one configuration and return the RunReport document.

    Everything wall-clock dependent lives under the ``timing`` key; the rest is
    a pure function of the configuration when mock backends are used.
    """
    notes = load_corpus(cfg.notes) if notes is None else notes
    if graph is None:
        graph = build_run_graph(cfg, notes) if cfg.variant == "contextual" else kgmod.KnowledgeGraph().freeze()
    examples = tuple(load_examples(cfg.exemplars) if cfg.exemplars else default_examples())
    shared = _Shared(
        cfg=cfg,
        graph=graph,
        examples=examples,
        backend=make_backend(cfg.backend),
        judge_backend=make_backend(cfg.judge) if cfg.judge else None,
        embedder=make_embedder(cfg.embedding),
    )
    start = time.perf_counter()
    if cfg.parallelism == 1:
        results = [_process_note(n, shared) for n in notes]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(lambda n: _process_note(n, shared), notes))
    wall = time.perf_counter() - start

    results.sort(key=lambda pair: pair[0]["note_id"])
    rows = [r for r, _ in results]
    latencies = {r["note_id"]: lat for r, lat in results if lat is not None}
    metric_report = aggregate({r["note_id"]: r["metrics"] for r in rows if "metrics" in r})
    judged = {r["note_id"]: {k: v for k, v in r["judge"].items()} for r in rows if "judge" in r}
    retention = {r["note_id"]: {"retention_similarity": r["retention_similarity"]}
                 for r in rows if "retention_similarity" in r}

    timing = {"wall_time": wall, "parallelism": cfg.parallelism, "latency": latencies}
    if latencies and wall > 0:
        timing["efficiency"] = efficiency([_LatencyRecord(v) for v in latencies.values()], wall).to_json()
    return {
        "schema": SCHEMA_ID,
        "config": cfg.snapshot(),
        "notes": rows,
        "metrics": metric_report.to_json(),
        "judge": aggregate(judged).to_json() if judged else None,
        "retention": aggregate(retention).to_json() if retention else None,
        "failures": sum(1 for r in rows if "error" in r),
        "timing": timing,
    }


def comparable(report: dict) -> str:
    """Canonical JSON of a report with wall-clock fields removed."""
    stable = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(stable, sort_keys=True, ensure_ascii=False)


def write_metrics_csv(report: dict, path) -> None:
    metrics = report["metrics"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["note_id", *METRIC_NAMES])
        for note_id, row in metrics["per_note"].items():
            writer.writerow([note_id, *(f"{row.get(m, float('nan')):.6f}" for m in METRIC_NAMES)])
        for stat in ("mean", "std"):
            if metrics[stat]:
                writer.writerow([stat, *(f"{metrics[stat].get(m, float('nan')):.6f}" for m in METRIC_NAMES)])


def write_report(report: dict, out_dir, figures: bool = True) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    write_metrics_csv(report, out_dir / "metrics.csv")
    if figures and report["metrics"]["mean"]:
        from .plotting import plot_run_metrics
        plot_run_metrics(report, out_dir / "metrics.png")
    return path


# -- sweeps ---------------------------------------------------------------------------

def sweep_cells(cfg: RunConfig) -> list[dict]:
    if not cfg.sweep:
        raise ConfigError("sweep mode needs at least one sweep list")
    keys = [k for k in SWEEP_KEYS if k in cfg.sweep]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(cfg.sweep[k] for k in keys))]


def cell_config(cfg: RunConfig, cell: dict) -> RunConfig:
    gen = cfg.generation
    filt = cfg.filter
    if "temperature" in cell or "max_tokens" in cell:
        gen = GenerationConfig(
            max_tokens=int(cell.get("max_tokens", gen.max_tokens)),
            temperature=float(cell.get("temperature", gen.temperature)),
            model_name=gen.model_name,
            seed=gen.seed,
        )
    if "alpha" in cell:
        filt = FilterConfig(filt.retention_ratio, float(cell["alpha"]), filt.scoring_mode)
    return cfg.replace(generation=gen, filter=filt, sweep={})


def cell_name(cell: dict) -> str:
    return "_".join(f"{k}={cell[k]}" for k in cell)


def run_sweep(cfg: RunConfig, out_dir=None, figures: bool = True) -> list[dict]:
    """Run every cell of the Cartesian sweep grid; one failing cell does not stop the rest."""
    cells = sweep_cells(cfg)
    notes = load_corpus(cfg.notes)
    graph = build_run_graph(cfg, notes) if cfg.variant == "contextual" else None
    rows = []
    for cell in cells:
        row = dict(cell)
        try:
            report = run_pipeline(cell_config(cfg, cell), notes=notes, graph=graph)
            if out_dir is not None:
                write_report(report, Path(out_dir, "cells", cell_name(cell)), figures=False)
            row.update({m: report["metrics"]["mean"].get(m) for m in METRIC_NAMES})
            eff = report["timing"].get("efficiency", {})
            row.update(throughput=eff.get("throughput"), latency_mean=eff.get("latency_mean"),
                       failures=report["failures"], status="ok")
        except Exception as exc:
            log.warning("sweep cell %s failed: %s", cell, exc)
            row.update({m: None for m in METRIC_NAMES})
            row.update(throughput=None, latency_mean=None, failures=None,
                       status=f"error: {type(exc).__name__}: {exc}")
        rows.append(row)
    if out_dir is not None:
        write_sweep_csv(rows, [k for k in SWEEP_KEYS if k in cfg.sweep], Path(out_dir, "sweep.csv"))
        if figures:
            from .plotting import plot_sweep
            plot_sweep(rows, [k for k in SWEEP_KEYS if k in cfg.sweep], Path(out_dir, "sweep.png"))
    return rows


def write_sweep_csv(rows, params, path) -> None:
    columns = [*params, *METRIC_NAMES, "throughput", "latency_mean", "failures", "status"]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c) for c in columns})


# -- filter and eval commands ------------------------------------------------------------

def filter_corpus(notes, fcfg: FilterConfig, attention_dir=None,
                  transformer: MiniTransformerConfig | None = None) -> list[dict]:
    transformer = transformer or MiniTransformerConfig()
    out = []
    for note in notes:
        try:
            seq = tokenize(flatten_note(note))
            tensor = attention_for(note.note_id, seq, attention_dir, transformer)
            out.append(filter_note(seq, tensor, fcfg, note.note_id).to_json())
        except Exception as exc:
            out.append({"note_id": note.note_id, "error": f"{type(exc).__name__}: {exc}"})
    return out


def _read_jsonl(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _first_key(rec: dict, keys):
    for k in keys:
        if isinstance(rec.get(k), str):
            return rec[k]
    raise ContextualError(f"record {rec.get('note_id')!r} has none of {keys}")


def evaluate_files(predictions_path, references_path, metrics=METRIC_NAMES,
                   embedder=None, judge_backend=None, generation=None) -> dict:
    preds = {r["note_id"]: _first_key(r, ("summary", "summary_text", "prediction"))
             for r in _read_jsonl(predictions_path)}
    refs = {r["note_id"]: _first_key(r, ("reference_summary", "reference", "summary"))
            for r in _read_jsonl(references_path)}
    if preds.keys() != refs.keys():
        raise IdMismatch(refs.keys() - preds.keys(), preds.keys() - refs.keys())
    unknown = set(metrics) - set(METRIC_NAMES)
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    embedder = embedder or HashEmbedder()
    per_note = {}
    judged = {}
    for note_id in sorted(preds):
        row = score_pair(preds[note_id], refs[note_id], embedder)
        per_note[note_id] = {m: row[m] for m in metrics}
        if judge_backend is not None:
            judged[note_id] = judge(refs[note_id], preds[note_id],
                                    generation or GenerationConfig(), judge_backend).to_json()
    out = {"metrics": aggregate(per_note).to_json()}
    out["judge"] = aggregate(judged).to_json() if judged else None
    return out
