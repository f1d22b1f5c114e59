"""Command-line entry point: ``contextual {filter,kg,run,sweep,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import kg as kgmod
from .attention import MiniTransformerConfig
from .corpus import load_corpus
from .cptf import FilterConfig
from .errors import ContextualError
from .gateway import GenerationConfig, HttpBackend
from .metrics import METRIC_NAMES, render_table, MetricReport
from .pipeline import (
    BACKENDS,
    VARIANTS,
    RunConfig,
    evaluate_files,
    filter_corpus,
    run_pipeline,
    run_sweep,
    write_report,
)

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2


def _add_filter_flags(p):
    p.add_argument("--retention", type=float, help="retention ratio r in (0, 1]")
    p.add_argument("--alpha", type=float, help="layer weighting alpha in [0, 1]")
    p.add_argument("--mode", choices=("received", "literal"), help="importance scoring mode")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contextual", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="token-filter every note of a corpus")
    p.add_argument("--config", help="run config supplying notes/filter/transformer settings")
    p.add_argument("--notes")
    p.add_argument("--attention-dir")
    _add_filter_flags(p)
    p.add_argument("--out", required=True, help="output JSONL of reduced notes")

    p = sub.add_parser("kg", help="build, query or export the knowledge graph")
    kg_sub = p.add_subparsers(dest="kg_command", required=True)
    b = kg_sub.add_parser("build")
    b.add_argument("--annotations", help="annotation JSONL")
    b.add_argument("--notes", help="notes JSONL for lexicon extraction")
    b.add_argument("--lexicon", help="term -> type JSON map")
    b.add_argument("--out", required=True)
    q = kg_sub.add_parser("query")
    q.add_argument("--graph", required=True)
    q.add_argument("--patient", required=True)
    q.add_argument("--hops", type=int, default=1)
    e = kg_sub.add_parser("export")
    e.add_argument("--graph", required=True)
    e.add_argument("--out", required=True)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} the full pipeline from a JSON config")
        p.add_argument("--config", required=True)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--backend", choices=BACKENDS)
        _add_filter_flags(p)
        p.add_argument("--parallelism", type=int)
        p.add_argument("--out")
        p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--metrics", default=",".join(METRIC_NAMES))
    p.add_argument("--judge", choices=("none", "http"), default="none")
    p.add_argument("--out")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if args.variant:
        changes["variant"] = args.variant
    if args.backend:
        changes["backend"] = {**cfg.backend, "kind": args.backend}
    if args.parallelism:
        changes["parallelism"] = args.parallelism
    if args.out:
        changes["out"] = args.out
    if args.retention is not None or args.alpha is not None or args.mode:
        f = cfg.filter
        changes["filter"] = FilterConfig(
            args.retention if args.retention is not None else f.retention_ratio,
            args.alpha if args.alpha is not None else f.alpha,
            args.mode or f.scoring_mode,
        )
    return cfg.replace(**changes) if changes else cfg


def cmd_filter(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config)
        notes_path, attention_dir, transformer, fcfg = cfg.notes, cfg.attention_dir, cfg.transformer, cfg.filter
    else:
        notes_path, attention_dir, transformer, fcfg = args.notes, None, MiniTransformerConfig(), FilterConfig()
    notes_path = args.notes or notes_path
    attention_dir = args.attention_dir or attention_dir
    if not notes_path:
        raise ContextualError("filter needs --notes or --config")
    fcfg = FilterConfig(
        args.retention if args.retention is not None else fcfg.retention_ratio,
        args.alpha if args.alpha is not None else fcfg.alpha,
        args.mode or fcfg.scoring_mode,
    )
    rows = filter_corpus(load_corpus(notes_path), fcfg, attention_dir, transformer)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    failed = [r["note_id"] for r in rows if "error" in r]
    for row in rows:
        if "error" in row:
            print(f"{row['note_id']}\tFAILED\t{row['error']}", file=sys.stderr)
        else:
            print(f"{row['note_id']}\t{row['kept']}/{row['original_len']}\t{row['compression_ratio']:.3f}")
    return EXIT_FAILURES if failed else EXIT_OK


def cmd_kg(args) -> int:
    if args.kg_command == "build":
        if args.annotations:
            anns = kgmod.load_annotations(args.annotations)
        elif args.notes and args.lexicon:
            lexicon = kgmod.load_lexicon(args.lexicon)
            anns = [a for n in load_corpus(args.notes) for a in kgmod.lexicon_extract(n, lexicon)]
        else:
            raise ContextualError("kg build needs --annotations or --notes with --lexicon")
        graph = kgmod.build_graph(anns)
        kgmod.save_graph(graph, args.out)
        counts = graph.type_counts()
        print(f"{len(graph)} nodes, {len(graph.edges)} edges: "
              + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    elif args.kg_command == "query":
        bundle = kgmod.retrieve_context(kgmod.load_graph(args.graph), args.patient, args.hops)
        print(json.dumps({"patient_id": bundle.patient_id,
                          "entries": [list(e) for e in bundle.entries]}, ensure_ascii=False))
    else:
        kgmod.export_dot(kgmod.load_graph(args.graph), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    report = run_pipeline(cfg)
    path = write_report(report, cfg.out, figures=not args.no_figures)
    if report["metrics"]["mean"]:
        rep = MetricReport(mean=report["metrics"]["mean"], std=report["metrics"]["std"])
        print(render_table({cfg.variant: rep}))
    eff = report["timing"].get("efficiency")
    if eff:
        print(f"throughput {eff['throughput']:.3f}/s, latency {eff['latency_mean']:.4f}s "
              f"± {eff['latency_std']:.4f} (parallelism {cfg.parallelism})")
    print(f"report: {path}")
    return EXIT_FAILURES if report["failures"] else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    rows = run_sweep(cfg, out_dir=cfg.out, figures=not args.no_figures)
    for row in rows:
        print(row)
    print(f"sweep matrix: {Path(cfg.out, 'sweep.csv')}")
    bad = any(r["status"] != "ok" or r["failures"] for r in rows)
    return EXIT_FAILURES if bad else EXIT_OK


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    judge_backend = HttpBackend() if args.judge == "http" else None
    result = evaluate_files(args.predictions, args.references, metrics,
                            judge_backend=judge_backend, generation=GenerationConfig())
    rep = MetricReport(mean=result["metrics"]["mean"], std=result["metrics"]["std"])
    print(render_table({"predictions": rep}, metrics))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1, sort_keys=True), encoding="utf-8")
    return EXIT_OK


COMMANDS = {"filter": cmd_filter, "kg": cmd_kg, "run": cmd_run, "sweep": cmd_sweep, "eval": cmd_eval}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ContextualError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
