"""Patient-centric clinical knowledge graph.

Nodes are typed (patient, problem, test, treatment, plus the diagnosis /
medication vocabulary for entity-to-entity relations). Entity labels are
lowercased and whitespace-collapsed so "UTI" and "uti" share a node.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .cptf import ReducedNote, reconstruct
from .errors import (
    ConfigError,
    FormatError,
    ParseError,
    ReferentialIntegrityError,
    UnknownEntityType,
)

NODE_TYPES = ("patient", "problem", "treatment", "test", "medication", "diagnosis")
RELATIONS = ("HAS_PROBLEM", "UNDERWENT_TEST", "WAS_TREATED_WITH", "r_dm", "r_dt", "r_mt")

# rel -> (allowed source types, allowed target types)
REL_ENDPOINTS = {
    "HAS_PROBLEM": ({"patient"}, {"problem", "diagnosis"}),
    "UNDERWENT_TEST": ({"patient"}, {"test"}),
    "WAS_TREATED_WITH": ({"patient"}, {"treatment", "medication"}),
    "r_dm": ({"diagnosis", "problem"}, {"medication"}),
    "r_dt": ({"diagnosis", "problem"}, {"treatment"}),
    "r_mt": ({"medication"}, {"treatment"}),
}

ENTITY_RELATION = {
    "problem": "HAS_PROBLEM",
    "diagnosis": "HAS_PROBLEM",
    "test": "UNDERWENT_TEST",
    "treatment": "WAS_TREATED_WITH",
    "medication": "WAS_TREATED_WITH",
}

# Figure legend: patients red, problems yellow, tests green, treatments blue.
NODE_COLORS = {
    "patient": "red",
    "problem": "yellow",
    "test": "green",
    "treatment": "blue",
    "medication": "purple",
    "diagnosis": "orange",
}

SEPARATOR = "=== PATIENT CONTEXT ==="


def normalize_label(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class KgNode:
    node_id: str
    node_type: str
    label: str


@dataclass(frozen=True, order=True)
class KgEdge:
    src: str
    dst: str
    rel: str


@dataclass(frozen=True)
class Annotation:
    patient_id: str
    entity: str
    type: str
    span: tuple | None = None

    def to_json(self) -> dict:
        out = {"patient_id": self.patient_id, "entity": self.entity, "type": self.type}
        if self.span is not None:
            out["span"] = list(self.span)
        return out


@dataclass(frozen=True)
class ContextBundle:
    patient_id: str
    entries: tuple = ()

    def __len__(self):
        return len(self.entries)

    def lines(self) -> list[str]:
        return [f"{label} --{rel}--> {neighbor}" for label, rel, neighbor in self.entries]


class KnowledgeGraph:
    def __init__(self):
        self._nodes: dict[str, KgNode] = {}
        self._edges: set[KgEdge] = set()
        self._out: dict[str, list[KgEdge]] = {}
        self.frozen = False

    # -- mutation ------------------------------------------------------------

    def _check_mutable(self):
        if self.frozen:
            raise RuntimeError("graph is frozen")

    def add_node(self, node_id: str, node_type: str, label: str) -> KgNode:
        self._check_mutable()
        if node_type not in NODE_TYPES:
            raise UnknownEntityType(node_type)
        if node_type != "patient" and not label:
            raise ValueError("non-patient nodes need a label")
        existing = self._nodes.get(node_id)
        if existing is not None:
            if existing.node_type != node_type or existing.label != label:
                raise ValueError(f"node {node_id!r} already exists with different attributes")
            return existing
        node = KgNode(node_id, node_type, label)
        self._nodes[node_id] = node
        self._out[node_id] = []
        return node

    def add_edge(self, src: str, dst: str, rel: str) -> KgEdge:
        self._check_mutable()
        if rel not in REL_ENDPOINTS:
            raise ValueError(f"unknown relationship {rel!r}")
        for end in (src, dst):
            if end not in self._nodes:
                raise ReferentialIntegrityError(f"edge endpoint {end!r} is not a node")
        src_ok, dst_ok = REL_ENDPOINTS[rel]
        if self._nodes[src].node_type not in src_ok or self._nodes[dst].node_type not in dst_ok:
            raise ValueError(
                f"{rel} cannot join {self._nodes[src].node_type} -> {self._nodes[dst].node_type}"
            )
        edge = KgEdge(src, dst, rel)
        if edge not in self._edges:
            self._edges.add(edge)
            self._out[src].append(edge)
        return edge

    def freeze(self) -> "KnowledgeGraph":
        self.frozen = True
        return self

    # -- queries -------------------------------------------------------------

    @property
    def nodes(self) -> list[KgNode]:
        return list(self._nodes.values())

    @property
    def edges(self) -> list[KgEdge]:
        return sorted(self._edges)

    def node(self, node_id: str) -> KgNode:
        return self._nodes[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def out_edges(self, node_id: str) -> list[KgEdge]:
        return list(self._out.get(node_id, ()))

    def type_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for node in self._nodes.values():
            counts[node.node_type] = counts.get(node.node_type, 0) + 1
        return counts

    def signature(self):
        """Hashable canonical form; equal signatures mean isomorphic graphs under node ids."""
        return (
            frozenset(self._nodes.values()),
            frozenset(self._edges),
        )

    def __len__(self):
        return len(self._nodes)


def patient_node_id(patient_id: str) -> str:
    return f"patient:{patient_id}"


def entity_node_id(node_type: str, label: str) -> str:
    return f"{node_type}:{normalize_label(label)}"


def build_graph(annotations: Iterable[Annotation]) -> KnowledgeGraph:
    annotations = list(annotations)
    graph = KnowledgeGraph()
    if not annotations:
        warnings.warn("empty annotation set; graph has no nodes", stacklevel=2)
        return graph.freeze()
    # Validate before touching the graph so a bad record leaves nothing half-built.
    for ann in annotations:
        if ann.type not in ENTITY_RELATION:
            raise UnknownEntityType(ann.type)
    # Sorting makes node/edge insertion order independent of input order.
    for ann in sorted(annotations, key=lambda a: (a.patient_id, a.type, normalize_label(a.entity))):
        label = normalize_label(ann.entity)
        if not label:
            continue
        pid = patient_node_id(ann.patient_id)
        graph.add_node(pid, "patient", ann.patient_id)
        eid = entity_node_id(ann.type, label)
        graph.add_node(eid, ann.type, label)
        graph.add_edge(pid, eid, ENTITY_RELATION[ann.type])
    return graph.freeze()


def retrieve_context(graph: KnowledgeGraph, patient_id: str, hops: int = 1) -> ContextBundle:
    if hops < 1:
        raise ConfigError(f"hops must be >= 1, got {hops}")
    start = patient_node_id(patient_id)
    if not graph.has_node(start):
        return ContextBundle(patient_id)
    entries = set()
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node_id, depth = frontier.popleft()
        if depth == hops:
            continue
        for edge in graph.out_edges(node_id):
            entries.add((graph.node(edge.src).label, edge.rel, graph.node(edge.dst).label))
            if edge.dst not in seen:
                seen.add(edge.dst)
                frontier.append((edge.dst, depth + 1))
    ordered = sorted(entries, key=lambda e: (e[1], e[2], e[0]))
    return ContextBundle(patient_id, tuple(ordered))


def enrich_text(reduced_text: str, context: ContextBundle) -> str:
    if not context.entries:
        return reduced_text
    return "\n".join([reduced_text, SEPARATOR, *context.lines()])


def enrich(reduced: ReducedNote, context: ContextBundle) -> str:
    return enrich_text(reconstruct(reduced), context)


# -- persistence -------------------------------------------------------------

def graph_to_json(graph: KnowledgeGraph) -> dict:
    return {
        "nodes": [
            {"id": n.node_id, "type": n.node_type, "label": n.label}
            for n in sorted(graph.nodes, key=lambda n: n.node_id)
        ],
        "edges": [{"src": e.src, "dst": e.dst, "rel": e.rel} for e in graph.edges],
    }


def graph_from_json(doc) -> KnowledgeGraph:
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise FormatError("graph JSON needs 'nodes' and 'edges'")
    graph = KnowledgeGraph()
    try:
        for n in doc["nodes"]:
            graph.add_node(n["id"], n["type"], n["label"])
        for e in doc["edges"]:
            graph.add_edge(e["src"], e["dst"], e["rel"])
    except ReferentialIntegrityError:
        raise
    except (KeyError, TypeError, ValueError, UnknownEntityType) as exc:
        raise FormatError(f"bad graph record: {exc}") from exc
    return graph.freeze()


def save_graph(graph: KnowledgeGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_json(graph), indent=1, ensure_ascii=False))


def load_graph(path) -> KnowledgeGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    return graph_from_json(doc)


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: KnowledgeGraph) -> str:
    lines = ["digraph knowledge_graph {", "  node [style=filled];"]
    for node in sorted(graph.nodes, key=lambda n: n.node_id):
        color = NODE_COLORS[node.node_type]
        lines.append(
            f"  {_dot_quote(node.node_id)} [label={_dot_quote(node.label)}, "
            f"type={node.node_type}, color={color}, fillcolor={color}];"
        )
    for edge in graph.edges:
        lines.append(f"  {_dot_quote(edge.src)} -> {_dot_quote(edge.dst)} [label={edge.rel}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(graph: KnowledgeGraph, path) -> None:
    Path(path).write_text(to_dot(graph), encoding="utf-8")


# -- annotations ---------------------------------------------------------------

def load_annotations(path) -> list[Annotation]:
    out = []
    problems = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                span = rec.get("span")
                out.append(Annotation(
                    str(rec["patient_id"]), str(rec["entity"]), str(rec["type"]),
                    tuple(span) if span is not None else None,
                ))
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                problems.append((lineno, f"bad annotation: {exc}"))
    if problems:
        raise ParseError(problems)
    return out


def write_annotations(annotations: Iterable[Annotation], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann.to_json(), ensure_ascii=False) + "\n")


def lexicon_extract(note, lexicon: dict[str, str]) -> list[Annotation]:
    """Case-insensitive longest-match scan of ``note.text`` against ``lexicon``.

    Matches must sit on word boundaries. At any start position the longest
    term wins, and matches never overlap.
    """
    if not lexicon:
        raise ValueError("lexicon must not be empty")
    for term_type in lexicon.values():
        if term_type not in ENTITY_RELATION:
            raise UnknownEntityType(term_type)
    by_lower = {normalize_label(term): (term, kind) for term, kind in lexicon.items()}
    terms = sorted(by_lower, key=lambda t: (-len(t), t))
    alternation = "|".join(r"\s+".join(map(re.escape, t.split())) for t in terms)
    pattern = re.compile(rf"(?<!\w)(?:{alternation})(?!\w)", re.IGNORECASE)
    found = []
    for m in pattern.finditer(note.text):
        term, kind = by_lower[normalize_label(m.group(0))]
        found.append(Annotation(note.patient_id, term, kind, (m.start(), m.end())))
    return found


def load_lexicon(path) -> dict[str, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not doc:
        raise FormatError("lexicon must be a non-empty JSON object of term -> type")
    return {str(k): str(v) for k, v in doc.items()}
