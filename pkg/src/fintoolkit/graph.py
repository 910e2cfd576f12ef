"""Directed multi-relation dependency graph over a tool library.

Edges come in four kinds. Parameter-level edges are proposed heuristically by
exact field-name matching between one tool's output schema and another's input
schema; tool-level edges are labelled by a judge over a deterministic
lexical pre-filter. A priority rule drops a direct tool dependency whenever
the same ordered pair already carries a direct parameter dependency, since the
latter subsumes it.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .jsonl import atomic_write_text, dumps_line, read_jsonl
from .registry import Library, ToolSpec

DIRECT_PARAM = "direct_parameter_dependency"
INDIRECT_PARAM = "indirect_parameter_dependency"
DIRECT_TOOL = "direct_tool_dependency"
INDIRECT_TOOL = "indirect_tool_dependency"

RELATIONS = (DIRECT_PARAM, DIRECT_TOOL, INDIRECT_PARAM, INDIRECT_TOOL)
# Priority rank: parameter beats tool, direct beats indirect.
_PRIORITY = {rel: rank for rank, rel in enumerate(RELATIONS)}


class UnknownSeed(KeyError):
    def __init__(self, name: str):
        super().__init__(f"seed tool not in graph: {name!r}")
        self.name = name


@dataclass(frozen=True)
class Edge:
    head: str
    relation: str
    tail: str
    matched_field: str | None = None
    source: str = "heuristic"

    def __post_init__(self) -> None:
        if self.head == self.tail:
            raise ValueError(f"self-edge on {self.head!r}")
        if self.relation not in _PRIORITY:
            raise ValueError(f"unknown relation {self.relation!r}")

    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "relation": self.relation,
            "tail": self.tail,
            "evidence": {"matched_field": self.matched_field, "source": self.source},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Edge":
        ev = doc.get("evidence", {})
        return cls(
            head=doc["head"],
            relation=doc["relation"],
            tail=doc["tail"],
            matched_field=ev.get("matched_field"),
            source=ev.get("source", "heuristic"),
        )


@dataclass
class ToolGraph:
    """Immutable-after-build dependency graph with undirected neighbor lookup."""

    nodes: frozenset[str]
    edges: tuple[Edge, ...]
    _neighbors: dict[str, frozenset[str]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for edge in self.edges:
            if edge.head not in self.nodes or edge.tail not in self.nodes:
                raise ValueError(f"edge endpoint outside node set: {edge.key()}")
        adjacency: dict[str, set[str]] = {n: set() for n in self.nodes}
        for edge in self.edges:
            adjacency[edge.head].add(edge.tail)
            adjacency[edge.tail].add(edge.head)
        self._neighbors = {n: frozenset(v) for n, v in adjacency.items()}

    @classmethod
    def build(cls, nodes: Iterable[str], edges: Iterable[Edge]) -> "ToolGraph":
        return cls(nodes=frozenset(nodes), edges=tuple(apply_priority_rules(list(edges))))

    def neighbors(self, name: str) -> frozenset[str]:
        return self._neighbors[name]

    def save(self, path: str | Path) -> None:
        lines = [dumps_line({"nodes": sorted(self.nodes)})]
        lines.extend(dumps_line(e.to_dict()) for e in self.edges)
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ToolGraph":
        rows = list(read_jsonl(path))
        if not rows or "nodes" not in rows[0]:
            raise ValueError(f"{path}: missing node manifest line")
        nodes = frozenset(rows[0]["nodes"])
        edges = tuple(Edge.from_dict(r) for r in rows[1:])
        return cls(nodes=nodes, edges=edges)


def _sorted_edges(edges: Iterable[Edge]) -> list[Edge]:
    return sorted(edges, key=lambda e: (e.head, _PRIORITY[e.relation], e.tail))


def propose_param_edges(library: Library) -> list[Edge]:
    """Heuristic parameter-dependency candidates by exact field-name match.

    For an ordered pair (A, B): an output field of A equal to a required input
    parameter of B yields a direct edge; equal to an optional parameter, an
    indirect edge. At most one edge per (pair, relation); the matched field is
    the alphabetically first so results are order-independent.
    """
    edges: list[Edge] = []
    for head in library.tools:
        if head.output_schema is None:
            continue
        out_fields = sorted(head.output_schema.properties)
        for tail in library.tools:
            if tail.name == head.name:
                continue
            required = set(tail.input_schema.required)
            optional = set(tail.input_schema.properties) - required
            direct = [f for f in out_fields if f in required]
            indirect = [f for f in out_fields if f in optional]
            if direct:
                edges.append(Edge(head.name, DIRECT_PARAM, tail.name, matched_field=direct[0]))
            if indirect:
                edges.append(Edge(head.name, INDIRECT_PARAM, tail.name, matched_field=indirect[0]))
    return _sorted_edges(edges)


class PairJudge(Protocol):
    """Classifies an ordered tool pair into a tool-level dependency or none."""

    def classify(self, head: ToolSpec, tail: ToolSpec) -> str: ...


_WORD_RE = re.compile(r"[a-z0-9]+")
_STOPWORDS = frozenset(
    "a all an and are as at be by etc for from get in including is it of on "
    "or query return returns that the their this to use with".split()
)


def _content_tokens(text: str) -> frozenset[str]:
    tokens = set()
    for word in _WORD_RE.findall(text.lower()):
        if word in _STOPWORDS:
            continue
        # Naive plural folding so "sector"/"sectors" count as one token.
        if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
            word = word[:-1]
        tokens.add(word)
    return frozenset(tokens)


def prefilter_tool_pairs(library: Library, min_shared_tokens: int = 2) -> list[tuple[str, str]]:
    """Ordered pairs worth sending to the judge: a cross-mention of the other
    tool's name, or at least ``min_shared_tokens`` shared content tokens."""
    specs = library.tools
    token_sets = {s.name: _content_tokens(s.description) for s in specs}
    pairs: list[tuple[str, str]] = []
    for a in specs:
        for b in specs:
            if a.name == b.name:
                continue
            cross = a.name in b.description or b.name in a.description
            shared = len(token_sets[a.name] & token_sets[b.name])
            if cross or shared >= min_shared_tokens:
                pairs.append((a.name, b.name))
    return pairs


def propose_tool_edges(library: Library, judge: PairJudge) -> list[Edge]:
    """Judge-labelled tool-dependency edges over the lexical pre-filter."""
    edges: list[Edge] = []
    for head_name, tail_name in prefilter_tool_pairs(library):
        label = judge.classify(library.get(head_name), library.get(tail_name))
        if label in (DIRECT_TOOL, INDIRECT_TOOL):
            edges.append(Edge(head_name, label, tail_name, source="judge"))
        elif label != "none":
            raise ValueError(f"judge returned unknown label {label!r}")
    return _sorted_edges(edges)


def apply_priority_rules(edges: list[Edge]) -> list[Edge]:
    """Deduplicate and enforce edge priority per ordered pair.

    Keeps at most one edge per (head, relation, tail); drops a direct tool
    dependency when the same pair already carries a direct parameter
    dependency. Output is stably ordered by (head, priority, tail).
    """
    seen: set[tuple[str, str, str]] = set()
    unique: list[Edge] = []
    pairs_with_direct_param: set[tuple[str, str]] = set()
    for edge in edges:
        if edge.key() in seen:
            continue
        seen.add(edge.key())
        unique.append(edge)
        if edge.relation == DIRECT_PARAM:
            pairs_with_direct_param.add((edge.head, edge.tail))
    kept = [
        e for e in unique
        if not (e.relation == DIRECT_TOOL and (e.head, e.tail) in pairs_with_direct_param)
    ]
    return _sorted_edges(kept)


def k_hop_neighbors(graph: ToolGraph, seeds: Iterable[str], hops: int) -> set[str]:
    """All nodes within ``hops`` undirected steps of any seed, seeds included."""
    if hops < 0:
        raise ValueError("hops must be non-negative")
    seed_set = set(seeds)
    for name in seed_set:
        if name not in graph.nodes:
            raise UnknownSeed(name)
    return {name for name, _ in k_hop_distances(graph, seed_set, hops)}


def k_hop_distances(graph: ToolGraph, seeds: Iterable[str], hops: int) -> list[tuple[str, int]]:
    """Breadth-first expansion returning (node, hop distance) pairs."""
    seed_set = set(seeds)
    for name in seed_set:
        if name not in graph.nodes:
            raise UnknownSeed(name)
    dist: dict[str, int] = {name: 0 for name in seed_set}
    queue = deque(sorted(seed_set))
    while queue:
        current = queue.popleft()
        if dist[current] >= hops:
            continue
        for neighbor in sorted(graph.neighbors(current)):
            if neighbor not in dist:
                dist[neighbor] = dist[current] + 1
                queue.append(neighbor)
    return sorted(dist.items(), key=lambda kv: (kv[1], kv[0]))
