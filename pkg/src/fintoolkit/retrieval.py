"""Per-turn candidate tool assembly under three retrieval configurations.

* ``static`` passes through a plan-determined tool list unchanged.
* ``vector`` runs top-k semantic search over the rewritten turn query.
* ``graph_enhanced`` augments the vector hits with their dependency-graph
  neighborhood, pulling in hard negatives: tools close to the hits in function
  or workflow but not necessarily relevant to the query.

Candidate ordering is normative (it feeds prompt rendering): vector hits by
rank, then graph additions by (hop distance, name), duplicates dropped keeping
the earliest provenance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .graph import ToolGraph, k_hop_distances
from .index import Encoder, VectorIndex
from .registry import Library, ToolSpec

logger = logging.getLogger(__name__)

STATIC = "static"
VECTOR = "vector"
GRAPH_ENHANCED = "graph_enhanced"
RETRIEVAL_MODES = (STATIC, VECTOR, GRAPH_ENHANCED)

PROVENANCE_PLAN = "plan"
PROVENANCE_VECTOR = "vector_hit"
PROVENANCE_GRAPH = "graph_hop"


class UnknownTool(KeyError):
    def __init__(self, name: str):
        super().__init__(f"plan tool not in library: {name!r}")
        self.name = name


class EmptyQuery(ValueError):
    """Vector retrieval received an empty query in strict mode."""


class RewriterUnavailable(RuntimeError):
    pass


class QueryRewriter(Protocol):
    def rewrite(self, history: list[dict]) -> str: ...


class IdentityRewriter:
    """Returns the last user utterance verbatim; empty history gives an empty query."""

    def rewrite(self, history: list[dict]) -> str:
        for turn in reversed(history):
            if turn.get("role") == "user":
                return str(turn.get("content", ""))
        return ""


@dataclass(frozen=True)
class RetrievalConfig:
    mode: str = VECTOR
    top_k: int = 10
    hops: int = 1
    rewriter: QueryRewriter | None = None
    # "strict" raises on an empty query; "lenient" degrades to the
    # lexicographically first top_k tools.
    empty_query_policy: str = "strict"

    def __post_init__(self) -> None:
        if self.mode not in RETRIEVAL_MODES:
            raise ValueError(f"unknown retrieval mode {self.mode!r}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if self.empty_query_policy not in ("strict", "lenient"):
            raise ValueError("empty_query_policy must be 'strict' or 'lenient'")


@dataclass
class CandidateSet:
    """Ordered candidate tools for one turn, each tagged with its origin."""

    mode: str
    tools: list[ToolSpec]
    provenance: list[str]
    turn_index: int = 0
    hop_distance: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tools in candidate set")
        if len(self.provenance) != len(self.tools):
            raise ValueError("provenance must parallel tools")

    def names(self) -> list[str]:
        return [t.name for t in self.tools]

    def get(self, name: str) -> ToolSpec:
        for tool in self.tools:
            if tool.name == name:
                return tool
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(t.name == name for t in self.tools)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "turn_index": self.turn_index,
            "tools": [
                {"name": t.name, "provenance": p, **(
                    {"hop_distance": self.hop_distance[t.name]}
                    if t.name in self.hop_distance else {}
                )}
                for t, p in zip(self.tools, self.provenance)
            ],
        }


def rewrite_query(history: list[dict], rewriter: QueryRewriter | None = None) -> str:
    """Rewrite the dialogue history into a standalone retrieval query.

    Falls back to the identity rewriter (with a logged warning) when the
    configured rewriter is unavailable.
    """
    if rewriter is None:
        rewriter = IdentityRewriter()
    try:
        return rewriter.rewrite(history)
    except RewriterUnavailable as exc:
        logger.warning("query rewriter unavailable (%s); falling back to identity", exc)
        return IdentityRewriter().rewrite(history)


def assemble_candidates(
    config: RetrievalConfig,
    turn_context: list[dict],
    plan_tools: list[str] | None = None,
    index: VectorIndex | None = None,
    graph: ToolGraph | None = None,
    library: Library | None = None,
    encoder: Encoder | None = None,
    turn_index: int = 0,
) -> CandidateSet:
    """Assemble the candidate tool set for one turn under ``config.mode``."""
    if library is None:
        raise ValueError("library is required")

    if config.mode == STATIC:
        if plan_tools is None:
            raise ValueError("static retrieval needs plan_tools")
        tools = []
        for name in plan_tools:
            if name not in library:
                raise UnknownTool(name)
            tools.append(library.get(name))
        return CandidateSet(
            mode=config.mode,
            tools=tools,
            provenance=[PROVENANCE_PLAN] * len(tools),
            turn_index=turn_index,
        )

    if index is None or encoder is None:
        raise ValueError(f"{config.mode} retrieval needs index and encoder")

    query = rewrite_query(turn_context, config.rewriter)
    if not query.strip():
        if config.empty_query_policy == "strict":
            raise EmptyQuery("empty retrieval query (strict mode)")
        hit_names = sorted(library.names())[: config.top_k]
    else:
        hits = index.top_k(encoder.encode(query), config.top_k)
        hit_names = [name for name, _ in hits]

    tools = [library.get(name) for name in hit_names]
    provenance = [PROVENANCE_VECTOR] * len(tools)
    hop_distance: dict[str, int] = {}

    if config.mode == GRAPH_ENHANCED:
        if graph is None:
            raise ValueError("graph_enhanced retrieval needs a graph")
        seeds = [name for name in hit_names if name in graph.nodes]
        expanded = k_hop_distances(graph, seeds, config.hops) if seeds else []
        additions = [
            (name, dist) for name, dist in expanded if name not in set(hit_names)
        ]
        additions.sort(key=lambda nd: (nd[1], nd[0]))
        for name, dist in additions:
            tools.append(library.get(name))
            provenance.append(PROVENANCE_GRAPH)
            hop_distance[name] = dist

    return CandidateSet(
        mode=config.mode,
        tools=tools,
        provenance=provenance,
        turn_index=turn_index,
        hop_distance=hop_distance,
    )


MappingRewriter = Callable[[list[dict]], str]


class SubstitutionRewriter:
    """Rewriter that applies literal substring replacements to the last user turn.

    Useful as a deterministic stand-in for coreference resolution in tests and
    offline runs (e.g. mapping "its" to the entity under discussion).
    """

    def __init__(self, replacements: dict[str, str]):
        self.replacements = dict(replacements)

    def rewrite(self, history: list[dict]) -> str:
        text = IdentityRewriter().rewrite(history)
        for old, new in self.replacements.items():
            text = text.replace(old, new)
        return text
