"""Financial tool-use pipeline: library construction, dependency-graph and
vector retrieval, closed-loop dialogue synthesis, and circuit-breaker weighted
scoring with domain metrics."""

__version__ = "0.1.0"

from .registry import Library, ParamSchema, ToolSpec, parse_tool_spec  # noqa: F401
from .codec import ToolCall, parse_tool_calls, mcp_to_fc, fc_to_mcp  # noqa: F401
from .graph import Edge, ToolGraph, k_hop_neighbors  # noqa: F401
from .index import EmbeddingVector, HashedBagOfWordsEncoder, VectorIndex  # noqa: F401
from .retrieval import CandidateSet, RetrievalConfig, assemble_candidates  # noqa: F401
from .scoring import (  # noqa: F401
    EvalInstance,
    Weights,
    aggregate_report,
    compute_ita,
    compute_kda,
    rule_circuit_breaker,
    score_instance,
)
from .synthesis import (  # noqa: F401
    DialoguePlan,
    DialogueTrajectory,
    Persona,
    SeedInstruction,
    run_dialogue,
    synthesis_stats,
)
