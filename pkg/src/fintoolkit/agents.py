"""Agent contracts for dialogue synthesis, plus scripted and procedural backends.

Four specialized roles drive synthesis: a user agent proposing persona-grounded
queries, an assistant agent acting against the candidate tool set, a tool agent
simulating stochastic execution, and a global agent that plans, audits, and
re-plans. Each contract is a stateless request/response interface; scripted
implementations replay golden transcripts for tests, procedural ones generate
deterministic traffic at scale, and gateway-backed ones talk to live endpoints.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, TYPE_CHECKING

from .codec import ToolCall
from .registry import Library
from .retrieval import CandidateSet

if TYPE_CHECKING:
    from .synthesis import DialoguePlan, Persona, SeedInstruction


class AgentFailure(RuntimeError):
    """An agent could not produce a usable response."""


class NoSelection(AgentFailure):
    """The global agent failed to pick a query variant."""


class InvalidPlan(AgentFailure):
    """The global agent produced an unusable dialogue plan."""


class ToolExecutionError(RuntimeError):
    """Simulated execution failure, e.g. an unresolvable entity identifier."""


@dataclass
class AssistantAction:
    """Either a batch of tool calls or a direct text reply."""

    tool_calls: list[ToolCall] = field(default_factory=list)
    text: str = ""

    @property
    def is_tool_call(self) -> bool:
        return bool(self.tool_calls)


@dataclass
class PlanUpdate:
    """Global-agent verdict on the plan after a completed round."""

    completion: bool = False
    insert_intent: str | None = None
    revised_pending: list[str] | None = None


class UserAgent(Protocol):
    def propose_queries(
        self, persona: "Persona", round_intent: str, history: list[dict]
    ) -> list[str]: ...


class AssistantAgent(Protocol):
    def act(
        self, history: list[dict], candidates: CandidateSet, feedback: str | None = None
    ) -> AssistantAction: ...


class ToolAgent(Protocol):
    def execute(self, call: ToolCall, rng: random.Random) -> str: ...


class GlobalAgent(Protocol):
    def make_plan(
        self, seed: "SeedInstruction", persona: "Persona", context: str
    ) -> list[str]: ...

    def select_query(self, variants: list[str], persona: "Persona") -> int: ...

    def check_quality(
        self, query: str, plan: "DialoguePlan", persona: "Persona", history: list[dict]
    ) -> tuple[bool, list[str]]: ...

    def analyze_process(
        self, action: AssistantAction, candidates: CandidateSet, history: list[dict]
    ) -> tuple[bool, str]: ...

    def revise_plan(self, plan: "DialoguePlan", latest_turns: list[dict]) -> PlanUpdate: ...

    def select_plan_tools(self, plan: "DialoguePlan", library: Library) -> list[str]: ...


class Discriminator(Protocol):
    """Optional adversarial filter comparing query variants against real exemplars."""

    def select(self, variants: list[str], exemplars: list[str]) -> int: ...


@dataclass
class AgentContracts:
    user_agent: UserAgent
    assistant_agent: AssistantAgent
    tool_agent: ToolAgent
    global_agent: GlobalAgent
    discriminator: Discriminator | None = None
    # Exemplar hook for the discriminator; ships empty.
    exemplars: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Scripted agents: replay a golden transcript.
# ---------------------------------------------------------------------------


class ScriptedAgents:
    """Transcript-driven agents for protocol replay.

    The transcript is a JSON document::

        {
          "plan": ["round 1 intent", "round 2 intent"],
          "plan_tools": ["tool_a"],
          "rounds": [
            {
              "query_variants": ["genuine query", "textbook query"],
              "selected": 0,
              "quality": [{"pass": true, "reasons": []}],
              "assistant": [{"tool_calls": [{"name": "t", "arguments": {}}]},
                             {"text": "final answer"}],
              "process": [{"pass": true, "diagnosis": "ok"}],
              "tool_results": {"t": ["{\\"x\\": 1}"]},
              "plan_update": {"completion": false, "insert_intent": null}
            }
          ]
        }

    Per-round cursors advance on each call, so retry attempts consume
    successive ``quality``/``process``/``assistant`` entries.
    """

    def __init__(self, transcript: dict):
        self.transcript = transcript
        self.round_index = -1
        self._cursors: dict[str, int] = {}
        self.calls: dict[str, int] = {}

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedAgents":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def contracts(self) -> AgentContracts:
        return AgentContracts(
            user_agent=self, assistant_agent=self, tool_agent=self, global_agent=self
        )

    def _count(self, key: str) -> None:
        self.calls[key] = self.calls.get(key, 0) + 1

    def _round(self) -> dict:
        rounds = self.transcript.get("rounds", [])
        if not 0 <= self.round_index < len(rounds):
            raise AgentFailure(f"transcript has no round {self.round_index}")
        return rounds[self.round_index]

    def _next(self, key: str, items: list):
        cursor_key = f"{self.round_index}:{key}"
        i = self._cursors.get(cursor_key, 0)
        if i >= len(items):
            i = len(items) - 1  # repeat the last entry when retries overrun the script
        self._cursors[cursor_key] = i + 1
        return items[i]

    # UserAgent
    def propose_queries(self, persona, round_intent, history) -> list[str]:
        self._count("propose_queries")
        # One round per user turn: retries within a round keep the same index.
        self.round_index = sum(1 for t in history if t.get("role") == "user")
        variants = self._round().get("query_variants", [round_intent])
        if variants and isinstance(variants[0], list):
            return list(self._next("query_variants", variants))
        return list(variants)

    # AssistantAgent
    def act(self, history, candidates, feedback=None) -> AssistantAction:
        self._count("act")
        step = self._next("assistant", self._round().get("assistant", [{"text": ""}]))
        calls = [ToolCall.from_dict(c) for c in step.get("tool_calls", [])]
        return AssistantAction(tool_calls=calls, text=step.get("text", ""))

    # ToolAgent
    def execute(self, call, rng) -> str:
        self._count("execute")
        queues = self._round().get("tool_results", {})
        if call.tool_name not in queues:
            raise ToolExecutionError(f"no scripted result for {call.tool_name}")
        result = self._next(f"tool:{call.tool_name}", queues[call.tool_name])
        if result == "__error__":
            raise ToolExecutionError(f"scripted execution failure for {call.tool_name}")
        return result

    # GlobalAgent
    def make_plan(self, seed, persona, context) -> list[str]:
        self._count("make_plan")
        return list(self.transcript.get("plan", []))

    def select_query(self, variants, persona) -> int:
        self._count("select_query")
        selected = self._round().get("selected", 0)
        if isinstance(selected, list):
            selected = self._next("selected", selected)
        if not 0 <= selected < len(variants):
            raise NoSelection(f"scripted selection {selected} out of range")
        return selected

    def check_quality(self, query, plan, persona, history) -> tuple[bool, list[str]]:
        self._count("check_quality")
        verdict = self._next("quality", self._round().get("quality", [{"pass": True}]))
        return bool(verdict.get("pass", True)), list(verdict.get("reasons", []))

    def analyze_process(self, action, candidates, history) -> tuple[bool, str]:
        self._count("analyze_process")
        verdict = self._next("process", self._round().get("process", [{"pass": True}]))
        return bool(verdict.get("pass", True)), verdict.get("diagnosis", "")

    def revise_plan(self, plan, latest_turns) -> PlanUpdate:
        self._count("revise_plan")
        doc = self._round().get("plan_update", {})
        return PlanUpdate(
            completion=bool(doc.get("completion", False)),
            insert_intent=doc.get("insert_intent"),
            revised_pending=doc.get("revised_pending"),
        )

    def select_plan_tools(self, plan, library) -> list[str]:
        self._count("select_plan_tools")
        return list(self.transcript.get("plan_tools", []))


# ---------------------------------------------------------------------------
# Procedural agents: deterministic synthetic traffic at scale.
# ---------------------------------------------------------------------------


class ProceduralAgents:
    """Deterministic offline agents for large mock runs.

    Queries derive from the plan intent, the assistant calls the first
    candidate with schema-typed placeholder arguments, the tool agent fabricates
    a seeded JSON payload, and supervision always passes. Useful for pipeline
    and throughput testing; the rule pre-checks in the synthesis loop still
    apply in full.
    """

    _PLACEHOLDERS = {
        "string": "600519.SH",
        "integer": 1,
        "number": 1.0,
        "boolean": True,
        "array": [],
        "object": {},
    }

    def __init__(self, library: Library, rounds: int = 2, variants: int = 2):
        self.library = library
        self.rounds = rounds
        self.variants = variants

    def contracts(self) -> AgentContracts:
        return AgentContracts(
            user_agent=self, assistant_agent=self, tool_agent=self, global_agent=self
        )

    def propose_queries(self, persona, round_intent, history) -> list[str]:
        base = round_intent.strip() or "Tell me more."
        variants = [base, f"Could you walk me through this: {base}"]
        return variants[: max(1, self.variants)]

    def act(self, history, candidates, feedback=None) -> AssistantAction:
        if history and history[-1].get("role") == "tool":
            return AssistantAction(text=f"Summary based on: {history[-1]['content'][:80]}")
        if not candidates.tools:
            return AssistantAction(text="No suitable tool is available for this request.")
        tool = candidates.tools[0]
        arguments = {}
        for pname in tool.input_schema.required:
            ptype = tool.input_schema.properties[pname].get("type", "string")
            enum = tool.input_schema.properties[pname].get("enum")
            arguments[pname] = enum[0] if enum else self._PLACEHOLDERS[ptype]
        return AssistantAction(tool_calls=[ToolCall(tool.name, arguments)])

    def execute(self, call, rng) -> str:
        payload = {
            "tool": call.tool_name,
            "status": "ok",
            "value": rng.randint(0, 10_000),
        }
        return json.dumps(payload, ensure_ascii=False)

    def make_plan(self, seed, persona, context) -> list[str]:
        return [f"{seed.text} (aspect {i + 1})" for i in range(self.rounds)]

    def select_query(self, variants, persona) -> int:
        return 0

    def check_quality(self, query, plan, persona, history) -> tuple[bool, list[str]]:
        return True, []

    def analyze_process(self, action, candidates, history) -> tuple[bool, str]:
        return True, "ok"

    def revise_plan(self, plan, latest_turns) -> PlanUpdate:
        return PlanUpdate(completion=plan.current_round() is None)

    def select_plan_tools(self, plan, library) -> list[str]:
        return library.names()[: min(3, len(library))]


# ---------------------------------------------------------------------------
# Gateway-backed agents: live endpoints behind the uniform client.
# ---------------------------------------------------------------------------


class GatewayAgents:
    """Agents driving chat endpoints through the gateway.

    Each role maps to an endpoint profile. Responses are requested as JSON
    objects; the gateway already re-asks once on malformed output, and any
    remaining failure surfaces as :class:`AgentFailure` so the synthesis loop
    can discard the trajectory.
    """

    def __init__(self, gateway, roles: dict[str, str]):
        # roles: {"user"|"assistant"|"tool"|"global": profile_id}
        self.gateway = gateway
        self.roles = roles

    def contracts(self) -> AgentContracts:
        return AgentContracts(
            user_agent=self, assistant_agent=self, tool_agent=self, global_agent=self
        )

    def _ask(self, role: str, system: str, payload: dict) -> dict:
        from .gateway import GatewayError, GatewayRequest

        req = GatewayRequest(
            profile=self.roles[role],
            messages=[
                {"role": "system", "content": system},
                {"role": "user", "content": json.dumps(payload, ensure_ascii=False)},
            ],
        )
        try:
            return self.gateway.complete_structured(req)
        except GatewayError as exc:
            raise AgentFailure(f"{role} agent failed: {exc}") from exc

    def propose_queries(self, persona, round_intent, history) -> list[str]:
        doc = self._ask(
            "user",
            "You simulate a financial-services user. Produce candidate queries for the "
            "current dialogue round, grounded in the persona. Reply as JSON: "
            '{"queries": ["...", "..."]} with exactly two stylistic variants.',
            {"persona": persona.to_dict(), "round_intent": round_intent, "history": history},
        )
        queries = doc.get("queries")
        if not isinstance(queries, list) or not queries:
            raise AgentFailure("user agent returned no queries")
        return [str(q) for q in queries]

    def act(self, history, candidates, feedback=None) -> AssistantAction:
        doc = self._ask(
            "assistant",
            "You are a financial assistant. Either call tools from the candidate list or "
            'reply directly. Reply as JSON: {"tool_calls": [{"name": ..., "arguments": '
            '{...}}]} or {"text": "..."}.',
            {
                "history": history,
                "candidates": [t.to_dict() for t in candidates.tools],
                "feedback": feedback,
            },
        )
        calls = [ToolCall.from_dict(c) for c in doc.get("tool_calls", [])]
        return AssistantAction(tool_calls=calls, text=str(doc.get("text", "")))

    def execute(self, call, rng) -> str:
        doc = self._ask(
            "tool",
            "You simulate a financial data API. Fabricate a plausible execution result "
            'for the call. Reply as JSON: {"result": "..."} where result is the payload '
            "the API would return.",
            {"call": call.to_dict(), "noise_seed": rng.randint(0, 2**31 - 1)},
        )
        return str(doc.get("result", ""))

    def make_plan(self, seed, persona, context) -> list[str]:
        doc = self._ask(
            "global",
            "You orchestrate dialogue synthesis. From the seed instruction, persona, and "
            "context, produce an ordered dialogue plan. Reply as JSON: "
            '{"rounds": ["round 1 intent", ...]}.',
            {"seed": seed.to_dict(), "persona": persona.to_dict(), "context": context},
        )
        rounds = doc.get("rounds")
        if not isinstance(rounds, list):
            raise InvalidPlan("global agent returned no rounds")
        return [str(r) for r in rounds]

    def select_query(self, variants, persona) -> int:
        doc = self._ask(
            "global",
            "Pick the one and only candidate that reads like a genuine user-style query "
            'for this persona. Reply as JSON: {"selected": <index>}.',
            {"variants": variants, "persona": persona.to_dict()},
        )
        selected = doc.get("selected")
        if not isinstance(selected, int) or not 0 <= selected < len(variants):
            raise NoSelection(f"invalid selection {selected!r}")
        return selected

    def check_quality(self, query, plan, persona, history) -> tuple[bool, list[str]]:
        doc = self._ask(
            "global",
            "Audit the query for plan consistency, behavior consistency, persona/style "
            'match, and rule compliance. Reply as JSON: {"pass": true|false, '
            '"reasons": ["..."]}.',
            {"query": query, "plan": plan.to_dict(), "persona": persona.to_dict(),
             "history": history},
        )
        return bool(doc.get("pass")), [str(r) for r in doc.get("reasons", [])]

    def analyze_process(self, action, candidates, history) -> tuple[bool, str]:
        doc = self._ask(
            "global",
            "Audit the assistant action for necessity, tool selection, and parameter "
            'completeness. Reply as JSON: {"pass": true|false, "diagnosis": "..."}.',
            {
                "action": {
                    "tool_calls": [c.to_dict() for c in action.tool_calls],
                    "text": action.text,
                },
                "candidates": [t.to_dict() for t in candidates.tools],
                "history": history,
            },
        )
        return bool(doc.get("pass")), str(doc.get("diagnosis", ""))

    def revise_plan(self, plan, latest_turns) -> PlanUpdate:
        doc = self._ask(
            "global",
            "Decide whether the dialogue plan needs updating. Completed rounds are locked. "
            'Reply as JSON: {"completion": bool, "insert_intent": str|null, '
            '"revised_pending": [..]|null}.',
            {"plan": plan.to_dict(), "latest_turns": latest_turns},
        )
        revised = doc.get("revised_pending")
        return PlanUpdate(
            completion=bool(doc.get("completion", False)),
            insert_intent=doc.get("insert_intent"),
            revised_pending=[str(r) for r in revised] if isinstance(revised, list) else None,
        )

    def select_plan_tools(self, plan, library) -> list[str]:
        doc = self._ask(
            "global",
            "Choose the fixed candidate tool names this dialogue plan needs from the "
            'library. Reply as JSON: {"tools": ["name", ...]}.',
            {"plan": plan.to_dict(), "library": library.names()},
        )
        tools = doc.get("tools")
        if not isinstance(tools, list):
            raise AgentFailure("global agent returned no tool list")
        return [str(t) for t in tools]
