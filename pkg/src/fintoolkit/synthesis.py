"""Closed-loop multi-turn dialogue synthesis with plan tracking and supervision.

One dialogue runs as a loop over plan rounds: the user agent proposes query
variants which pass a confusion test (pick the genuine user-style variant) and
a quality test (plan/behavior/persona/rule compliance); the assistant agent
acts against a freshly assembled candidate set under process analysis; tool
calls execute through the tool agent; and the global agent then revisits the
plan, inserting a responsive round when the assistant asked for clarification
or revising pending rounds on plan-fact conflict. Completed rounds are locked:
they never change across plan versions.

Rule pre-checks run before any supervision agent call: an action calling a
tool outside the candidate set, or omitting a required parameter, is rejected
deterministically at zero agent cost.

Trajectories that exhaust their retry budgets are discarded with a machine
reason rather than silently repaired, and discard accounting is part of the
synthesis report.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .agents import (
    AgentContracts,
    AgentFailure,
    AssistantAction,
    GlobalAgent,
    InvalidPlan,
    NoSelection,
    ToolExecutionError,
)
from .codec import ToolCall
from .gateway import GatewayError
from .graph import ToolGraph
from .index import Encoder, VectorIndex
from .jsonl import atomic_write_text, dumps_line, read_jsonl
from .registry import Library
from .retrieval import STATIC, CandidateSet, RetrievalConfig, assemble_candidates

PENDING = "pending"
COMPLETED = "completed"

ACCEPTED = "accepted"
DISCARDED = "discarded"

REASON_REFLECTION_LOOP = "reflection_loop"
REASON_EMPTY_TOOL_RESULT = "empty_tool_result"
REASON_ENTITY_HALLUCINATION = "entity_hallucination"
REASON_MAX_TURNS = "max_turns"
REASON_AGENT_FAILURE = "agent_failure"

DISCARD_REASONS = (
    REASON_REFLECTION_LOOP,
    REASON_EMPTY_TOOL_RESULT,
    REASON_ENTITY_HALLUCINATION,
    REASON_MAX_TURNS,
    REASON_AGENT_FAILURE,
)


@dataclass(frozen=True)
class Persona:
    id: str
    basic_profile: dict
    financial_profile: dict

    def __post_init__(self) -> None:
        if not self.basic_profile or not self.financial_profile:
            raise ValueError("persona profiles must be non-empty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "basic_profile": dict(self.basic_profile),
            "financial_profile": dict(self.financial_profile),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Persona":
        return cls(doc["id"], dict(doc["basic_profile"]), dict(doc["financial_profile"]))


@dataclass(frozen=True)
class SeedInstruction:
    text: str
    persona_id: str
    context_ref: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("seed instruction text must be non-empty")

    def to_dict(self) -> dict:
        return {"text": self.text, "persona_id": self.persona_id, "context_ref": self.context_ref}

    @classmethod
    def from_dict(cls, doc: dict) -> "SeedInstruction":
        return cls(doc["text"], doc["persona_id"], doc.get("context_ref", ""))


@dataclass(frozen=True)
class PlanRound:
    intent: str
    status: str = PENDING
    inserted: bool = False

    def to_dict(self) -> dict:
        return {"intent": self.intent, "status": self.status, "inserted": self.inserted}


@dataclass(frozen=True)
class DialoguePlan:
    """Immutable plan snapshot; structural changes produce a new version."""

    rounds: tuple[PlanRound, ...]
    version: int = 0
    completion_flag: bool = False

    def current_round(self) -> tuple[int, PlanRound] | None:
        for i, rnd in enumerate(self.rounds):
            if rnd.status == PENDING:
                return i, rnd
        return None

    def mark_completed(self, index: int) -> "DialoguePlan":
        # Bookkeeping, not re-planning; the version is unchanged.
        rounds = list(self.rounds)
        rounds[index] = replace(rounds[index], status=COMPLETED)
        return replace(self, rounds=tuple(rounds))

    def insert_round(self, intent: str) -> "DialoguePlan":
        """Responsive insertion: a new pending round right after the completed prefix."""
        rounds = list(self.rounds)
        position = next(
            (i for i, rnd in enumerate(rounds) if rnd.status == PENDING), len(rounds)
        )
        rounds.insert(position, PlanRound(intent=intent, inserted=True))
        return replace(self, rounds=tuple(rounds), version=self.version + 1)

    def revise_pending(self, intents: list[str]) -> "DialoguePlan":
        """Plan-fact conflict re-planning: pending rounds replaced, history locked."""
        completed = [rnd for rnd in self.rounds if rnd.status == COMPLETED]
        rounds = completed + [PlanRound(intent=i) for i in intents]
        return replace(self, rounds=tuple(rounds), version=self.version + 1)

    def finish(self) -> "DialoguePlan":
        return replace(self, completion_flag=True)

    def to_dict(self) -> dict:
        return {
            "rounds": [rnd.to_dict() for rnd in self.rounds],
            "version": self.version,
            "completion_flag": self.completion_flag,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DialoguePlan":
        return cls(
            rounds=tuple(
                PlanRound(r["intent"], r.get("status", PENDING), r.get("inserted", False))
                for r in doc["rounds"]
            ),
            version=doc.get("version", 0),
            completion_flag=doc.get("completion_flag", False),
        )


@dataclass
class Turn:
    role: str  # user | assistant | tool
    content: str = ""
    tool_calls: list[ToolCall] | None = None
    tool_name: str | None = None
    candidates: dict | None = None  # CandidateSet snapshot on assistant turns
    verdicts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc: dict = {"role": self.role, "content": self.content}
        if self.tool_calls is not None:
            doc["tool_calls"] = [c.to_dict() for c in self.tool_calls]
        if self.tool_name is not None:
            doc["tool_name"] = self.tool_name
        if self.candidates is not None:
            doc["candidates"] = self.candidates
        if self.verdicts:
            doc["verdicts"] = self.verdicts
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Turn":
        return cls(
            role=doc["role"],
            content=doc.get("content", ""),
            tool_calls=[ToolCall.from_dict(c) for c in doc["tool_calls"]]
            if "tool_calls" in doc
            else None,
            tool_name=doc.get("tool_name"),
            candidates=doc.get("candidates"),
            verdicts=list(doc.get("verdicts", [])),
        )


@dataclass
class DialogueTrajectory:
    persona_id: str
    turns: list[Turn]
    plan_history: list[DialoguePlan]
    status: str
    discard_reason: str | None = None
    seed: int | None = None
    retrieval_mode: str = ""

    def to_dict(self) -> dict:
        return {
            "persona_id": self.persona_id,
            "status": self.status,
            "discard_reason": self.discard_reason,
            "seed": self.seed,
            "retrieval_mode": self.retrieval_mode,
            "turns": [t.to_dict() for t in self.turns],
            "plan_history": [p.to_dict() for p in self.plan_history],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DialogueTrajectory":
        return cls(
            persona_id=doc["persona_id"],
            turns=[Turn.from_dict(t) for t in doc.get("turns", [])],
            plan_history=[DialoguePlan.from_dict(p) for p in doc.get("plan_history", [])],
            status=doc["status"],
            discard_reason=doc.get("discard_reason"),
            seed=doc.get("seed"),
            retrieval_mode=doc.get("retrieval_mode", ""),
        )


class TrajectoryInvalid(ValueError):
    pass


def validate_trajectory(traj: DialogueTrajectory) -> None:
    """Check role alternation, candidate grounding, and plan-history invariants."""
    turns = traj.turns
    i = 0
    expect = "user"
    while i < len(turns):
        turn = turns[i]
        if expect == "user":
            if turn.role != "user":
                raise TrajectoryInvalid(f"turn {i}: expected user, got {turn.role}")
            expect = "assistant"
            i += 1
            continue
        if turn.role != "assistant":
            raise TrajectoryInvalid(f"turn {i}: expected assistant, got {turn.role}")
        if turn.tool_calls:
            snapshot = {t["name"] for t in (turn.candidates or {}).get("tools", [])}
            for call in turn.tool_calls:
                if call.tool_name not in snapshot:
                    raise TrajectoryInvalid(
                        f"turn {i}: call to {call.tool_name!r} outside candidate snapshot"
                    )
            n_calls = len(turn.tool_calls)
            for j in range(n_calls):
                k = i + 1 + j
                if k >= len(turns) or turns[k].role != "tool":
                    raise TrajectoryInvalid(f"turn {i}: expected {n_calls} tool turns after it")
            i += 1 + n_calls
            expect = "assistant_after_tools"
            continue
        expect = "user"
        i += 1
    if expect == "assistant":
        raise TrajectoryInvalid("trajectory ends on a user turn")
    if expect == "assistant_after_tools":
        raise TrajectoryInvalid("trajectory ends on a tool turn")

    versions = [p.version for p in traj.plan_history]
    if versions and (versions[0] != 0 or any(b <= a for a, b in zip(versions, versions[1:]))):
        raise TrajectoryInvalid(f"plan versions not strictly increasing from 0: {versions}")
    for earlier, later in zip(traj.plan_history, traj.plan_history[1:]):
        done = [r.intent for r in earlier.rounds if r.status == COMPLETED]
        later_done = [r.intent for r in later.rounds if r.status == COMPLETED]
        if later_done[: len(done)] != done:
            raise TrajectoryInvalid("completed rounds were mutated across plan versions")


@dataclass(frozen=True)
class Budgets:
    per_turn_retries: int = 3
    max_turns: int = 12
    max_tool_rounds_per_turn: int = 8
    bypass_single_variant: bool = True

    def __post_init__(self) -> None:
        if self.per_turn_retries < 1 or self.max_turns < 1:
            raise ValueError("budgets must be positive")


@dataclass
class RetrievalEngines:
    library: Library
    index: VectorIndex | None = None
    graph: ToolGraph | None = None
    encoder: Encoder | None = None


def init_plan(
    seed: SeedInstruction, persona: Persona, context: str, global_agent: GlobalAgent
) -> DialoguePlan:
    """Ask the global agent for the version-0 plan; an empty plan is an error."""
    intents = global_agent.make_plan(seed, persona, context)
    if not intents:
        raise InvalidPlan("global agent produced a plan with zero rounds")
    return DialoguePlan(rounds=tuple(PlanRound(intent=i) for i in intents), version=0)


def confusion_test(
    variants: list[str],
    persona: Persona,
    global_agent: GlobalAgent,
    bypass_single: bool = False,
) -> int:
    """Pick the genuine user-style variant. A single variant may bypass the agent."""
    if len(variants) == 1 and bypass_single:
        return 0
    if len(variants) < 2:
        raise ValueError("confusion test needs at least two variants (or the bypass flag)")
    index = global_agent.select_query(variants, persona)
    if not 0 <= index < len(variants):
        raise NoSelection(f"selected index {index} out of range")
    return index


def quality_test(
    query: str,
    plan: DialoguePlan,
    persona: Persona,
    history: list[dict],
    global_agent: GlobalAgent,
) -> tuple[bool, list[str]]:
    passed, reasons = global_agent.check_quality(query, plan, persona, history)
    if not passed and not reasons:
        reasons = ["quality test failed"]
    return passed, reasons


def process_analysis(
    action: AssistantAction,
    candidates: CandidateSet,
    history: list[dict],
    global_agent: GlobalAgent,
) -> tuple[bool, str]:
    """Audit an assistant action; deterministic rule checks run before the agent.

    Calls to tools outside the candidate set and calls missing required
    parameters never reach the agent: they fail here, at zero agent cost.
    """
    for call in action.tool_calls:
        if call.tool_name not in candidates:
            return False, f"hallucination: {call.tool_name!r} is not in the candidate set"
        schema = candidates.get(call.tool_name).input_schema
        for required in schema.required:
            if required not in call.arguments:
                return False, (
                    f"missing required parameter {required!r} for {call.tool_name!r}"
                )
        for arg in call.arguments:
            if arg not in schema.properties:
                return False, f"unknown parameter {arg!r} for {call.tool_name!r}"
    return global_agent.analyze_process(action, candidates, history)


def update_plan(
    plan: DialoguePlan, latest_turns: list[dict], global_agent: GlobalAgent
) -> tuple[DialoguePlan, bool]:
    """Apply the global agent's plan decision under history locking.

    Returns ``(plan', completion)``; the version increments exactly when the
    round structure changed.
    """
    decision = global_agent.revise_plan(plan, latest_turns)
    updated = plan
    if decision.insert_intent is not None:
        updated = updated.insert_round(decision.insert_intent)
    if decision.revised_pending is not None:
        updated = updated.revise_pending(decision.revised_pending)
        if decision.insert_intent is not None:
            # Collapse double bump when both changes arrive in one decision.
            updated = replace(updated, version=plan.version + 1)
    if decision.completion:
        updated = updated.finish()
    return updated, decision.completion


def _history_view(turns: list[Turn]) -> list[dict]:
    return [t.to_dict() for t in turns]


def run_dialogue(
    seed: SeedInstruction,
    persona: Persona,
    agents: AgentContracts,
    config: RetrievalConfig,
    engines: RetrievalEngines,
    budgets: Budgets = Budgets(),
    context: str = "",
    dialogue_seed: int = 0,
) -> DialogueTrajectory:
    """Synthesize one supervised dialogue; never raises on agent trouble.

    The returned trajectory is ``accepted`` when the global agent signals plan
    completion, otherwise ``discarded`` with one of the machine reasons.
    """
    rng = random.Random(dialogue_seed)
    turns: list[Turn] = []
    plan_history: list[DialoguePlan] = []

    def finish(status: str, reason: str | None = None) -> DialogueTrajectory:
        return DialogueTrajectory(
            persona_id=persona.id,
            turns=turns,
            plan_history=plan_history,
            status=status,
            discard_reason=reason,
            seed=dialogue_seed,
            retrieval_mode=config.mode,
        )

    try:
        plan = init_plan(seed, persona, context, agents.global_agent)
        plan_history.append(plan)
        plan_tools = (
            agents.global_agent.select_plan_tools(plan, engines.library)
            if config.mode == STATIC
            else None
        )

        for _ in range(budgets.max_turns):
            current = plan.current_round()
            if current is None:
                # Plan exhausted without an explicit completion signal.
                return finish(ACCEPTED)
            round_index, round_ = current
            round_start = len(turns)

            # --- user turn under confusion + quality supervision ---
            query = None
            user_verdicts: list[dict] = []
            for attempt in range(1, budgets.per_turn_retries + 1):
                variants = agents.user_agent.propose_queries(
                    persona, round_.intent, _history_view(turns)
                )
                try:
                    if agents.discriminator is not None and agents.exemplars:
                        # Adversarial filter against real exemplars, when wired.
                        selected = agents.discriminator.select(variants, agents.exemplars)
                        if not 0 <= selected < len(variants):
                            raise NoSelection(f"discriminator index {selected} out of range")
                    else:
                        selected = confusion_test(
                            variants, persona, agents.global_agent,
                            bypass_single=budgets.bypass_single_variant,
                        )
                except NoSelection as exc:
                    user_verdicts.append(
                        {"stage": "confusion", "attempt": attempt, "error": str(exc)}
                    )
                    continue
                candidate_query = variants[selected]
                user_verdicts.append(
                    {"stage": "confusion", "attempt": attempt, "selected": selected}
                )
                ok, reasons = quality_test(
                    candidate_query, plan, persona, _history_view(turns), agents.global_agent
                )
                user_verdicts.append(
                    {"stage": "quality", "attempt": attempt, "pass": ok, "reasons": reasons}
                )
                if ok:
                    query = candidate_query
                    break
            if query is None:
                return finish(DISCARDED, REASON_REFLECTION_LOOP)
            turns.append(Turn(role="user", content=query, verdicts=user_verdicts))

            # --- assistant phase: tool chain until a text reply ---
            answered = False
            for _tool_round in range(budgets.max_tool_rounds_per_turn):
                candidates = assemble_candidates(
                    config,
                    _history_view(turns),
                    plan_tools=plan_tools,
                    index=engines.index,
                    graph=engines.graph,
                    library=engines.library,
                    encoder=engines.encoder,
                    turn_index=round_index,
                )
                action = None
                action_verdicts: list[dict] = []
                feedback: str | None = None
                failure_kind = REASON_REFLECTION_LOOP
                executed: list[tuple[ToolCall, str]] = []
                for attempt in range(1, budgets.per_turn_retries + 1):
                    proposal = agents.assistant_agent.act(
                        _history_view(turns), candidates, feedback
                    )
                    ok, diagnosis = process_analysis(
                        proposal, candidates, _history_view(turns), agents.global_agent
                    )
                    action_verdicts.append(
                        {"stage": "process", "attempt": attempt, "pass": ok,
                         "diagnosis": diagnosis}
                    )
                    if not ok:
                        feedback = diagnosis
                        failure_kind = REASON_REFLECTION_LOOP
                        continue
                    if not proposal.is_tool_call:
                        action = proposal
                        break
                    executed = []
                    failed = None
                    for call in proposal.tool_calls:
                        try:
                            result = agents.tool_agent.execute(call, rng)
                        except ToolExecutionError as exc:
                            failed = (REASON_ENTITY_HALLUCINATION, str(exc))
                            break
                        if not result.strip():
                            failed = (
                                REASON_EMPTY_TOOL_RESULT,
                                f"{call.tool_name} returned empty data",
                            )
                            break
                        executed.append((call, result))
                    if failed is None:
                        action = proposal
                        break
                    failure_kind, feedback = failed
                    action_verdicts.append(
                        {"stage": "execution", "attempt": attempt, "pass": False,
                         "diagnosis": feedback}
                    )
                if action is None:
                    return finish(DISCARDED, failure_kind)

                if action.is_tool_call:
                    turns.append(
                        Turn(
                            role="assistant",
                            tool_calls=list(action.tool_calls),
                            candidates=candidates.to_dict(),
                            verdicts=action_verdicts,
                        )
                    )
                    for call, result in executed:
                        turns.append(Turn(role="tool", content=result, tool_name=call.tool_name))
                    continue
                turns.append(
                    Turn(
                        role="assistant",
                        content=action.text,
                        candidates=candidates.to_dict(),
                        verdicts=action_verdicts,
                    )
                )
                answered = True
                break
            if not answered:
                return finish(DISCARDED, REASON_REFLECTION_LOOP)

            # --- close the round and let the global agent revisit the plan ---
            plan = plan.mark_completed(round_index)
            plan, completion = update_plan(
                plan, _history_view(turns[round_start:]), agents.global_agent
            )
            if plan.version != plan_history[-1].version:
                plan_history.append(plan)
            if completion:
                return finish(ACCEPTED)
        return finish(DISCARDED, REASON_MAX_TURNS)
    except (AgentFailure, GatewayError):
        return finish(DISCARDED, REASON_AGENT_FAILURE)


def synthesis_stats(trajectories: list[DialogueTrajectory]) -> dict:
    """Discard accounting over a batch of trajectories."""
    total = len(trajectories)
    accepted = [t for t in trajectories if t.status == ACCEPTED]
    discarded = [t for t in trajectories if t.status == DISCARDED]
    by_reason: dict[str, int] = {}
    for t in discarded:
        reason = t.discard_reason or "unknown"
        by_reason[reason] = by_reason.get(reason, 0) + 1
    avg_turns = (
        round(sum(len(t.turns) for t in accepted) / len(accepted), 2) if accepted else 0.0
    )
    return {
        "total": total,
        "accepted": len(accepted),
        "discarded": len(discarded),
        "discarded_by_reason": dict(sorted(by_reason.items())),
        "discard_rate": (len(discarded) / total) if total else 0.0,
        "avg_turns": avg_turns,
        "empty": total == 0,
    }


def synthesize_many(
    jobs: list[tuple[SeedInstruction, Persona]],
    agents_factory: Callable[[int], AgentContracts],
    config: RetrievalConfig,
    engines: RetrievalEngines,
    budgets: Budgets = Budgets(),
    base_seed: int = 0,
    workers: int = 1,
) -> list[DialogueTrajectory]:
    """Run many dialogues with a bounded worker pool; results keep job order.

    Each dialogue gets its own agent set (from ``agents_factory``) and a
    deterministic seed derived from ``base_seed`` and its position, so runs
    are reproducible regardless of worker count.
    """

    def one(i: int) -> DialogueTrajectory:
        seed_instruction, persona = jobs[i]
        return run_dialogue(
            seed_instruction,
            persona,
            agents_factory(i),
            config,
            engines,
            budgets,
            dialogue_seed=base_seed + i,
        )

    if workers <= 1:
        return [one(i) for i in range(len(jobs))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(jobs))))


def save_trajectories(path: str | Path, trajectories: list[DialogueTrajectory]) -> None:
    atomic_write_text(path, "".join(dumps_line(t.to_dict()) + "\n" for t in trajectories))


def load_trajectories(path: str | Path) -> list[DialogueTrajectory]:
    return [DialogueTrajectory.from_dict(doc) for doc in read_jsonl(path)]


def load_personas(path: str | Path) -> dict[str, Persona]:
    personas = [Persona.from_dict(doc) for doc in read_jsonl(path)]
    out: dict[str, Persona] = {}
    for p in personas:
        if p.id in out:
            raise ValueError(f"duplicate persona id {p.id!r}")
        out[p.id] = p
    return out


def load_seeds(path: str | Path) -> list[SeedInstruction]:
    return [SeedInstruction.from_dict(doc) for doc in read_jsonl(path)]
