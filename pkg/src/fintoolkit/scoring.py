"""Circuit-breaker weighted scoring of tool-calling predictions.

Scoring cascades from hard rule checks to judge-based soft evaluation, failing
fast: a format error, a hallucinated tool name, or a schema violation zeroes
the turn before any judge call is spent. Soft evaluation then scores tool
selection (``k``) and, per invoked tool, parameter-structure and per-value
quality; a selection score of zero is a logical break that also zeroes the
turn. Aggregation is hierarchical::

    tool score   s_i    = structure_weight * x_i + value_weight * mean(y_ij)
                          (just x_i when the call has no arguments)
    execution    S_exec = mean(s_i)
    turn         S_turn = (selection_weight * k + execution_weight * S_exec) * 10
    instance     S_tc   = mean over gold turns of S_turn

Arithmetic runs on exact rationals so decimal weights aggregate without float
drift; scores convert to floats only at the reporting boundary.

Non-tool-call instances score 100 for a clean text reply (clarification
replies additionally need judge-confirmed intent) and 0 the moment any tool
call appears. Two domain metrics ride along: key-digit accuracy (exact match
on designated critical argument values) and invocation-timing accuracy
(annotated prerequisite orderings respected in the flattened call sequence).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from string import Template
from typing import Protocol

from .codec import ToolCall, load_asset, parse_tool_calls
from .gateway import GatewayError
from .registry import _JSON_TYPE_CHECKS, Library, ToolSpec, parse_tool_spec
from .jsonl import dumps_line

# Breaker reasons, in check order.
FORMAT_ERROR = "FormatError"
TOOL_HALLUCINATION = "ToolHallucination"
PARAM_SCHEMA_VIOLATION = "ParamSchemaViolation"

TOOL_CALL = "tool_call"
NON_TOOL = "non_tool"

CONFIGS = ("ST-SC", "ST-MC", "MT-SC", "MT-MC")
PATTERNS = ("single", "parallel", "serial")
NON_TOOL_CATEGORIES = ("UD", "CI", "DR")

SELECTION_TEMPLATE_ASSET = "judge_tool_selection.txt"
PARAMETER_TEMPLATE_ASSET = "judge_parameter_eval.txt"
CLARIFICATION_TEMPLATE_ASSET = "judge_clarification_intent.txt"


class UnscoredInstance(RuntimeError):
    """The judge never produced usable output; the instance is excluded from means."""


def _fraction(value: int | float | str | Fraction) -> Fraction:
    # Decimal text round-trips keep judge scores like 8.3 exact.
    if isinstance(value, Fraction):
        return value
    return Fraction(str(value))


@dataclass(frozen=True)
class Weights:
    """Aggregation weights; value/structure and execution/selection each sum to 1."""

    value_weight: Fraction = Fraction(7, 10)
    structure_weight: Fraction = Fraction(3, 10)
    execution_weight: Fraction = Fraction(3, 5)
    selection_weight: Fraction = Fraction(2, 5)

    def __post_init__(self) -> None:
        if self.value_weight + self.structure_weight != 1:
            raise ValueError("value_weight + structure_weight must equal 1")
        if self.execution_weight + self.selection_weight != 1:
            raise ValueError("execution_weight + selection_weight must equal 1")

    @classmethod
    def from_floats(cls, value: float = 0.7, structure: float = 0.3,
                    execution: float = 0.6, selection: float = 0.4) -> "Weights":
        return cls(
            value_weight=_fraction(value),
            structure_weight=_fraction(structure),
            execution_weight=_fraction(execution),
            selection_weight=_fraction(selection),
        )


@dataclass(frozen=True)
class KdaField:
    turn: int
    tool: str
    param: str  # dotted path into the arguments object

    def to_dict(self) -> dict:
        return {"turn": self.turn, "tool": self.tool, "param": self.param}


@dataclass(frozen=True)
class InstanceClass:
    kind: str  # tool_call | non_tool
    config: str | None = None  # ST-SC | ST-MC | MT-SC | MT-MC
    pattern: str | None = None  # single | parallel | serial
    category: str | None = None  # UD | CI | DR

    def __post_init__(self) -> None:
        if self.kind == TOOL_CALL:
            if self.config not in CONFIGS:
                raise ValueError(f"tool_call instance needs a config from {CONFIGS}")
            if self.pattern not in PATTERNS:
                raise ValueError(f"tool_call instance needs a pattern from {PATTERNS}")
        elif self.kind == NON_TOOL:
            if self.category not in NON_TOOL_CATEGORIES:
                raise ValueError(f"non_tool instance needs a category from {NON_TOOL_CATEGORIES}")
        else:
            raise ValueError(f"unknown instance kind {self.kind!r}")

    @property
    def label(self) -> str:
        return self.config if self.kind == TOOL_CALL else self.category  # type: ignore[return-value]

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.config:
            doc["config"] = self.config
        if self.pattern:
            doc["pattern"] = self.pattern
        if self.category:
            doc["category"] = self.category
        return doc


@dataclass
class EvalInstance:
    """One benchmark item: context, candidates, gold actions, and annotations."""

    id: str
    klass: InstanceClass
    candidates: list[ToolSpec]
    history: list[dict] = field(default_factory=list)
    gold_turns: list[list[ToolCall]] = field(default_factory=list)
    mode: str = "fc"
    kda_fields: list[KdaField] = field(default_factory=list)
    ita_constraints: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.klass.kind == TOOL_CALL:
            if not self.gold_turns:
                raise ValueError(f"{self.id}: tool_call instance needs at least one gold turn")
            if self.klass.pattern == "serial" and len(self.gold_turns) < 2:
                raise ValueError(f"{self.id}: serial pattern implies more than one gold turn")
        gold_tools = {c.tool_name for turn in self.gold_turns for c in turn}
        for kf in self.kda_fields:
            if not 0 <= kf.turn < len(self.gold_turns):
                raise ValueError(f"{self.id}: kda field references missing turn {kf.turn}")
            if self._gold_value(kf) is _MISSING:
                raise ValueError(f"{self.id}: kda field {kf} not present in gold")
        for prereq, dependent in self.ita_constraints:
            if prereq not in gold_tools or dependent not in gold_tools:
                raise ValueError(f"{self.id}: ita constraint ({prereq}, {dependent}) not in gold tools")

    @property
    def turn_count(self) -> int:
        return len(self.gold_turns)

    def _gold_value(self, kf: KdaField):
        for call in self.gold_turns[kf.turn]:
            if call.tool_name == kf.tool:
                return _dig(call.arguments, kf.param)
        return _MISSING

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            "klass": self.klass.to_dict(),
            "history": list(self.history),
            "candidates": [t.to_dict() for t in self.candidates],
            "gold_turns": [[c.to_dict() for c in turn] for turn in self.gold_turns],
            "kda_fields": [kf.to_dict() for kf in self.kda_fields],
            "ita_constraints": [list(pair) for pair in self.ita_constraints],
        }

    @classmethod
    def from_dict(cls, doc: dict, library: Library | None = None) -> "EvalInstance":
        klass_doc = doc["klass"]
        candidates: list[ToolSpec] = []
        for entry in doc.get("candidates", []):
            if isinstance(entry, str):
                if library is None:
                    raise ValueError(f"{doc.get('id')}: named candidate {entry!r} needs a library")
                candidates.append(library.get(entry))
            else:
                candidates.append(parse_tool_spec(dumps_line(entry)))
        return cls(
            id=doc["id"],
            klass=InstanceClass(
                kind=klass_doc["kind"],
                config=klass_doc.get("config"),
                pattern=klass_doc.get("pattern"),
                category=klass_doc.get("category"),
            ),
            candidates=candidates,
            history=list(doc.get("history", [])),
            gold_turns=[
                [ToolCall.from_dict(c) for c in turn] for turn in doc.get("gold_turns", [])
            ],
            mode=doc.get("mode", "fc"),
            kda_fields=[
                KdaField(f["turn"], f["tool"], f["param"]) for f in doc.get("kda_fields", [])
            ],
            ita_constraints=[tuple(p) for p in doc.get("ita_constraints", [])],
        )


_MISSING = object()


def _dig(obj, path: str):
    current = obj
    for part in path.split("."):
        if not isinstance(current, dict) or part not in current:
            return _MISSING
        current = current[part]
    return current


# ---------------------------------------------------------------------------
# Phase 1: rule circuit breaker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BreakerVerdict:
    passed: bool
    reason: str | None = None
    detail: str = ""
    calls: tuple[ToolCall, ...] = ()


def rule_circuit_breaker(
    pred_turn: list[ToolCall] | str,
    candidates: list[ToolSpec],
    mode: str = "fc",
) -> BreakerVerdict:
    """Hard checks in fixed order; the first failure wins.

    1. a parseable tool-call structure is present,
    2. every invoked tool name exists among the candidates,
    3. required parameters are present, names match the schema, and values
       satisfy type and enum constraints.
    """
    if isinstance(pred_turn, str):
        parsed = parse_tool_calls(pred_turn, mode)
        if parsed.kind == "error":
            return BreakerVerdict(False, FORMAT_ERROR,
                                  f"parse error at {parsed.position}: {parsed.reason}")
        if parsed.kind == "no_call":
            return BreakerVerdict(False, FORMAT_ERROR, "no tool call present")
        calls = list(parsed.calls)
    else:
        calls = list(pred_turn)
    if not calls:
        return BreakerVerdict(False, FORMAT_ERROR, "no tool call present")

    by_name = {t.name: t for t in candidates}
    for call in calls:
        if call.tool_name not in by_name:
            return BreakerVerdict(False, TOOL_HALLUCINATION,
                                  f"{call.tool_name!r} not in candidate set")
    for call in calls:
        schema = by_name[call.tool_name].input_schema
        for required in schema.required:
            if required not in call.arguments:
                return BreakerVerdict(
                    False, PARAM_SCHEMA_VIOLATION,
                    f"{call.tool_name}: required parameter {required!r} missing")
        for arg_name, value in call.arguments.items():
            pdef = schema.properties.get(arg_name)
            if pdef is None:
                return BreakerVerdict(
                    False, PARAM_SCHEMA_VIOLATION,
                    f"{call.tool_name}: unknown parameter {arg_name!r}")
            ptype = pdef.get("type")
            if ptype in _JSON_TYPE_CHECKS and not _JSON_TYPE_CHECKS[ptype](value):
                return BreakerVerdict(
                    False, PARAM_SCHEMA_VIOLATION,
                    f"{call.tool_name}.{arg_name}: value {value!r} is not of type {ptype}")
            enum = pdef.get("enum")
            if enum is not None and value not in enum:
                return BreakerVerdict(
                    False, PARAM_SCHEMA_VIOLATION,
                    f"{call.tool_name}.{arg_name}: {value!r} not in enum {enum}")
    return BreakerVerdict(True, calls=tuple(calls))


# ---------------------------------------------------------------------------
# Phase 2: judge-based soft evaluation
# ---------------------------------------------------------------------------


class JudgeClient(Protocol):
    """Plain text-in/text-out judge endpoint (gateway- or script-backed)."""

    def complete(self, prompt: str) -> str: ...


class TurnJudge(Protocol):
    """Typed judge surface the scorer consumes."""

    def selection_score(self, history: list[dict], candidates: list[ToolSpec],
                        gold: list[ToolCall], pred: list[ToolCall]) -> Fraction: ...

    def parameter_scores(self, history: list[dict], candidates: list[ToolSpec],
                         gold: list[ToolCall], pred: list[ToolCall]) -> list[dict]: ...

    def clarification_intent(self, response_text: str) -> bool: ...


def _check_score(value, what: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, float, str, Fraction)):
        raise ValueError(f"{what} is not a number: {value!r}")
    try:
        score = _fraction(value)
    except ValueError as exc:
        raise ValueError(f"{what} is not a number: {value!r}") from exc
    if not 0 <= score <= 10:
        raise ValueError(f"{what} out of range [0, 10]: {value!r}")
    return score


_BOXED_RE = re.compile(r"\\boxed\{\s*(true|false)\s*\}", re.IGNORECASE)


class PromptedJudge:
    """Judge that renders prompt templates and parses structured replies.

    Malformed output gets exactly one re-ask; a second failure raises
    :class:`UnscoredInstance` so the caller can exclude the instance instead
    of silently zeroing it.
    """

    def __init__(self, client: JudgeClient,
                 selection_template: str | None = None,
                 parameter_template: str | None = None,
                 clarification_template: str | None = None):
        self.client = client
        self.selection_template = selection_template or load_asset(SELECTION_TEMPLATE_ASSET)
        self.parameter_template = parameter_template or load_asset(PARAMETER_TEMPLATE_ASSET)
        self.clarification_template = clarification_template or load_asset(
            CLARIFICATION_TEMPLATE_ASSET)

    def _ask(self, prompt: str, parse, what: str):
        for attempt in range(2):
            text = self.client.complete(prompt)
            try:
                return parse(text)
            except (ValueError, KeyError, TypeError) as exc:
                error = exc
                prompt = (prompt + "\n\nYour previous reply could not be parsed "
                          f"({exc}). Answer again, following the output format exactly.")
        raise UnscoredInstance(f"judge output unusable for {what}: {error}")

    @staticmethod
    def _json(text: str) -> dict:
        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            raise ValueError("no JSON object in reply")
        return json.loads(text[start:end + 1])

    def _render(self, template: str, history, candidates, gold, pred) -> str:
        return Template(template).substitute(
            conversation_history=json.dumps(history, ensure_ascii=False, indent=2),
            candidate_tools=json.dumps([t.to_dict() for t in candidates],
                                       ensure_ascii=False, indent=2),
            reference_tools=json.dumps([c.to_dict() for c in gold],
                                       ensure_ascii=False, indent=2),
            model_prediction=json.dumps([c.to_dict() for c in pred],
                                        ensure_ascii=False, indent=2),
        )

    def selection_score(self, history, candidates, gold, pred) -> Fraction:
        prompt = self._render(self.selection_template, history, candidates, gold, pred)

        def parse(text: str) -> Fraction:
            return _check_score(self._json(text)["score"], "selection score")

        return self._ask(prompt, parse, "tool selection")

    def parameter_scores(self, history, candidates, gold, pred) -> list[dict]:
        prompt = self._render(self.parameter_template, history, candidates, gold, pred)

        def parse(text: str) -> list[dict]:
            rows = self._json(text)["detailed_scores"]
            if not isinstance(rows, list) or len(rows) != len(pred):
                raise ValueError(
                    f"detailed_scores length {len(rows) if isinstance(rows, list) else '??'} "
                    f"!= {len(pred)} predicted calls")
            out = []
            for i, row in enumerate(rows):
                structure = _check_score(row["part_a_structure_score"],
                                         f"structure score [{i}]")
                values = {
                    str(k): _check_score(v, f"value score [{i}].{k}")
                    for k, v in dict(row.get("part_b_value_scores", {})).items()
                }
                out.append({"structure": structure, "values": values})
            return out

        return self._ask(prompt, parse, "parameter evaluation")

    def clarification_intent(self, response_text: str) -> bool:
        prompt = Template(self.clarification_template).substitute(
            test_model_response=response_text)

        def parse(text: str) -> bool:
            matches = _BOXED_RE.findall(text)
            if not matches:
                raise ValueError("no boxed true/false conclusion")
            return matches[-1].lower() == "true"

        return self._ask(prompt, parse, "clarification intent")


class HeuristicJudge:
    """Deterministic offline judge comparing predictions against gold.

    A surrogate for scoring without an LLM endpoint: selection is the overlap
    of predicted and gold tool sets on a 0-10 scale, parameter structure
    compares argument name sets, and values get full credit on exact match.
    """

    def selection_score(self, history, candidates, gold, pred) -> Fraction:
        gold_names = {c.tool_name for c in gold}
        pred_names = {c.tool_name for c in pred}
        if not pred_names or not gold_names & pred_names:
            return Fraction(0)
        return Fraction(10 * len(gold_names & pred_names), len(gold_names | pred_names))

    def parameter_scores(self, history, candidates, gold, pred) -> list[dict]:
        gold_by_name: dict[str, ToolCall] = {}
        for call in gold:
            gold_by_name.setdefault(call.tool_name, call)
        rows = []
        for call in pred:
            reference = gold_by_name.get(call.tool_name)
            if reference is None:
                rows.append({"structure": Fraction(0),
                             "values": {k: Fraction(0) for k in call.arguments}})
                continue
            structure = Fraction(10) if set(call.arguments) == set(reference.arguments) \
                else Fraction(7)
            values = {
                k: Fraction(10) if _normalize_value(v) == _normalize_value(
                    reference.arguments.get(k, _MISSING)) else Fraction(0)
                for k, v in call.arguments.items()
            }
            rows.append({"structure": structure, "values": values})
        return rows

    def clarification_intent(self, response_text: str) -> bool:
        return "?" in response_text


# ---------------------------------------------------------------------------
# Hierarchical aggregation
# ---------------------------------------------------------------------------


@dataclass
class ToolScore:
    tool_name: str
    structure_score: float
    value_scores: list[float]
    value_mean: float | None
    execution_score: float


@dataclass
class TurnScoreBreakdown:
    rule_pass: bool
    breaker_reason: str | None = None
    breaker_detail: str = ""
    selection_score: float | None = None
    tools: list[ToolScore] = field(default_factory=list)
    exec_score: float | None = None
    turn_score: float = 0.0
    exact: Fraction = Fraction(0)

    def to_dict(self) -> dict:
        return {
            "rule_pass": self.rule_pass,
            "breaker_reason": self.breaker_reason,
            "breaker_detail": self.breaker_detail,
            "selection_score": self.selection_score,
            "tools": [
                {
                    "tool_name": t.tool_name,
                    "structure_score": t.structure_score,
                    "value_scores": t.value_scores,
                    "value_mean": t.value_mean,
                    "execution_score": t.execution_score,
                }
                for t in self.tools
            ],
            "exec_score": self.exec_score,
            "turn_score": self.turn_score,
        }


def score_tool_call_turn(
    pred_turn: list[ToolCall] | str,
    gold_turn: list[ToolCall],
    candidates: list[ToolSpec],
    judge: TurnJudge,
    weights: Weights = Weights(),
    history: list[dict] | None = None,
    mode: str = "fc",
) -> TurnScoreBreakdown:
    """Score one turn; the judge is only consulted after the breaker passes."""
    history = history or []
    verdict = rule_circuit_breaker(pred_turn, candidates, mode)
    if not verdict.passed:
        return TurnScoreBreakdown(rule_pass=False, breaker_reason=verdict.reason,
                                  breaker_detail=verdict.detail)
    calls = list(verdict.calls)

    selection = _check_score(
        judge.selection_score(history, candidates, gold_turn, calls), "selection score")
    if selection == 0:
        # Logical circuit break: the tool combination misses the intent outright.
        return TurnScoreBreakdown(rule_pass=True, selection_score=0.0, turn_score=0.0)

    rows = judge.parameter_scores(history, candidates, gold_turn, calls)
    if len(rows) != len(calls):
        raise UnscoredInstance(f"judge scored {len(rows)} calls, expected {len(calls)}")
    tool_scores: list[ToolScore] = []
    per_tool_exact: list[Fraction] = []
    for call, row in zip(calls, rows):
        structure = _check_score(row["structure"], "structure score")
        values = {k: _check_score(v, f"value score {k}") for k, v in row["values"].items()}
        if values:
            value_mean = sum(values.values(), Fraction(0)) / len(values)
            tool_exact = weights.structure_weight * structure + weights.value_weight * value_mean
        else:
            value_mean = None
            tool_exact = structure
        per_tool_exact.append(tool_exact)
        tool_scores.append(
            ToolScore(
                tool_name=call.tool_name,
                structure_score=float(structure),
                value_scores=[float(v) for v in values.values()],
                value_mean=None if value_mean is None else float(value_mean),
                execution_score=float(tool_exact),
            )
        )
    exec_exact = sum(per_tool_exact, Fraction(0)) / len(per_tool_exact)
    turn_exact = (weights.selection_weight * selection
                  + weights.execution_weight * exec_exact) * 10
    return TurnScoreBreakdown(
        rule_pass=True,
        selection_score=float(selection),
        tools=tool_scores,
        exec_score=float(exec_exact),
        turn_score=float(turn_exact),
        exact=turn_exact,
    )


def score_tool_call_instance(
    instance: EvalInstance,
    pred_turns: list[list[ToolCall] | str],
    judge: TurnJudge,
    weights: Weights = Weights(),
) -> tuple[float, list[TurnScoreBreakdown]]:
    """Mean turn score over the instance's gold turns; missing turns score 0."""
    breakdowns: list[TurnScoreBreakdown] = []
    total = Fraction(0)
    for t in range(instance.turn_count):
        if t < len(pred_turns):
            breakdown = score_tool_call_turn(
                pred_turns[t], instance.gold_turns[t], instance.candidates,
                judge, weights, history=instance.history, mode=instance.mode)
        else:
            breakdown = TurnScoreBreakdown(
                rule_pass=False, breaker_reason=FORMAT_ERROR,
                breaker_detail="missing predicted turn")
        breakdowns.append(breakdown)
        total += breakdown.exact
    return float(total / instance.turn_count), breakdowns


@dataclass
class NonToolScore:
    score: float
    predicted_calls: int
    format_error: bool = False
    intent_confirmed: bool | None = None

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "predicted_calls": self.predicted_calls,
            "format_error": self.format_error,
            "intent_confirmed": self.intent_confirmed,
        }


def score_non_tool_call(
    instance: EvalInstance, pred: str, judge: TurnJudge
) -> NonToolScore:
    """Strict rejection scoring: any tool call (even a broken one) zeroes the reply."""
    parsed = parse_tool_calls(pred, instance.mode)
    if parsed.kind == "error":
        return NonToolScore(score=0.0, predicted_calls=0, format_error=True)
    if parsed.kind == "calls":
        return NonToolScore(score=0.0, predicted_calls=len(parsed.calls))
    if instance.klass.category == "CI":
        confirmed = judge.clarification_intent(parsed.text)
        return NonToolScore(score=100.0 if confirmed else 0.0, predicted_calls=0,
                            intent_confirmed=confirmed)
    return NonToolScore(score=100.0, predicted_calls=0)


# ---------------------------------------------------------------------------
# Domain metrics
# ---------------------------------------------------------------------------


def _normalize_value(value):
    """Trim whitespace; numerics compare numerically; all else exact."""
    if value is _MISSING:
        return ("missing",)
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("number", float(value))
    if isinstance(value, str):
        return ("string", value.strip())
    return ("other", json.dumps(value, sort_keys=True, ensure_ascii=False))


def compute_kda(instance: EvalInstance, pred_turns: list[list[ToolCall]]) -> int | None:
    """1 iff every designated key-digit field matches gold exactly; None when unannotated."""
    if not instance.kda_fields:
        return None
    for kf in instance.kda_fields:
        gold_value = instance._gold_value(kf)
        predicted = _MISSING
        if kf.turn < len(pred_turns):
            for call in pred_turns[kf.turn]:
                if call.tool_name == kf.tool:
                    predicted = _dig(call.arguments, kf.param)
                    break
        if _normalize_value(predicted) != _normalize_value(gold_value):
            return 0
    return 1


def compute_ita(instance: EvalInstance, pred_turns: list[list[ToolCall]]) -> int | None:
    """1 iff every called dependent has its prerequisite strictly earlier; None when unannotated."""
    if not instance.ita_constraints:
        return None
    sequence = [call.tool_name for turn in pred_turns for call in turn]
    for prereq, dependent in instance.ita_constraints:
        for position, name in enumerate(sequence):
            if name == dependent:
                if prereq not in sequence[:position]:
                    return 0
    return 1


# ---------------------------------------------------------------------------
# Instance scoring and report aggregation
# ---------------------------------------------------------------------------


@dataclass
class InstanceResult:
    instance_id: str
    label: str
    scored: bool
    score: float | None = None
    turns: list[TurnScoreBreakdown] = field(default_factory=list)
    non_tool: NonToolScore | None = None
    kda: int | None = None
    ita: int | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.instance_id,
            "label": self.label,
            "scored": self.scored,
            "score": self.score,
            "turns": [t.to_dict() for t in self.turns] or None,
            "non_tool": self.non_tool.to_dict() if self.non_tool else None,
            "kda": self.kda,
            "ita": self.ita,
            "error": self.error,
        }


def _parsed_view(instance: EvalInstance, pred_turns: list[list[ToolCall] | str]) -> list[list[ToolCall]]:
    view: list[list[ToolCall]] = []
    for turn in pred_turns:
        if isinstance(turn, str):
            parsed = parse_tool_calls(turn, instance.mode)
            view.append(list(parsed.calls) if parsed.kind == "calls" else [])
        else:
            view.append(list(turn))
    return view


def score_instance(
    instance: EvalInstance,
    pred_turns: list[list[ToolCall] | str],
    judge: TurnJudge,
    weights: Weights = Weights(),
) -> InstanceResult:
    """Score one instance end to end, branching on its class."""
    result = InstanceResult(instance_id=instance.id, label=instance.klass.label, scored=True)
    try:
        if instance.klass.kind == TOOL_CALL:
            score, breakdowns = score_tool_call_instance(instance, pred_turns, judge, weights)
            result.score = score
            result.turns = breakdowns
        else:
            raw = pred_turns[0] if pred_turns else ""
            if isinstance(raw, str):
                non_tool = score_non_tool_call(instance, raw, judge)
            elif raw:  # pre-parsed calls: strict rejection
                non_tool = NonToolScore(score=0.0, predicted_calls=len(raw))
            else:
                non_tool = score_non_tool_call(instance, "", judge)
            result.score = non_tool.score
            result.non_tool = non_tool
        parsed = _parsed_view(instance, pred_turns)
        result.kda = compute_kda(instance, parsed)
        result.ita = compute_ita(instance, parsed)
    except (UnscoredInstance, GatewayError) as exc:
        return InstanceResult(instance_id=instance.id, label=instance.klass.label,
                              scored=False, error=str(exc))
    return result


def aggregate_report(results: list[InstanceResult]) -> dict:
    """Per-category means, domain metric rates, and the overall average.

    Unscored instances are excluded from every mean and counted separately.
    """
    scored = [r for r in results if r.scored]
    by_label: dict[str, list[float]] = {}
    for r in scored:
        by_label.setdefault(r.label, []).append(r.score or 0.0)

    def mean(values: list[float]) -> float | None:
        return sum(values) / len(values) if values else None

    categories = {}
    for label in (*CONFIGS, *NON_TOOL_CATEGORIES):
        values = by_label.get(label, [])
        categories[label] = {
            "mean": mean(values),
            "count": len(values),
        }
    kda_values = [r.kda for r in scored if r.kda is not None]
    ita_values = [r.ita for r in scored if r.ita is not None]
    overall = [r.score or 0.0 for r in scored]
    return {
        "total": len(results),
        "scored": len(scored),
        "unscored": len(results) - len(scored),
        "categories": categories,
        "kda_pct": 100.0 * mean(kda_values) if kda_values else None,
        "ita_pct": 100.0 * mean(ita_values) if ita_values else None,
        "overall_mean": mean(overall),
    }


def render_report_table(report: dict) -> str:
    """Plain-text table with one column per benchmark category."""
    labels = [*CONFIGS, *NON_TOOL_CATEGORIES, "KDA", "ITA", "Avg"]
    values = []
    for label in (*CONFIGS, *NON_TOOL_CATEGORIES):
        mean_value = report["categories"][label]["mean"]
        values.append("-" if mean_value is None else f"{mean_value:.2f}")
    for key in ("kda_pct", "ita_pct", "overall_mean"):
        value = report.get(key)
        values.append("-" if value is None else f"{value:.2f}")
    widths = [max(len(l), len(v)) for l, v in zip(labels, values)]
    header = "  ".join(l.rjust(w) for l, w in zip(labels, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    meta = (f"instances: {report['total']}  scored: {report['scored']}  "
            f"unscored: {report['unscored']}")
    return f"{header}\n{row}\n{meta}"


class GatewayJudgeClient:
    """Judge client over a gateway chat profile."""

    def __init__(self, gateway, profile_id: str):
        self.gateway = gateway
        self.profile_id = profile_id

    def complete(self, prompt: str) -> str:
        from .gateway import GatewayRequest

        return self.gateway.complete(GatewayRequest(
            profile=self.profile_id,
            messages=[{"role": "user", "content": prompt}],
        ))
