"""Atomic tool specifications: parsing, validation, verification, normalization.

Tools are described in MCP shape (``name`` / ``description`` / ``inputSchema``
with an optional ``outputSchema``). A :class:`Library` is an ordered, immutable
collection of validated :class:`ToolSpec` objects persisted as JSONL, one tool
per line.

Verification is layered: a deterministic structural pass (parameter count,
nesting depth, description coverage) and an optional judge-driven logical pass
that may revise a spec, bounded by a retry budget.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .jsonl import atomic_write_text, dumps_line, read_jsonl

TOOL_NAME_RE = re.compile(r"^[a-z0-9_]+$")
ALLOWED_TYPES = frozenset({"string", "integer", "number", "boolean", "array", "object"})

# Python's bool is an int subclass; schema type checks must not conflate them.
_JSON_TYPE_CHECKS: dict[str, Callable[[object], bool]] = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "array": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


class ToolSpecError(ValueError):
    """Base class for tool-spec parse/validation failures."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


class MalformedJson(ToolSpecError):
    pass


class MissingField(ToolSpecError):
    def __init__(self, path: str):
        super().__init__(f"missing field: {path}", path)


class BadType(ToolSpecError):
    def __init__(self, path: str, detail: str = ""):
        msg = f"bad type at {path}" + (f": {detail}" if detail else "")
        super().__init__(msg, path)


class DuplicateRequired(ToolSpecError):
    def __init__(self, name: str):
        super().__init__(f"duplicate required parameter: {name}", f"required.{name}")
        self.name = name


class JudgeUnavailable(RuntimeError):
    """The logical-verification judge could not be reached after retries."""


@dataclass(frozen=True)
class ParamSchema:
    """Object schema: parameter name -> property descriptor, plus required names."""

    properties: dict[str, dict] = field(default_factory=dict)
    required: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "type": "object",
            "properties": {k: dict(v) for k, v in self.properties.items()},
            "required": list(self.required),
        }


@dataclass(frozen=True)
class ToolSpec:
    """One atomic tool: name, description, and typed input/output schemas."""

    name: str
    description: str
    input_schema: ParamSchema
    output_schema: ParamSchema | None = None
    tags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        doc: dict = {
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema.to_dict(),
        }
        if self.output_schema is not None:
            doc["outputSchema"] = self.output_schema.to_dict()
        if self.tags:
            doc["tags"] = list(self.tags)
        return doc


@dataclass
class Library:
    """Ordered collection of tools with pairwise-unique names.

    Immutable by convention after build; shared freely across readers.
    """

    tools: list[ToolSpec]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = [t.name for t in self.tools]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate tool names in library: {sorted(dupes)}")
        self._by_name = {t.name: t for t in self.tools}
        self.metadata.setdefault("count", len(self.tools))
        if self.metadata["count"] != len(self.tools):
            raise ValueError("library metadata count does not match tool count")

    def __len__(self) -> int:
        return len(self.tools)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ToolSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown tool: {name!r}") from None

    def names(self) -> list[str]:
        return [t.name for t in self.tools]

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, "".join(dumps_line(t.to_dict()) + "\n" for t in self.tools))

    @classmethod
    def load(cls, path: str | Path, metadata: dict | None = None) -> "Library":
        tools = [parse_tool_spec(dumps_line(row)) for row in read_jsonl(path)]
        meta = dict(metadata or {})
        meta["count"] = len(tools)
        meta.setdefault("source", str(path))
        return cls(tools=tools, metadata=meta)


@dataclass
class VerificationReport:
    """Outcome of structural (layer 1) and logical (layer 2) verification."""

    tool_name: str
    layer1_pass: bool
    layer1_reasons: list[str] = field(default_factory=list)
    layer2_pass: bool | None = None
    layer2_rationale: str | None = None
    attempts: int = 1
    revised_spec: ToolSpec | None = None

    @property
    def passed(self) -> bool:
        return self.layer1_pass and self.layer2_pass is not False

    def to_dict(self) -> dict:
        doc: dict = {
            "tool_name": self.tool_name,
            "layer1": {"pass": self.layer1_pass, "reasons": self.layer1_reasons},
            "attempts": self.attempts,
        }
        if self.layer2_pass is not None:
            doc["layer2"] = {"pass": self.layer2_pass, "rationale": self.layer2_rationale}
        if self.revised_spec is not None:
            doc["revised"] = True
        return doc


def _parse_param_schema(doc: object, prefix: str) -> ParamSchema:
    # `prefix` is "" for the input schema (paths read "properties.x") and
    # "outputSchema." for the output schema.
    if not isinstance(doc, dict):
        raise BadType(prefix.rstrip(".") or "inputSchema", "expected an object")
    props = doc.get("properties")
    if props is None:
        raise MissingField(f"{prefix}properties")
    if not isinstance(props, dict):
        raise BadType(f"{prefix}properties", "expected an object")
    for pname, pdef in props.items():
        ppath = f"{prefix}properties.{pname}"
        if not pname:
            raise BadType(f"{prefix}properties", "empty property name")
        if not isinstance(pdef, dict):
            raise BadType(ppath, "expected an object")
        ptype = pdef.get("type")
        if ptype is None:
            raise MissingField(f"{ppath}.type")
        if ptype not in ALLOWED_TYPES:
            raise BadType(f"{ppath}.type", f"unknown type {ptype!r}")
        enum = pdef.get("enum")
        if enum is not None:
            if not isinstance(enum, list) or not enum:
                raise BadType(f"{ppath}.enum", "expected a non-empty list")
            check = _JSON_TYPE_CHECKS[ptype]
            for i, value in enumerate(enum):
                if not check(value):
                    raise BadType(f"{ppath}.enum[{i}]", f"enum value {value!r} is not of type {ptype}")
    required = doc.get("required", [])
    if not isinstance(required, list) or any(not isinstance(r, str) for r in required):
        raise BadType(f"{prefix}required", "expected a list of strings")
    seen: set[str] = set()
    for rname in required:
        if rname in seen:
            raise DuplicateRequired(rname)
        seen.add(rname)
    for rname in required:
        if rname not in props:
            raise MissingField(f"{prefix}properties.{rname}")
    return ParamSchema(properties={k: dict(v) for k, v in props.items()}, required=tuple(required))


def parse_tool_spec(raw: str) -> ToolSpec:
    """Parse one MCP-shaped JSON document into a validated :class:`ToolSpec`.

    Raises the subclass of :class:`ToolSpecError` naming the first violated
    constraint and its path.
    """
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadType("$", "expected a JSON object")

    name = doc.get("name")
    if name is None:
        raise MissingField("name")
    if not isinstance(name, str) or not name:
        raise BadType("name", "expected a non-empty string")
    if not TOOL_NAME_RE.match(name):
        raise BadType("name", f"{name!r} does not match [a-z0-9_]+")

    description = doc.get("description", "")
    if not isinstance(description, str):
        raise BadType("description", "expected a string")

    input_doc = doc.get("inputSchema")
    if input_doc is None:
        raise MissingField("inputSchema")
    input_schema = _parse_param_schema(input_doc, "")

    output_schema = None
    if doc.get("outputSchema") is not None:
        output_schema = _parse_param_schema(doc["outputSchema"], "outputSchema.")

    tags = doc.get("tags", [])
    if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
        raise BadType("tags", "expected a list of strings")

    return ToolSpec(
        name=name,
        description=description,
        input_schema=input_schema,
        output_schema=output_schema,
        tags=tuple(tags),
    )


def serialize_tool_spec(spec: ToolSpec) -> str:
    return dumps_line(spec.to_dict())


@dataclass(frozen=True)
class StructuralLimits:
    """Atomicity thresholds for layer-1 verification."""

    max_params: int = 8
    max_nesting_depth: int = 2


def _schema_depth(props: dict[str, dict]) -> int:
    depth = 1 if props else 1
    for pdef in props.values():
        sub = None
        if pdef.get("type") == "object" and isinstance(pdef.get("properties"), dict):
            sub = pdef["properties"]
        elif pdef.get("type") == "array" and isinstance(pdef.get("items"), dict):
            items = pdef["items"]
            if items.get("type") == "object" and isinstance(items.get("properties"), dict):
                sub = items["properties"]
        if sub is not None:
            depth = max(depth, 1 + _schema_depth(sub))
    return depth


def verify_structural(spec: ToolSpec, limits: StructuralLimits = StructuralLimits()) -> VerificationReport:
    """Deterministic layer-1 check: parameter complexity and description coverage."""
    reasons: list[str] = []
    n_params = len(spec.input_schema.properties)
    if n_params > limits.max_params:
        reasons.append(f"param count {n_params} > {limits.max_params}")
    depth = _schema_depth(spec.input_schema.properties)
    if depth > limits.max_nesting_depth:
        reasons.append(f"nesting depth {depth} > {limits.max_nesting_depth}")
    if not spec.description.strip():
        reasons.append("empty description")
    for pname, pdef in spec.input_schema.properties.items():
        if not str(pdef.get("description", "")).strip():
            reasons.append(f"parameter {pname!r} has no description")
    return VerificationReport(tool_name=spec.name, layer1_pass=not reasons, layer1_reasons=reasons)


@dataclass
class SpecReview:
    """A judge's verdict on one tool spec."""

    passed: bool
    diagnosis: str = ""
    revised_spec: ToolSpec | None = None


class SpecJudge(Protocol):
    """Contract for the logical-correctness judge."""

    def review(self, spec: ToolSpec) -> SpecReview: ...


def verify_logical(
    spec: ToolSpec,
    judge: SpecJudge,
    budget: int = 3,
    limits: StructuralLimits = StructuralLimits(),
) -> VerificationReport:
    """Layer-2 verification: iterate judge review and revision up to ``budget`` times.

    A judge-proposed revision is only adopted if it re-passes the structural
    check; otherwise the original spec is kept for the next attempt. Never
    makes more than ``budget`` judge calls.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    current = spec
    rationale = ""
    for attempt in range(1, budget + 1):
        review = judge.review(current)
        rationale = review.diagnosis
        if review.revised_spec is not None:
            candidate = review.revised_spec
            structural = verify_structural(candidate, limits)
            if structural.layer1_pass:
                current = candidate
            else:
                rationale += f" [revision rejected: {'; '.join(structural.layer1_reasons)}]"
        if review.passed:
            return VerificationReport(
                tool_name=spec.name,
                layer1_pass=True,
                layer2_pass=True,
                layer2_rationale=rationale,
                attempts=attempt,
                revised_spec=current if current is not spec else None,
            )
    return VerificationReport(
        tool_name=spec.name,
        layer1_pass=True,
        layer2_pass=False,
        layer2_rationale=f"budget exhausted after {budget} attempts: {rationale}",
        attempts=budget,
        revised_spec=None,
    )


SimilarityFn = Callable[[ToolSpec, ToolSpec], float]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(spec: ToolSpec) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(f"{spec.name} {spec.description}".lower()))


def token_jaccard(a: ToolSpec, b: ToolSpec) -> float:
    """Deterministic token-set Jaccard over lowercased name+description."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 1.0
    union = ta | tb
    return len(ta & tb) / len(union)


def normalize_library(
    tools: Iterable[ToolSpec],
    similarity: SimilarityFn = token_jaccard,
    threshold: float = 0.9,
    metadata: dict | None = None,
) -> Library:
    """Merge exact-name duplicates and flag near-duplicate pairs for review.

    Duplicate names keep the first occurrence; differing descriptions are
    concatenated so no authored text is lost. Non-identical tools are never
    auto-merged: pairs at or above the similarity threshold are recorded in
    ``metadata["review_flags"]`` instead, keeping the build reproducible.
    """
    merged: list[ToolSpec] = []
    by_name: dict[str, int] = {}
    for spec in tools:
        if spec.name in by_name:
            idx = by_name[spec.name]
            kept = merged[idx]
            if spec.description and spec.description != kept.description:
                merged[idx] = ToolSpec(
                    name=kept.name,
                    description=f"{kept.description} | {spec.description}",
                    input_schema=kept.input_schema,
                    output_schema=kept.output_schema,
                    tags=kept.tags,
                )
            continue
        by_name[spec.name] = len(merged)
        merged.append(spec)

    flags: list[dict] = []
    for i in range(len(merged)):
        for j in range(i + 1, len(merged)):
            score = similarity(merged[i], merged[j])
            if score >= threshold:
                a, b = sorted((merged[i].name, merged[j].name))
                flags.append({"a": a, "b": b, "similarity": score})
    flags.sort(key=lambda f: (f["a"], f["b"]))

    meta = dict(metadata or {})
    meta["count"] = len(merged)
    meta["review_flags"] = flags
    return Library(tools=merged, metadata=meta)


def save_verification_reports(path: str | Path, reports: Iterable[VerificationReport]) -> None:
    atomic_write_text(path, "".join(dumps_line(r.to_dict()) + "\n" for r in reports))
