"""Wire-format conversions and model-output parsing.

Two interaction paradigms are supported. In function-calling (FC) mode, tool
schemas travel as structured metadata and the model emits ``<tool_call>`` JSON
blocks. In prompt mode, schemas are serialized into a system prompt rendered
from a text template and the model emits a bracketed call list such as::

    [get_stock_price(symbol='600519.SH'), get_company_news(keyword='Moutai')]

``parse_tool_calls`` is total: every input maps to exactly one of parsed
calls, a no-call text reply, or a parse error (which the evaluator treats as a
format violation).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from string import Template

from .registry import ParamSchema, ToolSpec

FC_MODE = "fc"
PROMPT_MODE = "prompt"

DEFAULT_FORMAT_INSTRUCTION = (
    "[func_name1(params_name1=params_value1, params_name2=params_value2...), "
    "func_name2(params)]"
)

PROMPT_TEMPLATE_ASSET = "prompt_mode_system.txt"


@dataclass(frozen=True)
class ToolCall:
    """One invocation: tool name plus keyword arguments."""

    tool_name: str
    arguments: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.tool_name:
            raise ValueError("tool_name must be non-empty")

    def to_dict(self) -> dict:
        return {"name": self.tool_name, "arguments": dict(self.arguments)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ToolCall":
        return cls(tool_name=doc["name"], arguments=dict(doc.get("arguments", {})))


@dataclass(frozen=True)
class FcFunction:
    """Function-calling schema wrapper around a tool's input schema."""

    name: str
    description: str
    parameters: ParamSchema

    def to_dict(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters.to_dict(),
            },
        }


def mcp_to_fc(spec: ToolSpec) -> FcFunction:
    """Convert an MCP-shaped tool into the FC schema; the output schema is dropped."""
    return FcFunction(name=spec.name, description=spec.description, parameters=spec.input_schema)


def fc_to_mcp(fc: FcFunction) -> ToolSpec:
    return ToolSpec(name=fc.name, description=fc.description, input_schema=fc.parameters)


def load_asset(name: str) -> str:
    return resources.files("fintoolkit.assets").joinpath(name).read_text(encoding="utf-8")


def render_prompt_mode(
    tools: list[ToolSpec],
    template: str | None = None,
    format_instruction: str = DEFAULT_FORMAT_INSTRUCTION,
) -> str:
    """Render the prompt-mode system prompt for a candidate tool list.

    Substitutes ``${functions}`` with the JSON function list (candidate order
    preserved) and ``${escaped_format_instruction}`` with the call-format
    instruction. Byte-stable for fixed inputs.
    """
    if template is None:
        template = load_asset(PROMPT_TEMPLATE_ASSET)
    functions = [
        {
            "name": t.name,
            "description": t.description,
            "parameters": t.input_schema.to_dict(),
        }
        for t in tools
    ]
    functions_json = json.dumps(functions, ensure_ascii=False, indent=2)
    return Template(template).substitute(
        functions=functions_json,
        escaped_format_instruction=format_instruction,
    )


@dataclass(frozen=True)
class ParseResult:
    """Total outcome of parsing one model output."""

    kind: str  # "calls" | "no_call" | "error"
    calls: tuple[ToolCall, ...] = ()
    text: str = ""
    position: int | None = None
    reason: str | None = None

    @classmethod
    def of_calls(cls, calls: list[ToolCall]) -> "ParseResult":
        return cls(kind="calls", calls=tuple(calls))

    @classmethod
    def of_no_call(cls, text: str) -> "ParseResult":
        return cls(kind="no_call", text=text)

    @classmethod
    def of_error(cls, position: int, reason: str) -> "ParseResult":
        return cls(kind="error", position=position, reason=reason)


_TOOL_CALL_OPEN = "<tool_call>"
_TOOL_CALL_CLOSE = "</tool_call>"


def _parse_fc(raw: str) -> ParseResult:
    if _TOOL_CALL_OPEN not in raw:
        return ParseResult.of_no_call(raw.strip())
    calls: list[ToolCall] = []
    cursor = 0
    while True:
        start = raw.find(_TOOL_CALL_OPEN, cursor)
        if start == -1:
            break
        body_start = start + len(_TOOL_CALL_OPEN)
        end = raw.find(_TOOL_CALL_CLOSE, body_start)
        if end == -1:
            return ParseResult.of_error(start, "unterminated <tool_call> block")
        body = raw[body_start:end].strip()
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            return ParseResult.of_error(body_start + exc.pos, f"invalid JSON in tool call: {exc.msg}")
        if not isinstance(doc, dict):
            return ParseResult.of_error(body_start, "tool call body is not a JSON object")
        name = doc.get("name")
        if not isinstance(name, str) or not name:
            return ParseResult.of_error(body_start, "tool call missing 'name'")
        arguments = doc.get("arguments", {})
        if not isinstance(arguments, dict):
            return ParseResult.of_error(body_start, "'arguments' is not an object")
        calls.append(ToolCall(tool_name=name, arguments=arguments))
        cursor = end + len(_TOOL_CALL_CLOSE)
    return ParseResult.of_calls(calls)


_CALL_LIST_START = re.compile(r"^\[\s*[A-Za-z_][A-Za-z0-9_]*\s*\(")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


class _PromptCallParser:
    """Recursive-descent parser for bracketed call lists.

    Grammar: one or more ``[`` call, ... ``]`` lists separated by whitespace;
    each call is ``name(key=value, ...)``; values are quoted strings, decimal
    numbers, ``True/False/true/false``, or ``[...]`` lists of values. Anything
    else is a parse error with the offending position.
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, reason: str) -> "_ParseFailure":
        return _ParseFailure(self.pos, reason)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        if self.peek() != char:
            raise self.fail(f"expected {char!r}")
        self.pos += 1

    def parse(self) -> list[ToolCall]:
        calls: list[ToolCall] = []
        self.skip_ws()
        while self.pos < len(self.text):
            if self.peek() != "[":
                raise self.fail("expected '[' starting a call list")
            calls.extend(self.parse_call_list())
            self.skip_ws()
        if not calls:
            raise self.fail("empty call list")
        return calls

    def parse_call_list(self) -> list[ToolCall]:
        self.expect("[")
        self.skip_ws()
        calls: list[ToolCall] = []
        if self.peek() == "]":
            self.pos += 1
            return calls
        while True:
            calls.append(self.parse_call())
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
                self.skip_ws()
                continue
            self.expect("]")
            return calls

    def parse_call(self) -> ToolCall:
        name = self.parse_ident()
        self.skip_ws()
        self.expect("(")
        self.skip_ws()
        arguments: dict = {}
        if self.peek() == ")":
            self.pos += 1
            return ToolCall(tool_name=name, arguments=arguments)
        while True:
            key = self.parse_ident()
            if key in arguments:
                raise self.fail(f"duplicate argument {key!r}")
            self.skip_ws()
            self.expect("=")
            self.skip_ws()
            arguments[key] = self.parse_value()
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
                self.skip_ws()
                continue
            self.expect(")")
            return ToolCall(tool_name=name, arguments=arguments)

    def parse_ident(self) -> str:
        match = _IDENT_RE.match(self.text, self.pos)
        if not match:
            raise self.fail("expected identifier")
        self.pos = match.end()
        return match.group(0)

    def parse_value(self):
        ch = self.peek()
        if ch in ("'", '"'):
            return self.parse_string(ch)
        if ch == "[":
            return self.parse_list()
        match = _NUMBER_RE.match(self.text, self.pos)
        if match:
            literal = match.group(0)
            self.pos = match.end()
            if "." in literal or "e" in literal or "E" in literal:
                return float(literal)
            return int(literal)
        ident = _IDENT_RE.match(self.text, self.pos)
        if ident and ident.group(0) in ("True", "true", "False", "false"):
            self.pos = ident.end()
            return ident.group(0) in ("True", "true")
        raise self.fail("expected a string, number, boolean, or list value")

    def parse_string(self, quote: str) -> str:
        self.expect(quote)
        out: list[str] = []
        while True:
            if self.pos >= len(self.text):
                raise self.fail("unterminated string literal")
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    raise self.fail("dangling escape in string literal")
                out.append(self.text[self.pos + 1])
                self.pos += 2
                continue
            if ch == quote:
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1

    def parse_list(self) -> list:
        self.expect("[")
        self.skip_ws()
        values: list = []
        if self.peek() == "]":
            self.pos += 1
            return values
        while True:
            values.append(self.parse_value())
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
                self.skip_ws()
                continue
            self.expect("]")
            return values


class _ParseFailure(Exception):
    def __init__(self, position: int, reason: str):
        super().__init__(f"at {position}: {reason}")
        self.position = position
        self.reason = reason


def _parse_prompt(raw: str) -> ParseResult:
    stripped = raw.strip()
    if not _CALL_LIST_START.match(stripped):
        return ParseResult.of_no_call(stripped)
    parser = _PromptCallParser(stripped)
    try:
        return ParseResult.of_calls(parser.parse())
    except _ParseFailure as exc:
        return ParseResult.of_error(exc.position, exc.reason)


def parse_tool_calls(raw: str, mode: str) -> ParseResult:
    """Parse one raw model output into tool calls, a text reply, or an error."""
    if mode == FC_MODE:
        return _parse_fc(raw)
    if mode == PROMPT_MODE:
        return _parse_prompt(raw)
    raise ValueError(f"unknown mode {mode!r}; expected {FC_MODE!r} or {PROMPT_MODE!r}")
