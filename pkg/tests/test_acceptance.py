"""Acceptance suite: one test per release criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines on the terminal.
"""

import copy
import hashlib
import json
import math
import random
import socket
import time
from collections import deque
from fractions import Fraction
from pathlib import Path

import pytest

from fintoolkit.cli import run as cli_run
from fintoolkit.codec import FC_MODE, PROMPT_MODE, ToolCall, mcp_to_fc, parse_tool_calls
from fintoolkit.graph import (
    DIRECT_PARAM,
    DIRECT_TOOL,
    INDIRECT_PARAM,
    INDIRECT_TOOL,
    Edge,
    ToolGraph,
    apply_priority_rules,
    k_hop_neighbors,
)
from fintoolkit.index import EmbeddingVector, HashedBagOfWordsEncoder, VectorIndex
from fintoolkit.jsonl import write_jsonl
from fintoolkit.registry import Library, ParamSchema, ToolSpec
from fintoolkit.retrieval import RetrievalConfig, assemble_candidates
from fintoolkit.sampling import largest_remainder, stratified_sample
from fintoolkit.scoring import (
    FORMAT_ERROR,
    EvalInstance,
    InstanceClass,
    KdaField,
    compute_ita,
    compute_kda,
    rule_circuit_breaker,
    score_instance,
    score_non_tool_call,
    score_tool_call_turn,
)
from fintoolkit.synthesis import (
    ACCEPTED,
    DISCARDED,
    Budgets,
    Persona,
    RetrievalEngines,
    SeedInstruction,
    process_analysis,
    run_dialogue,
    synthesis_stats,
    synthesize_many,
    validate_trajectory,
)
from fintoolkit.agents import AssistantAction, ProceduralAgents, ScriptedAgents
from fintoolkit.retrieval import CandidateSet

from conftest import CATALOG, STOCK_PRICE, KLINE_HISTORY, TECHNICAL_INDICATORS, make_spec
from test_synthesis import FUND_RISK_TOOL, PERSONA, REPLAY_TRANSCRIPT, SEED
from test_cli import describable_catalog


def report(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS - {message}")


# ---------------------------------------------------------------------------
# Criterion 1: scoring pipeline matches an independent transcription exactly
# ---------------------------------------------------------------------------

POOL = [
    ToolSpec("alpha_quote", "quote lookup",
             ParamSchema({"symbol": {"type": "string"},
                          "window": {"type": "integer"}}, ("symbol",))),
    ToolSpec("beta_report", "report fetch",
             ParamSchema({"code": {"type": "string"},
                          "period": {"type": "string", "enum": ["q1", "q2", "fy"]}},
                         ("code", "period"))),
    ToolSpec("gamma_scan", "screen the market", ParamSchema({}, ())),
    ToolSpec("delta_rank", "rank entities",
             ParamSchema({"top_n": {"type": "integer"},
                          "ascending": {"type": "boolean"}}, ())),
]
POOL_BY_NAME = {t.name: t for t in POOL}

_TYPE_OK = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "array": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


class DeterministicJudge:
    """Judge stub whose scores are pure functions of its inputs."""

    @staticmethod
    def _score(*parts) -> int:
        digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
        return digest[0] % 11

    def selection_score(self, history, candidates, gold, pred):
        return self._score("k", tuple(c.tool_name for c in gold),
                           tuple(c.tool_name for c in pred))

    def parameter_scores(self, history, candidates, gold, pred):
        rows = []
        for i, call in enumerate(pred):
            values = {name: self._score("y", call.tool_name, i, name)
                      for name in sorted(call.arguments)}
            rows.append({"structure": self._score("x", call.tool_name, i),
                         "values": values})
        return rows

    def clarification_intent(self, text):
        return self._score("ci", text) % 2 == 0


def transcription_turn_score(instance, pred_calls, judge) -> Fraction:
    """Independent transcription of the per-turn scoring algorithm."""
    w_struct, w_val = Fraction(3, 10), Fraction(7, 10)
    w_select, w_exec = Fraction(2, 5), Fraction(3, 5)
    if not pred_calls:
        return Fraction(0)
    by_name = {t.name: t for t in instance.candidates}
    for call in pred_calls:  # hallucination check
        if call.tool_name not in by_name:
            return Fraction(0)
    for call in pred_calls:  # schema compliance
        schema = by_name[call.tool_name].input_schema
        for required in schema.required:
            if required not in call.arguments:
                return Fraction(0)
        for arg, value in call.arguments.items():
            if arg not in schema.properties:
                return Fraction(0)
            declared = schema.properties[arg].get("type")
            if declared in _TYPE_OK and not _TYPE_OK[declared](value):
                return Fraction(0)
            enum = schema.properties[arg].get("enum")
            if enum is not None and value not in enum:
                return Fraction(0)
    gold = instance.gold_turns[0] if instance.gold_turns else []
    k = Fraction(judge.selection_score([], instance.candidates, gold, pred_calls))
    if k == 0:
        return Fraction(0)
    rows = judge.parameter_scores([], instance.candidates, gold, pred_calls)
    exec_total = Fraction(0)
    for row in rows:
        if row["values"]:
            y_bar = Fraction(sum(row["values"].values()), len(row["values"]))
            exec_total += w_struct * Fraction(row["structure"]) + w_val * y_bar
        else:
            exec_total += Fraction(row["structure"])
    s_exec = exec_total / len(pred_calls)
    return (w_select * k + w_exec * s_exec) * 10


def transcription_total(instance, preds, judge, tags) -> float:
    """Independent transcription of the main scoring control flow."""
    if instance.klass.kind == "tool_call":
        total = Fraction(0)
        turn_count = len(instance.gold_turns)
        for t in range(turn_count):
            calls = preds[t] if t < len(preds) else None
            # A gold turn scores per the turn algorithm above against the
            # turn's own gold actions.
            inst = copy.copy(instance)
            inst.gold_turns = [instance.gold_turns[t]]
            total += transcription_turn_score(inst, calls, judge)
        return float(total / turn_count)
    tag, payload = tags[0]
    if tag in ("calls", "broken"):
        return 0.0
    if instance.klass.category == "CI":
        return 100.0 if judge.clarification_intent(payload) else 0.0
    return 100.0


def generate_instance(rng, index):
    """Random benchmark instance plus predictions and oracle tags."""
    if rng.random() < 0.7:
        turn_count = rng.choice([1, 1, 2, 3])
        pattern = "serial" if turn_count > 1 else rng.choice(["single", "parallel"])
        gold_turns = []
        for _ in range(turn_count):
            calls = []
            for tool in rng.sample(POOL, rng.randint(1, 2)):
                arguments = {}
                for pname in tool.input_schema.required:
                    ptype = tool.input_schema.properties[pname].get("type")
                    enum = tool.input_schema.properties[pname].get("enum")
                    if enum:
                        arguments[pname] = rng.choice(enum)
                    elif ptype == "integer":
                        arguments[pname] = rng.randint(1, 9)
                    else:
                        arguments[pname] = f"v{rng.randint(0, 99)}"
                calls.append(ToolCall(tool.name, arguments))
            gold_turns.append(calls)
        instance = EvalInstance(
            id=f"inst{index}",
            klass=InstanceClass(kind="tool_call",
                                config=rng.choice(["ST-SC", "ST-MC", "MT-SC", "MT-MC"]),
                                pattern=pattern),
            candidates=list(POOL),
            gold_turns=gold_turns,
        )
        preds, tags = [], []
        for t in range(turn_count):
            style = rng.choice(["perfect", "perfect", "subset", "halluc",
                                "missing_param", "extra_param", "enum_bad",
                                "missing_turn", "empty"])
            if style == "missing_turn":
                break
            calls = [ToolCall(c.tool_name, dict(c.arguments)) for c in gold_turns[t]]
            if style == "subset" and len(calls) > 1:
                calls = calls[:1]
            elif style == "halluc":
                calls[0] = ToolCall("phantom_tool", {})
            elif style == "missing_param":
                victim = next((c for c in calls
                               if POOL_BY_NAME[c.tool_name].input_schema.required), None)
                if victim is not None:
                    victim.arguments.pop(
                        POOL_BY_NAME[victim.tool_name].input_schema.required[0])
            elif style == "extra_param":
                calls[0].arguments["unexpected"] = "x"
            elif style == "enum_bad":
                victim = next((c for c in calls if c.tool_name == "beta_report"), None)
                if victim is not None:
                    victim.arguments["period"] = "h2"
            elif style == "empty":
                calls = []
            preds.append(calls)
            tags.append(("calls", calls))
        return instance, preds, tags

    category = rng.choice(["UD", "CI", "DR"])
    instance = EvalInstance(
        id=f"inst{index}",
        klass=InstanceClass(kind="non_tool", category=category),
        candidates=list(POOL),
        mode="fc",
    )
    style = rng.choice(["text", "text", "calls", "broken"])
    if style == "text":
        text = f"Could you share more details about request {index}?"
        return instance, [text], [("text", text)]
    if style == "calls":
        raw = '<tool_call>{"name": "alpha_quote", "arguments": {"symbol": "x"}}</tool_call>'
        return instance, [raw], [("calls", raw)]
    return instance, ["<tool_call>{oops"], [("broken", None)]


def test_criterion_01_scoring_matches_independent_transcription():
    rng = random.Random(20240501)
    judge = DeterministicJudge()
    started = time.monotonic()
    for i in range(200):
        instance, preds, tags = generate_instance(rng, i)
        result = score_instance(instance, preds, judge)
        expected = transcription_total(instance, preds, judge, tags or [("text", "")])
        assert result.scored
        assert result.score == expected, (
            f"instance {i}: pipeline {result.score!r} != transcription {expected!r}")
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"took {elapsed:.2f}s"
    report(1, f"200 randomized instances match the independent transcription "
              f"exactly in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# Criterion 2: worked-score fixtures
# ---------------------------------------------------------------------------


class CountingStubJudge:
    def __init__(self, k, rows):
        self.k, self.rows = k, rows
        self.calls = 0

    def selection_score(self, *args):
        self.calls += 1
        return self.k

    def parameter_scores(self, *args):
        self.calls += 1
        return self.rows

    def clarification_intent(self, text):
        self.calls += 1
        return True


def test_criterion_02_worked_score_fixture():
    two_param = ToolSpec("first_tool", "d",
                         ParamSchema({"a": {"type": "string"}, "b": {"type": "string"}}))
    no_param = ToolSpec("second_tool", "d", ParamSchema())
    candidates = [two_param, no_param]
    pred = [ToolCall("first_tool", {"a": "1", "b": "2"}), ToolCall("second_tool", {})]

    judge = CountingStubJudge(8, [
        {"structure": 9, "values": {"a": 10, "b": 6}},
        {"structure": 10, "values": {}},
    ])
    breakdown = score_tool_call_turn(pred, pred, candidates, judge)
    assert breakdown.turn_score == 86.9
    assert breakdown.exact == Fraction(869, 10)

    perfect = CountingStubJudge(10, [
        {"structure": 10, "values": {"a": 10, "b": 10}},
        {"structure": 10, "values": {}},
    ])
    assert score_tool_call_turn(pred, pred, candidates, perfect).turn_score == 100.0

    for broken_pred in ([ToolCall("phantom", {})],
                        [ToolCall("first_tool", {"a": "1", "zz": 2})],
                        "no call here"):
        counting = CountingStubJudge(10, [])
        breakdown = score_tool_call_turn(broken_pred, pred, candidates, counting, mode="fc")
        assert breakdown.turn_score == 0.0
        assert counting.calls == 0, "judge consulted after a circuit break"
    report(2, "k=8 fixture scores 86.9 exactly, perfect case 100, breakers zero "
              "with zero judge invocations")


# ---------------------------------------------------------------------------
# Criterion 3: default weights keep scores in range and monotone
# ---------------------------------------------------------------------------


def test_criterion_03_range_and_monotonicity_fuzz():
    rng = random.Random(77)
    spec = ToolSpec("fuzz_tool", "d",
                    ParamSchema({f"p{i}": {"type": "string"} for i in range(4)}))
    candidates = [spec]
    violations = 0
    for _ in range(10_000):
        n_params = rng.randint(1, 4)
        pred = [ToolCall("fuzz_tool", {f"p{i}": "v" for i in range(n_params)})]
        k = round(rng.uniform(0, 10), 3)
        x = round(rng.uniform(0, 10), 3)
        ys = [round(rng.uniform(0, 10), 3) for _ in range(n_params)]
        rows = [{"structure": x, "values": {f"p{i}": y for i, y in enumerate(ys)}}]
        base = score_tool_call_turn(pred, pred, candidates, CountingStubJudge(k, rows))
        if not (0.0 <= base.turn_score <= 100.0):
            violations += 1
        target = rng.randrange(n_params)
        bumped = list(ys)
        bumped[target] = round(min(10.0, bumped[target] + rng.uniform(0.001, 2.0)), 3)
        rows2 = [{"structure": x, "values": {f"p{i}": y for i, y in enumerate(bumped)}}]
        after = score_tool_call_turn(pred, pred, candidates, CountingStubJudge(k, rows2))
        if after.exact < base.exact:
            violations += 1
    assert violations == 0
    report(3, "10,000 fuzz cases: turn score stayed in [0,100] and monotone in "
              "every per-value score")


# ---------------------------------------------------------------------------
# Criterion 4: non-tool scoring over the full case grid
# ---------------------------------------------------------------------------


class FixedCiJudge:
    def __init__(self, value):
        self.value = value

    def selection_score(self, *a):
        raise AssertionError("selection judge must not run for non-tool instances")

    parameter_scores = selection_score

    def clarification_intent(self, text):
        return self.value


def test_criterion_04_non_tool_grid():
    call_text = '<tool_call>{"name": "alpha_quote", "arguments": {"symbol": "s"}}</tool_call>'
    for category in ("UD", "CI", "DR"):
        instance = EvalInstance(
            id=f"ntc-{category}",
            klass=InstanceClass(kind="non_tool", category=category),
            candidates=list(POOL),
        )
        with_call = score_non_tool_call(instance, call_text, FixedCiJudge(True))
        assert with_call.score == 0.0
        if category == "CI":
            assert score_non_tool_call(instance, "Which fund?", FixedCiJudge(True)).score == 100.0
            assert score_non_tool_call(instance, "Which fund?", FixedCiJudge(False)).score == 0.0
        else:
            assert score_non_tool_call(instance, "Plain reply.", FixedCiJudge(False)).score == 100.0
    report(4, "UD/CI/DR grid: text-only replies score 100 (CI gated on judge), "
              "any tool call scores 0")


# ---------------------------------------------------------------------------
# Criterion 5: key-digit and invocation-timing fixtures
# ---------------------------------------------------------------------------


def test_criterion_05_domain_metric_fixtures():
    price = make_spec(STOCK_PRICE)
    instance = EvalInstance(
        id="kda",
        klass=InstanceClass(kind="tool_call", config="ST-SC", pattern="single"),
        candidates=[price],
        gold_turns=[[ToolCall("get_stock_price", {"symbol": "600519.SH"})]],
        kda_fields=[KdaField(0, "get_stock_price", "symbol")],
    )
    assert compute_kda(instance, [[ToolCall("get_stock_price", {"symbol": "600519.SH"})]]) == 1
    assert compute_kda(instance, [[ToolCall("get_stock_price", {"symbol": "600519"})]]) == 0

    kline, indicators = make_spec(KLINE_HISTORY), make_spec(TECHNICAL_INDICATORS)
    ita_instance = EvalInstance(
        id="ita",
        klass=InstanceClass(kind="tool_call", config="ST-MC", pattern="parallel"),
        candidates=[kline, indicators],
        gold_turns=[[
            ToolCall("get_stock_kline_history", {"stock_code": "600519", "period": "daily"}),
            ToolCall("calculate_technical_indicators", {"kline_data": [], "indicators": []}),
        ]],
        ita_constraints=[("get_stock_kline_history", "calculate_technical_indicators")],
    )
    ordered = [[ToolCall("get_stock_kline_history", {}),
                ToolCall("calculate_technical_indicators", {})]]
    reversed_ = [[ToolCall("calculate_technical_indicators", {}),
                  ToolCall("get_stock_kline_history", {})]]
    assert compute_ita(ita_instance, ordered) == 1
    assert compute_ita(ita_instance, reversed_) == 0
    report(5, "exchange-suffix key-digit rule and prerequisite-ordering fixtures hold")


# ---------------------------------------------------------------------------
# Criterion 6: graph priority rules and k-hop oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_06_graph_correctness():
    started = time.monotonic()
    rng = random.Random(606)

    nodes = [f"n{i}" for i in range(40)]
    fuzz_edges = []
    for _ in range(1000):
        a, b = rng.sample(nodes, 2)
        fuzz_edges.append(Edge(a, rng.choice(
            (DIRECT_PARAM, DIRECT_TOOL, INDIRECT_PARAM, INDIRECT_TOOL)), b))
    kept = apply_priority_rules(fuzz_edges)
    by_pair = {}
    for e in kept:
        by_pair.setdefault((e.head, e.tail), set()).add(e.relation)
    assert all(not ({DIRECT_PARAM, DIRECT_TOOL} <= rels) for rels in by_pair.values())

    for _ in range(100):
        n = rng.randint(2, 1000)
        graph_nodes = [f"g{i}" for i in range(n)]
        edges = []
        for _ in range(rng.randint(0, min(5000, n * 4))):
            a, b = rng.sample(graph_nodes, 2)
            edges.append(Edge(a, DIRECT_TOOL, b))
        graph = ToolGraph.build(graph_nodes, edges)
        seeds = rng.sample(graph_nodes, rng.randint(1, min(4, n)))
        hops = rng.randint(0, 4)

        adj = {}
        for e in graph.edges:
            adj.setdefault(e.head, set()).add(e.tail)
            adj.setdefault(e.tail, set()).add(e.head)
        dist = {s: 0 for s in seeds}
        queue = deque(seeds)
        while queue:
            node = queue.popleft()
            if dist[node] >= hops:
                continue
            for neighbor in adj.get(node, ()):
                if neighbor not in dist:
                    dist[neighbor] = dist[node] + 1
                    queue.append(neighbor)
        assert k_hop_neighbors(graph, seeds, hops) == set(dist)
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    report(6, f"1,000-edge priority fuzz clean; 100 random graphs match the "
              f"breadth-first oracle in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# Criterion 7: retrieval correctness
# ---------------------------------------------------------------------------


def test_criterion_07_retrieval_correctness():
    rng = random.Random(707)
    for round_ in range(50):
        entries = []
        for i in range(60):
            values = tuple(rng.uniform(-1, 1) for _ in range(256))
            entries.append((f"t{i:03d}", values))
        # Exercise the name tie-break with an exact duplicate vector.
        entries.append(("t_dup_b", entries[0][1]))
        index = VectorIndex([(n, EmbeddingVector(v)) for n, v in entries],
                            encoder_id="fuzz")
        query = tuple(rng.uniform(-1, 1) for _ in range(256))
        hits = index.top_k(EmbeddingVector(query), 10)

        qnorm = math.sqrt(sum(v * v for v in query))
        oracle = []
        for name, values in entries:
            dot = sum(a * b for a, b in zip(values, query))
            norm = math.sqrt(sum(v * v for v in values))
            oracle.append((name, dot / (norm * qnorm)))
        oracle.sort(key=lambda e: (-e[1], e[0]))
        assert [n for n, _ in hits] == [n for n, _ in oracle[:10]], f"round {round_}"

    catalog = [make_spec(doc) for doc in CATALOG]
    library = Library(tools=catalog)
    encoder = HashedBagOfWordsEncoder()
    index = VectorIndex.build(library, encoder)
    edges = [Edge("search_company_by_name", DIRECT_PARAM, "get_company_registration_info"),
             Edge("get_stock_kline_history", DIRECT_PARAM, "calculate_technical_indicators"),
             Edge("get_industry_money_flow", INDIRECT_TOOL, "get_industry_constituents")]
    graph = ToolGraph.build(library.names(), edges)
    queries = ["company registration", "kline technical indicators",
               "industry money flow", "stock price today", "fuzzy search keyword"]
    for query in queries:
        for k in (1, 2, 4, 8):
            for hops in (0, 1, 2):
                context = [{"role": "user", "content": query}]
                vector_set = assemble_candidates(
                    RetrievalConfig(mode="vector", top_k=k), context,
                    index=index, library=library, encoder=encoder)
                graph_set = assemble_candidates(
                    RetrievalConfig(mode="graph_enhanced", top_k=k, hops=hops), context,
                    index=index, graph=graph, library=library, encoder=encoder)
                assert set(vector_set.names()) <= set(graph_set.names())
                assert graph_set.names()[:len(vector_set.names())] == vector_set.names()
    report(7, "50 random 256-dim indexes match the exhaustive-scan oracle "
              "(ranks and tie-breaks); graph-enhanced sets always contain the vector sets")


# ---------------------------------------------------------------------------
# Criterion 8: codec fixtures
# ---------------------------------------------------------------------------


def test_criterion_08_codec_fixtures():
    fc = mcp_to_fc(make_spec(STOCK_PRICE))
    assert fc.to_dict() == {
        "type": "function",
        "function": {
            "name": "get_stock_price",
            "description": "Get the current stock price...",
            "parameters": {
                "type": "object",
                "properties": {"symbol": {"type": "string"}},
                "required": ["symbol"],
            },
        },
    }

    fc_output = ('<tool_call>\n{"name": "get_stock_price", '
                 '"arguments": {"symbol": "600519.SH"}}\n</tool_call>')
    parsed = parse_tool_calls(fc_output, FC_MODE)
    assert parsed.calls == (ToolCall("get_stock_price", {"symbol": "600519.SH"}),)

    bracketed = ("[get_new_energy_business(company_name='Autowell', "
                 "metrics=['New Energy Order Volume', 'Energy Storage Revenue Share']), "
                 "get_client_order_trends(company_name='Autowell')]")
    parsed = parse_tool_calls(bracketed, PROMPT_MODE)
    assert [c.tool_name for c in parsed.calls] == [
        "get_new_energy_business", "get_client_order_trends"]
    assert parsed.calls[0].arguments["metrics"] == [
        "New Energy Order Volume", "Energy Storage Revenue Share"]

    for raw, mode in (("<tool_call>{broken", FC_MODE), ("[broken(", PROMPT_MODE)):
        bad = parse_tool_calls(raw, mode)
        assert bad.kind == "error"
        verdict = rule_circuit_breaker(raw, [make_spec(STOCK_PRICE)], mode)
        assert verdict.reason == FORMAT_ERROR
        judge = CountingStubJudge(10, [])
        breakdown = score_tool_call_turn(raw, [], [make_spec(STOCK_PRICE)], judge, mode=mode)
        assert breakdown.turn_score == 0.0
        assert judge.calls == 0
    report(8, "schema conversion, both call formats, and the parse-error to "
              "format-breaker path all match the fixtures")


# ---------------------------------------------------------------------------
# Criterion 9: sampler quotas
# ---------------------------------------------------------------------------


def test_criterion_09_sampler_quotas():
    from test_sampling import BENCHMARK_DISTRIBUTION, FIELDS, benchmark_pool, benchmark_quota

    pool = benchmark_pool()
    sample, shortfall = stratified_sample(pool, benchmark_quota(), 0, seed=9)
    assert shortfall == {}
    assert len(sample) == 843
    counts = {}
    for item in sample:
        key = tuple(item[f] for f in FIELDS)
        counts[key] = counts.get(key, 0) + 1
    for label, expected in BENCHMARK_DISTRIBUTION:
        assert counts[label] == expected

    thirds = {"static": 1 / 3, "vector": 1 / 3, "graph_enhanced": 1 / 3}
    assert largest_remainder(thirds, 300) == {
        "static": 100, "vector": 100, "graph_enhanced": 100}
    assert largest_remainder(thirds, 100_002) == {
        "static": 33_334, "vector": 33_334, "graph_enhanced": 33_334}
    report(9, "benchmark-distribution quotas reproduce the exact per-category "
              "counts (total 843); one-third splits hold at 300 and 100,002")


# ---------------------------------------------------------------------------
# Criterion 10: synthesis loop
# ---------------------------------------------------------------------------


def test_criterion_10_synthesis_loop():
    # (a) scripted protocol replay with responsive plan insertion
    agents = ScriptedAgents(copy.deepcopy(REPLAY_TRANSCRIPT)).contracts()
    engines = RetrievalEngines(library=Library(tools=[FUND_RISK_TOOL]))
    trajectory = run_dialogue(SEED, PERSONA, agents, RetrievalConfig(mode="static"),
                              engines, Budgets(), dialogue_seed=1)
    assert trajectory.status == ACCEPTED
    assert [p.version for p in trajectory.plan_history] == [0, 1]
    assert any(r.inserted for r in trajectory.plan_history[1].rounds)
    validate_trajectory(trajectory)
    for turn in trajectory.turns:
        if turn.role == "assistant" and turn.tool_calls:
            snapshot = {t["name"] for t in turn.candidates["tools"]}
            assert all(c.tool_name in snapshot for c in turn.tool_calls)

    # (b) rule pre-checks catch every injected violation without agent calls
    class ExplodingGlobal:
        def analyze_process(self, action, candidates, history):
            raise AssertionError("agent consulted for a rule-detectable violation")

    candidates = CandidateSet(mode="static", tools=[FUND_RISK_TOOL], provenance=["plan"])
    rng = random.Random(10)
    detected = 0
    for i in range(50):
        if i % 2 == 0:
            action = AssistantAction(tool_calls=[ToolCall(f"phantom_{rng.randint(0, 99)}", {})])
        else:
            action = AssistantAction(tool_calls=[ToolCall("query_fund_credit_risk", {})])
        ok, _ = process_analysis(action, candidates, [], ExplodingGlobal())
        detected += (not ok)
    assert detected == 50

    # (c) 100-dialogue mock run with discard accounting
    catalog = Library(tools=[make_spec(doc) for doc in CATALOG])
    encoder = HashedBagOfWordsEncoder()
    engines = RetrievalEngines(library=catalog,
                               index=VectorIndex.build(catalog, encoder),
                               encoder=encoder)
    good = ProceduralAgents(catalog).contracts()

    class EmptyToolAgents(ProceduralAgents):
        def execute(self, call, rng):
            return ""

    class PlanlessAgents(ProceduralAgents):
        def make_plan(self, seed, persona, context):
            return []

    empty_tool = EmptyToolAgents(catalog).contracts()
    planless = PlanlessAgents(catalog).contracts()

    def factory(i):
        if i % 10 == 0:
            return empty_tool
        if i % 17 == 0:
            return planless
        return good

    jobs = [(SeedInstruction(f"mock question {i}", PERSONA.id), PERSONA)
            for i in range(100)]
    trajectories = synthesize_many(
        jobs, factory, RetrievalConfig(mode="vector", empty_query_policy="lenient"),
        engines, Budgets(), base_seed=42, workers=4)
    stats = synthesis_stats(trajectories)

    accepted = sum(1 for t in trajectories if t.status == ACCEPTED)
    discarded = sum(1 for t in trajectories if t.status == DISCARDED)
    by_reason = {}
    for t in trajectories:
        if t.status == DISCARDED:
            by_reason[t.discard_reason] = by_reason.get(t.discard_reason, 0) + 1
    assert stats["accepted"] == accepted
    assert stats["discarded"] == discarded
    assert stats["discarded_by_reason"] == dict(sorted(by_reason.items()))
    assert stats["discard_rate"] == discarded / 100
    assert discarded > 0 and accepted > 0
    report(10, f"protocol replay inserts round 3 (plan v0->v1) with zero "
               f"hallucinations; 50/50 injected violations caught by rule "
               f"pre-checks; 100-dialogue run accounting verified "
               f"({accepted} accepted / {discarded} discarded)")


# ---------------------------------------------------------------------------
# Criterion 11: byte-identical mock pipeline
# ---------------------------------------------------------------------------

BENCH_FIXTURE = [
    {
        "id": "b1",
        "mode": "fc",
        "klass": {"kind": "tool_call", "config": "ST-SC", "pattern": "single"},
        "candidates": [STOCK_PRICE],
        "gold_turns": [[{"name": "get_stock_price", "arguments": {"symbol": "600519.SH"}}]],
        "kda_fields": [{"turn": 0, "tool": "get_stock_price", "param": "symbol"}],
    },
    {
        "id": "b2",
        "mode": "fc",
        "klass": {"kind": "non_tool", "category": "DR"},
        "candidates": [],
    },
]

PRED_FIXTURE = [
    {"id": "b1", "turns": [
        '<tool_call>{"name": "get_stock_price", "arguments": {"symbol": "600519.SH"}}</tool_call>']},
    {"id": "b2", "turns": ["Based on the context you already have the answer: 37.2%."]},
]


def run_pipeline(base: Path, monkeypatch) -> dict[str, bytes]:
    base.mkdir(parents=True, exist_ok=True)
    monkeypatch.chdir(base)
    write_jsonl("raw_tools.jsonl", describable_catalog())
    write_jsonl("personas.jsonl", [PERSONA.to_dict()])
    write_jsonl("seeds.jsonl", [
        {"text": f"pipeline question {i}", "persona_id": PERSONA.id} for i in range(5)
    ])
    write_jsonl("bench.jsonl", BENCH_FIXTURE)
    write_jsonl("pred.jsonl", PRED_FIXTURE)

    assert cli_run(["build-lib", "--input", "raw_tools.jsonl", "--out", "lib.jsonl",
                    "--report", "verify.jsonl", "--seed", "3"]) == 0
    assert cli_run(["build-graph", "--library", "lib.jsonl", "--out", "graph.jsonl",
                    "--no-judge", "--seed", "3"]) == 0
    assert cli_run(["index", "--library", "lib.jsonl", "--out", "index.jsonl",
                    "--seed", "3"]) == 0
    assert cli_run(["synth", "--library", "lib.jsonl", "--personas", "personas.jsonl",
                    "--seeds", "seeds.jsonl", "--out", "traj.jsonl",
                    "--mode", "graph_enhanced", "--index", "index.jsonl",
                    "--graph", "graph.jsonl", "--agents", "mock", "--seed", "3"]) == 0
    assert cli_run(["eval", "--bench", "bench.jsonl", "--pred", "pred.jsonl",
                    "--judge", "heuristic", "--out", "report.json", "--seed", "3"]) == 0

    artifacts = ["lib.jsonl", "verify.jsonl", "graph.jsonl", "index.jsonl",
                 "traj.jsonl", "report.json",
                 "lib.jsonl.meta.json", "graph.jsonl.meta.json",
                 "index.jsonl.meta.json", "traj.jsonl.meta.json"]
    return {name: (base / name).read_bytes() for name in artifacts}


def test_criterion_11_pipeline_reproducibility(tmp_path, monkeypatch):
    def guard(*args, **kwargs):
        raise AssertionError("network operation attempted during mock pipeline")

    monkeypatch.setattr(socket, "create_connection", guard)

    started = time.monotonic()
    first = run_pipeline(tmp_path / "run1", monkeypatch)
    second = run_pipeline(tmp_path / "run2", monkeypatch)
    elapsed = time.monotonic() - started
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"artifact {name} differs between runs"
    assert elapsed < 120.0, f"took {elapsed:.2f}s"
    report(11, f"five-stage mock pipeline is byte-identical across two seeded "
               f"runs in {elapsed:.2f}s with zero network operations")
