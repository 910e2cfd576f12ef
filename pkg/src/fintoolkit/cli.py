"""Command-line pipeline driver.

Subcommands cover the pipeline stages end to end: ``build-lib`` (parse,
verify, normalize a raw tool dump), ``build-graph``, ``index``, ``synth``
(multi-agent dialogue synthesis), ``eval`` (benchmark scoring), ``convert``
(schema format conversion), ``sample`` (stratified sampling), and ``stats``.

Conventions: outputs are written atomically; every artifact gets a
``<out>.meta.json`` sidecar (reports embed the metadata inline) recording the
tool version, seed, and a digest of the effective configuration; all
randomness is seeded from ``--seed``. Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .agents import ProceduralAgents, ScriptedAgents
from .codec import FcFunction, fc_to_mcp, mcp_to_fc
from .gateway import Gateway, GatewayRequest, MockBackend
from .graph import (
    DIRECT_TOOL,
    INDIRECT_TOOL,
    ToolGraph,
    propose_param_edges,
    propose_tool_edges,
)
from .index import HashedBagOfWordsEncoder, VectorIndex
from .jsonl import load_jsonl, read_jsonl, write_json, write_jsonl
from .registry import (
    Library,
    ParamSchema,
    SpecReview,
    StructuralLimits,
    ToolSpecError,
    normalize_library,
    parse_tool_spec,
    save_verification_reports,
    serialize_tool_spec,
    verify_logical,
    verify_structural,
)
from .retrieval import RetrievalConfig
from .sampling import SamplingQuota, dataset_stats, stratified_sample
from .scoring import (
    EvalInstance,
    GatewayJudgeClient,
    HeuristicJudge,
    PromptedJudge,
    Weights,
    aggregate_report,
    render_report_table,
    score_instance,
)
from .synthesis import (
    Budgets,
    RetrievalEngines,
    load_personas,
    load_seeds,
    save_trajectories,
    synthesis_stats,
    synthesize_many,
)


class ValidationError(Exception):
    """Bad arguments or unreadable inputs; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _config_digest(args: argparse.Namespace) -> str:
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _artifact_meta(args: argparse.Namespace, **extra) -> dict:
    return {
        "tool": "fintoolkit",
        "version": __version__,
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "config_digest": _config_digest(args),
        **extra,
    }


def _write_sidecar(out_path: str, args: argparse.Namespace, **extra) -> None:
    write_json(f"{out_path}.meta.json", _artifact_meta(args, **extra))


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {path}")
    return p


class _MockSpecJudge:
    """Spec judge over a scripted (or live) chat client.

    The client answers with JSON ``{"pass": bool, "diagnosis": str,
    "revised_spec": {...}|null}``.
    """

    def __init__(self, gateway: Gateway, profile_id: str):
        self.gateway = gateway
        self.profile_id = profile_id

    def review(self, spec) -> SpecReview:
        from .gateway import GatewayError
        from .registry import JudgeUnavailable

        try:
            doc = self.gateway.complete_structured(GatewayRequest(
                profile=self.profile_id,
                messages=[{
                    "role": "user",
                    "content": ("Review this tool specification for logical correctness. "
                                "Reply as JSON {\"pass\": bool, \"diagnosis\": str, "
                                "\"revised_spec\": object|null}.\n"
                                + serialize_tool_spec(spec)),
                }],
            ))
        except GatewayError as exc:
            raise JudgeUnavailable(str(exc)) from exc
        revised = None
        if doc.get("revised_spec"):
            revised = parse_tool_spec(json.dumps(doc["revised_spec"]))
        return SpecReview(passed=bool(doc.get("pass")), diagnosis=str(doc.get("diagnosis", "")),
                          revised_spec=revised)


class _MockPairJudge:
    """Pair judge over a scripted (or live) chat client; answers with a label."""

    def __init__(self, gateway: Gateway, profile_id: str):
        self.gateway = gateway
        self.profile_id = profile_id

    def classify(self, head, tail) -> str:
        from .gateway import GatewayError
        from .registry import JudgeUnavailable

        try:
            text = self.gateway.complete(GatewayRequest(
                profile=self.profile_id,
                messages=[{
                    "role": "user",
                    "content": ("Classify the dependency of the second tool on the first as "
                                "direct_tool_dependency, indirect_tool_dependency, or none.\n"
                                f"head: {serialize_tool_spec(head)}\n"
                                f"tail: {serialize_tool_spec(tail)}"),
                }],
            )).strip()
        except GatewayError as exc:
            raise JudgeUnavailable(str(exc)) from exc
        for label in (DIRECT_TOOL, INDIRECT_TOOL, "none"):
            if text.startswith(label):
                return label
        return "none"


def _mock_gateway(transcript_path: str, profile_id: str = "judge") -> Gateway:
    from .gateway import EndpointProfile

    backend = MockBackend.load(transcript_path)
    profile = EndpointProfile(id=profile_id, backoff=0.0)
    return Gateway({profile_id: profile}, backends={profile_id: backend})


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build_lib(args: argparse.Namespace) -> int:
    _require_file(args.input, "raw tool file")
    limits = StructuralLimits(max_params=args.max_params, max_nesting_depth=args.max_depth)
    judge = None
    if args.judge:
        judge = _MockSpecJudge(_mock_gateway(args.judge), "judge")
    specs, reports = [], []
    for lineno, row in enumerate(read_jsonl(args.input), start=1):
        try:
            spec = parse_tool_spec(json.dumps(row, ensure_ascii=False))
        except ToolSpecError as exc:
            print(f"line {lineno}: rejected ({exc})", file=sys.stderr)
            continue
        report = verify_structural(spec, limits)
        if report.layer1_pass and judge is not None:
            report = verify_logical(spec, judge, budget=args.t_max, limits=limits)
            if report.revised_spec is not None:
                spec = report.revised_spec
        reports.append(report)
        if report.passed:
            specs.append(spec)
    library = normalize_library(specs, threshold=args.threshold,
                                metadata={"source": args.input})
    library.save(args.out)
    _write_sidecar(args.out, args, count=len(library),
                   review_flags=len(library.metadata["review_flags"]))
    if args.report:
        save_verification_reports(args.report, reports)
    print(f"library: {len(library)} tools "
          f"({len(library.metadata['review_flags'])} review flags)")
    return 0


def cmd_build_graph(args: argparse.Namespace) -> int:
    _require_file(args.library, "library file")
    library = Library.load(args.library)
    edges = propose_param_edges(library)
    if args.judge and not args.no_judge:
        gateway = _mock_gateway(args.judge)
        edges = edges + propose_tool_edges(library, _MockPairJudge(gateway, "judge"))
    graph = ToolGraph.build(library.names(), edges)
    graph.save(args.out)
    _write_sidecar(args.out, args, nodes=len(graph.nodes), edges=len(graph.edges))
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    _require_file(args.library, "library file")
    library = Library.load(args.library)
    encoder = HashedBagOfWordsEncoder(dim=args.dim)
    index = VectorIndex.build(library, encoder)
    index.save(args.out)
    _write_sidecar(args.out, args, entries=len(index), encoder_id=index.encoder_id)
    print(f"index: {len(index)} vectors, dim {index.dim}, encoder {index.encoder_id}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    _require_file(args.library, "library file")
    _require_file(args.personas, "persona file")
    _require_file(args.seeds, "seed instruction file")
    library = Library.load(args.library)
    personas = load_personas(args.personas)
    seeds = load_seeds(args.seeds)
    if args.count is not None:
        seeds = seeds[: args.count]
    try:
        jobs = [(seed, personas[seed.persona_id]) for seed in seeds]
    except KeyError as exc:
        raise ValidationError(f"seed references unknown persona {exc}") from exc

    encoder = HashedBagOfWordsEncoder(dim=args.dim)
    index = VectorIndex.load(args.index, expected_encoder_id=encoder.id) if args.index else None
    graph = ToolGraph.load(args.graph) if args.graph else None
    engines = RetrievalEngines(library=library, index=index, graph=graph, encoder=encoder)
    config = RetrievalConfig(mode=args.mode, top_k=args.top_k, hops=args.hops,
                             empty_query_policy="lenient")

    if args.agents == "mock":
        shared = ProceduralAgents(library).contracts()
        agents_factory = lambda i: shared  # noqa: E731 - stateless, thread-safe
    elif args.agents.startswith("transcript:"):
        path = args.agents.split(":", 1)[1]
        _require_file(path, "agent transcript")
        agents_factory = lambda i: ScriptedAgents.load(path).contracts()  # noqa: E731
    else:
        raise ValidationError(f"unknown --agents value {args.agents!r}")

    budgets = Budgets(per_turn_retries=args.retries, max_turns=args.max_turns)
    trajectories = synthesize_many(jobs, agents_factory, config, engines, budgets,
                                   base_seed=args.seed, workers=args.workers)
    save_trajectories(args.out, trajectories)
    stats = synthesis_stats(trajectories)
    _write_sidecar(args.out, args, **stats)
    print(f"synth: {stats['accepted']} accepted, {stats['discarded']} discarded "
          f"(rate {stats['discard_rate']:.3f}), avg turns {stats['avg_turns']}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _require_file(args.bench, "benchmark file")
    _require_file(args.pred, "predictions file")
    library = Library.load(args.library) if args.library else None
    instances = [EvalInstance.from_dict(doc, library=library)
                 for doc in read_jsonl(args.bench)]
    predictions = {doc["id"]: doc.get("turns", []) for doc in read_jsonl(args.pred)}

    if args.judge == "heuristic":
        judge = HeuristicJudge()
    else:
        _require_file(args.judge, "judge transcript")
        gateway = _mock_gateway(args.judge)
        judge = PromptedJudge(GatewayJudgeClient(gateway, "judge"))
    weights = Weights.from_floats(args.w_val, args.w_struct, args.w_exec, args.w_select)

    def score_one(instance: EvalInstance):
        return score_instance(instance, predictions.get(instance.id, []), judge, weights)

    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(score_one, instances))
    else:
        results = [score_one(instance) for instance in instances]

    report = aggregate_report(results)
    document = {
        "meta": _artifact_meta(args),
        "report": report,
        "instances": [r.to_dict() for r in results],
    }
    write_json(args.out, document)
    print(render_report_table(report))
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    _require_file(args.input, "input file")
    rows = []
    for row in read_jsonl(args.input):
        if args.to == "fc":
            spec = parse_tool_spec(json.dumps(row, ensure_ascii=False))
            rows.append(mcp_to_fc(spec).to_dict())
        else:
            fn = row.get("function", {})
            schema = fn.get("parameters", {"properties": {}, "required": []})
            fc = FcFunction(
                name=fn.get("name", ""),
                description=fn.get("description", ""),
                parameters=ParamSchema(
                    properties=schema.get("properties", {}),
                    required=tuple(schema.get("required", [])),
                ),
            )
            rows.append(fc_to_mcp(fc).to_dict())
    write_jsonl(args.out, rows)
    _write_sidecar(args.out, args, count=len(rows))
    print(f"converted {len(rows)} tools to {args.to}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    _require_file(args.corpus, "corpus file")
    _require_file(args.quota, "quota file")
    corpus = load_jsonl(args.corpus)
    quota = SamplingQuota.load(args.quota)
    sample, shortfall = stratified_sample(corpus, quota, args.target, args.seed)
    write_jsonl(args.out, sample)
    _write_sidecar(args.out, args, sampled=len(sample), shortfalls=len(shortfall))
    if args.shortfall_out or shortfall:
        write_json(args.shortfall_out or f"{args.out}.shortfall.json", shortfall)
    print(f"sampled {len(sample)} of {len(corpus)} ({len(shortfall)} shortfalls)")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    _require_file(args.corpus, "corpus file")
    corpus = load_jsonl(args.corpus)
    fields = tuple(args.fields.split(",")) if args.fields else None
    stats = dataset_stats(corpus, label_fields=fields) if fields else dataset_stats(corpus)
    if args.out:
        write_json(args.out, {"meta": _artifact_meta(args), "stats": stats})
    width = max((len(" / ".join(r["label"].values())) for r in stats["rows"]), default=10)
    for row in stats["rows"]:
        label = " / ".join(row["label"].values())
        print(f"{label:<{width}}  {row['count']:>6}  {row['pct']:>6.2f}%")
    print(f"total: {stats['total']}  avg turns: {stats['avg_turns']}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="fintoolkit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-lib", help="parse, verify, and normalize a raw tool dump")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="verification report JSONL")
    p.add_argument("--max-params", type=int, default=8)
    p.add_argument("--max-depth", type=int, default=2)
    p.add_argument("--threshold", type=float, default=0.9,
                   help="similarity threshold for review flags")
    p.add_argument("--t-max", type=int, default=3, help="logical verification budget")
    p.add_argument("--judge", default=None, help="judge mock transcript JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_lib)

    p = sub.add_parser("build-graph", help="build the tool dependency graph")
    p.add_argument("--library", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--judge", default=None, help="judge mock transcript JSONL")
    p.add_argument("--no-judge", action="store_true",
                   help="heuristic parameter edges only")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("index", help="build the semantic vector index")
    p.add_argument("--library", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("synth", help="synthesize supervised dialogues")
    p.add_argument("--library", required=True)
    p.add_argument("--personas", required=True)
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("static", "vector", "graph_enhanced"),
                   default="vector")
    p.add_argument("--index", default=None)
    p.add_argument("--graph", default=None)
    p.add_argument("--agents", default="mock",
                   help='"mock" or "transcript:<path>"')
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--max-turns", type=int, default=12)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score predictions against a benchmark")
    p.add_argument("--bench", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--judge", required=True,
                   help='"heuristic" or a judge mock transcript JSONL')
    p.add_argument("--out", required=True)
    p.add_argument("--library", default=None,
                   help="library for benchmarks with named candidates")
    p.add_argument("--w-val", type=float, default=0.7)
    p.add_argument("--w-struct", type=float, default=0.3)
    p.add_argument("--w-exec", type=float, default=0.6)
    p.add_argument("--w-select", type=float, default=0.4)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert tool schemas between MCP and FC")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--to", choices=("fc", "mcp"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("sample", help="two-stage stratified sampling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--quota", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=0,
                   help="target size (ignored when the quota is count-based)")
    p.add_argument("--shortfall-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("stats", help="distribution statistics for a labeled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--fields", default=None, help="comma-separated label fields")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
