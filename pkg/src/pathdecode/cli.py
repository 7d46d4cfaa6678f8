"""Command-line interface: decode one question, run a benchmark, or run oracles."""
from __future__ import annotations

import argparse
import sys

from .aggregate import greedy_cluster
from .harness import (
    METHODS,
    QaExample,
    RunConfig,
    decode_example,
    make_backend,
    make_embedder,
    run_benchmark,
)
from .lm import JsonlCache
from . import oracles

_BACKTRACK_ALIASES = {"local-min": "local-minima", "random": "random",
                      "late": "late", "none": "none"}


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="gcot")
    p.add_argument("--k", type=int, default=None, help="first-stage branch count")
    p.add_argument("--kprime", type=int, default=None, help="second-stage branch count")
    p.add_argument("--delta", type=float, default=None, help="confidence threshold")
    p.add_argument("--tau", type=float, default=None, help="clustering similarity threshold")
    p.add_argument("--seeding", choices=("fibonacci", "sequential", "one-branch"),
                   default=None)
    p.add_argument("--backtrack", choices=tuple(_BACKTRACK_ALIASES), default=None)
    p.add_argument("--max-backtracks", type=int, default=None)
    p.add_argument("--confidence", choices=("gap", "entropy", "logit"), default=None)
    p.add_argument("--aggregate", choices=("cluster", "maxpath", "majority"), default=None)
    p.add_argument("--representative", choices=("first", "centroid", "max-conf"),
                   default=None)
    p.add_argument("--spanalign-mode", choices=("last", "mean"), default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--backend", required=True, help="toy:<script> or http:<url>")
    p.add_argument("--embedder", default="hash", help="hash or http:<url>")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs")
    p.add_argument("--cache", default=None, help="JSONL record/replay cache path")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(method=args.method, backend=args.backend,
                    embedder=args.embedder, out_dir=args.out, cache=args.cache)
    if args.k is not None:
        cfg.branch.k = args.k
        if args.method == "cot-decoding":
            cfg.sampler.top_k = args.k
    if args.kprime is not None:
        cfg.branch.k_prime = args.kprime
    if args.delta is not None:
        cfg.branch.delta = args.delta
    if args.tau is not None:
        cfg.aggregation.tau = args.tau
    if args.seeding is not None:
        cfg.branch.seeding = args.seeding
    if args.backtrack is not None:
        cfg.branch.backtracking = _BACKTRACK_ALIASES[args.backtrack]
    if args.max_backtracks is not None:
        cfg.branch.max_backtracks_per_path = args.max_backtracks
    if args.confidence is not None:
        cfg.confidence = args.confidence
    if args.aggregate is not None:
        cfg.aggregation.strategy = args.aggregate
    if args.representative is not None:
        cfg.aggregation.representative = args.representative
    if args.spanalign_mode is not None:
        cfg.spanalign_mode = args.spanalign_mode
    if args.template is not None:
        cfg.template = args.template
    if args.runs is not None:
        cfg.runs = args.runs
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_decode(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    cache = JsonlCache(cfg.cache) if cfg.cache else None
    backend = make_backend(cfg.backend, cache)
    embedder = make_embedder(cfg.embedder, cache)
    example = QaExample(id="cli", question=args.question, gold_answers=["?"],
                        task_kind=args.task)
    outcome = decode_example(example, cfg, backend, embedder, cfg.seed)
    print(f"question: {args.question}")
    print(f"method: {cfg.method}")
    print("paths:")
    for i, info in enumerate(outcome.paths, 1):
        bits = [f"[{i}]"]
        if info.get("seed_rank") is not None:
            bits.append(f"seed_rank={info['seed_rank']}")
        if info.get("backtrack_at") is not None:
            bits.append(f"backtrack_at={info['backtrack_at']}")
        if "score" in info:
            bits.append(f"score={info['score']:.4f}")
        if "answer" in info and info["answer"] is not None:
            bits.append(f"answer={info['answer']!r}")
        bits.append(f"text={info['text']!r}")
        print("  " + " ".join(bits))
    scored = [(info.get("answer"), info.get("score")) for info in outcome.paths
              if info.get("answer") is not None and info.get("score") is not None]
    if cfg.method in ("gcot", "gcot-spanalign") and scored:
        clusters = greedy_cluster([a for a, _ in scored], [s for _, s in scored],
                                  cfg.aggregation, embedder)
        print("clusters:")
        for j, cluster in enumerate(clusters, 1):
            idxs = [i for _, _, i in cluster.members]
            print(f"  [{j}] C={cluster.cumulative:.4f} "
                  f"rep={cluster.representative!r} members={idxs}")
    if outcome.triggered is not None:
        print(f"backtracking triggered: {outcome.triggered} "
              f"({outcome.trigger_count} event(s))")
    print(f"selected: {outcome.selected}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.dataset = args.dataset
    summary = run_benchmark(cfg)
    print(f"records: {summary.records_path}")
    print(f"summary: {summary.summary_path}")
    for row in summary.rows:
        extra = ""
        if row["trigger_rate"] is not None:
            extra = (f"  trigger_rate={row['trigger_rate']:.3f}"
                     f"  success_given_trigger="
                     + ("-" if row["success_given_trigger"] is None
                        else f"{row['success_given_trigger']:.3f}"))
        print(f"{row['method']:>16}  {row['dataset']}  {row['metric']}="
              f"{row['mean']:.4f}  per-seed=[{row['per_seed']}]{extra}")
    if summary.n_failures:
        print(f"failures: {summary.n_failures} "
              f"({summary.failure_rate:.1%} of example-seed pairs)")
    return 1 if summary.failure_rate > 0.10 else 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    reports = oracles.run_all(seed=args.seed if args.seed is not None else 0)
    ok = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.name}: {rep.detail}")
        ok = ok and rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathdecode",
        description="Multi-path decoding strategies over ranked-candidate LM backends.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_decode = sub.add_parser("decode", help="decode a single question, print paths")
    p_decode.add_argument("--question", required=True)
    p_decode.add_argument("--task", choices=("fixed-numeric", "fixed-binary", "free"),
                          default="free")
    _add_common_flags(p_decode)
    p_decode.set_defaults(fn=_cmd_decode)

    p_bench = sub.add_parser("bench", help="run a benchmark over a JSONL dataset")
    p_bench.add_argument("--dataset", required=True)
    _add_common_flags(p_bench)
    p_bench.set_defaults(fn=_cmd_bench)

    p_oracle = sub.add_parser("oracle", help="run the brute-force verification suites")
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.set_defaults(fn=_cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
