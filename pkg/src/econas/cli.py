"""Command-line entry points.

Subcommands: zoo generate | zoo evaluate | analyze | search |
bridge-selftest | surrogate-serve. All commands are deterministic for fixed
inputs and seeds; data always goes to files or stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .analysis import AnalysisError
from .bridge import serve
from .genotype import GenotypeError, OutputRule
from .metrics import MetricError
from .proxy import SettingError, resolve_table
from .records import LogError
from .search import SearchError, resolve_op_set
from .surrogate import SurrogateEvaluator, SurrogateParams

_USER_ERRORS = (
    harness.HarnessError,
    AnalysisError,
    SettingError,
    GenotypeError,
    MetricError,
    SearchError,
    LogError,
    FileNotFoundError,
)


def _csv_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="econas",
        description="Proxy-based evolutionary cell search toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    zoo = sub.add_parser("zoo", help="model zoo workflows")
    zoo_sub = zoo.add_subparsers(dest="zoo_command", required=True)

    gen = zoo_sub.add_parser("generate", help="write a zoo of random genotypes")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--count", type=int, default=50)
    gen.add_argument("--nodes", type=int, default=5)
    gen.add_argument("--op-set", default="zoo13", choices=["zoo13", "search8"])
    gen.add_argument(
        "--output-rule",
        default="all_intermediate",
        choices=[r.value for r in OutputRule],
    )
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--force", action="store_true")

    ev = zoo_sub.add_parser("evaluate", help="evaluate a zoo over a setting grid")
    ev.add_argument("--manifest", help="experiment manifest document")
    ev.add_argument("--zoo", help="zoo directory (manifest-less mode)")
    ev.add_argument("--table", default="cifar10", help="built-in name or table document")
    ev.add_argument("--settings", help="comma-separated setting labels")
    ev.add_argument("--out", help="output evaluation log")
    ev.add_argument("--evaluator", default="surrogate", help="'surrogate' or 'cmd:...'")
    ev.add_argument("--params", help="surrogate parameters document")
    ev.add_argument("--seed", type=int, default=7)
    ev.add_argument("--workers", type=int, default=None)
    ev.add_argument("--no-resume", action="store_true", help="re-evaluate everything")

    an = sub.add_parser("analyze", help="build consistency reports from a log")
    an.add_argument("--log", required=True)
    an.add_argument("--ground-truth", required=True, help="Ground-Truth setting label")
    an.add_argument("--out", required=True, help="report output directory")
    an.add_argument("--table", default="cifar10")
    an.add_argument("--top-k", type=int, default=10)
    an.add_argument("--windows", default="15,20")
    an.add_argument("--tolerant-b", type=float, default=0.0015)
    an.add_argument("--rho-f-sizes", help="e.g. 5,10,15,20,30,50")
    an.add_argument("--rho-f-trials", type=int, default=100)
    an.add_argument("--seed", type=int, default=0)
    an.add_argument(
        "--allow-duplicates",
        action="store_true",
        help="keep the last record per (model, setting); needed for search histories",
    )

    se = sub.add_parser("search", help="run the evolutionary search")
    se.add_argument("--config", required=True, help="search config document")
    se.add_argument("--out", required=True, help="result directory")
    se.add_argument("--resume", action="store_true", help="continue from checkpoint")
    se.add_argument("--force", action="store_true", help="ignore an existing checkpoint")
    se.add_argument("--workers", type=int, default=None)
    se.add_argument(
        "--stop-after-cycle",
        type=int,
        default=None,
        help="stop at a cycle boundary (for testing interrupted runs)",
    )

    bt = sub.add_parser("bridge-selftest", help="check the subprocess evaluator path")
    bt.add_argument(
        "--command",
        dest="serve_command",
        help="evaluator command line (default: own surrogate)",
    )
    bt.add_argument("--table", default="cifar10")
    bt.add_argument("--seed", type=int, default=7)
    bt.add_argument("--params", help="surrogate parameters document")
    bt.add_argument("--checks", type=int, default=3)

    sv = sub.add_parser(
        "surrogate-serve", help="serve the surrogate over the wire protocol on stdio"
    )
    sv.add_argument("--table", default="cifar10")
    sv.add_argument("--seed", type=int, default=7)
    sv.add_argument("--params", help="surrogate parameters document")

    return parser


def _cmd_zoo_generate(args) -> int:
    entries = harness.zoo_generate(
        args.out,
        count=args.count,
        node_count=args.nodes,
        op_set=resolve_op_set(args.op_set),
        seed=args.seed,
        output_rule=OutputRule(args.output_rule),
        force=args.force,
    )
    print("wrote %d genotypes + index to %s" % (len(entries), args.out))
    return 0


def _manifest_from_args(args) -> harness.ExperimentManifest:
    if args.manifest:
        manifest = harness.load_manifest(args.manifest)
        if args.workers is not None:
            manifest.workers = args.workers
        return manifest
    if not (args.zoo and args.settings and args.out):
        raise harness.HarnessError(
            "either --manifest or all of --zoo/--settings/--out are required"
        )
    table = resolve_table(args.table)
    from .proxy import parse_label

    settings = sorted(
        {parse_label(lbl.strip(), table) for lbl in args.settings.split(",") if lbl.strip()}
    )
    params = SurrogateParams.load(args.params) if args.params else None
    return harness.ExperimentManifest(
        table=table,
        settings=settings,
        zoo_dir=args.zoo,
        evaluator_spec=args.evaluator,
        seed=args.seed,
        output_log=args.out,
        surrogate_params=params,
        workers=args.workers if args.workers is not None else 1,
    )


def _cmd_zoo_evaluate(args) -> int:
    manifest = _manifest_from_args(args)
    completed, failed, total = harness.zoo_evaluate(manifest, resume=not args.no_resume)
    print(
        "evaluated %d/%d records into %s (%d failed)"
        % (completed, total, manifest.output_log, failed)
    )
    if failed > 0.10 * total:
        print("more than 10%% of the grid failed", file=sys.stderr)
        return 1
    return 0


def _cmd_analyze(args) -> int:
    table = resolve_table(args.table)
    sizes = _csv_ints(args.rho_f_sizes) if args.rho_f_sizes else None
    report, paths = harness.run_analyze(
        args.log,
        args.ground_truth,
        args.out,
        table,
        top_k=args.top_k,
        windows=tuple(_csv_ints(args.windows)),
        tolerant_b=args.tolerant_b,
        rho_f_sizes=sizes,
        rho_f_trials=args.rho_f_trials,
        seed=args.seed,
        allow_duplicates=args.allow_duplicates,
    )
    print("%d settings analyzed against %s" % (len(report.rows), args.ground_truth))
    for path in paths:
        print("wrote %s" % path)
    return 0


def _cmd_search(args) -> int:
    cfg = harness.load_search_config(args.config)
    result = harness.run_search(
        cfg,
        args.out,
        resume=args.resume,
        force=args.force,
        workers=args.workers,
        stop_after_cycle=args.stop_after_cycle,
    )
    if args.stop_after_cycle is not None:
        print("stopped at cycle boundary %d; checkpoint saved" % args.stop_after_cycle)
        return 0
    print(
        "search done: %d models from scratch, %d trained epochs"
        % (result.ledger.from_scratch_models, result.ledger.total_epochs)
    )
    if result.top:
        best = result.top[0]
        print(
            "best model %s: accuracy %.4f after %d epochs"
            % (best.model_id[:16], best.accuracy, best.epochs_trained)
        )
    return 0


def _cmd_bridge_selftest(args) -> int:
    table = resolve_table(args.table)
    params = (
        SurrogateParams.load(args.params)
        if args.params
        else SurrogateParams().with_seed(args.seed)
    )
    command = args.serve_command or harness.default_serve_command(
        args.table, args.seed, args.params
    )
    lines = harness.bridge_selftest(
        command=command, table=table, params=params, seed=args.seed, checks=args.checks
    )
    for line in lines:
        print(line)
    return 0


def _cmd_surrogate_serve(args) -> int:
    table = resolve_table(args.table)
    params = (
        SurrogateParams.load(args.params)
        if args.params
        else SurrogateParams().with_seed(args.seed)
    )
    serve(SurrogateEvaluator(params, table), table)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "zoo" and args.zoo_command == "generate":
            return _cmd_zoo_generate(args)
        if args.command == "zoo" and args.zoo_command == "evaluate":
            return _cmd_zoo_evaluate(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "search":
            return _cmd_search(args)
        if args.command == "bridge-selftest":
            return _cmd_bridge_selftest(args)
        if args.command == "surrogate-serve":
            return _cmd_surrogate_serve(args)
    except _USER_ERRORS as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    raise AssertionError("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
