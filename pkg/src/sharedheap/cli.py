"""Command-line entry point: single experiments and preset suites.

Exit status: 0 when every functional oracle passes, 1 when one fails,
2 on a usage error, 3 when ``--strict-trends`` is set and a preset trend
check fails. Settings come from flags, then a ``--config`` JSON file, then
the built-in defaults, in that order of precedence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import SharedHeapError, UsageError
from .experiment import APPS, PRIORITIES, ExperimentConfig, run_experiment
from .metrics import reports_to_csv
from .presets import PRESET_NAMES, PresetRunner

EXIT_OK, EXIT_ORACLE, EXIT_USAGE, EXIT_TRENDS = 0, 1, 2, 3


def _cache_arg(text):
    if text in ("ample", "constrained"):
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a byte count, 'ample' or 'constrained'")
    if value <= 0:
        raise argparse.ArgumentTypeError("cache size must be positive")
    return value


def _bool_arg(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError("expected true or false")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sharedheap",
        description="Simulate a distributed shared heap with server-side prefetching.",
        argument_default=argparse.SUPPRESS,
    )
    run = p.add_argument_group("experiment")
    run.add_argument("--app", choices=APPS)
    run.add_argument("--depth", type=int, help="prefetch depth (0 disables prefetching)")
    run.add_argument("--priority", choices=PRIORITIES)
    run.add_argument("--servers", type=int)
    run.add_argument("--clients", type=int)
    run.add_argument("--cache-bytes", dest="cache_bytes", type=_cache_arg,
                     help="per-client cache: bytes, 'ample' or 'constrained'")
    run.add_argument("--keys", type=int)
    run.add_argument("--queries", type=int)
    run.add_argument("--particles", type=int)
    run.add_argument("--updated", type=int)
    run.add_argument("--dt", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--node-bytes", dest="node_bytes", type=int)
    run.add_argument("--cold-traversal", dest="cold_traversal", type=_bool_arg)
    run.add_argument("--visit-work", dest="visit_work", type=float)
    run.add_argument("--clear-fraction", dest="clear_fraction", type=float)
    run.add_argument("--recent-filter", dest="recent_filter", type=int)
    run.add_argument("--distribution", choices=("clustered", "uniform"))

    cost = p.add_argument_group("cost model")
    cost.add_argument("--latency", type=float)
    cost.add_argument("--service-cost", dest="service_cost", type=float)
    cost.add_argument("--per-byte-cost", dest="per_byte_cost", type=float)
    cost.add_argument("--local-cost", dest="local_cost", type=float)
    cost.add_argument("--receive-cost", dest="receive_cost", type=float)
    cost.add_argument("--clear-cost", dest="clear_cost", type=float)

    out = p.add_argument_group("output")
    out.add_argument("--preset", choices=PRESET_NAMES, help="run a named experiment suite")
    out.add_argument("--config", type=Path, help="JSON file of experiment settings")
    out.add_argument("--out", type=Path, help="report file (default: stdout)")
    out.add_argument("--format", choices=("json", "csv"))
    out.add_argument("--trace", type=Path, help="write a message trace of a single run")
    out.add_argument("--strict-trends", dest="strict_trends", action="store_true",
                     help="exit 3 when a preset trend check fails")
    out.add_argument("--jobs", type=int, help="parallel runs for presets")
    return p


CONTROL = {"preset", "config", "out", "format", "trace", "strict_trends", "jobs"}


def config_from_args(args) -> ExperimentConfig:
    given = {k: v for k, v in vars(args).items() if k not in CONTROL}
    settings = {}
    if getattr(args, "config", None) is not None:
        try:
            settings.update(json.loads(args.config.read_text()))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
    settings.update(given)
    return ExperimentConfig.from_dict(settings)


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        path.write_text(text if text.endswith("\n") else text + "\n")


def _run_preset(args, fmt) -> int:
    ignored = sorted(k for k in vars(args) if k not in CONTROL)
    if ignored:
        raise UsageError(f"--preset runs frozen configs; remove {', '.join('--' + k for k in ignored)}")
    if getattr(args, "trace", None) is not None:
        raise UsageError("--trace applies to single runs, not presets")
    if getattr(args, "config", None) is not None:
        raise UsageError("--config cannot be combined with --preset")
    result = PresetRunner(jobs=getattr(args, "jobs", 1)).run(args.preset)
    out = getattr(args, "out", None)
    if fmt == "csv":
        _emit(result.to_csv(), out)
        if out is not None:
            out.with_name(out.name + ".trends.json").write_text(result.trends_json() + "\n")
    else:
        _emit(result.to_json(), out)
    for lab, res in zip(result.labels, result.results):
        print(f"run {lab}: total={res.report.value('total'):g} oracle={res.output['oracle']}",
              file=sys.stderr)
    for v in result.verdicts:
        print(v.line(), file=sys.stderr)
    if not result.oracles_ok:
        return EXIT_ORACLE
    if getattr(args, "strict_trends", False) and not result.trends_ok:
        return EXIT_TRENDS
    return EXIT_OK


def _run_single(args, fmt) -> int:
    config = config_from_args(args)
    trace_path = getattr(args, "trace", None)
    if trace_path is not None:
        with open(trace_path, "w") as trace:
            trace.write("time\tkind\tsrc\tdst\toid\tdepth\n")
            result = run_experiment(config, trace=trace)
    else:
        result = run_experiment(config)
    text = reports_to_csv([result.report]) if fmt == "csv" else result.report.to_json()
    _emit(text, getattr(args, "out", None))
    print(f"{config.app} depth={config.effective_depth} priority={config.priority} "
          f"clients={config.clients} total={result.report.value('total'):g} "
          f"oracle={result.output['oracle']} ({result.oracle_detail})", file=sys.stderr)
    return EXIT_OK if result.oracle_ok else EXIT_ORACLE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fmt = getattr(args, "format", None)
    out = getattr(args, "out", None)
    if fmt is None:
        fmt = "csv" if out is not None and out.suffix == ".csv" else "json"
    try:
        if getattr(args, "preset", None) is not None:
            return _run_preset(args, fmt)
        return _run_single(args, fmt)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sharedheap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SharedHeapError as exc:
        print(f"sharedheap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
