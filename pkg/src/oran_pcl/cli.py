"""Command-line entry point: ``oran-pcl generate|train|run|compare|serve``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, PclError
from .scenario import ScenarioConfig, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    # argparse exits with 2 on usage errors, which already matches EXIT_CONFIG
    parser = argparse.ArgumentParser(prog="oran-pcl", description="Predictive closed-loop slice provisioning experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario JSON file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides the scenario seed")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset CSV")
    sub.add_parser("train", parents=[common], help="train forecasters and print the accuracy table")
    run = sub.add_parser("run", parents=[common], help="replay the test period with static or adaptive limits")
    run.add_argument("--mode", choices=("static", "dynamic"), required=True)
    sub.add_parser("compare", parents=[common], help="run both modes and emit totals, plot data and SVG")
    serve = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    return parser


def _scenario(args) -> ScenarioConfig:
    out = str(args.out) if args.out is not None else None
    if args.config is None:
        doc = ScenarioConfig().model_dump(mode="json")
        if args.seed is not None:
            doc["seed"] = args.seed
        if out is not None:
            doc["output_dir"] = out
        return ScenarioConfig.model_validate(doc)
    return load_scenario(args.config, args.seed, out)


def _dispatch(args) -> int:
    from . import experiment

    scenario = _scenario(args)
    out = Path(scenario.output_dir)
    if args.command == "generate":
        path = experiment.cmd_generate(scenario, out)
        print(f"wrote {path}")
    elif args.command == "train":
        result = experiment.cmd_train(scenario, out)
        print(experiment.format_accuracy_table(result.table))
    elif args.command == "run":
        report = experiment.cmd_run(scenario, out, args.mode)
        print(report.totals_json(), end="")
    elif args.command == "compare":
        result = experiment.cmd_compare(scenario, out)
        t = result.totals
        print(
            f"static non_optimal={t['static']['total']['non_optimal']} "
            f"dynamic non_optimal={t['dynamic']['total']['non_optimal']} "
            f"ratio={t['ratio']:.3f}" if t["ratio"] is not None else "static total is zero"
        )
        print(f"outputs in {out}")
    elif args.command == "serve":
        from .service import serve

        serve(args.host, args.port, scenario)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PclError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
