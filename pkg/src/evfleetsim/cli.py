"""Command line front door.

Subcommands:
  fit    fit the travel model from the configured demand source and save it
  run    simulate a policy over the configured horizon, exporting artifacts
  serve  speak the line protocol over stdio or a local TCP socket
  plot   render overview figures from an exported run directory

Exit codes: 0 success, 1 usage, 2 bad configuration or input data,
3 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .config import load_config
from .engine import ScheduleRejected
from .runner import POLICY_NAMES, build_traffic, demand_records, run_to_directory, with_overrides

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class CliParser(argparse.ArgumentParser):
    """argparse with usage failures mapped onto exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> CliParser:
    parser = CliParser(prog="evfleet", description="Electric taxi fleet simulator.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    fit = sub.add_parser("fit", help="fit and save the travel model")
    fit.add_argument("--config", required=True, help="YAML configuration file")
    fit.add_argument("--out", required=True, help="where to save the fitted model (JSON)")

    run = sub.add_parser("run", help="simulate a policy and export run artifacts")
    run.add_argument("--config", required=True, help="YAML configuration file")
    run.add_argument("--policy", choices=POLICY_NAMES, default="baseline")
    run.add_argument("--weights", help="weight file, required with --policy neural")
    run.add_argument("--out", required=True, help="artifact directory")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--mode", choices=("retire", "keep"),
                     help="what happens to packs past the health threshold")

    serve = sub.add_parser("serve", help="serve the control protocol for trainers")
    serve.add_argument("--config", required=True, help="YAML configuration file")
    serve.add_argument("--endpoint", default="stdio",
                       help="stdio (default), tcp:HOST:PORT, or tcp:PORT")
    serve.add_argument("--seed", type=int, help="override the configured seed")

    plot = sub.add_parser("plot", help="render figures from a run directory")
    plot.add_argument("--out", required=True,
                      help="run directory holding the exported CSVs; the PNG lands there")
    return parser


def _parse_endpoint(text: str) -> Optional[tuple]:
    if text == "stdio":
        return ("stdio",)
    if text.startswith("tcp:"):
        rest = text[len("tcp:"):]
        host, sep, port = rest.rpartition(":")
        if not sep:
            host, port = "127.0.0.1", rest
        if not host:
            host = "127.0.0.1"
        if port.isdigit() and 0 < int(port) < 65536:
            return ("tcp", host, int(port))
    return None


def _cmd_fit(args) -> int:
    config = load_config(args.config)
    records, dataset_hash, stats = demand_records(config)
    model = build_traffic(config, records, dataset_hash)
    model.save(args.out)
    print(json.dumps(
        {
            "out": args.out,
            "zones": len(model.zones),
            "trips": stats.rows_kept,
            "dataset_hash": dataset_hash,
        },
        sort_keys=True, separators=(",", ":"),
    ))
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config)
    config = with_overrides(config, seed=args.seed, mode=args.mode)
    summary = run_to_directory(config, args.policy, args.out, weights_path=args.weights)
    print(json.dumps(summary, sort_keys=True, separators=(",", ":")))
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .envserver import serve_stdio, serve_tcp

    endpoint = _parse_endpoint(args.endpoint)
    if endpoint is None:
        sys.stderr.write(
            f"evfleet serve: error: bad endpoint {args.endpoint!r}; "
            "expected stdio, tcp:HOST:PORT, or tcp:PORT\n"
        )
        return EXIT_USAGE
    config = load_config(args.config)
    if args.seed is not None:
        config = with_overrides(config, seed=args.seed)
    if endpoint[0] == "stdio":
        serve_stdio(config)
    else:
        def announce(sockname):
            # lets callers bind port 0 and discover the real port
            sys.stdout.write(
                json.dumps(
                    {"kind": "listening", "host": sockname[0], "port": sockname[1]},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )
            sys.stdout.flush()

        serve_tcp(config, host=endpoint[1], port=endpoint[2], ready_callback=announce)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import render_overview

    print(render_overview(args.out))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage failures exit 1
        code = exc.code
        return EXIT_OK if code in (0, None) else int(code)

    if args.command == "run" and args.policy == "neural" and not args.weights:
        sys.stderr.write("evfleet run: error: --policy neural needs --weights\n")
        return EXIT_USAGE

    handlers = {"fit": _cmd_fit, "run": _cmd_run, "serve": _cmd_serve, "plot": _cmd_plot}
    try:
        return handlers[args.command](args)
    except (ScheduleRejected, RuntimeError) as err:
        sys.stderr.write(f"evfleet {args.command}: invariant violation: {err}\n")
        return EXIT_RUNTIME
    except (ValueError, OSError) as err:
        sys.stderr.write(f"evfleet {args.command}: error: {err}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
