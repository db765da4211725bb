"""``tsallis-lq`` command-line entry point."""
import argparse
import json
import logging
import os
import sys

from . import experiments as ex
from .exact_solver import SolverError
from .plotting import CsvFormatError, emit_plot

log = logging.getLogger("tsallis_lq")

COMMANDS = {
    "exact": "solve the configured model exactly (exact.json)",
    "pi-model": "model-based policy iteration (pi_model.csv)",
    "pi-offline": "data-driven PI, offline mode",
    "pi-online": "data-driven PI, online mode, plus a matched offline run",
    "figure1": "offline runs for the tsallis, shannon and none regularizers",
    "sweep": "data-driven PI over the config's q, gamma or tau sweep",
    "mv-sim": "wealth simulation under the exact optimal policy (wealth.csv)",
    "plot": "render a history CSV as an SVG chart",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tsallis-lq", description="Tsallis-regularised LQ control.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", help=f"output directory (default: ${ex.OUT_ENV} or ./out)")
        if name == "plot":
            p.add_argument("csv", help="history CSV to plot")
            p.add_argument("--title")
            continue
        p.add_argument("--config", help="JSON config (see docs/config.schema.json)")
        p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        p.add_argument("--tol", type=float, help="Riccati solver tolerance")
        p.add_argument("--mode", choices=["offline", "online"], help="data-collection mode")
        p.add_argument("--jobs", type=int, help="parallel worker processes")
    return parser


def _overrides(args):
    over = {}
    if args.seed is not None:
        over["seeds"] = [args.seed]
    if args.tol is not None:
        over["tol"] = args.tol
    if args.mode is not None:
        over["mode"] = args.mode
    if args.jobs is not None:
        over["n_jobs"] = args.jobs
    return over


def _run(args, out_dir):
    if args.command == "plot":
        stem = os.path.splitext(os.path.basename(args.csv))[0]
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, stem + ".svg")
        emit_plot(args.csv, path, title=args.title)
        return {"svg": path}
    over = _overrides(args)
    cfg = ex.load_config(args.config, over) if args.config else ex.make_config(over)
    if args.command == "exact":
        return ex.run_exact(cfg, out_dir)
    if args.command == "pi-model":
        res = ex.run_pi_model(cfg, out_dir)
        return {"final_error": res["errors"][-1] if res["errors"] else None, "aborted": res["aborted"]}
    if args.command == "pi-offline":
        return ex.run_data_driven(cfg, out_dir, mode="offline")["median"]
    if args.command == "pi-online":
        return {k: v["median"] for k, v in ex.run_online(cfg, out_dir).items()}
    if args.command == "figure1":
        return {k: v["median"] for k, v in ex.run_figure1(cfg, out_dir).items()}
    if args.command == "sweep":
        res = ex.run_sweep(cfg, out_dir)
        return {k: v["median"] for k, v in res["results"].items()}
    if args.command == "mv-sim":
        return ex.run_mv_sim(cfg, out_dir)
    raise AssertionError(args.command)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out or os.environ.get(ex.OUT_ENV) or "out"
    try:
        result = _run(args, out_dir)
    except (ex.ConfigError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc} (residual={exc.residual}, iterations={exc.iterations})",
              file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
