"""``gas-sim`` command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""

import argparse
import logging
import os
import sys

from .config import MODES, parse_config
from .errors import ConfigHashMismatch, ConfigInvalid, ParseError, SimulationError, VersionMismatch
from .experiment import continue_run, resume, run_experiment

log = logging.getLogger("gas_sim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parser():
    p = argparse.ArgumentParser(prog="gas-sim", description="Asynchronous split federated learning simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", help="key=value config file (defaults if omitted)")
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", action="store_true", help="write trace.jsonl")
    run.add_argument("--out", help="output directory")
    run.add_argument("--checkpoint-at", type=int, default=0, metavar="T",
                     help="save checkpoint.pkl after T aggregations")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key")

    res = sub.add_parser("resume", help="continue from a checkpoint")
    res.add_argument("--checkpoint", required=True)
    res.add_argument("--config", help="refuse to resume unless this config matches")
    res.add_argument("--trace", action="store_true")
    res.add_argument("--out", help="output directory")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ParseError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.mode:
        out["mode"] = args.mode
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.out:
        out["out_dir"] = args.out
    return out


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    threads = int(os.environ.get("GAS_SIM_THREADS", "1"))
    if threads != 1:
        log.warning("GAS_SIM_THREADS=%d ignored; the simulator runs single-threaded", threads)
    try:
        if args.command == "run":
            cfg = parse_config(args.config, _overrides(args))
            out = cfg.out_dir
            metrics, sim = run_experiment(cfg, out, trace=args.trace, checkpoint_at=args.checkpoint_at)
        else:
            cfg = parse_config(args.config) if args.config else None
            sim = resume(args.checkpoint, cfg)
            out = args.out or sim.cfg.out_dir
            metrics, sim = continue_run(sim, out, trace=args.trace)
    except (ParseError, ConfigInvalid, ConfigHashMismatch, VersionMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    last = metrics[-1] if metrics else None
    if last is not None:
        log.info("done: t=%d time=%.3fs server_updates=%d accuracy=%s -> %s",
                 last.aggregation, last.sim_time, last.server_updates, last.test_accuracy, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
