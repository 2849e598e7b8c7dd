"""Command line entry point: one subcommand per scenario plus ``report``.

Exit codes: 0 all checks passed, 2 at least one check failed, 1 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import SCENARIOS, ConfigError, ScenarioConfig, emit_report, run_scenario

log = logging.getLogger("spinreg")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinreg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("--config", type=Path, help="JSON scenario config")
        sp.add_argument("--seed", type=int, help="RNG seed (unsigned 64 bit)")
        sp.add_argument("--out", type=Path, help="output directory (default: runs)")
        sp.add_argument("--jobs", type=int, help="worker processes for sweeps")
        sp.add_argument("--params", help="preset name or parameter file")
        sp.add_argument("--knob", action="append", default=[], metavar="KEY=JSON",
                        help="scenario knob, e.g. --knob points=21")
    rp = sub.add_parser("report", help="collect scenario results into one table")
    rp.add_argument("runs", nargs="*", type=Path, help="run directories (default: --out)")
    rp.add_argument("--out", type=Path, default=Path("runs"))
    rp.add_argument("--json", action="store_true", help="print JSON instead of markdown")
    return ap


def _config(args) -> ScenarioConfig:
    extra = {"seed": args.seed, "out": None if args.out is None else str(args.out),
             "jobs": args.jobs, "params": args.params}
    if args.config is not None:
        cfg = ScenarioConfig.from_file(args.config, **extra)
        if cfg.scenario != args.command:
            raise ConfigError(f"config is for scenario {cfg.scenario!r}, not {args.command!r}")
    else:
        cfg = ScenarioConfig.from_dict({"scenario": args.command,
                                        **{k: v for k, v in extra.items() if v is not None}})
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64 bit integer")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    for kv in args.knob:
        key, sep, val = kv.partition("=")
        if not sep:
            raise ConfigError(f"knob {kv!r} is not KEY=VALUE")
        try:
            cfg.knobs[key] = json.loads(val)
        except json.JSONDecodeError:
            cfg.knobs[key] = val
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            dirs = args.runs or [args.out]
            missing = [str(d) for d in dirs if not d.is_dir()]
            if missing:
                raise ConfigError(f"missing run directories: {', '.join(missing)}")
            rows, md, ok = emit_report(dirs)
            print(json.dumps(rows, indent=2) if args.json else md, end="" if not args.json else "\n")
            return 0 if ok else 2
        cfg = _config(args)
        res = run_scenario(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} "
              f"(reference {c.reference}, tolerance {c.tolerance})")
    print(f"outputs in {Path(cfg.out) / cfg.scenario}")
    return 0 if res.passed else 2


if __name__ == "__main__":
    sys.exit(main())
