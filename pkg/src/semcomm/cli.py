"""Command-line entry point: ``semcomm run | compare | sweep``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .comms import EventThresholds
from .coordination import AllocationWeights
from .sim import ConfigError, SimConfig, compare_modes, emit_plots_data, run, summarize, sweep
from .world import ScenarioParams, WorldError

OUT_ENV = "SEMCOMM_OUT"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNFINISHED = 3

_NESTED = {"scenario_params": ScenarioParams, "thresholds": EventThresholds, "weights": AllocationWeights}
_FLAG_FIELDS = {
    "mode": "mode",
    "robots": "robots",
    "bandwidth": "b_max",
    "seed": "seed",
    "scenario": "scenario",
    "step_cap": "step_cap",
    "out": "out_dir",
}


def _config_from_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    known = {f.name for f in dataclasses.fields(SimConfig)}
    out = {}
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(key, "unknown configuration field")
        if key in _NESTED:
            try:
                value = _NESTED[key](**{k: tuple(v) if isinstance(v, list) else v for k, v in value.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from exc
        out[key] = value
    return out


def build_config(args: argparse.Namespace) -> SimConfig:
    """Defaults, then the config file, then explicit flags, then the env var for the output dir."""
    values: dict = {}
    if args.config:
        values.update(_config_from_file(args.config))
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if os.environ.get(OUT_ENV):
        values["out_dir"] = os.environ[OUT_ENV]
    try:
        cfg = SimConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from exc
    cfg.validate()
    return cfg


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semcomm", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run one simulation"),
        ("compare", "run raw and semantic modes on the same world"),
        ("sweep", "run both modes over robot counts and seeds"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON file with SimConfig fields")
        s.add_argument("--mode", choices=("semantic", "raw"))
        s.add_argument("--robots", type=int)
        s.add_argument("--bandwidth", type=int, help="b_max, bits per step")
        s.add_argument("--seed", type=int)
        s.add_argument("--scenario", help="scenario JSON file (default: generated from the seed)")
        s.add_argument("--step-cap", dest="step_cap", type=int)
        s.add_argument("--out", help=f"output directory (overridden by ${OUT_ENV})")
        if name == "sweep":
            s.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
            s.add_argument("--robot-counts", type=int, nargs="+", default=[4, 6])
    return p


def _print_json(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "run":
            m = run(cfg)
            _print_json(m.to_dict())
            ok = m.finished
        elif args.command == "compare":
            c = compare_modes(cfg)
            _print_json(c.to_dict())
            ok = c.raw.finished and c.semantic.finished
        else:
            base = cfg.seed
            results = sweep(cfg, robots=args.robot_counts, seeds=range(base, base + args.seeds))
            if cfg.out_dir:
                emit_plots_data(results, cfg.out_dir)
            _print_json(summarize(results))
            ok = all(m.finished for m in results)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except WorldError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not ok:
        print("unfinished: step cap reached before all targets were delivered", file=sys.stderr)
        return EXIT_UNFINISHED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
