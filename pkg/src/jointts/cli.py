"""Command-line entry point: ``jointts {train,evaluate,ablate,synth,impute}``.

Every config field can be overridden with a flag of the same dotted name,
e.g. ``--schedule.epochs 5`` or ``--synthetic.T=500``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from .config import SynthConfig, _from_dict, expand_grid, load_config, load_raw, yaml_load
from .errors import ConfigError, JointTSError
from .experiment import impute_file, run_ablation, run_evaluation, run_training
from .synth import write_synthetic

log = logging.getLogger("jointts")


def parse_overrides(tokens: list[str]) -> dict:
    """Turn ``--a.b value`` / ``--a.b=value`` tokens into {"a.b": parsed_value}."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{key} needs a value")
            raw = tokens[i + 1]
            i += 2
        try:
            out[key] = yaml_load(raw)
        except yaml.YAMLError:
            out[key] = raw
    return out


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


def cmd_train(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    status = 0
    summary = []
    for name, sub in expand_grid(cfg):
        res = run_training(sub)
        if res["result"].aborted:
            log.error("%s: %s", name or "run", res["result"].aborted)
            status = 4
        summary.append({"run": name or "run", "output_dir": sub.output_dir,
                        "metrics": {k: r.as_dict() for k, r in res["reports"].items()}})
    _print(summary)
    return status


def cmd_evaluate(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    if cfg.is_grid:
        raise ConfigError("evaluate takes a single-run config (no O / r_arti lists)")
    res = run_evaluation(args.checkpoint, cfg, no_y_data=args.no_y_data,
                         predictions=args.predictions, out_dir=args.output_dir)
    _print({"metrics": {k: r.as_dict() for k, r in res["reports"].items()},
            "prediction_rows": res["prediction_rows"]})
    return 0


def cmd_ablate(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    out = []
    for name, sub in expand_grid(cfg):
        out.append({"run": name or "run", "rows": run_ablation(sub)})
    _print(out)
    return 0


def cmd_synth(args, overrides) -> int:
    raw = {}
    if args.config:
        raw = load_raw(args.config)
        raw = raw.get("synthetic", raw)
    for key in ("generator", "T", "d", "d_y", "sigma", "seed"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    for key, v in overrides.items():
        raw[key.removeprefix("synthetic.")] = v
    spec = _from_dict(SynthConfig, raw, "synthetic.")
    manifest = write_synthetic(spec, args.output, args.manifest)
    _print({"output": args.output, "generator": manifest["generator"], "T": manifest["T"],
            "d": manifest["d"]})
    return 0


def cmd_impute(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"impute does not take config overrides: {sorted(overrides)}")
    n = impute_file(args.checkpoint, args.input, args.output, args.missing_token)
    _print({"output": args.output, "filled_cells": n})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train (a grid of) models from a config file")
    t.add_argument("config", nargs="?")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the config's test split")
    e.add_argument("checkpoint")
    e.add_argument("config", nargs="?")
    e.add_argument("--no-y-data", action="store_true",
                   help="feed f(X) instead of observed targets into the temporal learner")
    e.add_argument("--predictions", help="write a plot-ready prediction CSV here")
    e.add_argument("--output-dir")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train every ablation variant and tabulate test metrics")
    a.add_argument("config", nargs="?")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="write a synthetic dataset and its ground-truth manifest")
    s.add_argument("--config")
    s.add_argument("--generator", choices=["linear_map", "sinusoid", "random_walk"])
    s.add_argument("--T", type=int)
    s.add_argument("--d", type=int)
    s.add_argument("--d-y", dest="d_y", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--output", required=True)
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_synth)

    i = sub.add_parser("impute", help="fill the missing cells of a CSV using a checkpoint")
    i.add_argument("checkpoint")
    i.add_argument("input")
    i.add_argument("output")
    i.add_argument("--missing-token")
    i.set_defaults(func=cmd_impute)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_overrides(rest)
        return args.func(args, overrides)
    except JointTSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
