"""Command line: ``hdmi generate | ampute | run | report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import yaml

from .amputation import AmputationSpec, ampute
from .cohortgen import SynthConfig, generate_synthetic_base
from .errors import HDMIError
from .simharness.config import OUT_ENV, ScenarioConfig
from .simharness.report import report
from .simharness.scenario import run_scenario
from .tabular import load_cohort, save_cohort


def _load_yaml(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise HDMIError(f"{path}: top level must be a mapping")
    return data


def _out(args, default):
    return args.out or os.environ.get(OUT_ENV) or default


def cmd_generate(args):
    data = _load_yaml(args.config)
    data = data.get("synthetic", data)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = SynthConfig.from_dict(data)
    cohort = generate_synthetic_base(cfg)
    out = _out(args, "base_cohort.csv")
    if os.path.isdir(out) or out.endswith(os.sep):
        out = os.path.join(out, "base_cohort.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_cohort(cohort, out)
    print(f"wrote {cohort.n} patients to {out}")
    return 0


def cmd_ampute(args):
    data = _load_yaml(args.config)
    data = data.get("amputation", data)
    if args.seed is not None:
        data["seed"] = args.seed
    spec = AmputationSpec.from_dict(data)
    cohort = load_cohort(args.input)
    amputed = ampute(cohort, spec)
    out = _out(args, os.path.splitext(args.input)[0] + "_amputed.csv")
    if os.path.isdir(out):
        out = os.path.join(out, os.path.basename(os.path.splitext(args.input)[0]) + "_amputed.csv")
    save_cohort(amputed, out)
    print(f"masked z2 for {int(amputed.mz2.sum())} of {amputed.n} patients; wrote {out}")
    return 0


def cmd_run(args):
    cfg = ScenarioConfig.from_yaml(args.config) if args.config else ScenarioConfig()
    models = [m.strip() for m in args.models.split(",") if m.strip()] if args.models else None
    cfg = cfg.with_overrides(seed=args.seed, jobs=args.jobs, models=models,
                             n_replicates=args.replicates, out_dir=args.out)
    out = args.out or cfg.resolved_out_dir()
    result = run_scenario(cfg, out_dir=out)
    print(report(out), end="")
    if all(s is None for s in result.summaries.values()):
        print("scenario failed: no model produced metrics", file=sys.stderr)
        return 2
    return 0


def cmd_report(args):
    out = args.dir or _out(args, "hdmi_out")
    print(report(out), end="")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hdmi", description="HDMI simulation and estimation engine")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic base cohort")
    g.add_argument("--config", help="YAML with synthetic-cohort settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output CSV path or directory")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("ampute", help="impose MNAR missingness on z2 of a cohort file")
    a.add_argument("--input", required=True, help="cohort CSV")
    a.add_argument("--config", help="YAML with amputation settings")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ampute)

    r = sub.add_parser("run", help="run a full scenario")
    r.add_argument("--config", help="scenario YAML")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--out")
    r.add_argument("--models", help="comma-separated model ids")
    r.add_argument("--replicates", type=int, help="override n_replicates")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="summarize a finished scenario directory")
    s.add_argument("dir", nargs="?")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (HDMIError, OSError, ValueError) as exc:
        print(f"hdmi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
