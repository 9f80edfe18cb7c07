"""Command line entry point: ``gmclab <experiment> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from gmclab.experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from gmclab.report import to_json

_LIST_FIELDS = {"gammas", "Ts", "eps_list"}


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmclab", description="GMC on Wiener space: Monte Carlo experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="flat JSON config file")
    p.add_argument("--print", action="store_true", help="print the JSON summary to stdout")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "name":
            continue
        if f.name in _LIST_FIELDS:
            typ, meta = _floats, "X,Y,..."
        else:
            default = f.default
            typ = type(default) if default is not dataclasses.MISSING else str
            meta = None
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=typ, default=None, metavar=meta)
    return p


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if ns.config is not None:
        data = json.loads(ns.config.read_text())
        if data.get("name", ns.experiment) != ns.experiment:
            raise ValueError(f"config is for {data['name']!r}, not {ns.experiment!r}")
    data["name"] = ns.experiment
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(ns, f.name, None) if f.name != "name" else None
        if v is not None:
            data[f.name] = v
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns).validate()
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"gmclab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    res = run_experiment(cfg)
    if ns.print or cfg.name in ("eigen", "rate"):
        sys.stdout.write(to_json(res.summary["results"]))
    status = "PASS" if res.passed else "FAIL"
    print(f"{cfg.name}: {status} -> {res.csv_path}, {res.json_path}", file=sys.stderr)
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
