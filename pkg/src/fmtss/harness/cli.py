"""Command line entry point: ``fmtss {papr,ber,interference,chanest,loopback}``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

import yaml

from .config import ExperimentConfig
from .experiments import (run_ber_sweep, run_estimator_diag, run_interference_study, run_loopback,
                          run_papr_study)
from .output import check_invariants, write_csv, write_manifest

log = logging.getLogger("fmtss")

DEFAULTS = {
    "papr": {"u_values": [2, 4, 8], "trials": 500, "output": "papr.csv"},
    "ber": {"u_values": [1, 8], "snr_db": [-14, -12, -10, -8, -6, -4], "packets": 200, "csi": "perfect",
            "output": "ber.csv"},
    "interference": {"u_values": [1, 2, 4, 8], "snr_db": [-16, -13, -10, -7, -4, -1], "packets": 200,
                     "csi": "perfect", "interference": {}, "output": "interference.csv"},
    "chanest": {"u_values": [1, 8], "snr_db": [0, 10, 20], "packets": 5, "output": "chanest.csv"},
    "loopback": {"u_values": [1, 2, 4, 8], "n_bits": 8192, "packets": 123, "output": "loopback.csv"},
}


def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmtss", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-cell progress")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in DEFAULTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("-c", "--config", help="YAML or JSON config file")
        s.add_argument("-o", "--output", help="CSV output path")
        s.add_argument("--manifest", help="JSON manifest path (default: next to the CSV)")
        s.add_argument("--seed", dest="master_seed", type=int, help="master seed")
        s.add_argument("--u", dest="u_values", type=_ints, help="comma-separated sparsity factors")
        s.add_argument("--snr", dest="snr_db", type=_floats, help="comma-separated SNRs in dB")
        s.add_argument("--packets", type=int, help="packets per cell")
        s.add_argument("--trials", type=int, help="PAPR trials per cell")
        s.add_argument("--n-bits", dest="n_bits", type=int, help="bits per packet")
        s.add_argument("--csi", choices=["perfect", "estimated"])
        s.add_argument("--placement", choices=["uniform", "segmented-random", "random"])
        s.add_argument("--channel", choices=["mld", "flat", "ota-like"])
        s.add_argument("--fixed-plan", dest="fixed_plan", action="store_true", default=None,
                       help="keep one placement for every packet")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults for the subcommand, then the config file, then command line flags."""
    data = dict(DEFAULTS[args.experiment])
    if args.config:
        with open(args.config) as fh:
            data.update(yaml.safe_load(fh) or {})
    for key in ("output", "manifest", "master_seed", "u_values", "snr_db", "packets", "trials", "n_bits", "csi",
                "placement", "channel", "fixed_plan"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    data["experiment"] = args.experiment
    return ExperimentConfig.from_dict(data)


def run(conf: ExperimentConfig) -> tuple[list[dict], list[str]]:
    def progress(row):
        log.info("%s u=%s snr=%s ber=%s", row["experiment"], row["u"], row["snr_db"], row.get("ber"))

    details = None
    if conf.experiment == "papr":
        rows = run_papr_study(conf)
    elif conf.experiment == "ber":
        rows = run_ber_sweep(conf, progress)
    elif conf.experiment == "interference":
        rows = run_interference_study(conf, progress)
    elif conf.experiment == "chanest":
        rows, details = run_estimator_diag(conf, progress)
    else:
        rows = run_loopback(conf)
    write_csv(rows, conf.output)
    violations = check_invariants(rows)
    write_manifest(conf, rows, violations, details=details)
    return rows, violations


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        conf = resolve_config(args)
    except (ValueError, TypeError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows, violations = run(conf)
    for v in violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {conf.output}")
    return 1 if violations else 0


if __name__ == "__main__":
    sys.exit(main())
