"""CSV results, JSON run manifest and result invariants."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np
import scipy

from .config import ExperimentConfig
from .experiments import BASE_FIELDS

MONOTONE_MIN_BITS = 10_000


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _sort_key(row: dict):
    snr = row.get("snr_db", "")
    snr = float(snr) if snr != "" else 0.0
    return (str(row.get("experiment")), str(row.get("case", "")), int(row.get("u", 0)), str(row.get("placement")),
            snr, float(row.get("support_frac", 0.0)))


def write_csv(rows: list[dict], path) -> list[str]:
    """Write rows sorted by cell; extra columns follow the fixed header in name order."""
    extra = sorted({k for r in rows for k in r} - set(BASE_FIELDS))
    header = list(BASE_FIELDS) + extra
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in sorted(rows, key=_sort_key):
            w.writerow([_fmt(r.get(k, "")) for k in header])
    return header


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_invariants(rows: list[dict]) -> list[str]:
    """Bit conservation, interval consistency, BER monotonicity in SNR and loopback exactness."""
    bad = []
    for r in rows:
        bits, errs = int(r.get("bits", 0)), int(r.get("errors", 0))
        tag = f"{r.get('experiment')} u={r.get('u')} snr={r.get('snr_db')}"
        if errs < 0 or errs > bits:
            bad.append(f"{tag}: errors {errs} outside [0, {bits}]")
        if bits and r.get("ber", "") != "":
            ber, lo, hi = float(r["ber"]), float(r["ci_lo"]), float(r["ci_hi"])
            if not lo - 1e-12 <= ber <= hi + 1e-12:
                bad.append(f"{tag}: BER {ber} outside its interval [{lo}, {hi}]")
        if r.get("experiment") == "loopback" and errs:
            bad.append(f"{tag}: loopback decoded with {errs} errors")
    cells = {}
    for r in rows:
        if r.get("experiment") in ("ber", "interference") and int(r.get("bits", 0)) >= MONOTONE_MIN_BITS:
            cells.setdefault((r["experiment"], r["u"], r["placement"]), []).append(r)
    for key, rs in cells.items():
        rs = sorted(rs, key=lambda r: float(r["snr_db"]))
        for a, b in zip(rs, rs[1:]):
            # a rise counts only when the two intervals do not overlap
            if float(b["ci_lo"]) > float(a["ci_hi"]):
                bad.append(f"{key}: BER rises from {a['ber']} at {a['snr_db']} dB to {b['ber']} at {b['snr_db']} dB")
    return bad


def write_manifest(conf: ExperimentConfig, rows: list[dict], violations: list[str], path=None,
                   details: dict | None = None) -> dict:
    from .. import __version__

    doc = {
        "experiment": conf.experiment,
        "config": conf.to_dict(),
        "config_hash": conf.digest(),
        "master_seed": conf.master_seed,
        "seed_rule": "sha256('master/experiment/trial...')[:8] >> 1",
        "rows": len(rows),
        "output": str(conf.output),
        "invariant_violations": violations,
        "versions": {"fmtss": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if details is not None:
        doc["details"] = details
    path = conf.manifest_path if path is None else Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return doc


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
