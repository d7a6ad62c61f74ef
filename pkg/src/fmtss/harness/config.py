"""Declarative experiment configuration and per-trial seeding."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

EXPERIMENTS = ("papr", "ber", "interference", "chanest", "loopback")
PLACEMENTS = ("contiguous", "uniform", "segmented-random", "random")
CHANNELS = ("mld", "flat", "ota-like")


@dataclass
class ExperimentConfig:
    """One experiment run.

    Every random draw derives from ``master_seed`` through
    :func:`derive_seed`, so the same file always produces the same output.
    ``fixed_plan`` keeps one placement for all packets instead of drawing a
    new one per packet. ``u=1`` always uses the contiguous plan.
    """

    experiment: str = "ber"
    K: int = 32
    f_b: float = 1000.0
    M_d: int = 4
    u_values: list = field(default_factory=lambda: [1, 8])
    placement: str = "segmented-random"
    placements: list = field(default_factory=lambda: ["uniform", "segmented-random", "random"])
    fixed_plan: bool = False
    channel: str = "mld"
    interference: Optional[dict] = None
    snr_db: list = field(default_factory=lambda: [-14.0, -12.0, -10.0, -8.0])
    packets: int = 200
    n_bits: int = 512
    csi: str = "perfect"
    trials: int = 500
    Z: int = 16
    P: int = 4
    N_int: int = 4
    retry_cap: int = 20
    master_seed: int = 0
    output: str = "results.csv"
    manifest: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.packets < 1 or self.trials < 1:
            raise ValueError("packets and trials must be >= 1")
        if not self.snr_db:
            raise ValueError("SNR grid must be nonempty")
        if not self.u_values or any(int(u) != u or u < 1 for u in self.u_values):
            raise ValueError("u_values must be positive integers")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        bad = [p for p in self.placements if p not in PLACEMENTS[1:]]
        if bad:
            raise ValueError(f"unknown placements {bad}")
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if self.csi not in ("perfect", "estimated"):
            raise ValueError("csi must be 'perfect' or 'estimated'")
        self.u_values = [int(u) for u in self.u_values]
        self.snr_db = [float(s) for s in self.snr_db]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def manifest_path(self) -> Path:
        if self.manifest:
            return Path(self.manifest)
        return Path(self.output).with_suffix(".manifest.json")


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML or JSON file; ``overrides`` replace file values when not ``None``."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def derive_seed(master: int, experiment: str, *trial) -> int:
    """63-bit seed from ``sha256(master, experiment, trial...)``."""
    text = "/".join([str(int(master)), experiment] + [str(t) for t in trial])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1
