"""Waveform parameters, subcarrier plans, prototype filter and pulse bank.

Frequencies are expressed in Hz at complex baseband. The noncontiguous
superset holds ``K*u`` candidate subcarrier centres at odd multiples of the
symbol rate; a plan selects ``K`` of them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np

Placement = Literal["contiguous", "uniform", "segmented-random", "random"]
PLACEMENTS = ("contiguous", "uniform", "segmented-random", "random")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class WaveformConfig:
    """Static waveform parameters.

    Attributes:
        K: number of subcarriers.
        u: sparsity factor (channel bandwidth / signal bandwidth).
        f_b: symbol rate in symbols/s.
        M_d: multicode alphabet size.
        half_span: prototype half-length in intermediate-rate samples
            (the intermediate rate is ``2*f_b``).
        N_s: symbols per fast-convolution block.
        extent_cap: optional limit on the plan frequency extent in Hz;
            defaults to ``u * W_s``.
    """

    K: int = 32
    u: int = 1
    f_b: float = 1000.0
    M_d: int = 4
    half_span: int = 8
    N_s: int = 64
    extent_cap: Optional[float] = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.u < 1 or int(self.u) != self.u:
            raise ValueError("u must be a positive integer")
        if not self.f_b > 0:
            raise ValueError("f_b must be positive")
        if self.M_d > self.K:
            raise ValueError("M_d must not exceed K")
        if not _is_pow2(self.N_s):
            raise ValueError("N_s must be a power of 2")
        if self.half_span < 4:
            raise ValueError("half_span must be >= 4")

    @property
    def W_sc(self) -> float:
        return 2.0 * self.f_b

    @property
    def W_s(self) -> float:
        return 2.0 * self.K * self.f_b

    @property
    def W_h(self) -> float:
        return self.u * self.W_s

    @property
    def L(self) -> int:
        """Samples per symbol at the full rate."""
        return 2 * self.K * self.u

    @property
    def f_s(self) -> float:
        return 2.0 * self.K * self.u * self.f_b

    @property
    def f_s_contiguous(self) -> float:
        return 2.0 * self.K * self.f_b

    @property
    def L_p(self) -> int:
        """Prototype half-length in full-rate samples."""
        return self.half_span * self.K * self.u

    def with_u(self, u: int) -> "WaveformConfig":
        return replace(self, u=u)


@dataclass(frozen=True)
class SubcarrierPlan:
    """Selected subcarrier centres, ordered by ascending frequency."""

    cfg: WaveformConfig
    superset_indices: np.ndarray
    gains: np.ndarray
    placement: str
    seed: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.superset_indices, dtype=int)
        object.__setattr__(self, "superset_indices", idx)
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=complex))
        cfg = self.cfg
        if idx.shape != (cfg.K,):
            raise ValueError(f"expected {cfg.K} indices, got {idx.shape}")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("superset indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= cfg.K * cfg.u:
            raise ValueError("superset index out of range")
        if not np.allclose(np.abs(self.gains), 1.0, atol=1e-12):
            raise ValueError("spreading gains must have unit magnitude")

    @property
    def freqs(self) -> np.ndarray:
        cfg = self.cfg
        return (2 * self.superset_indices - cfg.K * cfg.u + 1) * cfg.f_b

    @property
    def contiguous_freqs(self) -> np.ndarray:
        """Target centres after remapping, in the same (sorted) order."""
        k = np.arange(self.cfg.K)
        return (2 * k - self.cfg.K + 1) * self.cfg.f_b

    @property
    def extent(self) -> float:
        f = self.freqs
        return float(f.max() - f.min() + 2 * self.cfg.f_b)

    def with_gains(self, gains) -> "SubcarrierPlan":
        return replace(self, gains=np.asarray(gains, dtype=complex))

    def to_contiguous(self) -> "SubcarrierPlan":
        """The plan with the same gains placed at contiguous positions."""
        cfg = self.cfg.with_u(1)
        return SubcarrierPlan(cfg, np.arange(cfg.K), self.gains, "contiguous", self.seed)

    def to_json(self) -> str:
        cfg = self.cfg
        doc = {
            "K": cfg.K,
            "u": cfg.u,
            "f_b": cfg.f_b,
            "placement": self.placement,
            "seed": self.seed,
            "superset_indices": [int(i) for i in self.superset_indices],
            "gains": [{"re": float(g.real), "im": float(g.imag)} for g in self.gains],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, cfg: Optional[WaveformConfig] = None) -> "SubcarrierPlan":
        doc = json.loads(text)
        if cfg is None:
            cfg = WaveformConfig(K=doc["K"], u=doc["u"], f_b=doc["f_b"], M_d=min(4, doc["K"]))
        elif (cfg.K, cfg.u, cfg.f_b) != (doc["K"], doc["u"], doc["f_b"]):
            raise ValueError("plan document does not match the supplied config")
        gains = np.array([g["re"] + 1j * g["im"] for g in doc["gains"]])
        return cls(cfg, np.array(doc["superset_indices"]), gains, doc["placement"], doc["seed"])

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def build_contiguous_plan(cfg: WaveformConfig) -> SubcarrierPlan:
    """Contiguous plan of ``K`` adjacent subcarriers centred on DC.

    Evaluated on the ``u=1`` superset, so the returned plan always carries
    a ``u=1`` config.
    """
    c = cfg.with_u(1)
    return SubcarrierPlan(c, np.arange(c.K), np.ones(c.K, complex), "contiguous")


def select_indices(K: int, u: int, method: str, rng: np.random.Generator, offset: int = 0) -> np.ndarray:
    if u < 1:
        raise ValueError("u must be >= 1")
    if method == "uniform":
        if not 0 <= offset < u:
            raise ValueError("uniform offset must lie in [0, u)")
        return offset + u * np.arange(K)
    if method == "segmented-random":
        return u * np.arange(K) + rng.integers(0, u, size=K)
    if method == "random":
        return np.sort(rng.choice(K * u, size=K, replace=False))
    if method == "contiguous":
        return np.arange(K)
    raise ValueError(f"unknown placement method {method!r}")


def place_subcarriers(cfg: WaveformConfig, method: str, rng_seed: int = 0, offset: int = 0) -> SubcarrierPlan:
    """Select ``K`` centres from the ``K*u`` superset using ``method``.

    ``uniform`` takes every ``u``-th candidate starting at ``offset``;
    ``segmented-random`` draws one candidate per length-``u`` segment;
    ``random`` draws ``K`` distinct candidates. With ``u=1`` every method
    collapses onto the contiguous set.
    """
    if method not in ("uniform", "segmented-random", "random"):
        raise ValueError(f"placement method must be uniform/segmented-random/random, got {method!r}")
    rng = np.random.default_rng(rng_seed)
    idx = select_indices(cfg.K, cfg.u, method, rng, offset)
    plan = SubcarrierPlan(cfg, idx, np.ones(cfg.K, complex), method, rng_seed)
    cap = cfg.extent_cap if cfg.extent_cap is not None else cfg.u * cfg.W_s
    if plan.extent > cap + 1e-9:
        raise ValueError(f"plan extent {plan.extent} exceeds cap {cap}")
    return plan


# --- prototype filter -----------------------------------------------------

def srrc(t: np.ndarray) -> np.ndarray:
    """Square-root raised cosine with roll-off 1, time in symbol intervals."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    sing = np.isclose(np.abs(t), 0.25, atol=1e-12)
    tt = t[~sing]
    out[~sing] = (4 / np.pi) * np.cos(2 * np.pi * tt) / (1 - 16 * tt**2)
    out[sing] = 1.0
    return out


@dataclass(frozen=True)
class PrototypeFilter:
    """Zero-phase SRRC prototype.

    ``taps_full`` is sampled at ``f_s`` and normalized to unit energy;
    ``scale`` is the factor applied to the unit-amplitude SRRC so the same
    continuous pulse can be resampled at other rates with consistent
    amplitude (see :meth:`sampled`).
    """

    cfg: WaveformConfig
    taps_intermediate: np.ndarray
    taps_full: np.ndarray
    scale: float

    def sampled(self, samples_per_symbol: int) -> np.ndarray:
        """The same pulse sampled at ``samples_per_symbol`` per symbol."""
        half = self.cfg.half_span * samples_per_symbol // 2
        m = np.arange(-half, half + 1)
        return self.scale * srrc(m / samples_per_symbol)


def build_prototype(cfg: WaveformConfig) -> PrototypeFilter:
    L = cfg.L
    m = np.arange(-cfg.L_p, cfg.L_p + 1)
    raw = srrc(m / L)
    scale = 1.0 / np.linalg.norm(raw)
    mi = np.arange(-cfg.half_span, cfg.half_span + 1)
    return PrototypeFilter(cfg, scale * srrc(mi / 2.0), scale * raw, scale)


# --- pulse bank -----------------------------------------------------------

@dataclass(frozen=True)
class PulseBank:
    g: np.ndarray
    eta: np.ndarray
    rate: float

    @property
    def center(self) -> int:
        return (len(self.eta) - 1) // 2


def modulated_pulse(plan: SubcarrierPlan, taps: np.ndarray, rate: float, freqs=None) -> np.ndarray:
    freqs = plan.freqs if freqs is None else freqs
    half = (len(taps) - 1) // 2
    m = np.arange(-half, half + 1)
    tones = np.exp(2j * np.pi * np.outer(freqs, m) / rate)
    return (plan.gains[:, None] * tones).sum(axis=0) * taps


def build_pulse_bank(plan: SubcarrierPlan, proto: PrototypeFilter, cfg: Optional[WaveformConfig] = None) -> PulseBank:
    """Composite transmit pulse ``g`` and its matched response ``eta``."""
    cfg = plan.cfg if cfg is None else cfg
    g = modulated_pulse(plan, proto.taps_full, cfg.f_s)
    eta = np.convolve(g, np.conj(g[::-1]))
    return PulseBank(g, eta, cfg.f_s)


def count_peaks(x: np.ndarray, rel_threshold: float) -> int:
    """Number of local maxima of ``|x|`` above ``rel_threshold * max|x|``."""
    a = np.abs(np.asarray(x))
    thr = rel_threshold * a.max()
    inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > thr)
    return int(inner.sum())


def sidelobe_ratio(x: np.ndarray, center: Optional[int] = None) -> float:
    """Largest local maximum of ``|x|`` outside the main lobe, over the peak.

    The main lobe is the monotonically decreasing neighbourhood of the peak.
    """
    a = np.abs(np.asarray(x))
    c = int(np.argmax(a)) if center is None else center
    lo = c
    while lo > 0 and a[lo - 1] <= a[lo]:
        lo -= 1
    hi = c
    while hi < len(a) - 1 and a[hi + 1] <= a[hi]:
        hi += 1
    rest = np.concatenate([a[:lo + 1], a[hi:]]) if (lo > 0 or hi < len(a) - 1) else np.zeros(1)
    return float(rest.max() / a[c]) if a[c] > 0 else 0.0


# --- crest factor / PAPR --------------------------------------------------

def measure_papr(samples) -> float:
    """Peak-to-average power ratio in dB."""
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("empty sequence")
    p = np.abs(x) ** 2
    mean = p.mean()
    if mean == 0:
        raise ValueError("all-zero sequence has no defined PAPR")
    return float(10 * np.log10(p.max() / mean))


def _multitone_grid(plan: SubcarrierPlan, oversample: int) -> tuple[np.ndarray, int]:
    # tone index j = f_k / f_b is odd and |j| < K*u; one period of 1/f_b
    j = np.rint(plan.freqs / plan.cfg.f_b).astype(int)
    n = 1
    while n < oversample * 2 * plan.cfg.K * plan.cfg.u:
        n *= 2
    return j % n, n


def multitone(plan: SubcarrierPlan, gains=None, oversample: int = 4) -> np.ndarray:
    """One period of ``sum_k gain_k exp(j 2 pi f_k t)``."""
    bins, n = _multitone_grid(plan, oversample)
    spec = np.zeros(n, complex)
    spec[bins] = plan.gains if gains is None else gains
    return np.fft.ifft(spec) * n


def crest_factor(plan: SubcarrierPlan, gains=None, oversample: int = 4) -> float:
    b = multitone(plan, gains, oversample)
    return float(np.abs(b).max() / np.sqrt(np.mean(np.abs(b) ** 2)))


def optimize_gains(plan: SubcarrierPlan, max_iters: int = 200, tol: float = 1e-6,
                   oversample: int = 4, clip: float = 0.85) -> SubcarrierPlan:
    """Phase-only crest-factor minimization of the multitone.

    Starts from quadratic (Newman) phases, then alternates clipping of the
    time-domain peaks with re-projection of each tone onto the unit circle.
    Returns the best gains seen, never worse than all-ones.
    """
    K = plan.cfg.K
    ones = np.ones(K, complex)
    if K == 1:
        return plan.with_gains(ones)
    bins, n = _multitone_grid(plan, oversample)

    def cf(gains):
        b = np.fft.ifft(_place(gains)) * n
        return np.abs(b).max() / np.sqrt(np.mean(np.abs(b) ** 2)), b

    def _place(gains):
        s = np.zeros(n, complex)
        s[bins] = gains
        return s

    best_g, (best_c, _) = ones, cf(ones)
    k = np.arange(K)
    g = np.exp(1j * np.pi * k**2 / K)
    prev = np.inf
    for _ in range(max_iters):
        c, b = cf(g)
        if c < best_c:
            best_c, best_g = c, g
        if np.isfinite(prev) and (prev - c) / prev < tol and c <= prev:
            break
        prev = min(prev, c)
        mag = np.abs(b)
        level = clip * mag.max()
        over = mag > level
        b = b.copy()
        b[over] *= level / mag[over]
        spec = np.fft.fft(b)[bins]
        g = np.exp(1j * np.angle(spec))
    return plan.with_gains(best_g)
