"""Wideband HF channel, partial-band interference and calibrated noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .tx import SampleStream
from .waveform import SubcarrierPlan


@dataclass(frozen=True)
class Mode:
    delay_offset: float  # centroid delay, seconds
    relative_power: float
    rms_delay_spread: float  # seconds
    doppler_2sigma: float  # Hz


@dataclass(frozen=True)
class ChannelSpec:
    modes: tuple
    sample_rate: float
    update_rate: float = 100.0
    envelope_sigmas: float = 4.0

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(**m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        for m in modes:
            if m.relative_power <= 0:
                raise ValueError("mode powers must be positive")
            if m.delay_offset < 0 or m.rms_delay_spread < 0 or m.doppler_2sigma < 0:
                raise ValueError("delays, spreads and Doppler widths must be non-negative")


def mld_spec(sample_rate: float, first_delay: float = 320e-6) -> ChannelSpec:
    """Two equal modes 2 ms apart, 80 us RMS spread, 1 Hz Doppler (2 sigma)."""
    return ChannelSpec((Mode(first_delay, 1.0, 80e-6, 1.0), Mode(first_delay + 2e-3, 1.0, 80e-6, 1.0)), sample_rate)


def ota_like_spec(sample_rate: float) -> ChannelSpec:
    """Approximation of the milder over-the-air condition: 170 us separation, 0.2 Hz Doppler."""
    return ChannelSpec((Mode(80e-6, 1.0, 20e-6, 0.2), Mode(250e-6, 1.0, 20e-6, 0.2)), sample_rate)


def flat_spec(sample_rate: float) -> ChannelSpec:
    return ChannelSpec((Mode(0.0, 1.0, 0.0, 0.0),), sample_rate)


def two_path_spec(sample_rate: float, delay: float) -> ChannelSpec:
    return ChannelSpec((Mode(0.0, 1.0, 0.0, 0.0), Mode(delay, 1.0, 0.0, 0.0)), sample_rate)


PRESETS = {"mld": mld_spec, "ota-like": ota_like_spec, "flat": flat_spec}


@dataclass(frozen=True)
class ChannelRealization:
    """Tapped delay line sampled at ``update_rate``.

    ``gains[i, j]`` is the complex gain of delay bin ``delays[i]`` (in
    samples at ``sample_rate``) at time ``j / update_rate``.
    """

    delays: np.ndarray
    gains: np.ndarray
    sample_rate: float
    update_rate: float
    mode_of_tap: np.ndarray
    short: bool = False

    @property
    def max_delay(self) -> int:
        return int(self.delays.max())

    def snapshot(self, t: float = 0.0, length: Optional[int] = None) -> np.ndarray:
        """Impulse response vector at time ``t`` (linear interpolation)."""
        n = self.max_delay + 1 if length is None else length
        h = np.zeros(n, complex)
        np.add.at(h, self.delays % n, self._gains_at(t))
        return h

    def _gains_at(self, t: float) -> np.ndarray:
        pos = t * self.update_rate
        j = int(np.clip(np.floor(pos), 0, self.gains.shape[1] - 1))
        if j + 1 >= self.gains.shape[1]:
            return self.gains[:, -1]
        a = pos - j
        return (1 - a) * self.gains[:, j] + a * self.gains[:, j + 1]

    def average_power(self) -> float:
        return float(np.mean(np.sum(np.abs(self.gains) ** 2, axis=0)))


def gaussian_doppler_process(n: int, doppler_2sigma: float, update_rate: float, count: int,
                             rng: np.random.Generator) -> np.ndarray:
    """``count`` unit-variance complex processes with Gaussian Doppler PSD."""
    if doppler_2sigma == 0:
        g = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / np.sqrt(2)
        return np.repeat(g[:, None], n, axis=1)
    sigma = doppler_2sigma / 2
    n_long = 1 << int(np.ceil(np.log2(max(4 * n, 8 * update_rate / sigma, 64))))
    f = np.fft.fftfreq(n_long, d=1 / update_rate)
    shape = np.exp(-(f**2) / (4 * sigma**2))  # sqrt of Gaussian PSD
    shape *= np.sqrt(n_long / np.sum(shape**2))
    w = (rng.standard_normal((count, n_long)) + 1j * rng.standard_normal((count, n_long))) / np.sqrt(2)
    x = np.fft.ifft(np.fft.fft(w, axis=1) * shape, axis=1)
    start = (n_long - n) // 2
    return x[:, start : start + n]


def realize_channel(spec: ChannelSpec, duration: float, rng_seed=0, normalize: str = "realized") -> ChannelRealization:
    """Draw a fading tapped-delay-line realization.

    Each mode is a cluster of independent Rayleigh taps at sample spacing
    whose mean power follows a Gaussian delay envelope with the mode's RMS
    spread. ``normalize='realized'`` scales the realization to unit
    time-averaged power; ``'expected'`` only normalizes the ensemble mean.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(rng_seed)
    fs = spec.sample_rate
    n_up = int(np.ceil(duration * spec.update_rate)) + 2
    delays, gains, owner = [], [], []
    short = False
    total_power = sum(m.relative_power for m in spec.modes)
    for i, m in enumerate(spec.modes):
        centre = m.delay_offset * fs
        spread = m.rms_delay_spread * fs
        if spread < 0.5:
            d = np.array([int(round(centre))])
            w = np.ones(1)
        else:
            half = int(np.ceil(spec.envelope_sigmas * spread))
            d = np.arange(int(round(centre)) - half, int(round(centre)) + half + 1)
            d = d[d >= 0]
            w = np.exp(-((d - centre) ** 2) / (2 * spread**2))
        w = w / w.sum() * m.relative_power / total_power
        proc = gaussian_doppler_process(n_up, m.doppler_2sigma, spec.update_rate, len(d), rng)
        if m.doppler_2sigma > 0 and duration < 1 / m.doppler_2sigma:
            short = True
        delays.append(d)
        gains.append(np.sqrt(w)[:, None] * proc)
        owner.append(np.full(len(d), i))
    delays = np.concatenate(delays)
    gains = np.concatenate(gains)
    owner = np.concatenate(owner)
    if normalize == "realized":
        gains /= np.sqrt(np.mean(np.sum(np.abs(gains) ** 2, axis=0)))
    elif normalize != "expected":
        raise ValueError("normalize must be 'realized' or 'expected'")
    return ChannelRealization(delays, gains, fs, spec.update_rate, owner, short)


def static_channel(taps: Sequence[complex], delays: Sequence[int], sample_rate: float) -> ChannelRealization:
    taps = np.asarray(taps, complex)
    return ChannelRealization(np.asarray(delays, int), np.repeat(taps[:, None], 2, axis=1), sample_rate, 1.0,
                              np.zeros(len(taps), int))


def apply_channel(x: SampleStream, chan: ChannelRealization, t0: float = 0.0) -> SampleStream:
    """Time-varying convolution ``y[m] = sum_d h[d, m] x[m - d]``.

    Tap gains are linearly interpolated between update instants, which lets
    the output be formed as a hat-weighted sum of static convolutions.
    Output length is ``len(x) + max_delay``.
    """
    if not np.isclose(x.rate, chan.sample_rate):
        raise ValueError(f"sample rate mismatch: {x.rate} vs {chan.sample_rate}")
    xs = np.asarray(x.samples, complex)
    D = chan.max_delay
    n_out = len(xs) + D
    y = np.zeros(n_out, complex)
    spu = chan.sample_rate / chan.update_rate
    static = np.allclose(chan.gains, chan.gains[:, :1])
    if static:
        h = np.zeros(D + 1, complex)
        np.add.at(h, chan.delays, chan.gains[:, 0])
        y[:] = fftconvolve(xs, h)
        return SampleStream(y, x.rate)
    m = np.arange(n_out)
    pos = t0 * chan.update_rate + m / spu
    j_lo = int(np.floor(pos[0]))
    j_hi = int(np.floor(pos[-1])) + 1
    for j in range(j_lo, j_hi + 1):
        w = np.clip(1 - np.abs(pos - j), 0, None)
        nz = np.nonzero(w)[0]
        if nz.size == 0:
            continue
        a, b = nz[0], nz[-1] + 1
        jj = int(np.clip(j, 0, chan.gains.shape[1] - 1))
        h = np.zeros(D + 1, complex)
        np.add.at(h, chan.delays, chan.gains[:, jj])
        lo = max(a - D, 0)
        seg = xs[lo : min(b, len(xs))]
        if seg.size == 0:
            continue
        c = fftconvolve(seg, h)
        # c[i] is the output at absolute index lo + i
        y[a:b] += w[a:b] * c[a - lo : b - lo]
    return SampleStream(y, x.rate)


# --- passband power / SNR ------------------------------------------------------

def passband_mask(plan: SubcarrierPlan, n: int, rate: float) -> np.ndarray:
    f = np.fft.fftfreq(n, d=1 / rate)
    d = np.abs(f[None, :] - plan.freqs[:, None])
    return np.any(d < plan.cfg.f_b, axis=0)


def passband_power(x, plan: SubcarrierPlan, rate: float) -> float:
    """Mean-power contribution of ``x`` falling inside the plan's passbands."""
    x = np.asarray(x)
    X = np.fft.fft(x)
    mask = passband_mask(plan, len(x), rate)
    return float(np.sum(np.abs(X[mask]) ** 2) / len(x) ** 2)


def add_noise_at_snr(y: SampleStream, plan: SubcarrierPlan, target_snr_db: float, rng_seed=0,
                     signal_power: Optional[float] = None) -> tuple[SampleStream, np.ndarray]:
    """Add white Gaussian noise so the passband SNR equals ``target_snr_db``.

    Returns the noisy stream and the noise realization.
    """
    if np.isinf(target_snr_db) and target_snr_db > 0:
        return SampleStream(np.array(y.samples, copy=True), y.rate), np.zeros(len(y.samples), complex)
    p_sig = passband_power(y.samples, plan, y.rate) if signal_power is None else signal_power
    if p_sig <= 0:
        raise ValueError("input has no passband power")
    frac = plan.cfg.W_s / y.rate  # share of white noise power inside the passbands
    var = p_sig / (10 ** (target_snr_db / 10)) / frac
    rng = np.random.default_rng(rng_seed)
    n = len(y.samples)
    v = np.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return SampleStream(y.samples + v, y.rate), v


def noise_variance_for_snr(signal_passband_power: float, plan: SubcarrierPlan, rate: float, snr_db: float) -> float:
    return signal_passband_power / (10 ** (snr_db / 10)) / (plan.cfg.W_s / rate)


def measure_snr(y, noise_ref, plan: SubcarrierPlan, rate: Optional[float] = None) -> float:
    """Passband signal-to-noise ratio in dB from separate signal and noise records."""
    rate = plan.cfg.f_s if rate is None else rate
    ys = y.samples if isinstance(y, SampleStream) else np.asarray(y)
    vs = noise_ref.samples if isinstance(noise_ref, SampleStream) else np.asarray(noise_ref)
    ps = passband_power(ys, plan, rate)
    pn = passband_power(vs, plan, rate)
    if ps == 0:
        return -np.inf
    if pn == 0:
        return np.inf
    return float(10 * np.log10(ps / pn))


# --- interference ----------------------------------------------------------------

@dataclass(frozen=True)
class InterferenceSpec:
    band_width: float = 512e3
    user_bandwidth: float = 3e3
    user_count: int = 42
    power_offset_db: float = 30.0
    cell_width: float = 1e3

    @property
    def n_cells(self) -> int:
        return int(round(self.band_width / self.cell_width))

    @property
    def user_cells(self) -> int:
        return int(round(self.user_bandwidth / self.cell_width))

    @property
    def occupied_fraction(self) -> float:
        return self.user_count * self.user_bandwidth / self.band_width


@dataclass(frozen=True)
class Occupancy:
    spec: InterferenceSpec
    starts: np.ndarray  # first cell of each user, sorted

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.spec.n_cells, bool)
        for s in self.starts:
            m[s : s + self.spec.user_cells] = True
        return m

    def cell_edges_hz(self) -> np.ndarray:
        """Lower edge of every cell in band-centred Hz."""
        return np.arange(self.spec.n_cells) * self.spec.cell_width - self.spec.band_width / 2


def draw_occupancy(spec: InterferenceSpec, rng: np.random.Generator) -> Occupancy:
    """Place users uniformly at random on the cell grid without overlap."""
    n, w, C = spec.user_count, spec.user_cells, spec.n_cells
    if n * w > C:
        raise ValueError("infeasible packing: users do not fit in the band")
    if n == 0:
        return Occupancy(spec, np.zeros(0, int))
    b = np.sort(rng.choice(C - n * w + n, size=n, replace=False))
    return Occupancy(spec, b + np.arange(n) * (w - 1))


def generate_interference(spec: InterferenceSpec, duration: float, signal_psd: float, rng_seed=0,
                          sample_rate: Optional[float] = None, centre: float = 0.0,
                          occupancy: Optional[Occupancy] = None) -> tuple[SampleStream, Occupancy]:
    """Sum of flat band-limited Gaussian users.

    The stream is complex baseband at ``sample_rate`` (default: the full
    band width) centred on band frequency ``centre``; users outside the
    represented window are dropped. Each user's PSD is
    ``signal_psd * 10**(power_offset_db/10)``.
    """
    rng = np.random.default_rng(rng_seed)
    fs = spec.band_width if sample_rate is None else sample_rate
    occ = draw_occupancy(spec, rng) if occupancy is None else occupancy
    n = int(round(duration * fs))
    if spec.user_count == 0 or n == 0:
        return SampleStream(np.zeros(n, complex), fs), occ
    f = np.fft.fftfreq(n, d=1 / fs) + centre
    psd = signal_psd * 10 ** (spec.power_offset_db / 10)
    edges = occ.cell_edges_hz()
    inband = np.zeros(n, bool)
    for s in occ.starts:
        lo, hi = edges[s], edges[s] + spec.user_bandwidth
        inband |= (f >= lo) & (f < hi)
    inband &= np.abs(f - centre) < fs / 2
    X = np.zeros(n, complex)
    k = int(inband.sum())
    X[inband] = np.sqrt(psd * fs * n / 2) * (rng.standard_normal(k) + 1j * rng.standard_normal(k))
    return SampleStream(np.fft.ifft(X), fs), occ


def interference_psd(occ: Occupancy, freqs: np.ndarray, signal_psd: float, centre: float = 0.0) -> np.ndarray:
    """Analytic interference PSD at baseband frequencies ``freqs``."""
    spec = occ.spec
    f = np.asarray(freqs) + centre
    edges = occ.cell_edges_hz()
    out = np.zeros(f.shape)
    level = signal_psd * 10 ** (spec.power_offset_db / 10)
    for s in occ.starts:
        lo = edges[s]
        out[(f >= lo) & (f < lo + spec.user_bandwidth)] = level
    return out
