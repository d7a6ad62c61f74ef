"""Receive chain: band remapping, normalized matched filtering, timing, RAKE."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.signal import correlate, fftconvolve

from .framing import MulticodeAlphabet
from .tx import SampleStream
from .waveform import PrototypeFilter, SubcarrierPlan, build_pulse_bank


# --- remapping operator ------------------------------------------------------

@dataclass(frozen=True)
class RemapOperator:
    """Orthonormal band selection from ``M`` noncontiguous bins to ``M'`` contiguous ones.

    ``retained_bins[c]`` is the input bin that lands on output bin ``c``
    (output in FFT order), so the forward map is
    ``ifft(fft(y)[retained_bins])`` with orthonormal scaling.
    """

    plan: SubcarrierPlan
    M: int
    M_prime: int
    retained_bins: np.ndarray

    @property
    def contiguous_plan(self) -> SubcarrierPlan:
        return self.plan.to_contiguous()

    def forward(self, y) -> np.ndarray:
        y = np.asarray(y, complex)
        if y.shape[-1] != self.M:
            raise ValueError(f"expected length {self.M}, got {y.shape[-1]}")
        Y = np.fft.fft(y, axis=-1, norm="ortho")
        return np.fft.ifft(Y[..., self.retained_bins], axis=-1, norm="ortho")

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, complex)
        if v.shape[-1] != self.M_prime:
            raise ValueError(f"expected length {self.M_prime}, got {v.shape[-1]}")
        V = np.fft.fft(v, axis=-1, norm="ortho")
        Y = np.zeros(v.shape[:-1] + (self.M,), complex)
        Y[..., self.retained_bins] = V
        return np.fft.ifft(Y, axis=-1, norm="ortho")

    def project(self, y) -> np.ndarray:
        """Spectral projection of ``y`` onto the retained bins."""
        return self.adjoint(self.forward(y))


def build_remap(plan: SubcarrierPlan, M: int) -> RemapOperator:
    cfg = plan.cfg
    u, K = cfg.u, cfg.K
    if M % u or M % (2 * K):
        raise ValueError(f"M={M} must be divisible by u={u} and 2K={2 * K}")
    per_fb = M * cfg.f_b / cfg.f_s
    if abs(per_fb - round(per_fb)) > 1e-9:
        raise ValueError(f"M={M} does not align band edges to bins")
    per_fb = int(round(per_fb))
    Mp = M // u
    width = 2 * per_fb  # bins per subcarrier band
    src = np.empty(Mp, int)
    j = np.arange(width)
    for f_nc, f_c in zip(plan.freqs, plan.contiguous_freqs):
        lo_nc = int(round((f_nc - cfg.f_b) / cfg.f_b)) * per_fb
        lo_c = int(round((f_c - cfg.f_b) / cfg.f_b)) * per_fb
        src[(lo_c + j) % Mp] = (lo_nc + j) % M
    return RemapOperator(plan, M, Mp, src)


def remap(y, op: RemapOperator) -> np.ndarray:
    return op.forward(y)


def adjoint(v, op: RemapOperator) -> np.ndarray:
    return op.adjoint(v)


def remap_channel(h, op: RemapOperator) -> np.ndarray:
    h = np.asarray(h, complex)
    if h.shape[-1] != op.M:
        raise ValueError(f"channel length {h.shape[-1]} != M={op.M}")
    return op.forward(h)


# --- band bookkeeping --------------------------------------------------------

def band_shifts(plan: SubcarrierPlan) -> np.ndarray:
    """Frequency offset ``f_k - f'_k`` that moves each band to its contiguous slot."""
    return plan.freqs - plan.contiguous_freqs


def contiguous_to_nc(plan: SubcarrierPlan, f_c) -> np.ndarray:
    """Map contiguous-domain frequencies to the noncontiguous frequency they came from."""
    f_c = np.asarray(f_c, float)
    k = np.clip(np.floor((f_c + plan.cfg.K * plan.cfg.f_b) / (2 * plan.cfg.f_b)).astype(int), 0, plan.cfg.K - 1)
    return f_c + band_shifts(plan)[k]


# --- normalized matched filter -----------------------------------------------

@dataclass(frozen=True)
class NmfFilter:
    """Per-bin power equalizer applied after the matched filter bank.

    ``taps`` is a centred FIR of length ``2 L_g + 1`` at the contiguous
    rate; ``profile`` holds the floored weights it was designed from.
    """

    taps: np.ndarray
    profile: np.ndarray
    rate: float

    @property
    def is_identity(self) -> bool:
        c = len(self.taps) // 2
        return np.allclose(np.delete(self.taps, c), 0) and np.isclose(self.taps[c], 1)

    def response(self, freqs) -> np.ndarray:
        half = len(self.taps) // 2
        m = np.arange(-half, half + 1)
        return np.exp(-2j * np.pi * np.outer(np.asarray(freqs), m) / self.rate) @ self.taps

    def apply(self, y: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return np.asarray(y, complex)
        return fftconvolve(y, self.taps, mode="same")


def nmf_grid(plan: SubcarrierPlan) -> np.ndarray:
    cfg = plan.cfg
    n = 2 * (cfg.L_p // cfg.u) + 1
    return np.fft.fftfreq(n, d=1 / cfg.f_s_contiguous)


def build_nmf(plan: SubcarrierPlan, proto: Optional[PrototypeFilter] = None,
              noise_psd: Union[None, np.ndarray, Callable] = None, floor: float = 1e-3) -> NmfFilter:
    """Design the equalizer ``q(f) = 1 / max(psd(f), floor * median)``.

    ``noise_psd`` is either per-bin weights on :func:`nmf_grid`, a callable
    of noncontiguous frequency, or ``None`` for white noise (identity).
    """
    cfg = plan.cfg
    grid = nmf_grid(plan)
    n = len(grid)
    if noise_psd is None:
        taps = np.zeros(n, complex)
        taps[n // 2] = 1.0
        return NmfFilter(taps, np.ones(n), cfg.f_s_contiguous)
    if callable(noise_psd):
        w = np.asarray(noise_psd(contiguous_to_nc(plan, grid)), float)
    else:
        w = np.asarray(noise_psd, float)
        if w.shape != (n,):
            raise ValueError(f"expected {n} per-bin weights")
    if np.any(~np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("noise weights must be non-negative and not all zero")
    w = np.maximum(w, floor * np.median(w[w > 0]))
    if np.any(w <= 0):
        raise ValueError("non-positive weights after flooring")
    q = 1.0 / w
    q /= np.median(q)
    taps = np.fft.fftshift(np.fft.ifft(q))
    return NmfFilter(taps, w, cfg.f_s_contiguous)


def whitening_filter(plan: SubcarrierPlan, noise_psd: Callable, floor: float = 1e-3) -> np.ndarray:
    """Centred zero-phase FIR at ``f_s`` with response ``1 / max(psd, floor * median)``.

    ``noise_psd`` is a callable of noncontiguous frequency. The filter has
    ``2 L_p + 1`` taps, the prototype length.
    """
    cfg = plan.cfg
    n = 2 * cfg.L_p + 1
    f = np.fft.fftfreq(n, d=1 / cfg.f_s)
    w = np.asarray(noise_psd(f), float)
    if np.any(~np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("noise PSD must be non-negative and not all zero")
    w = np.maximum(w, floor * np.median(w[w > 0]))
    q = 1.0 / w
    q /= np.median(q)
    return np.fft.fftshift(np.fft.ifft(q))


# --- matched filter bank front end ---------------------------------------------

def _branch_pulse(plan: SubcarrierPlan, proto: PrototypeFilter, k: int) -> np.ndarray:
    cfg = plan.cfg
    m = np.arange(-cfg.L_p, cfg.L_p + 1)
    return plan.gains[k] * proto.taps_full * np.exp(2j * np.pi * plan.freqs[k] * m / cfg.f_s)


def demod_direct(rx, plan: SubcarrierPlan, proto: PrototypeFilter, nmf: Optional[NmfFilter] = None) -> SampleStream:
    """Reference front end without blocking.

    Each branch is matched-filtered at ``f_s``, shifted to its contiguous
    slot, summed, decimated by ``u`` and passed through the equalizer.
    Output sample ``j`` corresponds to input sample ``u * j``.
    """
    cfg = plan.cfg
    x = np.asarray(rx.samples if isinstance(rx, SampleStream) else rx, complex)
    n = len(x)
    i = np.arange(n)
    w = np.zeros(n, complex)
    for k, d in enumerate(band_shifts(plan)):
        z = correlate(x, _branch_pulse(plan, proto, k), mode="same", method="fft")
        w += z * np.exp(-2j * np.pi * d * i / cfg.f_s)
    y = w[:: cfg.u]
    if nmf is not None:
        y = nmf.apply(y)
    return SampleStream(y, cfg.f_s_contiguous)


class FastConvolutionDemodulator:
    """Overlap-save version of :func:`demod_direct`.

    Blocks of ``N_y`` input samples overlap by ``2 L_p``. In each block the
    input spectrum is weighted by every branch's full matched-filter
    spectrum, circularly shifted to the contiguous slot, summed, folded by
    ``u`` (decimation) and inverse transformed at size ``N_y / u``.
    """

    def __init__(self, plan: SubcarrierPlan, proto: PrototypeFilter, block_size: Optional[int] = None):
        cfg = plan.cfg
        Lp, u = cfg.L_p, cfg.u
        if block_size is None:
            block_size = 1 << int(np.ceil(np.log2(8 * Lp)))
        N = block_size
        if N & (N - 1) or N < 2 * Lp + u or N % cfg.L:
            raise ValueError("block size must be a power of 2, a multiple of L and exceed 2 L_p")
        self.plan, self.cfg, self.N = plan, cfg, N
        self.stride = N - 2 * Lp
        p = np.zeros(N)
        p[: Lp + 1] = proto.taps_full[Lp:]
        p[-Lp:] = proto.taps_full[:Lp]
        Pf = np.fft.fft(p).real  # symmetric real pulse
        shifts = band_shifts(plan)
        self.delta = shifts
        self.delta_bins = np.rint(shifts * N / cfg.f_s).astype(int)
        c_bins = np.rint(plan.contiguous_freqs * N / cfg.f_s).astype(int)
        # weight applied to the input spectrum rolled by -delta_bins
        self.weights = np.stack([np.conj(g) * np.roll(Pf, b) for g, b in zip(plan.gains, c_bins)])

    def bands(self, rx, nmf: Optional[NmfFilter] = None, span: float = 2.0) -> np.ndarray:
        """Per-subcarrier outputs at the contiguous rate (K x n/u).

        Each branch keeps only the bins within ``span * f_b`` of its
        contiguous slot, so the sum over bands matches :meth:`__call__` up
        to the prototype's far stopband.
        """
        cfg, N, u = self.cfg, self.N, self.cfg.u
        Lp = cfg.L_p
        x = np.asarray(rx.samples if isinstance(rx, SampleStream) else rx, complex)
        n = len(x)
        n_out = -(-n // u)
        n_blocks = max(1, -(-n // self.stride))
        padded = np.zeros(Lp + n_blocks * self.stride + Lp, complex)
        padded[Lp : Lp + n] = x
        half = int(round(span * cfg.f_b * N / cfg.f_s))
        rel = np.arange(-half, half + 1)
        c_bins = np.rint(self.plan.contiguous_freqs * N / cfg.f_s).astype(int)
        out_bins = c_bins[:, None] + rel[None, :]
        in_bins = (out_bins + self.delta_bins[:, None]) % N
        w = np.take_along_axis(self.weights, out_bins % N, axis=1) / u
        out_bins = out_bins % (N // u)
        rows = np.arange(cfg.K)[:, None]
        out = np.empty((cfg.K, n_blocks * self.stride // u), complex)
        keep = self.stride // u
        for b in range(n_blocks):
            s0 = b * self.stride  # absolute index of the first kept output
            X = np.fft.fft(padded[s0 : s0 + N])
            ph = np.exp(-2j * np.pi * self.delta * (s0 - Lp) / cfg.f_s)
            Wd = np.zeros((cfg.K, N // u), complex)
            np.add.at(Wd, (rows, out_bins), X[in_bins] * w * ph[:, None])
            blk = np.fft.ifft(Wd, axis=1)
            out[:, b * keep : (b + 1) * keep] = blk[:, Lp // u : (N - Lp) // u]
        out = out[:, :n_out]
        if nmf is not None and not nmf.is_identity:
            out = fftconvolve(out, nmf.taps[None, :], mode="same", axes=1)
        return out

    def __call__(self, rx, nmf: Optional[NmfFilter] = None) -> SampleStream:
        cfg, N, u = self.cfg, self.N, self.cfg.u
        Lp = cfg.L_p
        x = np.asarray(rx.samples if isinstance(rx, SampleStream) else rx, complex)
        n = len(x)
        n_out = -(-n // u)
        n_blocks = max(1, -(-n // self.stride))
        padded = np.zeros(Lp + n_blocks * self.stride + Lp, complex)
        padded[Lp : Lp + n] = x
        gather = (np.arange(N)[None, :] + self.delta_bins[:, None]) % N
        pieces = []
        for b in range(n_blocks):
            s0 = b * self.stride
            X = np.fft.fft(padded[s0 : s0 + N])
            ph = np.exp(-2j * np.pi * self.delta * (s0 - Lp) / cfg.f_s)
            W = (X[gather] * self.weights * ph[:, None]).sum(axis=0)
            w = np.fft.ifft(W.reshape(u, N // u).sum(axis=0) / u)
            pieces.append(w[Lp // u : (N - Lp) // u])
        y = np.concatenate(pieces)[:n_out]
        if nmf is not None:
            y = nmf.apply(y)
        return SampleStream(y, cfg.f_s_contiguous)


def demod_fc(rx, plan: SubcarrierPlan, proto: PrototypeFilter, nmf: Optional[NmfFilter] = None,
             block_size: Optional[int] = None) -> SampleStream:
    return FastConvolutionDemodulator(plan, proto, block_size)(rx, nmf)


# --- timing -------------------------------------------------------------------

@dataclass(frozen=True)
class TimingEstimate:
    offset: int  # input index of the first preamble symbol's peak
    delay: int  # offset minus the transmit filter delay
    peak_metric: float
    ambiguity_ratio: float
    detected: bool
    metric: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def preamble_correlation(rx, plan: SubcarrierPlan, proto: PrototypeFilter, preamble,
                         search: Optional[int] = None, prefilter: Optional[np.ndarray] = None) -> np.ndarray:
    """``sum_l conj(z_l) mf[i + l L]`` where ``mf`` is the composite matched filter output.

    ``search`` limits the candidate offsets to the first ``search`` samples.
    ``prefilter`` is a centred FIR at ``f_s`` applied first (see
    :func:`whitening_filter`).
    """
    cfg = plan.cfg
    x = np.asarray(rx.samples if isinstance(rx, SampleStream) else rx, complex)
    if search is not None:
        x = x[: search + len(preamble) * cfg.L + 2 * cfg.L_p]
    if prefilter is not None:
        x = fftconvolve(x, prefilter, mode="same")
    g = build_pulse_bank(plan, proto).g
    mf = correlate(x, g, mode="same", method="fft")
    z = np.asarray(preamble, complex)
    zup = np.zeros(len(z) * cfg.L, complex)
    zup[:: cfg.L] = z
    full = correlate(mf, zup, mode="full", method="fft")
    out = full[len(zup) - 1 :]
    return out if search is None else out[:search]


def acquire_timing(rx, plan: SubcarrierPlan, proto: PrototypeFilter, preamble, period: Optional[int] = None,
                   threshold: float = 6.0, exclude_symbols: Optional[float] = 1.0,
                   search: Optional[int] = None, prefilter: Optional[np.ndarray] = None) -> TimingEstimate:
    """Locate the preamble by correlating the matched filter output with it.

    The ambiguity ratio is the largest local maximum of the metric outside
    ``exclude_symbols`` symbols of the peak (``None`` excludes only the
    peak's monotone main lobe), searched within half a preamble period
    (``period`` symbols, default a quarter of the preamble) so the periodic
    repeats are not counted.
    """
    cfg = plan.cfg
    phi = preamble_correlation(rx, plan, proto, preamble, search, prefilter)
    a = np.abs(phi)
    i0 = int(np.argmax(a))
    peak = float(a[i0])
    detected = peak > 0 and peak >= threshold * float(np.median(a))
    Z = period if period is not None else len(preamble) // 4
    half = max(1, Z * cfg.L // 2)
    lo, hi = max(0, i0 - half), min(len(a), i0 + half + 1)
    excl = None if exclude_symbols is None else int(round(exclude_symbols * cfg.L))
    amb = ambiguity_ratio(a[lo:hi], i0 - lo, excl)
    return TimingEstimate(i0, i0 - cfg.L_p, peak, amb, bool(detected), phi)


def ambiguity_ratio(a: np.ndarray, c: int, exclude: Optional[int] = None) -> float:
    """Largest local maximum of ``a`` away from index ``c``, relative to ``a[c]``.

    ``exclude`` removes ``c +- exclude`` samples; ``None`` removes the
    monotone main lobe around ``c``.
    """
    a = np.abs(np.asarray(a))
    if a[c] == 0:
        return 0.0
    if exclude is None:
        lo = c
        while lo > 0 and a[lo - 1] <= a[lo]:
            lo -= 1
        hi = c
        while hi < len(a) - 1 and a[hi + 1] <= a[hi]:
            hi += 1
    else:
        lo, hi = c - exclude, c + exclude
    is_peak = np.zeros(len(a), bool)
    is_peak[1:-1] = (a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:])
    idx = np.arange(len(a))
    cand = is_peak & ((idx < lo) | (idx > hi))
    if not cand.any():
        return 0.0
    return float(min(1.0, a[cand].max() / a[c]))


# --- RAKE detection -------------------------------------------------------------

def band_signals(y: np.ndarray, plan: SubcarrierPlan) -> np.ndarray:
    """Split a contiguous-rate stream into its ``K`` subcarrier bands (K x len)."""
    cfg = plan.cfg
    n = len(y)
    Y = np.fft.fft(y)
    f = np.fft.fftfreq(n, d=1 / cfg.f_s_contiguous)
    fc = plan.contiguous_freqs
    out = np.empty((cfg.K, n), complex)
    for k in range(cfg.K):
        sel = (f >= fc[k] - cfg.f_b) & (f < fc[k] + cfg.f_b)
        out[k] = np.fft.ifft(np.where(sel, Y, 0))
    return out


def signed_taps(h_prime: np.ndarray, energy: float = 0.9999, max_taps: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Signed delays and values of the strongest taps holding ``energy`` of a circular response."""
    h = np.asarray(h_prime)
    M = len(h)
    d = np.arange(M)
    d = np.where(d >= M // 2, d - M, d)
    p = np.abs(h) ** 2
    if p.sum() == 0:
        return np.zeros(1, int), np.zeros(1, complex)
    order = np.argsort(p)[::-1]
    cum = np.cumsum(p[order]) / p.sum()
    keep = order[: int(np.searchsorted(cum, energy)) + 1]
    if max_taps is not None:
        keep = keep[:max_taps]
    keep = np.sort(keep)
    return d[keep], h[keep]


@dataclass(frozen=True)
class Decisions:
    indices: np.ndarray
    metrics: np.ndarray  # n_symbols x M_d real correlations


def rake_detect(y_prime, h_primes, positions, plan: SubcarrierPlan, alphabet: MulticodeAlphabet,
                groups=None, energy: float = 0.9999) -> Decisions:
    """Coherent multicode detection.

    ``y_prime`` is the equalized contiguous-rate stream (or its ``K`` band
    components), ``positions`` the sample index of each symbol to detect
    and ``h_primes`` one or more contiguous-rate channel vectors;
    ``groups[n]`` selects the vector used for symbol ``n``. Each subcarrier
    band is combined across the channel taps (maximum ratio) and the chip
    vector is correlated with every alphabet column.
    """
    y = y_prime.samples if isinstance(y_prime, SampleStream) else y_prime
    y = np.asarray(y, complex)
    bands = y if y.ndim == 2 else band_signals(y, plan)
    positions = np.asarray(positions, int)
    H = np.atleast_2d(np.asarray(h_primes, complex))
    if groups is None:
        if H.shape[0] not in (1, len(positions)):
            raise ValueError("need one channel vector per symbol or an explicit grouping")
        groups = np.zeros(len(positions), int) if H.shape[0] == 1 else np.arange(len(positions))
    groups = np.asarray(groups, int)
    if groups.shape != positions.shape:
        raise ValueError("groups must have one entry per symbol")
    n = bands.shape[1]
    chips = np.zeros((len(positions), plan.cfg.K), complex)
    for g in np.unique(groups):
        sel = np.nonzero(groups == g)[0]
        d, taps = signed_taps(H[g], energy)
        idx = positions[sel][:, None] + d[None, :]
        valid = (idx >= 0) & (idx < n)
        idx = np.clip(idx, 0, n - 1)
        win = bands[:, idx] * valid[None]
        chips[sel] = np.einsum("knd,d->nk", win, np.conj(taps))
    metrics = np.real(chips @ np.conj(alphabet.theta))
    return Decisions(np.argmax(metrics, axis=1), metrics)


# --- reports ----------------------------------------------------------------------

def decode_report(timing: TimingEstimate, indices, bit_errors: int, n_bits: int) -> str:
    return json.dumps({
        "timing_offset": int(timing.offset),
        "delay": int(timing.delay),
        "peak_metric": timing.peak_metric,
        "ambiguity_ratio": timing.ambiguity_ratio,
        "detected": timing.detected,
        "indices": [int(i) for i in indices],
        "bit_errors": int(bit_errors),
        "bits": int(n_bits),
    }, sort_keys=True)
