"""Filter-bank synthesis: direct convolution and fast convolution."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .framing import PacketFrame
from .waveform import PrototypeFilter, SubcarrierPlan, WaveformConfig


@dataclass(frozen=True)
class SampleStream:
    samples: np.ndarray
    rate: float

    def __len__(self):
        return len(self.samples)


def _symbols(frame_or_symbols) -> np.ndarray:
    if isinstance(frame_or_symbols, PacketFrame):
        return frame_or_symbols.symbol_matrix()
    return np.atleast_2d(np.asarray(frame_or_symbols, dtype=complex))


def subcarrier_pulses(plan: SubcarrierPlan, proto: PrototypeFilter) -> np.ndarray:
    """K x (2 L_p + 1) modulated branch pulses ``gamma_k p[m] e^{j2pi f_k m / f_s}``."""
    cfg = plan.cfg
    half = cfg.L_p
    m = np.arange(-half, half + 1)
    tones = np.exp(2j * np.pi * np.outer(plan.freqs, m) / cfg.f_s)
    return plan.gains[:, None] * tones * proto.taps_full[None, :]


def modulate_direct(frame, plan: SubcarrierPlan, proto: PrototypeFilter) -> SampleStream:
    """Time-domain filter-bank synthesis.

    Output sample ``i`` corresponds to time index ``m = i - L_p`` relative to
    the first symbol; length is ``n_symbols * L + 2 * L_p``.
    """
    cfg = plan.cfg
    S = _symbols(frame)
    if S.shape[0] != cfg.K:
        raise ValueError(f"symbol matrix has {S.shape[0]} rows, expected {cfg.K}")
    L, Lp = cfg.L, cfg.L_p
    n = S.shape[1]
    out = np.zeros(n * L + 2 * Lp, complex)
    if n == 0:
        return SampleStream(out, cfg.f_s)
    pulses = subcarrier_pulses(plan, proto)
    span = -(-pulses.shape[1] // L)
    padded = np.zeros((cfg.K, span * L), complex)
    padded[:, : pulses.shape[1]] = pulses
    contrib = (S.T @ padded).reshape(n, span, L)
    grid = np.zeros((n + span, L), complex)
    for j in range(span):
        grid[j : j + n] += contrib[:, j, :]
    flat = grid.ravel()
    return SampleStream(flat[: len(out)].copy(), cfg.f_s)


class FastConvolutionModulator:
    """Overlap-save synthesis on blocks of ``N_s`` symbols.

    Each block's symbol spectra are replicated ``L`` times (zero-insertion
    expansion to ``f_s``), weighted by the branch filter spectra and summed
    into a single IFFT of size ``N = L * N_s``. Consecutive blocks overlap
    by ``half_span`` symbols and the middle ``N - 2 L_p`` outputs are kept.

    With ``band_only=True`` each branch filter is restricted to the ``2 N_s``
    bins of its own passband (critically sampled filtering); this is cheaper
    but drops the prototype's stopband leakage, so it matches the direct path
    only to that leakage level.
    """

    def __init__(self, plan: SubcarrierPlan, proto: PrototypeFilter, cfg: Optional[WaveformConfig] = None,
                 band_only: bool = False):
        cfg = plan.cfg if cfg is None else cfg
        self.plan, self.cfg = plan, cfg
        if cfg.half_span % 2:
            raise ValueError("half_span must be even for symbol-aligned overlap")
        if cfg.half_span > cfg.N_s // 2:
            raise ValueError("prototype too long for the block size (need half_span <= N_s/2)")
        tone = plan.freqs / cfg.f_b
        if not np.allclose(tone, np.rint(tone)) or np.any(np.rint(tone) % 2 == 0):
            raise ValueError("plan frequencies are not superset members")
        self.N = cfg.L * cfg.N_s
        self.overlap = cfg.half_span
        self.stride = cfg.N_s - self.overlap
        p = np.zeros(self.N, complex)
        Lp = cfg.L_p
        p[: Lp + 1] = proto.taps_full[Lp:]
        p[-Lp:] = proto.taps_full[:Lp]
        Pf = np.fft.fft(p)
        shifts = np.rint(plan.freqs * self.N / cfg.f_s).astype(int)
        bank = np.stack([np.roll(Pf, s) for s in shifts])
        if band_only:
            mask = np.zeros_like(bank, dtype=bool)
            rel = (np.arange(self.N)[None, :] - shifts[:, None]) % self.N
            mask |= (rel < cfg.N_s) | (rel >= self.N - cfg.N_s)
            bank = np.where(mask, bank, 0)
        self.bank = (plan.gains[:, None] * bank).reshape(cfg.K, cfg.L, cfg.N_s)
        self._bank_t = np.ascontiguousarray(self.bank.transpose(2, 1, 0))  # N_s x L x K

    def block(self, symbols: np.ndarray) -> np.ndarray:
        """Synthesize one block; returns the ``N - 2 L_p`` valid samples."""
        A = np.fft.fft(symbols, axis=1)
        X = (self._bank_t @ A.T[:, :, None])[:, :, 0].T.ravel()
        y = np.fft.ifft(X)
        Lp = self.cfg.L_p
        return y[Lp : self.N - Lp]

    def __call__(self, frame) -> SampleStream:
        cfg = self.cfg
        S = _symbols(frame)
        n = S.shape[1]
        total = n * cfg.L + 2 * cfg.L_p
        n_blocks = max(1, -(-(n + self.overlap) // self.stride))
        padded = np.zeros((cfg.K, self.overlap + n_blocks * self.stride + self.overlap), complex)
        padded[:, self.overlap : self.overlap + n] = S
        out = []
        for b in range(n_blocks):
            s0 = b * self.stride
            out.append(self.block(padded[:, s0 : s0 + cfg.N_s]))
        x = np.concatenate(out)[:total]
        return SampleStream(x, cfg.f_s)


def modulate_fc(frame, plan: SubcarrierPlan, proto: PrototypeFilter, cfg: Optional[WaveformConfig] = None,
                band_only: bool = False) -> SampleStream:
    return FastConvolutionModulator(plan, proto, cfg, band_only)(frame)


# --- export ------------------------------------------------------------------

def write_waveform(path, stream: SampleStream, plan: SubcarrierPlan) -> None:
    """Interleaved float32 I/Q at ``path`` plus ``path + '.json'`` metadata."""
    path = Path(path)
    iq = np.empty(2 * len(stream.samples), np.float32)
    iq[0::2] = stream.samples.real
    iq[1::2] = stream.samples.imag
    iq.tofile(path)
    cfg = plan.cfg
    meta = {"f_s": stream.rate, "f_b": cfg.f_b, "K": cfg.K, "u": cfg.u, "plan_hash": plan.digest(),
            "n_samples": len(stream.samples)}
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True))


def read_waveform(path) -> tuple[SampleStream, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    iq = np.fromfile(path, np.float32)
    return SampleStream(iq[0::2] + 1j * iq[1::2], meta["f_s"]), meta
