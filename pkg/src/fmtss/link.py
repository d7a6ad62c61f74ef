"""End-to-end packet transmission and reception."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import chanest
from .channel import ChannelRealization
from .framing import MulticodeAlphabet, PacketFrame, build_alphabet, decode_symbols, encode
from .rx import (FastConvolutionDemodulator, NmfFilter, TimingEstimate, acquire_timing, build_nmf, build_remap,
                 rake_detect)
from .tx import SampleStream, modulate_fc
from .waveform import PrototypeFilter, SubcarrierPlan, WaveformConfig, build_prototype


@dataclass(frozen=True)
class LinkParams:
    Z: int = 16
    P: int = 4
    N_int: int = 4
    n_bits: int = 512
    guard_symbols: int = 8
    pilot_window_symbols: int = 6
    track_window: int = 9
    track: bool = True
    track_doppler_two_sigma: float = 1.0
    solver: str = "bmp"
    doppler_two_sigma: float = 2.0


@dataclass
class Transmission:
    frame: PacketFrame
    stream: SampleStream
    offset: int  # index of the first transmit sample inside ``stream``


def transmit(bits, plan: SubcarrierPlan, proto: PrototypeFilter, params: LinkParams,
             alphabet: Optional[MulticodeAlphabet] = None, tail: int = 0) -> Transmission:
    """Encode, modulate and surround the packet with silent guards."""
    cfg = plan.cfg
    alphabet = build_alphabet(cfg.K, cfg.M_d) if alphabet is None else alphabet
    frame = encode(bits, alphabet, params.Z, params.P, params.N_int)
    x = modulate_fc(frame, plan, proto).samples
    g = params.guard_symbols * cfg.L
    out = np.zeros(g + len(x) + g + tail, complex)
    out[g : g + len(x)] = x
    return Transmission(frame, SampleStream(out, cfg.f_s), g)


def symbol_time(cfg: WaveformConfig, tx_offset: int, n: int) -> float:
    """Time of symbol ``n``'s pulse centre relative to the start of the stream."""
    return (tx_offset + cfg.L_p + n * cfg.L) / cfg.f_s


def true_channel_csi(chan: ChannelRealization, frame: PacketFrame, plan: SubcarrierPlan, timing_delay: int,
                     tx_offset: int, Z: int) -> np.ndarray:
    """Per-pilot channel vectors on the estimator grid, relative to the acquired timing."""
    cfg = plan.cfg
    M = cfg.u * 2 * cfg.K * Z
    shift = timing_delay - tx_offset
    n_pre = len(frame.preamble)
    out = np.zeros((len(frame.pilot_columns), M), complex)
    for j, col in enumerate(frame.pilot_columns):
        t = symbol_time(cfg, tx_offset, n_pre + col)
        g = chan._gains_at(t)
        np.add.at(out[j], (chan.delays - shift) % M, g)
    return out


@dataclass
class Reception:
    timing: TimingEstimate
    indices: np.ndarray
    bits: np.ndarray
    metrics: np.ndarray
    estimate: Optional[chanest.ChannelEstimate] = None
    pdp: Optional[chanest.PdpEstimate] = None
    detected: bool = True


class Receiver:
    """Timing, front end, channel state and RAKE detection for one plan."""

    def __init__(self, plan: SubcarrierPlan, proto: PrototypeFilter, params: LinkParams,
                 alphabet: Optional[MulticodeAlphabet] = None, nmf: Optional[NmfFilter] = None,
                 timing_filter: Optional[np.ndarray] = None):
        cfg = plan.cfg
        self.plan, self.proto, self.params, self.cfg = plan, proto, params, cfg
        self.alphabet = build_alphabet(cfg.K, cfg.M_d) if alphabet is None else alphabet
        self.nmf = build_nmf(plan) if nmf is None else nmf
        self.align = 4 * cfg.L  # samples kept ahead of the timing reference
        self.M_prime = 2 * cfg.K * params.Z
        self.op = build_remap(plan, cfg.u * self.M_prime)
        self._model = None
        self.demod = FastConvolutionDemodulator(plan, proto)
        self.timing_filter = timing_filter

    @property
    def model(self) -> chanest.FrontEndModel:
        if self._model is None:
            self._model = chanest.FrontEndModel(self.plan, self.proto, self.nmf, self.M_prime)
        return self._model

    def front_end(self, rx: SampleStream, delay: int) -> tuple[np.ndarray, int]:
        """Equalized per-band contiguous streams and the index of preamble symbol 0 in them."""
        cfg = self.cfg
        start = delay - self.align
        x = rx.samples
        if start < 0:
            x = np.concatenate([np.zeros(-start, complex), x])
            start = 0
        bands = self.demod.bands(x[start:], self.nmf)
        return bands, (self.align + cfg.L_p) // cfg.u

    def receive(self, rx: SampleStream, frame: PacketFrame, csi="estimated", noise_var: float = 0.0,
                noise_psd: Optional[Callable] = None, true_channel: Optional[ChannelRealization] = None,
                tx_offset: int = 0) -> Reception:
        """Decode one packet.

        ``frame`` supplies the preamble, pilot values and layout; its data
        are not used. ``csi`` is ``'estimated'``, ``'perfect'`` (needs
        ``true_channel`` and ``tx_offset``) or an explicit array of
        per-pilot channel vectors on the estimator grid.
        """
        cfg, prm = self.cfg, self.params
        search = (2 * prm.guard_symbols + len(frame.preamble) + 2 * prm.Z) * cfg.L
        timing = acquire_timing(rx, self.plan, self.proto, frame.preamble, prm.Z, search=search,
                                prefilter=self.timing_filter)
        bands, sym0 = self.front_end(rx, timing.delay)
        step = 2 * cfg.K
        n_pre = len(frame.preamble)
        pilot_cols = frame.pilot_columns
        data_cols = frame.data_columns
        est = pdp = None
        if isinstance(csi, str) and csi == "perfect":
            if true_channel is None:
                raise ValueError("perfect CSI needs the true channel")
            H = true_channel_csi(true_channel, frame, self.plan, timing.delay, tx_offset, prm.Z)
            if np.array_equal(H, np.broadcast_to(H[:1], H.shape)):
                H = H[:1]
            Hp = self.op.forward(H)
        elif isinstance(csi, str) and csi == "estimated":
            est, pdp, Hp = self.estimate(bands.sum(axis=0), sym0, frame, noise_var, noise_psd)
        else:
            Hp = self.op.forward(np.atleast_2d(csi))
            if Hp.shape[0] == 1:
                Hp = np.repeat(Hp, len(pilot_cols), axis=0)
        # hold each pilot's channel until the next pilot
        owner = np.searchsorted(pilot_cols, data_cols, side="right") - 1
        if Hp.shape[0] == 1:
            owner = np.zeros_like(owner)
        dec = rake_detect(bands, Hp, sym0 + (n_pre + data_cols) * step, self.plan, self.alphabet, groups=owner)
        bits = decode_symbols(dec.indices, cfg.M_d)
        return Reception(timing, dec.indices, bits, dec.metrics, est, pdp, timing.detected)

    def estimate(self, y: np.ndarray, sym0: int, frame: PacketFrame, noise_var: float,
                 noise_psd: Optional[Callable] = None):
        """Pilot PDP, preamble MMSE taps and per-pilot refinement."""
        cfg, prm = self.cfg, self.params
        step = 2 * cfg.K
        n_pre = len(frame.preamble)
        Lw = prm.pilot_window_symbols * step
        pos = sym0 + (n_pre + frame.pilot_columns) * step
        obs = chanest.collect_pilots(y, pos, frame.pilot_values, Lw, prm.N_int / cfg.f_b)
        op_w = build_remap(self.plan, cfg.u * Lw)
        S, nu = chanest.scattering_function(obs, op_w)
        rho_eta = chanest.intermediate_pdp(S, chanest.gaussian_doppler_weights(nu, prm.doppler_two_sigma))
        kernel = chanest.pdp_kernel(self.model, op_w)
        raw = chanest.solve_pdp_bpdn(rho_eta, kernel, method=prm.solver)
        pdp = chanest.smooth_pdp(raw, cfg.f_s)
        est = chanest.mmse_estimate(y, sym0, frame.preamble, prm.Z, self.model, pdp, op_w.M, noise_var,
                                    noise_psd, support_policy="prune")
        # pilot times relative to the middle of the preamble periods used
        mid = (prm.Z * 2) / cfg.f_b
        elapsed = (n_pre + frame.pilot_columns) / cfg.f_b - mid
        if not prm.track:
            return est, pdp, est.h_hat_prime[None, :]
        tracked = chanest.track_channel(obs, est, self.model, prm.track_window, elapsed,
                                         prm.track_doppler_two_sigma)
        return est, pdp, tracked.h_primes


def loopback(u: int = 1, n_bits: int = 512, seed: int = 0, K: int = 32, placement: str = "segmented-random",
             packet_bits: int = 8192) -> tuple[int, int]:
    """Identity channel, no noise, perfect CSI.

    Sends ``n_bits`` random bits in packets of at most ``packet_bits`` and
    returns ``(bit_errors, bits_sent)``.
    """
    from .channel import static_channel
    from .waveform import build_contiguous_plan, optimize_gains, place_subcarriers

    cfg = WaveformConfig(K=K, u=u)
    plan = build_contiguous_plan(cfg) if u == 1 else place_subcarriers(cfg, placement, seed)
    plan = optimize_gains(plan)
    proto = build_prototype(cfg)
    rng = np.random.default_rng(seed)
    chan = static_channel([1.0], [0], cfg.f_s)
    errors = sent = 0
    receiver = None
    while sent < n_bits:
        nb = min(packet_bits, n_bits - sent)
        nb -= nb % int(np.log2(cfg.M_d))
        params = LinkParams(n_bits=nb)
        if receiver is None or receiver.params != params:
            receiver = Receiver(plan, proto, params)
        bits = rng.integers(0, 2, nb)
        tx = transmit(bits, plan, proto, params)
        rcv = receiver.receive(tx.stream, tx.frame, "perfect", true_channel=chan, tx_offset=tx.offset)
        errors += int(np.sum(rcv.bits != bits))
        sent += nb
    return errors, sent
