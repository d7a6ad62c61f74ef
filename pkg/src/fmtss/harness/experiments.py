"""Experiment runners: PAPR, BER sweeps, interference avoidance, estimator diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import resample
from scipy.stats import binomtest

from .. import chanest
from ..channel import (ChannelRealization, InterferenceSpec, Occupancy, add_noise_at_snr, apply_channel,
                       draw_occupancy, flat_spec, generate_interference, interference_psd, mld_spec,
                       ota_like_spec, passband_power, realize_channel, static_channel)
from ..framing import build_alphabet
from ..link import LinkParams, Receiver, loopback, transmit, true_channel_csi
from ..rx import build_nmf, whitening_filter
from ..tx import SampleStream, modulate_fc
from ..waveform import (SubcarrierPlan, WaveformConfig, build_contiguous_plan, build_prototype, optimize_gains,
                        place_subcarriers)
from .config import ExperimentConfig, derive_seed

BASE_FIELDS = ("experiment", "u", "placement", "snr_db", "bits", "errors", "ber", "ci_lo", "ci_hi")

PAPR_SYMBOLS = 64
PAPR_OVERSAMPLE = 4


def waveform_config(conf: ExperimentConfig, u: int) -> WaveformConfig:
    return WaveformConfig(K=conf.K, u=u, f_b=conf.f_b, M_d=conf.M_d)


def link_params(conf: ExperimentConfig, **kw) -> LinkParams:
    return LinkParams(Z=conf.Z, P=conf.P, N_int=conf.N_int, n_bits=conf.n_bits, **kw)


def make_plan(cfg: WaveformConfig, placement: str, seed: int) -> SubcarrierPlan:
    """Gain-optimized plan; ``u=1`` always gives the contiguous plan."""
    if cfg.u == 1 or placement == "contiguous":
        return optimize_gains(build_contiguous_plan(cfg))
    return optimize_gains(place_subcarriers(cfg, placement, seed))


def channel_for(name: str, fs: float, duration: float, seed: int) -> ChannelRealization:
    spec = {"mld": mld_spec, "flat": flat_spec, "ota-like": ota_like_spec}[name](fs)
    return realize_channel(spec, duration, seed)


def binomial_ci(errors: int, bits: int, level: float = 0.95) -> tuple[float, float]:
    """Exact (Clopper-Pearson) interval for a bit error rate."""
    if bits == 0:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(bits)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def ber_row(experiment: str, u: int, placement: str, snr_db, errors: int, bits: int, **extra) -> dict:
    lo, hi = binomial_ci(errors, bits)
    row = {"experiment": experiment, "u": u, "placement": placement, "snr_db": snr_db, "bits": bits,
           "errors": errors, "ber": errors / bits if bits else float("nan"), "ci_lo": lo, "ci_hi": hi}
    row.update(extra)
    return row


# --- PAPR ---------------------------------------------------------------------------------

def papr_trial(cfg: WaveformConfig, placement: str, seed: int, n_symbols: int = PAPR_SYMBOLS,
               oversample: int = PAPR_OVERSAMPLE) -> float:
    """PAPR in dB of an oversampled random-payload waveform on a fresh optimized plan."""
    from ..waveform import measure_papr

    plan = make_plan(cfg, placement, seed)
    proto = build_prototype(cfg)
    alphabet = build_alphabet(cfg.K, cfg.M_d)
    rng = np.random.default_rng(seed)
    symbols = alphabet.theta[:, rng.integers(0, cfg.M_d, n_symbols)]
    x = modulate_fc(symbols, plan, proto).samples
    # steady-state part only, band-limited interpolation onto a finer grid
    x = x[2 * cfg.L_p : len(x) - 2 * cfg.L_p]
    return measure_papr(resample(x, oversample * len(x)))


def run_papr_study(conf: ExperimentConfig) -> list[dict]:
    rows = []
    for placement in conf.placements:
        for u in conf.u_values:
            cfg = waveform_config(conf, u)
            vals = np.array([papr_trial(cfg, placement, derive_seed(conf.master_seed, "papr", placement, u, t))
                             for t in range(conf.trials)])
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            rows.append({"experiment": "papr", "u": u, "placement": placement, "snr_db": "", "bits": 0,
                         "errors": 0, "ber": "", "ci_lo": "", "ci_hi": "", "trials": conf.trials,
                         "papr_min": vals.min(), "papr_q1": q1, "papr_median": med, "papr_q3": q3,
                         "papr_max": vals.max()})
    return rows


def papr_growth(rows: list[dict], placement: str) -> float:
    """Mean median-PAPR growth in dB per doubling of ``u``."""
    sel = sorted((r["u"], r["papr_median"]) for r in rows if r["placement"] == placement)
    u = np.log2([s[0] for s in sel])
    m = np.array([s[1] for s in sel])
    return float(np.polyfit(u, m, 1)[0]) if len(sel) > 1 else float("nan")


# --- one packet ---------------------------------------------------------------------------

@dataclass
class PacketResult:
    errors: int
    bits: int
    ambiguity: float
    detected: bool
    nmse: Optional[float] = None
    converged: Optional[bool] = None
    overlap: Optional[int] = None


def simulate_packet(plan: SubcarrierPlan, params: LinkParams, channel: str, snr_db: float, csi: str,
                    seed: int, noise_seed: int, receiver: Optional[Receiver] = None,
                    interference: Optional[tuple] = None) -> PacketResult:
    """Bits -> TX -> channel -> noise (+ interference) -> RX -> bit errors.

    ``interference`` is ``(spec, occupancy, centre)``; the receiver then
    equalizes with the analytic noise-plus-interference PSD.
    """
    cfg = plan.cfg
    proto = build_prototype(cfg)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, params.n_bits)
    tx = transmit(bits, plan, proto, params, tail=3 * cfg.L)
    chan = channel_for(channel, cfg.f_s, len(tx.stream) / cfg.f_s, derive_seed(seed, "channel"))
    y = apply_channel(tx.stream, chan)
    p_sig = passband_power(y.samples, plan, y.rate)
    yn, v = add_noise_at_snr(y, plan, snr_db, noise_seed, signal_power=p_sig)
    noise_var = float(np.mean(np.abs(v) ** 2)) if np.isfinite(snr_db) else 0.0
    psd_fn = None
    if interference is not None:
        spec, occ, centre = interference
        sig_psd = p_sig / cfg.W_s
        istream, _ = generate_interference(spec, len(yn) / cfg.f_s, sig_psd, derive_seed(noise_seed, "intf"),
                                           cfg.f_s, centre, occ)
        yn = SampleStream(yn.samples + istream.samples[: len(yn)], yn.rate)

        def psd_fn(f, occ=occ, centre=centre, sig_psd=sig_psd):
            # per-sample variance units, like ``noise_var``
            return cfg.f_s * interference_psd(occ, f, sig_psd, centre)

        total = lambda f: noise_var + psd_fn(f)  # noqa: E731
        receiver = Receiver(plan, proto, params, nmf=build_nmf(plan, proto, total),
                            timing_filter=whitening_filter(plan, total))
    elif receiver is None:
        receiver = Receiver(plan, proto, params)
    r = receiver.receive(yn, tx.frame, csi, noise_var=noise_var, noise_psd=psd_fn, true_channel=chan,
                         tx_offset=tx.offset)
    nmse = None
    if r.estimate is not None:
        H = receiver.op.forward(true_channel_csi(chan, tx.frame, plan, r.timing.delay, tx.offset, params.Z)[0])
        nmse = float(np.sum(np.abs(r.estimate.h_hat_prime - H) ** 2) / np.sum(np.abs(H) ** 2))
    return PacketResult(int(np.sum(r.bits != bits)), len(bits), r.timing.ambiguity_ratio, r.detected, nmse,
                        None if r.pdp is None else r.pdp.converged)


# --- BER sweep ----------------------------------------------------------------------------

def run_ber_sweep(conf: ExperimentConfig, progress: Optional[Callable] = None) -> list[dict]:
    """Per (u, SNR) cell: new channel and (unless ``fixed_plan``) new plan per packet.

    Packet ``p`` reuses its bits, channel and plan at every SNR so the
    curves differ only by the noise.
    """
    rows = []
    params = link_params(conf)
    for u in conf.u_values:
        cfg = waveform_config(conf, u)
        placement = "contiguous" if u == 1 else conf.placement
        fixed = make_plan(cfg, placement, derive_seed(conf.master_seed, "plan", u)) if conf.fixed_plan else None
        rx_fixed = Receiver(fixed, build_prototype(cfg), params) if fixed is not None else None
        for snr in conf.snr_db:
            err = bits = 0
            amb, nmse, conv = [], [], []
            for p in range(conf.packets):
                seed = derive_seed(conf.master_seed, "ber", u, p)
                plan = fixed if fixed is not None else make_plan(cfg, placement, seed)
                res = simulate_packet(plan, params, conf.channel, snr, conf.csi, seed,
                                      derive_seed(conf.master_seed, "noise", u, snr, p), rx_fixed)
                err += res.errors
                bits += res.bits
                amb.append(res.ambiguity)
                if res.nmse is not None:
                    nmse.append(res.nmse)
                    conv.append(res.converged)
            extra = {"csi": conf.csi, "channel": conf.channel, "packets": conf.packets,
                     "ambiguity_median": float(np.median(amb))}
            if nmse:
                extra["nmse_db"] = float(10 * np.log10(np.mean(nmse)))
                extra["converged_frac"] = float(np.mean(conv))
            rows.append(ber_row("ber", u, placement, snr, err, bits, **extra))
            if progress:
                progress(rows[-1])
    return rows


# --- interference avoidance ---------------------------------------------------------------

def cells_of(freq_lo: np.ndarray, freq_hi: np.ndarray, spec: InterferenceSpec) -> list[np.ndarray]:
    """Occupancy cells overlapped by each band ``[lo, hi)`` (band-centred Hz)."""
    eps = 1e-9
    lo = np.floor((np.asarray(freq_lo) + spec.band_width / 2) / spec.cell_width + eps).astype(int)
    hi = np.ceil((np.asarray(freq_hi) + spec.band_width / 2) / spec.cell_width - eps).astype(int)
    return [np.arange(a, b) for a, b in zip(lo, hi)]


def users_hit(cells: np.ndarray, occ: Occupancy) -> int:
    """Number of interferers sharing at least one cell with ``cells``."""
    if len(cells) == 0:
        return 0
    w = occ.spec.user_cells
    hit = {int(s) for s in occ.starts for c in cells if s <= c < s + w}
    return len(hit)


def _clear_candidates(cfg: WaveformConfig, occ: Occupancy, centre: float) -> np.ndarray:
    """Which superset candidates sit entirely on free cells inside the band."""
    spec = occ.spec
    tones = (2 * np.arange(cfg.K * cfg.u) - cfg.K * cfg.u + 1) * cfg.f_b + centre
    eps = 1e-9
    lo = np.floor((tones - cfg.f_b + spec.band_width / 2) / spec.cell_width + eps).astype(int)
    hi = np.ceil((tones + cfg.f_b + spec.band_width / 2) / spec.cell_width - eps).astype(int)
    inside = (lo >= 0) & (hi <= spec.n_cells)
    cum = np.concatenate([[0], np.cumsum(occ.mask)])
    busy = cum[np.clip(hi, 0, spec.n_cells)] - cum[np.clip(lo, 0, spec.n_cells)]
    return inside & (busy == 0)


def best_centre(cfg: WaveformConfig, occ: Occupancy) -> float:
    """Signal centre on the cell grid, ties broken toward the band centre.

    The contiguous signal minimizes the users it overlaps; a segmented
    placement minimizes the segments left without a free candidate.
    """
    spec = occ.spec
    half = cfg.u * cfg.W_s / 2
    lim = spec.band_width / 2 - half
    n = int(np.floor(lim / spec.cell_width + 1e-9))
    cands = np.arange(-n, n + 1) * spec.cell_width
    if cfg.u == 1:
        scores = [users_hit(cells_of([c - half], [c + half], spec)[0], occ) for c in cands]
    else:
        scores = [int(np.sum(~_clear_candidates(cfg, occ, c).reshape(cfg.K, cfg.u).any(axis=1))) for c in cands]
    best = min(range(len(cands)), key=lambda i: (scores[i], abs(cands[i])))
    return float(cands[best])


def avoiding_placement(cfg: WaveformConfig, occ: Occupancy, centre: float, seed: int,
                       retry_cap: int = 20) -> SubcarrierPlan:
    """Segmented-random placement that redraws a segment's candidate while it lands on occupied cells.

    After ``retry_cap`` draws the last candidate is kept (best effort).
    Gains are left at one.
    """
    rng = np.random.default_rng(seed)
    u, K = cfg.u, cfg.K
    clear = _clear_candidates(cfg, occ, centre)
    idx = np.empty(K, int)
    for k in range(K):
        for _ in range(retry_cap):
            j = k * u + int(rng.integers(0, u))
            if clear[j]:
                break
        idx[k] = j
    return SubcarrierPlan(cfg, idx, np.ones(K, complex), "segmented-random", seed)


def plan_overlap(plan: SubcarrierPlan, occ: Occupancy, centre: float) -> int:
    f = plan.freqs + centre
    cells = np.concatenate(cells_of(f - plan.cfg.f_b, f + plan.cfg.f_b, occ.spec))
    return users_hit(cells, occ)


def interference_plan(cfg: WaveformConfig, occ: Occupancy, seed: int, retry_cap: int = 20) -> tuple[SubcarrierPlan, float]:
    centre = best_centre(cfg, occ)
    if cfg.u == 1:
        return optimize_gains(build_contiguous_plan(cfg)), centre
    return optimize_gains(avoiding_placement(cfg, occ, centre, seed, retry_cap)), centre


def interference_spec(conf: ExperimentConfig) -> InterferenceSpec:
    return InterferenceSpec(**(conf.interference or {}))


def run_interference_study(conf: ExperimentConfig, progress: Optional[Callable] = None) -> list[dict]:
    """Full chain with partial-band interference and occupancy-aware placement (perfect CSI by default)."""
    spec = interference_spec(conf)
    params = link_params(conf)
    rows = []
    for u in conf.u_values:
        cfg = waveform_config(conf, u)
        placement = "contiguous" if u == 1 else "segmented-random"
        draws = []
        for p in range(conf.packets):
            seed = derive_seed(conf.master_seed, "interference", u, p)
            occ = draw_occupancy(spec, np.random.default_rng(derive_seed(conf.master_seed, "occupancy", p)))
            plan, centre = interference_plan(cfg, occ, seed, conf.retry_cap)
            draws.append((seed, occ, plan, centre, plan_overlap(plan, occ, centre)))
        for snr in conf.snr_db:
            err = bits = 0
            for p, (seed, occ, plan, centre, _) in enumerate(draws):
                res = simulate_packet(plan, params, conf.channel, snr, conf.csi, seed,
                                      derive_seed(conf.master_seed, "noise", u, snr, p),
                                      interference=(spec, occ, centre))
                err += res.errors
                bits += res.bits
            overlaps = [d[4] for d in draws]
            rows.append(ber_row("interference", u, placement, snr, err, bits, csi=conf.csi, channel=conf.channel,
                                packets=conf.packets, overlap_median=float(np.median(overlaps)),
                                overlap_mean=float(np.mean(overlaps))))
            if progress:
                progress(rows[-1])
    return rows


def residual_overlap(K: int, u: int, draws: int, master_seed: int = 0, spec: Optional[InterferenceSpec] = None,
                     retry_cap: int = 20, f_b: float = 1000.0) -> np.ndarray:
    """Interferers still overlapped after placement, for ``draws`` occupancy draws."""
    spec = InterferenceSpec() if spec is None else spec
    cfg = WaveformConfig(K=K, u=u, f_b=f_b)
    out = []
    for p in range(draws):
        occ = draw_occupancy(spec, np.random.default_rng(derive_seed(master_seed, "occupancy", p)))
        centre = best_centre(cfg, occ)
        if u == 1:
            plan = build_contiguous_plan(cfg)
        else:
            plan = avoiding_placement(cfg, occ, centre, derive_seed(master_seed, "interference", u, p), retry_cap)
        out.append(plan_overlap(plan, occ, centre))
    return np.array(out)


# --- estimator diagnostics ----------------------------------------------------------------

DIAG_CASES = ("single-tap", "two-mode", "mld")
RECOVERY_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.75, 1.0, 1.25, 1.5)


def diag_channel(case: str, cfg: WaveformConfig, duration: float, seed: int) -> ChannelRealization:
    """Synthetic truth for the diagnostics; the static cases use discrete taps."""
    fs = cfg.f_s
    first = int(round(320e-6 * fs))
    if case == "single-tap":
        return static_channel([np.exp(1j * 0.7)], [first], fs)
    if case == "two-mode":
        rng = np.random.default_rng(seed)
        ph = np.exp(2j * np.pi * rng.random(2)) / np.sqrt(2)
        return static_channel(ph, [first, first + int(round(2e-3 * fs))], fs)
    if case == "mld":
        return channel_for("mld", fs, duration, seed)
    raise ValueError(f"unknown diagnostic case {case!r}")


@dataclass
class EstimateCheck:
    nmse: float
    recall: float
    precision: float
    support_size: int
    converged: bool
    detected: bool
    pdp: chanest.PdpEstimate
    estimate: Optional[chanest.ChannelEstimate]


def check_estimate(plan: SubcarrierPlan, params: LinkParams, case: str, snr_db: float, seed: int,
                   noise_seed: int, tolerance: float = 50e-6) -> EstimateCheck:
    """Run the estimator on one packet and score it against the true channel.

    Recall counts true taps inside the estimated support; precision counts
    support bins within ``tolerance`` seconds of a true tap. NMSE is taken
    on the contiguous-rate channel at the first pilot.
    """
    cfg = plan.cfg
    proto = build_prototype(cfg)
    bits = np.random.default_rng(seed).integers(0, 2, params.n_bits)
    tx = transmit(bits, plan, proto, params, tail=3 * cfg.L)
    chan = diag_channel(case, cfg, len(tx.stream) / cfg.f_s, derive_seed(seed, "channel"))
    y = apply_channel(tx.stream, chan)
    p_sig = passband_power(y.samples, plan, y.rate)
    if snr_db == -np.inf:
        # noise only: same noise level as 0 dB, no signal
        _, v = add_noise_at_snr(y, plan, 0.0, noise_seed, signal_power=p_sig)
        yn = SampleStream(v, y.rate)
    else:
        yn, v = add_noise_at_snr(y, plan, snr_db, noise_seed, signal_power=p_sig)
    noise_var = float(np.mean(np.abs(v) ** 2))
    rx = Receiver(plan, proto, params)
    r = rx.receive(yn, tx.frame, "estimated", noise_var=noise_var)
    est = r.estimate
    H = true_channel_csi(chan, tx.frame, plan, r.timing.delay, tx.offset, params.Z)[0]
    Hp = rx.op.forward(H)
    true_taps = np.nonzero(np.abs(H) > 1e-12 * np.abs(H).max())[0]
    sup = est.support if est is not None else np.zeros(0, int)
    M = rx.op.M
    if sup.size:
        dist = np.abs((sup[:, None] - true_taps[None, :] + M // 2) % M - M // 2).min(axis=1)
        precision = float(np.mean(dist <= tolerance * cfg.f_s))
    else:
        precision = 0.0
    recall = float(np.mean(np.isin(true_taps, sup)))
    nmse = float(np.sum(np.abs(est.h_hat_prime - Hp) ** 2) / np.sum(np.abs(Hp) ** 2)) if est is not None else 1.0
    return EstimateCheck(nmse, recall, precision, int(sup.size), bool(r.pdp.converged) if r.pdp else False,
                         bool(r.detected), r.pdp, est)


def recovery_sweep(cfg: WaveformConfig, params: LinkParams, fractions=RECOVERY_FRACTIONS, seed: int = 0,
                   placement: str = "segmented-random") -> list[dict]:
    """Noiseless known-support MMSE as the support size grows past ``M'``.

    Taps sit at random delays on the estimator's ``M = u M'`` grid. The
    NMSE is taken on the full-rate channel, the quantity the recovery
    bound is about.
    """
    plan = make_plan(cfg, placement, seed)
    proto = build_prototype(cfg)
    rx = Receiver(plan, proto, params)
    Mp, M = rx.M_prime, rx.op.M
    bits = np.random.default_rng(seed).integers(0, 2, params.n_bits)
    tx = transmit(bits, plan, proto, params, tail=M + 3 * cfg.L)
    out = []
    for frac in fractions:
        n = max(1, int(round(frac * Mp)))
        if n > M:
            continue
        rng = np.random.default_rng(derive_seed(seed, "support", frac))
        delays = np.sort(rng.choice(M, n, replace=False))
        gains = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2 * n)
        # delays are relative to the reference tap at 0, wrapped onto the grid
        chan = static_channel(gains, delays, cfg.f_s)
        y = apply_channel(tx.stream, chan)
        bands, sym0 = rx.front_end(y, tx.offset)
        rho = np.zeros(M)
        rho[delays] = 1.0
        est = chanest.mmse_estimate(bands.sum(axis=0), sym0, tx.frame.preamble, params.Z, rx.model,
                                    chanest.PdpEstimate(rho), M, 0.0, support_policy="allow")
        H = true_channel_csi(chan, tx.frame, plan, tx.offset, tx.offset, params.Z)[0]
        nmse = float(np.sum(np.abs(est.h_hat - H) ** 2) / np.sum(np.abs(H) ** 2))
        chk = chanest.recovery_check(n, Mp)
        out.append({"support_frac": frac, "support_size": n, "nmse": nmse,
                    "recoverable": chk["recoverable"], "conservative": chk["conservative"]})
    return out


def run_estimator_diag(conf: ExperimentConfig, progress: Optional[Callable] = None) -> tuple[list[dict], dict]:
    """Per case, u and SNR: NMSE, support recall/precision, convergence; plus the recovery sweep."""
    rows = []
    details = {"cases": {}, "recovery": {}}
    for u in conf.u_values:
        cfg = waveform_config(conf, u)
        placement = "contiguous" if u == 1 else conf.placement
        for case in DIAG_CASES:
            # static cases tell the tracker to expect no Doppler
            params = link_params(conf, track_doppler_two_sigma=1.0 if case == "mld" else 0.0)
            for snr in list(conf.snr_db) + [-np.inf]:
                checks = []
                for p in range(conf.packets):
                    seed = derive_seed(conf.master_seed, "chanest", case, u, p)
                    plan = make_plan(cfg, placement, seed)
                    checks.append(check_estimate(plan, params, case, snr, seed,
                                                 derive_seed(conf.master_seed, "noise", case, u, snr, p)))
                row = {"experiment": "chanest", "u": u, "placement": placement, "snr_db": snr, "bits": 0,
                       "errors": 0, "ber": "", "ci_lo": "", "ci_hi": "", "case": case,
                       "nmse_db": float(10 * np.log10(np.mean([c.nmse for c in checks]))),
                       "recall": float(np.mean([c.recall for c in checks])),
                       "precision": float(np.mean([c.precision for c in checks])),
                       "support_size": float(np.mean([c.support_size for c in checks])),
                       "converged_frac": float(np.mean([c.converged for c in checks])),
                       "detected_frac": float(np.mean([c.detected for c in checks]))}
                rows.append(row)
                c0 = checks[0]
                details["cases"][f"{case}/u={u}/snr={snr}"] = {
                    "support": [int(i) for i in (c0.estimate.support if c0.estimate is not None else [])],
                    "kappa_trace": [float(k) for k in c0.pdp.kappa_trace] if c0.pdp else [],
                    "converged": c0.converged, "nmse": c0.nmse,
                    "recovery": chanest.recovery_check(c0.support_size, 2 * cfg.K * conf.Z)}
                if progress:
                    progress(row)
        sweep = recovery_sweep(cfg, link_params(conf), seed=derive_seed(conf.master_seed, "recovery", u),
                               placement=placement)
        details["recovery"][f"u={u}"] = sweep
        for s in sweep:
            rows.append({"experiment": "chanest", "u": u, "placement": placement, "snr_db": float("inf"),
                         "bits": 0, "errors": 0, "ber": "", "ci_lo": "", "ci_hi": "", "case": "recovery",
                         "nmse_db": float(10 * np.log10(max(s["nmse"], 1e-30))), "support_size": s["support_size"],
                         "support_frac": s["support_frac"], "recoverable": s["recoverable"],
                         "conservative": s["conservative"], "success": s["nmse"] < 1e-2})
    return rows, details


# --- loopback -----------------------------------------------------------------------------

def run_loopback(conf: ExperimentConfig) -> list[dict]:
    rows = []
    for u in conf.u_values:
        placement = "contiguous" if u == 1 else conf.placement
        errors, sent = loopback(u, conf.n_bits * conf.packets, derive_seed(conf.master_seed, "loopback", u),
                                conf.K, placement if u > 1 else "segmented-random")
        rows.append(ber_row("loopback", u, placement, float("inf"), errors, sent))
    return rows
