"""Channel acquisition: sparse power-delay profile from pilots, MMSE taps from the preamble."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .rx import NmfFilter, RemapOperator, band_shifts, build_remap
from .waveform import PrototypeFilter, SubcarrierPlan


# --- linear model of the receive front end --------------------------------------

class FrontEndModel:
    """Frequency response from a channel tap to the equalized contiguous stream.

    For a unit tap at delay ``t`` (samples at ``f_s``) and one transmitted
    symbol, bin ``c`` of an ``M'``-point transform of the front-end output is
    ``sum_k (Q[c] / u) |P(f_c - f'_k)|^2 exp(-j 2 pi b_k(c) t / M)`` where
    ``b_k(c)`` is the noncontiguous bin that band ``k`` moved to ``c``.
    """

    def __init__(self, plan: SubcarrierPlan, proto: PrototypeFilter, nmf: Optional[NmfFilter], M_prime: int):
        cfg = plan.cfg
        u = cfg.u
        self.plan, self.cfg, self.M_prime, self.M = plan, cfg, M_prime, u * M_prime
        df = cfg.f_s_contiguous / M_prime  # bin spacing, identical on both grids
        M = self.M
        if 2 * cfg.L_p + 1 > M:
            raise ValueError("transform too short for the prototype")
        p = np.zeros(M)
        p[: cfg.L_p + 1] = proto.taps_full[cfg.L_p :]
        p[M - cfg.L_p :] = proto.taps_full[: cfg.L_p]
        P = np.fft.fft(p).real
        fc = np.fft.fftfreq(M_prime, d=1 / cfg.f_s_contiguous)
        c_bins = np.rint(fc / df).astype(int)
        Q = np.ones(M_prime, complex) if nmf is None or nmf.is_identity else nmf.response(fc)
        self.Q = Q
        self.freqs = fc
        rows, nc_bins, weights = [], [], []
        for k in range(cfg.K):
            rel = c_bins - int(round(plan.contiguous_freqs[k] / df))
            w = P[rel % M] ** 2
            near = np.abs(rel) * df <= 2 * cfg.f_b
            idx = np.nonzero(near & (w > 1e-14 * P.max() ** 2))[0]
            rows.append(idx)
            nc_bins.append(c_bins[idx] + int(round(band_shifts(plan)[k] / df)))
            weights.append(Q[idx] * w[idx] / u)
        self.rows = np.concatenate(rows)
        self.nc_bins = np.concatenate(nc_bins)
        self.weights = np.concatenate(weights)
        # |Q|^2 sum_k |P|^2 / u per bin, for the noise covariance
        shape = np.zeros(M_prime)
        np.add.at(shape, self.rows, np.abs(Q[self.rows]) * np.abs(self.weights))
        self.noise_shape = shape
        base = np.zeros(M_prime, complex)
        np.add.at(base, self.rows, self.weights)
        self.base = base

    def regressor(self, delays) -> np.ndarray:
        """``M' x |T|`` frequency-domain response to unit taps at ``delays``."""
        delays = np.asarray(delays)
        X = np.zeros((self.M_prime, len(delays)), complex)
        ph = np.exp(-2j * np.pi * np.outer(self.nc_bins, delays) / self.M)
        np.add.at(X, self.rows, self.weights[:, None] * ph)
        return X

    def noise_variance(self, noise_var: float, psd: Optional[Callable] = None) -> np.ndarray:
        """Per-bin variance of an ``M'``-point transform of the front-end noise output."""
        if psd is None:
            return self.M_prime * noise_var * self.noise_shape
        f_nc = self.nc_bins * self.cfg.f_s / self.M
        f_nc = np.where(f_nc >= self.cfg.f_s / 2, f_nc - self.cfg.f_s, f_nc)
        s = noise_var + np.asarray(psd(f_nc), float)
        out = np.zeros(self.M_prime)
        np.add.at(out, self.rows, s * np.abs(self.Q[self.rows]) * np.abs(self.weights))
        return self.M_prime * out

    def impulse(self, delays, offsets) -> np.ndarray:
        """Time-domain single-symbol response at contiguous-rate ``offsets`` (rows) for ``delays`` (cols)."""
        x = np.fft.ifft(self.regressor(delays), axis=0)
        return x[np.asarray(offsets) % self.M_prime]


# --- pilots and the scattering function ---------------------------------------------

@dataclass(frozen=True)
class PilotObservation:
    Y_prime: np.ndarray  # L' x N_p windows centred on each pilot
    pilot_values: np.ndarray
    positions: np.ndarray
    pilot_spacing: float  # seconds between pilots


def collect_pilots(y_prime, positions, pilot_values, window: int, pilot_spacing: float) -> PilotObservation:
    """Cut ``window``-sample neighbourhoods centred on each pilot position."""
    y = np.asarray(y_prime)
    positions = np.asarray(positions, int)
    if positions.size == 0:
        raise ValueError("payload too short: no pilots")
    off = np.arange(window) - window // 2
    idx = positions[None, :] + off[:, None]
    valid = (idx >= 0) & (idx < len(y))
    Y = np.where(valid, y[np.clip(idx, 0, len(y) - 1)], 0)
    return PilotObservation(Y, np.asarray(pilot_values, complex)[: len(positions)], positions, pilot_spacing)


def pilot_delay_columns(obs: PilotObservation, op: RemapOperator) -> np.ndarray:
    """Pilot-derotated windows mapped back to the noncontiguous delay grid (M x N_p)."""
    H = obs.Y_prime * np.conj(obs.pilot_values)[None, :]
    H = np.fft.ifftshift(H, axes=0)  # pilot instant to index 0
    return op.adjoint(H.T).T


def scattering_function(obs: PilotObservation, op: RemapOperator) -> tuple[np.ndarray, np.ndarray]:
    """Delay x Doppler power map and the Doppler frequency of each column."""
    Hd = pilot_delay_columns(obs, op)
    S = np.abs(np.fft.fft(Hd, axis=1)) ** 2
    nu = np.fft.fftfreq(Hd.shape[1], d=obs.pilot_spacing)
    return S, nu


def gaussian_doppler_weights(nu: np.ndarray, two_sigma: float = 2.0) -> np.ndarray:
    sigma = two_sigma / 2
    return np.exp(-np.asarray(nu) ** 2 / (2 * sigma**2))


def intermediate_pdp(S_eta: np.ndarray, doppler_weights) -> np.ndarray:
    w = np.asarray(doppler_weights, float)
    if w.shape != (S_eta.shape[1],):
        raise ValueError("one weight per Doppler bin required")
    return S_eta @ w


def pdp_kernel(model: FrontEndModel, op: RemapOperator) -> np.ndarray:
    """``|.|^2`` of a unit tap's response seen through the pilot window and the adjoint remap."""
    Lw = op.M_prime
    off = np.arange(Lw) - Lw // 2
    psi = model.impulse([0], off)[:, 0]
    return np.abs(op.adjoint(np.fft.ifftshift(psi))) ** 2


# --- sparse PDP solver ---------------------------------------------------------------

@dataclass(frozen=True)
class PdpEstimate:
    rho: np.ndarray
    kappa_trace: tuple = ()
    converged: bool = True

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.rho > 0)[0]


def _atoms(kernel: np.ndarray, shifts) -> np.ndarray:
    n = len(kernel)
    idx = (np.arange(n)[:, None] - np.asarray(shifts)[None, :]) % n
    return kernel[idx]


def _nnls_gram(acorr: np.ndarray, ycorr: np.ndarray, shifts) -> np.ndarray:
    """NNLS over circulant atoms using only their Gram matrix.

    With ``G = A^T A = R^T R`` the objective equals
    ``||R x - R^-T A^T y||^2`` up to a constant, so the minimizer is shared.
    """
    s = np.asarray(shifts)
    n = len(acorr)
    G = acorr[(s[:, None] - s[None, :]) % n]
    b = ycorr[s]
    G = G + 1e-12 * np.trace(G) / len(s) * np.eye(len(s))
    R = np.linalg.cholesky(G).T
    return nnls(R, np.linalg.solve(R.T, b))[0]


def _circ_corr(r: np.ndarray, kernel_f: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.fft(r) * np.conj(kernel_f)).real


def solve_pdp_bpdn(rho_eta, kernel, block: int = 5, drop: float = 0.05, kappa_tol: float = 1e-3,
                   max_iter: int = 32, method: str = "bmp") -> PdpEstimate:
    """Nonnegative sparse deconvolution of ``rho_eta`` by the circulant ``kernel``.

    ``method='bmp'`` grows the support one block of ``block`` delays at a
    time, refits by nonnegative least squares and drops atoms below
    ``drop`` times the largest coefficient. ``method='omp'`` adds single
    atoms and never drops. Iteration stops once the normalized squared
    change between successive estimates falls below ``kappa_tol``.
    """
    y = np.asarray(rho_eta, float)
    k = np.asarray(kernel, float)
    n = len(y)
    if k.shape != y.shape:
        raise ValueError("kernel and observation lengths differ")
    if np.sum(k**2) <= 0:
        raise ValueError("kernel has no energy")
    if method not in ("bmp", "omp"):
        raise ValueError(f"unknown method {method!r}")
    if not np.any(y):
        return PdpEstimate(np.zeros(n), (), True)
    kf = np.fft.fft(k)
    acorr = np.fft.ifft(np.abs(kf) ** 2).real
    ycorr = _circ_corr(y, kf)
    width = 1 if method == "omp" else block
    half = width // 2
    support: list[int] = []
    rho = np.zeros(n)
    resid = y.copy()
    trace = []
    converged = False
    y_energy = np.sum(y**2)
    for _ in range(max_iter):
        corr = _circ_corr(resid, kf)
        score = np.convolve(np.concatenate([corr[-half:], corr, corr[:half]]) if half else corr,
                            np.ones(width), mode="valid")
        score[support] = -np.inf
        t = int(np.argmax(score))
        if not np.isfinite(score[t]) or score[t] <= 0:
            trace.append(0.0)
            converged = True
            break
        new = [(t + j) % n for j in range(-half, half + 1)]
        support = sorted(set(support) | set(new))
        for _refit in range(2):
            coef = _nnls_gram(acorr, ycorr, support)
            if method == "omp":
                break
            keep = coef >= drop * coef.max() if coef.max() > 0 else np.zeros(len(coef), bool)
            if keep.all():
                break
            support = [s for s, kk in zip(support, keep) if kk]
            if not support:
                coef = np.zeros(0)
                break
        prev = rho
        rho = np.zeros(n)
        if support:
            rho[support] = coef[: len(support)]
            resid = y - _atoms(k, support) @ rho[support]
        else:
            resid = y.copy()
        denom = np.sum(rho**2)
        kappa = float(np.sum((rho - prev) ** 2) / denom) if denom > 0 else 1.0
        trace.append(kappa)
        if kappa < kappa_tol or np.sum(resid**2) < 1e-14 * y_energy:
            # an exact fit leaves nothing for further atoms to explain
            converged = True
            break
    return PdpEstimate(rho, tuple(trace), converged)


def smooth_pdp(pdp: PdpEstimate, f_s: float, duration: float = 100e-6, two_sigma: float = 22e-6,
               threshold: float = 1e-3) -> PdpEstimate:
    """Circular convolution with a unit-area Gaussian; entries below ``threshold * max`` are zeroed."""
    rho = pdp.rho
    n = len(rho)
    if not np.any(rho):
        return PdpEstimate(np.zeros(n), pdp.kappa_trace, pdp.converged)
    half = int(round(duration / 2 * f_s))
    sigma = two_sigma / 2 * f_s
    m = np.arange(-half, half + 1)
    g = np.exp(-(m**2) / (2 * sigma**2)) if sigma > 0 else (m == 0).astype(float)
    g /= g.sum()
    kern = np.zeros(n)
    np.add.at(kern, m % n, g)
    out = np.fft.ifft(np.fft.fft(rho) * np.fft.fft(kern)).real
    out = np.maximum(out, 0)
    out *= rho.sum() / out.sum()
    out[out < threshold * out.max()] = 0
    return PdpEstimate(out, pdp.kappa_trace, pdp.converged)


def signed_delays(indices, n: int) -> np.ndarray:
    d = np.asarray(indices)
    return np.where(d >= n // 2, d - n, d)


# --- recovery bound ------------------------------------------------------------------------

def recovery_check(support_size: int, M_prime: int) -> dict:
    """Hard bound ``|T| <= M'/2`` and the conservative ``|T| <= M'/3``."""
    return {
        "recoverable": bool(support_size <= M_prime / 2),
        "conservative": bool(support_size <= M_prime / 3),
        "margin": float(M_prime / 2 - support_size),
    }


def max_channel_span(cfg, Z: int) -> float:
    """Longest channel span in seconds that satisfies the hard bound."""
    return Z / (2 * cfg.u * cfg.f_b)


# --- MMSE estimation -------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelEstimate:
    h_hat: np.ndarray  # length M at f_s, circular delay index
    h_hat_prime: np.ndarray  # forward remap of h_hat
    support: np.ndarray
    prior: np.ndarray
    channel_power: float
    posterior_var: Optional[np.ndarray] = None


def preamble_spectrum(y_prime, sym0: int, preamble, K: int, Z: int, periods=(1, 2)) -> np.ndarray:
    """Average ``M'``-point transform of the chosen preamble periods of the front-end output."""
    y = np.asarray(y_prime)
    Mp = 2 * K * Z
    spans = []
    for p in periods:
        s = sym0 + p * Mp
        if s < 0 or s + Mp > len(y):
            raise ValueError("preamble period outside the received stream")
        spans.append(np.fft.fft(y[s : s + Mp]))
    return np.mean(spans, axis=0)


def symbol_spectrum(preamble, K: int, Z: int) -> np.ndarray:
    zup = np.zeros(2 * K * Z, complex)
    zup[:: 2 * K] = np.asarray(preamble)[:Z]
    return np.fft.fft(zup)


def mmse_estimate(y_prime, sym0: int, preamble, Z: int, model: FrontEndModel, pdp: PdpEstimate,
                  pdp_grid: int, noise_var: float, noise_psd: Optional[Callable] = None,
                  periods=(1, 2), support_policy: str = "refuse", prior_floor: float = 1e-6,
                  noise_floor: float = 1e-8) -> ChannelEstimate:
    """Pruned MMSE estimate of the channel taps from the periodic preamble.

    ``pdp`` lives on a circular delay grid of ``pdp_grid`` samples at
    ``f_s``; its support is mapped onto the ``M = u M'`` grid of the
    estimate. The prior variance of each supported tap is the PDP value
    rescaled so the PDP sums to the channel power measured on the preamble.
    ``support_policy='prune'`` keeps the strongest ``M'/3`` taps instead of
    refusing an oversized support; ``'allow'`` solves on any support (used
    to probe the recovery bound). ``noise_floor`` bounds the per-bin noise
    variance from below, relative to the mean bin power, which keeps the
    solve well conditioned on noiseless input.
    """
    cfg = model.cfg
    Mp, M = model.M_prime, model.M
    if Mp != 2 * cfg.K * Z:
        raise ValueError("model grid must span one preamble period")
    idx = pdp.support
    if idx.size == 0:
        raise ValueError("empty PDP support")
    vals = pdp.rho[idx]
    chk = recovery_check(idx.size, Mp)
    if support_policy not in ("refuse", "prune", "allow"):
        raise ValueError(f"unknown support policy {support_policy!r}")
    if not chk["recoverable"]:
        if support_policy == "refuse":
            raise ValueError(f"support of {idx.size} taps exceeds the recovery bound {Mp // 2}")
    if idx.size > Mp // 3 and support_policy == "prune":
        keep = np.argsort(vals)[::-1][: Mp // 3]
        idx, vals = idx[keep], vals[keep]
    delays = signed_delays(idx, pdp_grid)
    Yd = preamble_spectrum(y_prime, sym0, preamble, cfg.K, Z, periods)
    Zd = symbol_spectrum(preamble, cfg.K, Z)
    var = model.noise_variance(noise_var, noise_psd) / len(periods)
    rows = np.nonzero(var > 1e-12 * var.max())[0] if var.max() > 0 else np.nonzero(np.abs(model.base) > 0)[0]
    X = Zd[rows, None] * model.regressor(delays)[rows]
    y = Yd[rows]
    # a relative floor keeps the solve well conditioned when the noise is (nearly) zero
    v = np.maximum(var[rows], noise_floor * np.mean(np.abs(y) ** 2))
    gain = np.abs(Zd[rows] * model.base[rows]) ** 2
    power = max(float(np.sum(np.abs(y) ** 2 - v) / np.sum(gain)), 1e-12)
    prior = vals / vals.sum() * power
    prior = np.maximum(prior, prior_floor * prior.max())
    # whiten by noise and prior so the normal matrix is I + Xt^H Xt, then solve through an SVD
    sp = np.sqrt(prior)
    Xt = X * (sp[None, :] / np.sqrt(v)[:, None])
    U, sv, Vh = np.linalg.svd(Xt, full_matrices=False)
    hp = sp * (Vh.conj().T @ (sv / (1 + sv**2) * (U.conj().T @ (y / np.sqrt(v)))))
    shrink = np.ones(len(prior))
    shrink -= np.sum(np.abs(Vh) ** 2 * (sv**2 / (1 + sv**2))[:, None], axis=0)
    post_var = prior * np.maximum(shrink, 0)
    h = np.zeros(M, complex)
    h[delays % M] = hp
    op = build_remap(model.plan, M)
    return ChannelEstimate(h, op.forward(h), delays % M, prior, power, post_var)


def least_squares_estimate(y_prime, sym0: int, preamble, Z: int, model: FrontEndModel, delays,
                           periods=(1, 2)) -> np.ndarray:
    """Unregularized least-squares taps on a known support (reference for tests)."""
    Yd = preamble_spectrum(y_prime, sym0, preamble, model.cfg.K, Z, periods)
    Zd = symbol_spectrum(preamble, model.cfg.K, Z)
    X = Zd[:, None] * model.regressor(delays)
    sol, *_ = np.linalg.lstsq(X, Yd, rcond=None)
    return sol


# --- pilot tracking ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackedChannel:
    h_primes: np.ndarray  # one contiguous-rate channel per pilot
    h: np.ndarray  # same, on the noncontiguous grid


def track_channel(obs: PilotObservation, est: ChannelEstimate, model: FrontEndModel, window: int = 9,
                  elapsed=None, doppler_two_sigma: float = 1.0, levels: int = 8) -> TrackedChannel:
    """Refine the preamble estimate at each pilot.

    Pilot-derotated windows are averaged over ``window`` neighbouring
    pilots. Each pilot's taps get an MMSE update around the preamble
    estimate whose prior covariance is the preamble posterior variance plus
    the decorrelation expected after ``elapsed[j]`` seconds under a
    Gaussian Doppler spectrum of width ``doppler_two_sigma``; 0 anticipates
    a static channel and returns the preamble estimate. The window noise (data and receiver noise)
    is measured from differences of successive windows, which cancels the
    slowly varying channel and any fixed model error.
    """
    Lw = obs.Y_prime.shape[0]
    off = np.arange(Lw) - Lw // 2
    delays = signed_delays(est.support, model.M)
    B = model.impulse(delays, off)
    D = obs.Y_prime * np.conj(obs.pilot_values)[None, :]
    n_p = D.shape[1]
    kern = np.ones(min(window, n_p))
    norm = np.convolve(np.ones(n_p), kern, mode="same")
    Dbar = np.stack([np.convolve(row, kern, mode="same") for row in D]) / norm[None, :]
    h0 = est.h_hat[est.support]
    pred = B @ h0
    if n_p > 1:
        s2_single = float(np.mean(np.abs(np.diff(D, axis=1)) ** 2) / 2)
    else:
        s2_single = float(np.mean(np.abs(D[:, 0] - pred) ** 2))
    s2 = np.maximum(s2_single / norm, 1e-30)
    if elapsed is None:
        elapsed = np.zeros(n_p)
    sigma = doppler_two_sigma / 2
    decor = 2 * (1 - np.exp(-2 * np.pi**2 * sigma**2 * np.asarray(elapsed) ** 2))
    post = est.posterior_var if est.posterior_var is not None else np.zeros(len(h0))
    # quantize the drift level so the normal matrices can be shared
    q = np.round(decor * (levels - 1) / max(decor.max(), 1e-12)) / (levels - 1) * max(decor.max(), 1e-12)
    BhB = B.conj().T @ B
    out_h = np.zeros((n_p, model.M), complex)
    cache = {}
    for j in range(n_p):
        key = (float(q[j]), float(s2[j]))
        if key not in cache:
            Pj = post + q[j] * est.prior
            if not np.any(Pj > 0):
                cache[key] = None
            else:
                A = Pj[:, None] * BhB + s2[j] * np.eye(len(h0))
                cache[key] = np.linalg.solve(A, Pj[:, None] * B.conj().T)
        G = cache[key]
        out_h[j, est.support] = h0 if G is None else h0 + G @ (Dbar[:, j] - pred)
    op = build_remap(model.plan, model.M)
    return TrackedChannel(op.forward(out_h), out_h)


# --- diagnostics -----------------------------------------------------------------------------

def diagnostics_json(pdp: PdpEstimate, est: Optional[ChannelEstimate], nmse: Optional[float], M_prime: int) -> str:
    support = [] if est is None else [int(i) for i in est.support]
    return json.dumps({
        "support": support,
        "kappa_trace": list(pdp.kappa_trace),
        "converged": pdp.converged,
        "nmse": nmse,
        "recovery": recovery_check(len(support), M_prime),
    }, sort_keys=True)
