import json

import numpy as np
import pytest

from fmtss import chanest
from fmtss.channel import apply_channel, static_channel
from fmtss.harness.experiments import check_estimate, recovery_sweep
from fmtss.link import LinkParams, Receiver, transmit, true_channel_csi
from fmtss.rx import build_remap
from fmtss.waveform import WaveformConfig, build_prototype

from conftest import make_plan


def test_recovery_check_boundary_cases():
    assert chanest.recovery_check(512, 1024)["recoverable"]
    assert not chanest.recovery_check(513, 1024)["recoverable"]
    assert not chanest.recovery_check(1024, 1024)["recoverable"]
    assert chanest.recovery_check(341, 1024)["conservative"]
    assert not chanest.recovery_check(342, 1024)["conservative"]
    assert chanest.recovery_check(500, 1024)["margin"] == 12.0


@pytest.mark.parametrize("u,span", [(1, 8e-3), (2, 4e-3), (8, 1e-3)])
def test_max_channel_span(u, span):
    assert chanest.max_channel_span(WaveformConfig(K=32, u=u), 16) == pytest.approx(span)


def _kernel(u):
    plan = make_plan(u)
    params = LinkParams()
    rx = Receiver(plan, build_prototype(plan.cfg), params)
    op_w = build_remap(plan, plan.cfg.u * params.pilot_window_symbols * 2 * plan.cfg.K)
    return chanest.pdp_kernel(rx.model, op_w)


@pytest.mark.parametrize("method", ["bmp", "omp"])
def test_pdp_solver_recovers_synthetic_profile(method):
    k = _kernel(2)
    n = len(k)
    y = 2 * np.roll(k, 5) + np.roll(k, n // 3)
    est = chanest.solve_pdp_bpdn(y, k, method=method)
    np.testing.assert_array_equal(est.support, [5, n // 3])
    np.testing.assert_allclose(est.rho[est.support], [2, 1], rtol=1e-6)
    assert est.converged
    assert len(est.kappa_trace) == 2


def test_pdp_solver_output_is_nonnegative_and_consistent():
    k = _kernel(4)
    rng = np.random.default_rng(3)
    y = np.abs(np.fft.ifft(np.fft.fft(rng.exponential(size=len(k)) * (rng.random(len(k)) < 0.01)) * np.fft.fft(k)))
    y += 1e-3 * y.max() * rng.random(len(k))
    est = chanest.solve_pdp_bpdn(y, k, max_iter=6)
    assert np.all(est.rho >= 0)
    np.testing.assert_array_equal(est.support, np.nonzero(est.rho)[0])
    assert len(est.kappa_trace) <= 6
    assert est.kappa_trace[0] == 1.0


def test_pdp_solver_rejects_bad_input():
    k = _kernel(1)
    with pytest.raises(ValueError):
        chanest.solve_pdp_bpdn(np.ones(len(k) + 1), k)
    with pytest.raises(ValueError):
        chanest.solve_pdp_bpdn(np.ones(len(k)), np.zeros(len(k)))
    with pytest.raises(ValueError):
        chanest.solve_pdp_bpdn(np.ones(len(k)), k, method="lasso")
    assert not chanest.solve_pdp_bpdn(np.zeros(len(k)), k).support.size


def test_smoothing_preserves_mass_and_sign():
    rho = np.zeros(4096)
    rho[[10, 2000]] = [2.0, 1.0]
    out = chanest.smooth_pdp(chanest.PdpEstimate(rho), 256000.0)
    assert np.all(out.rho >= 0)
    assert out.rho.sum() == pytest.approx(3.0, rel=1e-3)
    # the Gaussian spreads each tap over roughly +-2 sigma = 22 us
    assert 8 <= np.count_nonzero(out.rho[:40]) <= 40
    assert not chanest.smooth_pdp(chanest.PdpEstimate(np.zeros(8)), 1000.0).support.size


@pytest.mark.parametrize("u", [1, 4, 8])
def test_intermediate_pdp_matches_kernel_for_single_tap(u):
    """A static single tap yields the shifted kernel up to data leakage into the pilot windows."""
    plan = make_plan(u)
    cfg = plan.cfg
    proto = build_prototype(cfg)
    params = LinkParams()
    rx = Receiver(plan, proto, params)
    tx = transmit(np.random.default_rng(0).integers(0, 2, 512), plan, proto, params, tail=3 * cfg.L)
    d = int(round(320e-6 * cfg.f_s))
    y = apply_channel(tx.stream, static_channel([np.exp(0.3j)], [d], cfg.f_s))
    bands, sym0 = rx.front_end(y, tx.offset)
    step = 2 * cfg.K
    Lw = params.pilot_window_symbols * step
    pos = sym0 + (len(tx.frame.preamble) + tx.frame.pilot_columns) * step
    obs = chanest.collect_pilots(bands.sum(axis=0), pos, tx.frame.pilot_values, Lw, params.N_int / cfg.f_b)
    op_w = build_remap(plan, cfg.u * Lw)
    S, nu = chanest.scattering_function(obs, op_w)
    rho = chanest.intermediate_pdp(S, chanest.gaussian_doppler_weights(nu))
    k = np.roll(chanest.pdp_kernel(rx.model, op_w), d)
    assert np.argmax(rho) == d
    scale = rho @ k / (k @ k)
    assert np.linalg.norm(rho - scale * k) / np.linalg.norm(rho) < 0.1


def test_intermediate_pdp_weight_shape_checked():
    with pytest.raises(ValueError):
        chanest.intermediate_pdp(np.ones((4, 3)), np.ones(4))


def test_mmse_noiseless_matches_known_support_least_squares():
    plan = make_plan(4, "random", 1)
    cfg = plan.cfg
    proto = build_prototype(cfg)
    params = LinkParams()
    rx = Receiver(plan, proto, params)
    tx = transmit(np.zeros(512, int), plan, proto, params, tail=3 * cfg.L)
    delays = np.array([0, 37, 400])
    gains = np.array([1.0, 0.5j, -0.3])
    chan = static_channel(gains, delays, cfg.f_s)
    bands, sym0 = rx.front_end(apply_channel(tx.stream, chan), tx.offset)
    M = rx.op.M
    rho = np.zeros(M)
    rho[delays] = np.abs(gains) ** 2
    est = chanest.mmse_estimate(bands.sum(axis=0), sym0, tx.frame.preamble, params.Z, rx.model,
                                chanest.PdpEstimate(rho), M, 0.0)
    H = true_channel_csi(chan, tx.frame, plan, tx.offset, tx.offset, params.Z)[0]
    assert np.sum(np.abs(est.h_hat - H) ** 2) / np.sum(np.abs(H) ** 2) < 1e-6
    ls = chanest.least_squares_estimate(bands.sum(axis=0), sym0, tx.frame.preamble, params.Z, rx.model, delays)
    np.testing.assert_allclose(ls, gains, atol=1e-3)


def test_mmse_refuses_oversized_support():
    plan = make_plan(1)
    params = LinkParams()
    rx = Receiver(plan, build_prototype(plan.cfg), params)
    M = rx.op.M
    rho = np.ones(M)
    y = np.zeros(M * 8, complex)
    with pytest.raises(ValueError):
        chanest.mmse_estimate(y, 0, np.ones(params.Z * params.P), params.Z, rx.model, chanest.PdpEstimate(rho), M, 1.0)
    with pytest.raises(ValueError):
        chanest.mmse_estimate(y, 0, np.ones(params.Z * params.P), params.Z, rx.model,
                              chanest.PdpEstimate(np.zeros(M)), M, 1.0)


@pytest.mark.parametrize("u", [1, 8])
def test_two_mode_noiseless_estimate(u):
    c = check_estimate(make_plan(u), LinkParams(track_doppler_two_sigma=0.0), "two-mode", np.inf, 1, 2)
    assert c.recall == 1.0
    assert c.precision == 1.0
    assert c.nmse < 1e-4
    assert c.converged and c.detected


def test_noise_only_is_flagged():
    c = check_estimate(make_plan(1), LinkParams(), "two-mode", -np.inf, 1, 2)
    assert not c.detected
    assert not c.converged


@pytest.mark.parametrize("u", [1, 2, 4, 8])
def test_static_two_mode_decodes_without_errors(u):
    plan = make_plan(u, seed=5)
    cfg = plan.cfg
    proto = build_prototype(cfg)
    params = LinkParams(track_doppler_two_sigma=0.0)
    bits = np.random.default_rng(u).integers(0, 2, params.n_bits)
    tx = transmit(bits, plan, proto, params, tail=3 * cfg.L)
    first = int(round(320e-6 * cfg.f_s))
    chan = static_channel(np.array([1, 1j]) / np.sqrt(2), [first, first + int(round(2e-3 * cfg.f_s))], cfg.f_s)
    r = Receiver(plan, proto, params).receive(apply_channel(tx.stream, chan), tx.frame, "estimated")
    np.testing.assert_array_equal(r.bits, bits)


def test_diagnostics_json_fields():
    c = check_estimate(make_plan(2), LinkParams(track_doppler_two_sigma=0.0), "single-tap", np.inf, 0, 1)
    d = json.loads(chanest.diagnostics_json(c.pdp, c.estimate, c.nmse, 1024))
    assert set(d) == {"support", "kappa_trace", "converged", "nmse", "recovery"}
    assert d["recovery"]["recoverable"]
    assert d["support"] == [int(i) for i in c.estimate.support]


def test_recovery_sweep_small_supports_succeed():
    rows = recovery_sweep(WaveformConfig(K=32, u=2), LinkParams(), fractions=(0.05, 0.2), seed=1)
    assert [r["support_size"] for r in rows] == [51, 205]
    assert all(r["nmse"] < 1e-2 and r["recoverable"] for r in rows)
