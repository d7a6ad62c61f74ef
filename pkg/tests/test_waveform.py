import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmtss.waveform import (WaveformConfig, build_contiguous_plan, build_prototype, build_pulse_bank, count_peaks,
                            crest_factor, measure_papr, multitone, optimize_gains, place_subcarriers,
                            select_indices, SubcarrierPlan)

from conftest import make_plan

METHODS = ("uniform", "segmented-random", "random")


def test_config_derived_quantities():
    cfg = WaveformConfig(K=32, u=8, f_b=1000.0)
    assert cfg.W_sc == 2000.0
    assert cfg.W_s == 64000.0
    assert cfg.W_h == 512000.0
    assert cfg.L == 512
    assert cfg.f_s == 512000.0
    assert cfg.L_p == cfg.half_span * cfg.K * cfg.u


@pytest.mark.parametrize("kw", [dict(K=0), dict(u=0), dict(f_b=0.0), dict(K=4, M_d=8), dict(N_s=48),
                                dict(half_span=2)])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        WaveformConfig(**kw)


def test_contiguous_plan_small_cases():
    np.testing.assert_array_equal(build_contiguous_plan(WaveformConfig(K=4, M_d=4)).freqs,
                                  [-3000.0, -1000.0, 1000.0, 3000.0])
    np.testing.assert_array_equal(build_contiguous_plan(WaveformConfig(K=1, M_d=1)).freqs, [0.0])


def test_contiguous_plan_k32():
    plan = build_contiguous_plan(WaveformConfig(K=32))
    assert plan.freqs.min() == -31000.0 and plan.freqs.max() == 31000.0
    assert plan.cfg.W_s == 64000.0
    np.testing.assert_array_equal(plan.gains, np.ones(32))


def test_uniform_plan_small_case():
    plan = place_subcarriers(WaveformConfig(K=4, u=2, M_d=4), "uniform")
    np.testing.assert_array_equal(plan.superset_indices, [0, 2, 4, 6])
    np.testing.assert_array_equal(plan.freqs, [-7000.0, -3000.0, 1000.0, 5000.0])


def test_segmented_random_one_per_segment():
    cfg = WaveformConfig(K=32, u=8)
    plan = place_subcarriers(cfg, "segmented-random", 11)
    # independent segment rule: index k lies in [u*s, u*(s+1)) for segment s
    seg = plan.superset_indices // cfg.u
    np.testing.assert_array_equal(np.sort(seg), np.arange(cfg.K))
    assert len(set(plan.freqs)) == cfg.K
    segment_width = cfg.u * cfg.W_sc
    lo = -cfg.W_h / 2 + np.arange(cfg.K) * segment_width
    f = np.sort(plan.freqs)
    assert np.all((f > lo) & (f < lo + segment_width))


def test_placement_rejects_bad_arguments():
    cfg = WaveformConfig(K=8, u=4, M_d=4)
    with pytest.raises(ValueError):
        place_subcarriers(cfg, "uniform", offset=4)
    with pytest.raises(ValueError):
        place_subcarriers(cfg, "zigzag")
    with pytest.raises(ValueError):
        select_indices(8, 0, "random", np.random.default_rng(0))


def test_uniform_offset():
    plan = place_subcarriers(WaveformConfig(K=4, u=4, M_d=4), "uniform", offset=3)
    np.testing.assert_array_equal(plan.superset_indices, [3, 7, 11, 15])


def test_plan_is_deterministic_in_seed():
    cfg = WaveformConfig(K=32, u=8)
    a = place_subcarriers(cfg, "random", 5)
    b = place_subcarriers(cfg, "random", 5)
    np.testing.assert_array_equal(a.freqs, b.freqs)


def _assert_valid_plan(plan: SubcarrierPlan):
    cfg = plan.cfg
    ratio = plan.freqs / cfg.f_b
    np.testing.assert_array_equal(ratio, 2 * plan.superset_indices - cfg.K * cfg.u + 1)
    if cfg.K * cfg.u % 2 == 0:
        assert np.all(np.rint(ratio).astype(int) % 2 == 1)
    assert len(np.unique(plan.freqs)) == cfg.K
    assert np.all(np.abs(plan.freqs) <= cfg.W_h / 2)
    assert np.allclose(np.abs(plan.gains), 1.0)
    assert plan.extent <= cfg.W_h + 1e-9


def test_plan_validity_exhaustive():
    """10^3 seeds for every method and u."""
    for u in (1, 2, 4, 8):
        cfg = WaveformConfig(K=32, u=u)
        for method in METHODS:
            for seed in range(1000):
                _assert_valid_plan(place_subcarriers(cfg, method, seed))


@settings(max_examples=60, deadline=None)
@given(K=st.sampled_from([1, 2, 4, 8, 16, 32]), u=st.integers(1, 16), method=st.sampled_from(METHODS),
       seed=st.integers(0, 2**32 - 1))
def test_plan_validity_property(K, u, method, seed):
    cfg = WaveformConfig(K=K, u=u, M_d=1)
    _assert_valid_plan(place_subcarriers(cfg, method, seed))


@pytest.mark.parametrize("method", METHODS)
def test_u1_collapses_to_contiguous(method):
    cfg = WaveformConfig(K=32, u=1)
    for seed in range(20):
        np.testing.assert_array_equal(place_subcarriers(cfg, method, seed).freqs, build_contiguous_plan(cfg).freqs)


def test_plan_json_round_trip():
    plan = make_plan(8, "random", 3)
    back = SubcarrierPlan.from_json(plan.to_json())
    np.testing.assert_array_equal(back.freqs, plan.freqs)
    np.testing.assert_allclose(back.gains, plan.gains)
    assert back.digest() == plan.digest()


@pytest.mark.parametrize("u", [1, 2, 8])
def test_prototype_properties(u):
    proto = build_prototype(WaveformConfig(u=u))
    cfg = proto.cfg
    taps = proto.taps_full
    assert len(taps) == 2 * cfg.L_p + 1
    assert len(proto.taps_intermediate) == 2 * cfg.half_span + 1
    np.testing.assert_allclose(taps, taps[::-1], atol=0)
    assert np.argmax(taps) == cfg.L_p
    assert abs(np.sum(taps**2) - 1) < 1e-12
    casc = np.convolve(taps, taps)
    c = len(casc) // 2
    strides = casc[c % cfg.L :: cfg.L]
    others = np.delete(strides, c // cfg.L)
    assert np.max(np.abs(others)) < 1e-3 * casc[c]


def test_single_unmodulated_branch_pulse_is_prototype():
    cfg = WaveformConfig(K=1, M_d=1)
    plan = build_contiguous_plan(cfg)
    proto = build_prototype(cfg)
    np.testing.assert_allclose(build_pulse_bank(plan, proto).g, proto.taps_full, atol=1e-15)


@pytest.mark.parametrize("u,method", [(1, "uniform"), (8, "uniform"), (8, "segmented-random"), (4, "random")])
def test_eta_conjugate_symmetric_with_central_peak(protos, u, method):
    bank = build_pulse_bank(make_plan(u, method, 2), protos[u])
    eta = bank.eta
    np.testing.assert_allclose(eta, np.conj(eta[::-1]), atol=1e-12 * np.abs(eta).max())
    assert np.argmax(np.abs(eta)) == bank.center


def test_eta_peak_counts(protos):
    contiguous = build_pulse_bank(make_plan(1), protos[1]).eta
    assert count_peaks(contiguous, 0.1) == 3
    uniform = build_pulse_bank(make_plan(8, "uniform"), protos[8]).eta
    assert count_peaks(uniform, 0.5) > 3


@pytest.mark.parametrize("u,method", [(1, "uniform"), (2, "segmented-random"), (8, "segmented-random"),
                                      (8, "random"), (8, "uniform")])
def test_pulse_spectrum_confined_to_passbands(protos, u, method):
    plan = make_plan(u, method, 4)
    cfg = plan.cfg
    g = build_pulse_bank(plan, protos[u]).g
    n = 16 * len(g)
    G = np.abs(np.fft.fft(g, n)) ** 2
    f = np.fft.fftfreq(n, d=1 / cfg.f_s)
    # passband plus one f_b transition band per edge
    near = np.any(np.abs(f[None, :] - plan.freqs[:, None]) <= 2 * cfg.f_b, axis=0)
    assert G[~near].sum() < 1e-4 * G.sum()


def test_measure_papr_hand_cases():
    assert measure_papr(np.exp(1j * np.linspace(0, 7, 100))) == pytest.approx(0.0, abs=1e-12)
    assert measure_papr([0.0, 2.0]) == pytest.approx(10 * np.log10(2.0), abs=1e-12)
    with pytest.raises(ValueError):
        measure_papr(np.zeros(8))
    with pytest.raises(ValueError):
        measure_papr([])


def test_single_tone_crest_is_unity():
    cfg = WaveformConfig(K=1, M_d=1)
    plan = build_contiguous_plan(cfg)
    opt = optimize_gains(plan)
    assert crest_factor(opt) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(opt.gains, plan.gains)


def test_multitone_period_sampling():
    plan = build_contiguous_plan(WaveformConfig(K=4, M_d=4))
    b = multitone(plan, oversample=4)
    t = np.arange(len(b)) / (len(b) * plan.cfg.f_b)
    ref = np.exp(2j * np.pi * np.outer(t, plan.freqs)).sum(axis=1)
    np.testing.assert_allclose(b, ref, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(u=st.sampled_from([1, 2, 4, 8]), method=st.sampled_from(METHODS), seed=st.integers(0, 10**6))
def test_gain_optimizer_never_degrades(u, method, seed):
    plan = make_plan(u, method, seed, optimize=False)
    opt = optimize_gains(plan)
    assert crest_factor(opt) <= crest_factor(plan) + 1e-12
    assert np.allclose(np.abs(opt.gains), 1.0)
    np.testing.assert_array_equal(optimize_gains(plan).gains, opt.gains)


def test_optimized_gains_lower_waveform_papr(protos):
    from fmtss.tx import modulate_fc
    from conftest import random_frame

    ones = make_plan(1, optimize=False)
    opt = optimize_gains(ones)
    frame = random_frame(n_bits=1024, seed=3)
    trim = 2 * ones.cfg.L_p
    p_ones = measure_papr(modulate_fc(frame, ones, protos[1]).samples[trim:-trim])
    p_opt = measure_papr(modulate_fc(frame, opt, protos[1]).samples[trim:-trim])
    assert p_opt < p_ones
