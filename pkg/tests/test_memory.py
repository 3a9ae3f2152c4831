import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CALIBRATED_MU_BG
from magnonmem.memory import (
    ClickTable,
    MagnonRecord,
    NoiseParams,
    ProtocolTiming,
    _trial_model,
    calibrate_background,
    calibrate_two_photon,
    coherence_factor,
    expected_fidelity,
    expected_g2,
    expected_port_means,
    herald_probability,
    larmor_angle,
    read_map,
    run_sequence,
    run_trial,
    simulate,
    store,
    write_map,
)
from magnonmem.plan import ExperimentPlan
from magnonmem.polarization import (
    TOMOGRAPHY_BASES,
    Basis,
    Fiducial,
    PolarizationState,
    fidelity,
)

states = st.builds(PolarizationState, st.floats(0, math.pi), st.floats(0, 2 * math.pi, exclude_max=True))


# timing

def test_timing_defaults():
    t = ProtocolTiming()
    assert t.tau_L == 2e-6
    assert t.t_w == t.tau_L / 2
    assert t.t_r == t.t_w + t.tau_L / 4
    assert t.trial_period == 1.5 * t.tau_L
    assert t.trials_per_sequence == 10_000
    assert t.storage_time == pytest.approx(t.tau_L / 4)


def test_timing_rejects_long_pulses():
    with pytest.raises(ValueError):
        ProtocolTiming(read_duration=0.6e-6)
    with pytest.raises(ValueError):
        ProtocolTiming(t_w=1e-6, t_r=0.5e-6)


def test_larmor_angles(timing):
    assert larmor_angle(timing.tau_L, timing) == pytest.approx(0.0, abs=1e-12)
    assert larmor_angle(timing.t_r - timing.t_w, timing) == pytest.approx(math.pi / 2)
    assert larmor_angle(timing.read_duration, timing) == pytest.approx(0.1 * math.pi)
    assert larmor_angle(timing.read_duration, timing) == pytest.approx(0.314, abs=1e-3)
    with pytest.raises(ValueError):
        larmor_angle(-1.0, timing)


# herald probability

def test_herald_probability_exact():
    assert herald_probability(NoiseParams(alpha_perp=0.01, eta=1e-3, q=0.1)) == 1e-6
    assert herald_probability(NoiseParams(alpha_perp=1.0, eta=0.1, q=0.1)) == 0.01
    assert herald_probability(NoiseParams(alpha_perp=1.0, eta=0.1, q=0.3)) == pytest.approx(0.03)
    assert herald_probability(NoiseParams(alpha_perp=0.0)) == 0.0


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseParams(q=1.5)
    with pytest.raises(ValueError):
        NoiseParams(mu_bg=-1)
    with pytest.raises(ValueError):
        NoiseParams(T2=0)
    with pytest.raises(ValueError):
        NoiseParams(background_model="laser")


# write / store / read

def test_write_map_examples():
    assert write_map(Fiducial.R.state).c_A == pytest.approx(1) and abs(write_map(Fiducial.R.state).c_B) < 1e-15
    m = write_map(Fiducial.L.state)
    assert abs(m.c_A) < 1e-15 and m.c_B == pytest.approx(1)
    m = write_map(Fiducial.H.state)
    assert (m.c_A, m.c_B) == (pytest.approx(1 / math.sqrt(2)), pytest.approx(1 / math.sqrt(2)))


@given(states)
def test_write_map_norm(state):
    m = write_map(state)
    assert abs(abs(m.c_A) ** 2 + abs(m.c_B) ** 2 - 1) < 1e-12


def test_magnon_record_validation():
    with pytest.raises(ValueError):
        MagnonRecord(1.0, 1.0)


def test_store_sets_coherence_factor(timing):
    noise = NoiseParams(T2=3e-6)
    m = store(write_map(Fiducial.H.state), noise, timing)
    assert m.stored_at == timing.t_w
    assert m.coherence_factor == pytest.approx(math.exp(-(timing.t_r - timing.t_w) / 3e-6))
    assert coherence_factor(noise, timing) == m.coherence_factor


def test_read_map_noiseless(timing, noiseless):
    out = read_map(store(write_map(Fiducial.H.state), noiseless, timing), noiseless, timing)
    assert fidelity(out.rho, Fiducial.H.state) == pytest.approx(1.0, abs=1e-12)
    assert out.emission_probability == 1.0
    assert out.background_fraction == 0.0


def test_read_map_background_weight(timing):
    # lambda = mu / (mu + eps) = 0.14 gives F = 1 - lambda/2 = 0.93 for every fiducial
    eps = 0.5
    noise = NoiseParams.noiseless(epsilon_retrieval=eps, mu_bg=0.14 * eps / 0.86)
    for f in Fiducial:
        out = read_map(store(write_map(f.state), noise, timing), noise, timing)
        assert out.background_fraction == pytest.approx(0.14)
        assert fidelity(out.rho, f.state) == pytest.approx(0.93, abs=1e-12)


def test_read_map_full_dephasing(timing):
    noise = NoiseParams.noiseless(T2=1e-15)
    h = read_map(store(write_map(Fiducial.H.state), noise, timing), noise, timing)
    assert fidelity(h.rho, Fiducial.H.state) == pytest.approx(0.5, abs=1e-12)
    r = read_map(store(write_map(Fiducial.R.state), noise, timing), noise, timing)
    assert fidelity(r.rho, Fiducial.R.state) == pytest.approx(1.0, abs=1e-12)


def test_read_map_unheralded(timing, calibrated):
    out = read_map(None, calibrated, timing)
    np.testing.assert_allclose(out.rho.data, np.eye(2) / 2)
    assert out.emission_probability == 0.0


def test_sigma_biased_background_flips_with_swap(timing):
    noise = NoiseParams(background_model="sigma_biased", mu_bg=1.0)
    a = read_map(None, noise, timing).rho.data
    b = read_map(None, noise, timing, swapped=True).rho.data
    bias = math.sin(0.1 * math.pi)
    np.testing.assert_allclose(np.diag(a).real, [(1 + bias) / 2, (1 - bias) / 2])
    np.testing.assert_allclose(np.diag(b).real, [(1 - bias) / 2, (1 + bias) / 2])


@settings(max_examples=100)
@given(states)
def test_noiseless_round_trip_is_exact(state):
    noise = NoiseParams.noiseless()
    timing = ProtocolTiming()
    out = read_map(store(write_map(state), noise, timing), noise, timing)
    assert fidelity(out.rho, state) == pytest.approx(1.0, abs=1e-12)


# single trials

def test_run_trial_noiseless_r_on_lr(timing, noiseless):
    rec = run_trial(Fiducial.R.state, Basis.LR, noiseless, timing, seed=1, trial_index=0)
    assert rec.heralded
    assert (rec.count("D1_herald"), rec.count("D2"), rec.count("D3")) == (1, 1, 0)


def test_run_trial_noiseless_h_on_hv(timing, noiseless):
    for i in range(50):
        rec = run_trial(Fiducial.H.state, "H-V", noiseless, timing, seed=2, trial_index=i)
        assert (rec.count("D2"), rec.count("D3")) == (1, 0)
        assert rec.measurement_setting is Basis.HV


def test_run_trial_matches_bulk_simulation(timing, calibrated):
    bulk = simulate(Fiducial.S.state, [Basis.ST], 40, calibrated, timing, 9, herald="conditioned")
    for i in (0, 17, 39):
        rec = run_trial(Fiducial.S.state, Basis.ST, calibrated, timing, 9, i, herald="conditioned")
        assert rec == bulk.records()[i]


def test_no_readout_clicks_without_read_pulse(timing):
    # with no background and no dark counts, un-heralded trials are dark
    noise = NoiseParams(alpha_perp=0.5, eta=0.5, q=0.5, pump_purity=1.0)
    t = simulate(Fiducial.H.state, TOMOGRAPHY_BASES, 20_000, noise, timing, 3)
    assert 0 < t.heralded.sum() < len(t)
    assert np.all(t.d2[~t.heralded] == 0) and np.all(t.d3[~t.heralded] == 0)


def test_heralds_at_published_defaults(timing):
    t = simulate(Fiducial.H.state, TOMOGRAPHY_BASES, 1_000_000, NoiseParams(), timing, 11)
    assert 0 <= t.heralded.sum() <= 7  # Poisson(1)


def test_herald_count_binomial(timing):
    n, p = 10_000_000, 1e-4
    noise = NoiseParams(alpha_perp=0.1, eta=1e-2, q=0.1, pump_purity=1.0)
    assert herald_probability(noise) == p
    t = simulate(Fiducial.H.state, [Basis.HV], n, noise, timing, 2024)
    heralds = int(t.heralded.sum())
    assert abs(heralds - n * p) < 5 * math.sqrt(n * p * (1 - p))


@pytest.mark.slow
def test_sequences_at_published_defaults(timing):
    # 3000 sequences of 10^4 trials at p = 1e-6: about 30 heralds
    n = 3000 * timing.trials_per_sequence
    t = simulate(Fiducial.H.state, TOMOGRAPHY_BASES, n, NoiseParams(), timing, 77)
    assert abs(int(t.heralded.sum()) - 30) < 5 * math.sqrt(30)


# sequences and records

def _plan(**kw):
    base = dict(mode="fiducials", seed=5, trials=4, states=(Fiducial.H.state,), settings=TOMOGRAPHY_BASES)
    base.update(kw)
    return ExperimentPlan(**base)


def test_run_sequence_empty():
    assert run_sequence(_plan(trials=0)) == []


def test_run_sequence_swap_flags():
    recs = run_sequence(_plan())
    assert [r.ensembles_swapped for r in recs] == [False, True, False, True]
    assert [r.measurement_setting for r in recs] == [Basis.HV, Basis.ST, Basis.LR, Basis.HV]


def test_run_sequence_deterministic():
    plan = _plan(trials=2000, states=(Fiducial.H.state, Fiducial.R.state))
    assert run_sequence(plan) == run_sequence(plan)


def test_simulation_deterministic_and_schedule_free(timing, calibrated):
    args = (Fiducial.T.state, TOMOGRAPHY_BASES, 50_000, calibrated, timing, 31)
    a = simulate(*args, herald="conditioned")
    b = simulate(*args, herald="conditioned", chunk_size=997, workers=4)
    for col in ("trial", "heralded", "swapped", "setting", "d1", "d2", "d3"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    tail = simulate(*args[:2], 20_000, *args[3:], herald="conditioned", start=30_000)
    assert np.array_equal(tail.d2, a.d2[30_000:]) and np.array_equal(tail.d3, a.d3[30_000:])


def test_different_seeds_differ(timing, calibrated):
    a = simulate(Fiducial.H.state, [Basis.HV], 20_000, calibrated, timing, 1, herald="conditioned")
    b = simulate(Fiducial.H.state, [Basis.HV], 20_000, calibrated, timing, 2, herald="conditioned")
    assert not np.array_equal(a.d2, b.d2)


def test_record_file_round_trip(tmp_path, timing, calibrated):
    t = simulate(Fiducial.V.state, TOMOGRAPHY_BASES, 3000, calibrated, timing, 4, herald="conditioned")
    path = tmp_path / "trials.csv"
    t.write(path)
    assert path.read_text().splitlines()[0] == "trial,heralded,swapped,setting,d1,d2,d3"
    back = ClickTable.read(path)
    assert back.records() == t.records()
    assert ClickTable.from_records(t.records()).records() == t.records()


def test_port_totals(timing, noiseless):
    t = simulate(Fiducial.R.state, TOMOGRAPHY_BASES, 300, noiseless, timing, 8, herald="conditioned")
    totals = t.port_totals()
    assert totals[Basis.LR] == (100, 0, 100)
    assert sum(totals[Basis.HV][:2]) == 100


# ensemble swap symmetry

def test_swap_symmetry_routing_tables(timing):
    noise = NoiseParams(
        T2=5e-6, mu_bg=0.3, population_imbalance=0.2, background_model="sigma_biased"
    )
    state = PolarizationState(0.4, 1.9)
    a = _trial_model(state, TOMOGRAPHY_BASES, noise, timing)
    b = _trial_model(state.swapped(), TOMOGRAPHY_BASES, noise, timing)
    # swapping A<->B and R<->L: parity columns exchange, L-R and S-T ports exchange
    flip = {Basis.HV: False, Basis.ST: True, Basis.LR: True}
    for i, basis in enumerate(TOMOGRAPHY_BASES):
        for table_a, table_b in ((a.p_signal_plus, b.p_signal_plus), (a.p_bg_plus, b.p_bg_plus)):
            expect = 1 - table_a[i, ::-1] if flip[basis] else table_a[i, ::-1]
            np.testing.assert_allclose(table_b[i], expect, atol=1e-12)


def test_swap_symmetry_fixed_seed(timing):
    # H-V is mapped onto itself, so the transformed run is click-for-click identical
    noise = NoiseParams(T2=5e-6, mu_bg=0.3, population_imbalance=0.2, background_model="sigma_biased")
    state = PolarizationState(0.4, 1.9)
    a = simulate(state, [Basis.HV], 100_000, noise, timing, 6, herald="conditioned", swap_phase=0)
    b = simulate(state.swapped(), [Basis.HV], 100_000, noise, timing, 6, herald="conditioned", swap_phase=1)
    assert not np.array_equal(a.swapped, b.swapped)
    assert np.array_equal(a.d2, b.d2) and np.array_equal(a.d3, b.d3)


def test_swap_symmetry_distribution(timing):
    noise = NoiseParams(T2=5e-6, mu_bg=0.3, population_imbalance=0.2, background_model="sigma_biased")
    state = PolarizationState(0.4, 1.9)
    n = 300_000
    a = simulate(state, [Basis.LR], n, noise, timing, 6, herald="conditioned")
    b = simulate(state.swapped(), [Basis.LR], n, noise, timing, 7, herald="conditioned", swap_phase=1)
    for x, y in ((a.d2.sum(), b.d3.sum()), (a.d3.sum(), b.d2.sum())):
        assert abs(x - y) < 5 * math.sqrt(x + y)


# expectations and calibration

def test_calibrated_background_reproduces_frozen_value(timing):
    mu = calibrate_background(NoiseParams(T2=1e-4), timing)
    assert mu == pytest.approx(CALIBRATED_MU_BG, rel=1e-9)
    noise = NoiseParams(T2=1e-4, mu_bg=mu)
    fids = [expected_fidelity(f.state, noise, timing) for f in Fiducial]
    assert np.mean(fids) == pytest.approx(0.93, abs=1e-10)


def test_calibration_limits(timing):
    with pytest.raises(ValueError):
        calibrate_background(NoiseParams(T2=1e-7), timing)


def test_expected_port_means_match_simulation(timing, calibrated):
    n = 600_000
    t = simulate(Fiducial.H.state, [Basis.HV], n, calibrated, timing, 12, herald="conditioned")
    swapped = np.mean([expected_port_means(Fiducial.H.state, Basis.HV, calibrated, timing, s) for s in (False, True)], axis=0)
    for observed, mean in ((t.d2.sum(), swapped[0] * n), (t.d3.sum(), swapped[1] * n)):
        assert abs(observed - mean) < 5 * math.sqrt(mean)


def test_background_acquisition_rate(timing, calibrated):
    n = 1_000_000
    t = simulate(None, [Basis.HV], n, calibrated, timing, 13)
    plus, minus = expected_port_means(None, Basis.HV, calibrated, timing)
    assert t.d1.sum() == 0
    assert abs(t.d2.sum() - plus * n) < 5 * math.sqrt(plus * n)


def test_expected_g2_coherent_is_one(calibrated):
    poisson_only = NoiseParams(mu_bg=0.0, pump_purity=1.0)
    assert expected_g2(poisson_only, "coherent") == pytest.approx(1.0, abs=1e-12)
    assert expected_g2(NoiseParams.noiseless()) == 0.0


def test_calibrated_g2_from_background_alone(calibrated):
    # background already pushes g2 above 0.24, so no two-photon term is fitted
    assert expected_g2(calibrated) == pytest.approx(0.2559, abs=1e-3)
    assert calibrate_two_photon(calibrated) == 0.0
    clean = NoiseParams(T2=1e-4, mu_bg=0.0, pump_purity=1.0)
    p2 = calibrate_two_photon(clean)
    assert expected_g2(replace(clean, p2=p2)) == pytest.approx(0.24, abs=1e-9)
