import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from collapse_lab import master
from collapse_lab.errors import ContractError, NumericError
from collapse_lab.hilbert import HermitianOperator, StateVector, spectral_decompose
from collapse_lab.sde import (
    EULER_MARUYAMA,
    EvolutionConfig,
    NoiseRealization,
    _Generator,
    evolve_trajectory,
    ito_step,
    martingale_check,
    norm_drift,
    projection_rule_angles,
    run_ensemble,
    strong_order_probe,
)

SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
PSI_37 = np.array([math.sqrt(0.3), math.sqrt(0.7)])


def test_noise_golden_values():
    n = NoiseRealization(42, 1e-2, 2, trajectory=3)
    expected = [[-0.010042534847214494, 0.14601151001907162], [-0.15816199372997694, 0.0032891174005316793]]
    assert n.increments(2).tolist() == expected


def test_noise_chunking_is_invisible():
    a = NoiseRealization(7, 1e-3, 3, trajectory=11)
    b = NoiseRealization(7, 1e-3, 3, trajectory=11)
    whole = a.increments(50)
    parts = np.concatenate([b.increments(20), b.increments(30)])
    assert np.array_equal(whole, parts)


def test_noise_moments_and_independence():
    dB = NoiseRealization(1, 0.01, 2).increments(200_000)
    se = 0.01 / math.sqrt(200_000)
    assert abs(dB.mean(axis=0)).max() < 4 * math.sqrt(0.01 / 200_000)
    assert np.all(np.abs(dB.var(axis=0) - 0.01) < 4 * math.sqrt(2) * se)
    assert abs(np.mean(dB[:, 0] * dB[:, 1])) < 4 * se


def test_config_validation():
    with pytest.raises(ContractError):
        EvolutionConfig(0.0, 10, (1.0,))
    with pytest.raises(ContractError):
        EvolutionConfig(0.1, -1, (1.0,))
    with pytest.raises(ContractError):
        EvolutionConfig(0.1, 1, (float("nan"),))
    with pytest.raises(ContractError):
        EvolutionConfig(0.1, 1, (1.0,), scheme="milstein")


def test_step_without_dynamics_is_identity():
    psi = StateVector([0.6, 0.8j])
    out = ito_step(psi, np.zeros((2, 2)), [SZ], [0.0], [0.3], 1e-3)
    assert np.allclose(out.amplitudes, psi.amplitudes, atol=1e-15)


def test_eigenvector_is_fixed():
    psi = StateVector([0, 1])
    for dB in (-0.5, 0.1, 2.0):
        out = ito_step(psi, None, [SZ, 2 * SZ], [1.0, 0.5], [dB, -dB], 1e-2)
        assert np.allclose(out.amplitudes, psi.amplitudes, atol=1e-15)


def test_positive_increment_favours_plus_eigenvalue():
    psi = StateVector([math.sqrt(0.5), math.sqrt(0.5)])
    out = ito_step(psi, None, [SZ], [1.0], [0.05], 1e-3)
    assert abs(out.amplitudes[0]) ** 2 > 0.5


def test_step_reports_non_finite():
    with pytest.raises(NumericError):
        ito_step(StateVector([0.6, 0.8]), None, [SZ], [1.0], [np.inf], 1e-3)


def test_step_dimension_checks():
    with pytest.raises(ContractError):
        ito_step(StateVector([1, 0, 0]), None, [SZ], [1.0], [0.1], 1e-3)
    with pytest.raises(ContractError):
        ito_step(StateVector([1, 0]), None, [SZ], [1.0], [0.1, 0.2], 1e-3)


@st.composite
def diag_problem(draw):
    d = draw(st.integers(2, 5))
    k = draw(st.integers(1, 3))
    el = st.floats(-3, 3, allow_nan=False)
    diag = draw(arrays(float, (k, d), elements=el))
    amps = draw(arrays(float, (2, d), elements=el))
    psi = amps[0] + 1j * amps[1]
    if np.linalg.norm(psi) < 1e-3:
        psi = np.ones(d)
    dB = draw(arrays(float, (k,), elements=st.floats(-0.3, 0.3)))
    g = draw(arrays(float, (k,), elements=st.floats(0, 2)))
    return diag, psi / np.linalg.norm(psi), dB, g


@settings(max_examples=60, deadline=None)
@given(diag_problem())
def test_fused_diagonal_path_matches_dense(problem):
    diag, psi, dB, g = problem
    ops = [np.diag(row) for row in diag]
    fused = _Generator(None, ops, g).advance(psi[None], dB[None], 1e-3)
    gen = _Generator(None, ops, g)
    dense = psi[None] + gen.increment(psi[None], dB[None], 1e-3)
    assert np.allclose(fused, dense, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(diag_problem())
def test_renormalized_step_has_unit_norm(problem):
    diag, psi, dB, g = problem
    H = np.diag(diag[0]) + 0.3 * np.eye(len(psi), k=1) + 0.3 * np.eye(len(psi), k=-1)
    out = ito_step(psi, H, [np.diag(r) for r in diag], g, dB, 1e-3)
    assert abs(np.linalg.norm(out.amplitudes) - 1.0) <= 1e-12


def test_unrenormalized_drift_scales_linearly_in_dt():
    # ||psi'||^2 - 1 = g^2 Var(A) (dB^2 - dt) + O(dt^2): r.m.s. ~ g^2 Var(A) dt / sqrt(2)
    psi = np.array([math.sqrt(0.5), math.sqrt(0.5)])
    rms = [norm_drift(psi, None, [SZ], [1.0], dt, n_samples=40_000)[0] for dt in (1e-2, 1e-3, 1e-4)]
    assert rms[1] / 1e-3 == pytest.approx(1 / math.sqrt(2), rel=0.03)
    slope = np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(rms), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.03)


def test_raw_euler_output_is_not_normalized():
    raw = ito_step(PSI_37, None, [SZ], [1.0], [0.2], 1e-2, renormalize=False)
    assert isinstance(raw, np.ndarray)
    assert abs(np.linalg.norm(raw) - 1.0) > 1e-4


def test_trajectory_zero_steps():
    rec = evolve_trajectory(PSI_37, EvolutionConfig(1e-3, 0, (1.0,)), None, [SZ], NoiseRealization(1, 1e-3))
    assert rec.times.tolist() == [0.0]
    assert rec.projection_weights[0] == pytest.approx([0.7, 0.3])
    assert rec.expectations[0, 0] == pytest.approx(-0.4)


def test_trajectory_resolves_and_is_reproducible():
    cfg = EvolutionConfig(1e-3, 20_000, (1.0,))
    recs = [evolve_trajectory(PSI_37, cfg, None, [SZ], NoiseRealization(5, 1e-3, trajectory=0), record_every=500)
            for _ in range(2)]
    assert len(recs[0].times) == 41
    assert np.array_equal(recs[0].projection_weights, recs[1].projection_weights)
    assert np.array_equal(recs[0].final_state.amplitudes, recs[1].final_state.amplitudes)
    assert recs[0].projection_weights[-1].max() >= 0.999
    assert np.allclose(recs[0].projection_weights.sum(axis=1), 1.0, atol=1e-8)


def test_trajectory_noise_channel_mismatch():
    with pytest.raises(ContractError):
        evolve_trajectory(PSI_37, EvolutionConfig(1e-3, 5, (1.0, 1.0)), None, [SZ, SZ], NoiseRealization(1, 1e-3, 1))


def test_ensemble_golden_counts():
    stats = run_ensemble(PSI_37, EvolutionConfig(1e-2, 1000, (1.0,)), None, [SZ], 200, 2024)
    assert stats.eigenvalues == (-1.0, 1.0)
    assert stats.outcome_counts.tolist() == [127, 73]
    assert stats.outcomes[:10].tolist() == [0, 0, 1, 0, 0, 0, 0, 1, 0, 0]
    assert stats.outcome_frequencies.sum() == pytest.approx(1.0, abs=1e-12)


def test_ensemble_independent_of_batching_and_threads():
    cfg = EvolutionConfig(1e-2, 400, (1.0,))
    a = run_ensemble(PSI_37, cfg, 0.2 * SX, [SZ], 50, 9, max_doublings=0)
    b = run_ensemble(PSI_37, cfg, 0.2 * SX, [SZ], 50, 9, max_doublings=0, batch_size=7)
    c = run_ensemble(PSI_37, cfg, 0.2 * SX, [SZ], 50, 9, max_doublings=0, batch_size=7, workers=3)
    # per-trajectory results never depend on batching
    assert np.array_equal(a.final_weights, b.final_weights)
    # merged sums differ only by reassociation across batch sizes, and not at all across threads
    assert np.allclose(a.mean_projection_weight_series, b.mean_projection_weight_series, rtol=0, atol=1e-14)
    assert np.array_equal(b.mean_projection_weight_series, c.mean_projection_weight_series)


def test_ensemble_eigenvector_start():
    stats = run_ensemble(np.array([0.0, 1.0]), EvolutionConfig(1e-2, 100, (1.0,)), None, [SZ], 20, 1)
    assert stats.outcome_frequencies.tolist() == [1.0, 0.0]


def test_degenerate_reduction_and_projection_rule():
    A = np.diag([2.0, 2.0, 5.0])
    psi0 = StateVector(np.ones(3))
    proj = spectral_decompose(HermitianOperator(A))
    stats = run_ensemble(psi0, EvolutionConfig(2e-3, 4000, (1.0,)), None, [A], 2000, 31, projectors=proj)
    sigma = stats.binomial_sigma()
    assert abs(stats.outcome_frequencies[0] - 2 / 3) <= 3 * sigma[0]
    angles = projection_rule_angles(stats, psi0, proj)
    assert max(a.max() for a in angles.values()) <= 1e-3


def test_martingale_and_spread():
    stats = run_ensemble(PSI_37, EvolutionConfig(1e-2, 1500, (1.0,)), None, [SZ], 2000, 4, record_every=100)
    proj = spectral_decompose(HermitianOperator(SZ))
    rep = martingale_check(stats, PSI_37, proj)
    assert rep.all_passed
    spread = stats.spread_series
    assert spread[0] == pytest.approx(0.84)
    assert spread[-1] < 1e-3
    assert np.all(np.diff(spread) <= 1e-2)


def test_martingale_single_trajectory_insufficient():
    stats = run_ensemble(PSI_37, EvolutionConfig(1e-2, 10, (1.0,)), None, [SZ], 1, 4, max_doublings=0)
    rep = martingale_check(stats, PSI_37, spectral_decompose(HermitianOperator(SZ)))
    assert not rep.sufficient_statistics and not rep.all_passed


def test_pure_hamiltonian_commuting_weights_drift_only_at_euler_order():
    # exact dynamics keep the weights fixed; an Euler step scales each eigencomponent
    # by |1 - i E dt|, so the drift is O(E^2 dt t) and halves with dt
    H = np.diag([0.3, -0.8])
    drift = []
    for dt in (1e-2, 5e-3):
        n = int(round(2.0 / dt))
        stats = run_ensemble(PSI_37, EvolutionConfig(dt, n, (0.0,)), H, [SZ], 5, 4, record_every=n // 4,
                             max_doublings=0, threshold=0.0)
        assert np.allclose(stats.variance_series, 0.0, atol=1e-20)
        drift.append(np.abs(stats.mean_projection_weight_series - [0.7, 0.3]).max())
    assert drift[0] <= 0.5 * (0.8**2 - 0.3**2) * 1e-2 * 2.0
    assert drift[1] / drift[0] == pytest.approx(0.5, rel=0.02)


def test_ensemble_matches_master_equation():
    d = 3
    H = 0.5 * (np.eye(d, k=1) + np.eye(d, k=-1))
    ops = [np.diag([1.0, 0.0, -1.0])]
    psi0 = StateVector([0.5, 0.5j, math.sqrt(0.5)])
    n = 2000
    stats = run_ensemble(psi0, EvolutionConfig(2e-3, 500, (0.8,)), H, ops, n, 17, record_every=100,
                         record_density=True, max_doublings=0, threshold=0.0)
    exact = master.solve(master.pure_density(psi0), H, ops, [0.8], stats.times)
    td = [master.trace_distance(a, b) for a, b in zip(stats.density_series, exact)]
    assert max(td) <= 5 / math.sqrt(n)


def test_strong_order_slopes():
    table = strong_order_probe([0.04, 0.02, 0.01, 0.005])
    assert 0.35 <= table.slope <= 0.65
    assert np.all(np.abs(table.ratios() / math.sqrt(2) - 1) <= 0.25)
    ode = strong_order_probe([0.04, 0.02, 0.01, 0.005], g=0.0, scheme=EULER_MARUYAMA)
    assert 0.9 <= ode.slope <= 1.1


def test_strong_order_single_dt():
    table = strong_order_probe([0.05], n_paths=16)
    assert table.slope is None and table.errors.shape == (1,)


def test_strong_order_rejects_increasing_dts():
    with pytest.raises(ContractError):
        strong_order_probe([0.01, 0.02])
