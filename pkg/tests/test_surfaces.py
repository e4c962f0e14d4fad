import math

import numpy as np
import pytest

from collapse_lab.errors import ContractError, SchedulingError
from collapse_lab.lattice import Lattice
from collapse_lab.sde import ito_step
from collapse_lab.surfaces import (
    Bubble,
    BubbleNoiseField,
    CellGenerators,
    PathSchedule,
    SpacelikeSurface,
    bubble_advance,
    flat_layer,
    flat_schedule,
    flat_slice_generators,
    integrability_discrepancy,
    integrability_scan,
    localized_probe,
    path_evolve,
    refinement_consistency_check,
    refinement_invariance,
    sweep_schedule,
)

LINE = Lattice((4, 1, 1), 1.0)
PSI = np.array([0.6, 0.8j])
SZ = np.diag([1.0, -1.0])


def random_generators(rng, n_cells, d, diagonal=False, with_h=True, g=0.7):
    def herm():
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        return 0.5 * (a + a.conj().T)

    S = [np.diag(rng.normal(size=d)) if diagonal else herm() for _ in range(n_cells)]
    H = [herm() for _ in range(n_cells)] if with_h else None
    return CellGenerators(S, H, g)


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def test_surface_spacelike_condition():
    SpacelikeSurface(LINE, [0.0, 0.5, 0.9, 0.5])
    with pytest.raises(SchedulingError) as err:
        SpacelikeSurface(LINE, [0.0, 1.0, 0.0, 0.0])
    assert err.value.cells == (0, 1)
    with pytest.raises(ContractError):
        SpacelikeSurface(LINE, [0.0, 0.0])


def test_advance_rejects_causal_violation():
    surf = SpacelikeSurface.flat(LINE)
    noise = BubbleNoiseField(1, 1.0, 0.5)
    with pytest.raises(SchedulingError) as err:
        bubble_advance(PSI, surf, Bubble(2, 1.0, 1.0), S_op=SZ, noise=noise)
    assert set(err.value.cells) in ({1, 2}, {2, 3})


def test_bubble_validation():
    with pytest.raises(ContractError):
        Bubble(0, 0.0, 1.0)
    assert Bubble(0, 0.25, 2.0).volume == 0.5
    surf = SpacelikeSurface.flat(LINE)
    with pytest.raises(ContractError):
        PathSchedule(surf, [[Bubble(0, 0.1, 1.0), Bubble(0, 0.1, 1.0)]])


def test_schedule_tiles_region():
    surf = SpacelikeSurface.flat(LINE)
    sched = sweep_schedule(surf, 3, 0.25)
    assert sched.n_bubbles == 12
    assert np.allclose(sched.end.cell_times, 0.75)
    with pytest.raises(ContractError):
        PathSchedule(surf, [Bubble(0, 0.25, 2.0)])


def test_noise_field_statistics_and_addressing():
    f = BubbleNoiseField(3, 2.0, 0.01, n_samples=50_000)
    v = f.value(1, 0.0, 0.01)
    assert v.var() == pytest.approx(0.02, rel=0.03)
    assert f.value(1, 0.0, 0.05) == pytest.approx(f.fine_values(1, 0, 5).sum(axis=0))
    other = BubbleNoiseField(3, 2.0, 0.01, n_samples=50_000)
    assert np.array_equal(other.value(1, 0.6, 0.7), f.value(1, 0.6, 0.7))
    with pytest.raises(ContractError):
        f.value(1, 0.0, 0.015)
    with pytest.raises(ContractError):
        f.value(1, 0.05, 0.05)


def test_noise_field_spans_blocks():
    f = BubbleNoiseField(9, 1.0, 0.1, block=4)
    whole = f.fine_values(2, 0, 11)
    assert np.array_equal(whole[3:9], f.fine_values(2, 3, 9))


def test_trivial_bubble_keeps_state():
    surf = SpacelikeSurface.flat(LINE)
    noise = BubbleNoiseField(1, 1.0, 0.1)
    out, new = bubble_advance(PSI, surf, Bubble(1, 0.1, 1.0), S_op=np.zeros((2, 2)), g=0.0, noise=noise)
    assert np.allclose(out.amplitudes, PSI, atol=1e-15)
    assert new.cell_times.tolist() == [0.0, 0.1, 0.0, 0.0]


@pytest.mark.parametrize("scheme", ["nonlinear", "linear"])
def test_eigenstate_is_fixed(scheme):
    surf = SpacelikeSurface.flat(LINE)
    noise = BubbleNoiseField(1, 1.0, 0.1)
    out, _ = bubble_advance([0, 1], surf, flat_layer(LINE, 0.1), S_op=SZ, g=1.3, noise=noise, scheme=scheme)
    assert np.allclose(out.amplitudes, [0, 1], atol=1e-15)


def test_unknown_scheme_and_missing_noise():
    surf = SpacelikeSurface.flat(LINE)
    with pytest.raises(ContractError):
        bubble_advance(PSI, surf, Bubble(0, 0.1, 1.0), S_op=SZ, noise=BubbleNoiseField(1, 1, 0.1), scheme="rk4")
    with pytest.raises(ContractError):
        bubble_advance(PSI, surf, Bubble(0, 0.1, 1.0), S_op=SZ)


@pytest.mark.parametrize("seed", range(5))
def test_flat_slice_matches_global_step(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice((3, 2, 1), 0.7)
    ops = random_generators(rng, lat.size, 3)
    psi = random_state(rng, 3)
    dt = 0.01
    noise = BubbleNoiseField(seed, lat.cell_volume, dt)
    out, _ = bubble_advance(psi, SpacelikeSurface.flat(lat), flat_layer(lat, dt), noise=noise, operators=ops)
    H, S, couplings = flat_slice_generators(ops, lat.cell_volume)
    dB = np.array([noise.value(c, 0.0, dt)[0] for c in range(lat.size)]) / math.sqrt(lat.cell_volume)
    ref = ito_step(psi, H, S, couplings, dB, dt)
    assert np.max(np.abs(out.amplitudes - ref.amplitudes)) <= 1e-10


def test_empty_schedule_and_determinism():
    rng = np.random.default_rng(4)
    ops = random_generators(rng, LINE.size, 2)
    noise = BubbleNoiseField(2, 1.0, 0.05)
    surf = SpacelikeSurface.flat(LINE)
    assert np.allclose(path_evolve(PSI, PathSchedule(surf, []), ops, noise).amplitudes, PSI)
    sched = sweep_schedule(surf, 4, 0.05)
    a = path_evolve(PSI, sched, ops, noise).amplitudes
    b = path_evolve(PSI, sched, ops, BubbleNoiseField(2, 1.0, 0.05)).amplitudes
    assert np.array_equal(a, b)


def test_swapping_spacelike_bubbles_is_exact_for_diagonal_generators():
    rng = np.random.default_rng(8)
    ops = random_generators(rng, LINE.size, 3, diagonal=True, with_h=False)
    noise = BubbleNoiseField(5, 1.0, 0.1, n_samples=16)
    surf = SpacelikeSurface.flat(LINE)
    a = PathSchedule(surf, [Bubble(0, 0.1, 1.0), Bubble(3, 0.1, 1.0)])
    b = PathSchedule(surf, [Bubble(3, 0.1, 1.0), Bubble(0, 0.1, 1.0)])
    psi = random_state(rng, 3)
    assert integrability_discrepancy(psi, a, b, ops, noise, scheme="linear").max <= 1e-12
    # the Euler form has state-dependent coefficients through <S>, so its maps commute only to leading order
    euler = integrability_discrepancy(psi, a, b, ops, noise, scheme="nonlinear")
    assert 0 < euler.max <= 0.05


def test_linear_scheme_is_path_independent_over_long_schedules():
    rng = np.random.default_rng(12)
    lat = Lattice((5, 1, 1), 1.0)
    ops = random_generators(rng, lat.size, 4, diagonal=True, with_h=False)
    noise = BubbleNoiseField(3, 1.0, 0.05, n_samples=32)
    surf = SpacelikeSurface.flat(lat)
    a = sweep_schedule(surf, 10, 0.05)
    b = sweep_schedule(surf, 10, 0.05, order=[4, 2, 0, 3, 1])
    c = flat_schedule(surf, 10, 0.05)
    psi = random_state(rng, 4)
    assert integrability_discrepancy(psi, a, b, ops, noise, scheme="linear").max <= 1e-12
    assert integrability_discrepancy(psi, a, c, ops, noise, scheme="linear").max <= 1e-12


def test_nonlinear_scheme_reordering_error_is_first_order():
    # the Euler collection form is path independent only up to O(dt)
    rng = np.random.default_rng(12)
    lat = Lattice((3, 1, 1), 1.0)
    ops = random_generators(rng, lat.size, 3, diagonal=True, with_h=False)
    psi = random_state(rng, 3)
    means = []
    for dt in (0.04, 0.02, 0.01):
        noise = BubbleNoiseField(3, 1.0, 0.01, n_samples=64)
        surf = SpacelikeSurface.flat(lat)
        n = int(round(0.4 / dt))
        st = integrability_discrepancy(psi, sweep_schedule(surf, n, dt), sweep_schedule(surf, n, dt, [2, 1, 0]),
                                       ops, noise)
        means.append(st.mean)
    assert means[0] > means[1] > means[2] > 0
    slope = np.polyfit(np.log([0.04, 0.02, 0.01]), np.log(means), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_identical_schedules_give_zero():
    rng = np.random.default_rng(1)
    ops = random_generators(rng, LINE.size, 2)
    sched = sweep_schedule(SpacelikeSurface.flat(LINE), 2, 0.1)
    st = integrability_discrepancy(PSI, sched, sched, ops, BubbleNoiseField(1, 1.0, 0.1), n_noise_samples=8)
    assert st.max == 0.0 and st.n == 8


def test_mismatched_endpoints_rejected():
    ops = CellGenerators.uniform(LINE.size, SZ)
    surf = SpacelikeSurface.flat(LINE)
    with pytest.raises(ContractError):
        integrability_discrepancy(PSI, sweep_schedule(surf, 1, 0.1), sweep_schedule(surf, 2, 0.1), ops,
                                  BubbleNoiseField(1, 1.0, 0.1))


def test_refinement_consistency_half_split():
    noise = BubbleNoiseField(21, 0.5, 0.05)
    coarse = [(0, 0.0, 0.1), (1, 0.0, 0.1)]
    fine = [(0, 0.0, 0.05), (0, 0.05, 0.1), (1, 0.0, 0.05), (1, 0.05, 0.1)]
    rep = refinement_consistency_check(noise, coarse, fine, n_samples=100_000)
    assert rep.passed
    assert np.all((rep.variance_ratios >= 0.98) & (rep.variance_ratios <= 1.02))
    assert rep.max_sum_mismatch <= 1e-15
    assert rep.max_cross_z <= 4


def test_refinement_trivial_partition_is_exact():
    noise = BubbleNoiseField(2, 1.0, 0.1)
    coarse = [(0, 0.0, 0.3)]
    rep = refinement_consistency_check(noise, coarse, coarse, n_samples=1000)
    assert rep.max_sum_mismatch == 0.0


def test_refinement_partition_mismatch():
    noise = BubbleNoiseField(2, 1.0, 0.1)
    with pytest.raises(ContractError):
        refinement_consistency_check(noise, [(0, 0.0, 0.3)], [(0, 0.0, 0.1), (0, 0.2, 0.3)], n_samples=10)
    with pytest.raises(ContractError):
        refinement_consistency_check(noise, [(0, 0.0, 0.3)], [(1, 0.0, 0.3)], n_samples=10)


def test_refinement_invariance_linear_scheme():
    rng = np.random.default_rng(0)
    ops = random_generators(rng, LINE.size, 3, diagonal=True, with_h=False)
    noise = BubbleNoiseField(4, 1.0, 0.025, n_samples=64)
    err = refinement_invariance(random_state(rng, 3), ops, noise, 2, 0.0, 0.1, 4, LINE)
    assert err <= 1e-10


def test_scan_reports_monotone_discrepancy_for_localized_probe():
    lat, ops = localized_probe()
    psi = np.kron([math.sqrt(0.5), math.sqrt(0.5)], [1.0, 0.0])
    scan = integrability_scan(psi, ops, lat, 0.4, [0.08, 0.04, 0.02, 0.01], base_seed=3, n_samples=32)
    assert scan.monotone
    assert scan.slope > 0
    assert [r["dt"] for r in scan.rows()] == [0.08, 0.04, 0.02, 0.01]


def test_scan_rejects_non_dividing_dt():
    lat, ops = localized_probe()
    with pytest.raises(ContractError):
        integrability_scan(np.eye(4)[0], ops, lat, 0.35, [0.1, 0.05], base_seed=0, n_samples=2)
