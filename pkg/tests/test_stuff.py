import math

import numpy as np
import pytest

from collapse_lab.errors import ContractError, RegimeError
from collapse_lab.lattice import Lattice
from collapse_lab.stuff import (
    EmptyDomainWarning,
    ParticleWorldline,
    SpacetimeDomain,
    converge_window,
    discrimination_map,
    domain_contains,
    far_field_envelope_probe,
    hopping_chain,
    lorentz_boost,
    sandwich_stuff_operator,
    shattering_brackets,
    shattering_estimate,
    shattering_monte_carlo,
    site_density_operators,
    stuff_closed_form,
    stuff_numeric_oracle,
)

ORIGIN = (0.0, 0.0, 0.0, 0.0)


def random_case(rng):
    m = rng.uniform(0.1, 10)
    a = rng.uniform(0.1, 2)
    v = rng.normal(size=3)
    v *= rng.uniform(0, 0.9) / np.linalg.norm(v)
    x = np.concatenate([[rng.uniform(-3, 3)], rng.uniform(-3, 3, 3)])
    x0 = x[1:] - v * x[0] + rng.normal(size=3) * a * rng.choice([0.3, 1.0, 4.0])
    return ParticleWorldline(m, x0, v), x, a


def test_domain_membership():
    d = SpacetimeDomain(ORIGIN, 1.0)
    assert domain_contains(d, ORIGIN)
    assert domain_contains(d, (0.0, 1.0, 0.0, 0.0))
    assert not domain_contains(d, (0.0, 2.0, 0.0, 0.0))
    assert domain_contains(d, (5.0, 5.0, 0.0, 0.0))
    with pytest.raises(ContractError):
        SpacetimeDomain(ORIGIN, 0.0)


def test_worldline_validation():
    with pytest.raises(ContractError):
        ParticleWorldline(1.0, (0, 0, 0), (0.6, 0.8, 0))
    with pytest.raises(ContractError):
        ParticleWorldline(0.0, (0, 0, 0), (0, 0, 0))


@pytest.mark.parametrize("v", [(0, 0, 0), (0.5, 0, 0), (0, 0.3, 0.4)])
def test_closed_form_at_particle(v):
    assert stuff_closed_form(ParticleWorldline(1.0, (0, 0, 0), v), ORIGIN, 1.0) == pytest.approx(2.0)


def test_closed_form_inside_drops_second_root():
    wl = ParticleWorldline(1.0, (0.5, 0, 0), (0, 0, 0))
    assert stuff_closed_form(wl, ORIGIN, 1.0) == pytest.approx(2 * math.sqrt(1.25), rel=1e-14)


def test_far_limits():
    orth = stuff_closed_form(ParticleWorldline(1.0, (100, 0, 0), (0, 0.6, 0)), ORIGIN, 1.0)
    par = stuff_closed_form(ParticleWorldline(1.0, (100, 0, 0), (0.6, 0, 0)), ORIGIN, 1.0)
    assert orth == pytest.approx(0.02, rel=1e-4)
    assert par == pytest.approx(0.016, rel=1e-4)


def test_oracle_matches_closed_form_on_random_cases():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        wl, x, a = random_case(rng)
        exact = stuff_closed_form(wl, x, a)
        num = stuff_numeric_oracle(wl, x, a)
        assert num.converged
        worst = max(worst, abs(num.value - exact) / exact)
    assert worst <= 1e-6


def test_oracle_static_particle():
    res = stuff_numeric_oracle(ParticleWorldline(3.0, (0, 0, 0), (0, 0, 0)), ORIGIN, 0.5)
    assert res.value == pytest.approx(2 * 3.0 * 0.5, rel=1e-12)


def test_window_far_outside_is_zero():
    wl = ParticleWorldline(1.0, (1e4, 0, 0), (0, 0, 0))
    assert stuff_closed_form(wl, ORIGIN, 1.0, window=10.0) == 0.0
    assert stuff_numeric_oracle(wl, ORIGIN, 1.0, window=10.0).value == 0.0


def test_window_matches_oracle_when_partial():
    wl = ParticleWorldline(1.0, (3.0, 0, 0), (0.2, 0.1, 0))
    for window in (1.0, 3.1, 50.0):
        assert stuff_numeric_oracle(wl, ORIGIN, 1.0, window=window).value == pytest.approx(
            stuff_closed_form(wl, ORIGIN, 1.0, window=window), rel=1e-9)


@pytest.mark.parametrize("beta", [-0.7, 0.3, 0.9])
def test_boost_invariance(beta):
    rng = np.random.default_rng(11)
    for _ in range(5):
        wl, x, a = random_case(rng)
        xb = tuple(np.asarray(x))
        base = stuff_numeric_oracle(wl, x, a).value
        moved = stuff_numeric_oracle(wl.boosted(beta), lorentz_boost(xb, beta), a).value
        assert moved == pytest.approx(base, rel=1e-5)


def test_far_field_envelope():
    res = far_field_envelope_probe(1.0, 1.0, 100.0, 0.6, n_directions=2000)
    assert res["violations"] == 0
    assert res["values"].min() >= res["lower"] * (1 - 1e-9)


def test_shattering_static_limits():
    assert shattering_estimate(5.0, 0.5, 10.0, 0.0, 1) == pytest.approx(2 * 0.5 * 5.0)
    assert shattering_estimate(5.0, 0.5, 10.0, 0.0, 2) == pytest.approx(2 * 0.5 * 5.0 * 0.05, rel=1e-15)


def test_shattering_regime_errors():
    with pytest.raises(RegimeError, match="l\\^2 >> a\\^2"):
        shattering_estimate(1.0, 1.0, 5.0, 0.3, 2)
    with pytest.raises(RegimeError):
        shattering_estimate(1.0, 1.0, 50.0, 1.0, 1)
    with pytest.raises(ContractError):
        shattering_estimate(1.0, 1.0, 50.0, 0.3, 3)


@pytest.mark.parametrize("w", [0.0, 0.3, 0.5, 0.6])
@pytest.mark.parametrize("alpha", [1, 2])
def test_shattering_planar_monte_carlo(w, alpha):
    est = shattering_estimate(1.0, 1.0, 200.0, w, alpha)
    mc = shattering_monte_carlo(1.0, 1.0, 200.0, w, alpha, n_directions=100_000, seed=5)
    assert mc == pytest.approx(est, rel=0.01)


def test_spherical_spray_does_not_match_elliptic_bracket():
    # isotropic in three dimensions gives atanh(w)/w instead of (2/pi) K(w^2)
    w, l = 0.6, 200.0
    mc = shattering_monte_carlo(1.0, 1.0, l, w, 2, seed=1, geometry="spherical")
    assert mc / (2 / l) == pytest.approx(math.atanh(w) / w, rel=0.01)
    assert abs(mc / shattering_estimate(1.0, 1.0, l, w, 2) - 1) > 0.02


def test_shattering_brackets_ordering():
    b1, b2 = shattering_brackets(0.0)
    assert b1 == b2 == 1.0
    for w in np.linspace(0.01, 0.99, 99):
        b1, b2 = shattering_brackets(w)
        assert b1 > b2


def test_discrimination_map_examples():
    grid = np.stack([np.linspace(-40, 40, 161), np.zeros(161), np.zeros(161)], axis=1)
    assert np.all(discrimination_map([], grid, 1.0).values == 0)
    one = discrimination_map([ParticleWorldline(1.0, (0, 0, 0), (0, 0, 0))], grid, 1.0)
    # 2ma at the particle, maximum 2 sqrt(2) ma on the shell |x1| = a, then ~ 2ma a/|x1|
    assert one.values[80] == pytest.approx(2.0)
    assert one.values.max() == pytest.approx(2.0 * math.sqrt(2))
    assert np.argmax(one.values) in (78, 82)
    assert one.values[0] == pytest.approx(2.0 / 40, rel=1e-3)
    assert np.all(np.diff(one.values[82:]) < 0)
    with pytest.raises(ContractError):
        discrimination_map([], [[np.inf, 0, 0]], 1.0)


@pytest.mark.parametrize("sep, below_tenth", [(20.0, False), (30.0, True), (40.0, True)])
def test_discrimination_map_two_bodies(sep, below_tenth):
    grid = np.stack([np.linspace(-30, 30, 121), np.zeros(121), np.zeros(121)], axis=1)
    wls = [ParticleWorldline(1.0, (-sep / 2, 0, 0), (0, 0, 0)), ParticleWorldline(1.0, (sep / 2, 0, 0), (0, 0, 0))]
    two = discrimination_map(wls, grid, 1.0)
    assert np.all(two.values >= 0)
    valley = two.values[60]
    assert valley == pytest.approx(2 * stuff_closed_form(wls[0], ORIGIN, 1.0), rel=1e-14)
    assert bool(valley < 0.1 * two.values.max()) == below_tenth


def chain(n=16, hop=0.05):
    lat = Lattice((n, 1, 1), 1.0)
    return lat, site_density_operators(n, 1.0, lat.cell_volume), hopping_chain(n, hop)


def test_sandwich_is_hermitian_and_time_independent():
    lat, ops, h = chain()
    x = (0.0, *lat.center(2))
    s = sandwich_stuff_operator(ops, h, x, 1.0, 6.0, lat)
    later = sandwich_stuff_operator(ops, h, (0.83, *lat.center(2)), 1.0, 6.0, lat)
    quad = sandwich_stuff_operator(ops, h, (0.83, *lat.center(2)), 1.0, 6.0, lat, time_step=0.05)
    assert np.max(np.abs(s.matrix - s.matrix.conj().T)) <= 1e-10
    assert np.linalg.norm(s.matrix - later.matrix) <= 1e-8
    assert np.linalg.norm(quad.matrix - later.matrix) <= 1e-8


def test_sandwich_without_dynamics_is_weighted_integral():
    lat, ops, _ = chain(6)
    x = (0.0, *lat.center(2))
    s = sandwich_stuff_operator(ops, np.zeros((6, 6)), x, 1.0, 100.0, lat)
    expected = [stuff_closed_form(ParticleWorldline(1.0, lat.center(c), (0, 0, 0)), x, 1.0) for c in range(6)]
    assert np.allclose(s.matrix, np.diag(expected), atol=1e-12)


def test_sandwich_branch_ordering():
    lat, ops, h = chain()
    x = (0.0, *lat.center(2))
    window, s = converge_window(lambda w: sandwich_stuff_operator(ops, h, x, 1.0, w, lat), 2.0)
    assert window >= 2.0
    here, far = s.matrix[2, 2].real, s.matrix[14, 14].real
    assert here > far > 0


def test_sandwich_empty_window_flagged():
    lat, ops, h = chain()
    with pytest.warns(EmptyDomainWarning):
        s = sandwich_stuff_operator(ops, h, (0.0, 1e3, 0, 0), 1.0, 1.0, lat)
    assert not np.any(s.matrix)


def test_sandwich_size_checks():
    lat, ops, h = chain()
    with pytest.raises(ContractError):
        sandwich_stuff_operator(ops[:3], h, ORIGIN, 1.0, 1.0, lat)
    with pytest.raises(ContractError):
        sandwich_stuff_operator(ops, h, ORIGIN, 1.0, 0.0, lat)
