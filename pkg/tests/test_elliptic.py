import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_lab.elliptic import complete_elliptic_K, complete_elliptic_K_series
from collapse_lab.errors import ContractError


def test_k_at_zero_is_half_pi():
    assert abs(complete_elliptic_K(0.0) - math.pi / 2) <= 1e-15


def test_k_reference_value():
    assert complete_elliptic_K(0.5) == pytest.approx(1.8540746773013719, rel=1e-14)


def test_k_against_scipy_parameter_convention():
    from scipy.special import ellipk

    for m in (0.0, 0.1, 0.36, 0.5, 0.9, 0.999):
        assert complete_elliptic_K(m) == pytest.approx(float(ellipk(m)), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.9, 0.5))
def test_agm_matches_series(m):
    assert abs(complete_elliptic_K(m) - complete_elliptic_K_series(m)) <= 1e-12


def test_k_increasing():
    ms = np.linspace(0, 0.99, 50)
    k = [complete_elliptic_K(m) for m in ms]
    assert np.all(np.diff(k) > 0)
    assert complete_elliptic_K(0.9) > complete_elliptic_K(0.5) > complete_elliptic_K(0.1)


@pytest.mark.parametrize("m", [1.0, 1.5, float("nan")])
def test_k_domain_error(m):
    with pytest.raises(ContractError):
        complete_elliptic_K(m)


def test_series_domain_error():
    with pytest.raises(ContractError):
        complete_elliptic_K_series(1.0)
