import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspgame.demand import (PricePair, deterrence_price, duopoly_demand, linear_demand,
                            monopoly_demand, total_served, zero_demand_threshold)

price = st.floats(0, 1)


def test_linear_demand_values():
    assert linear_demand(40, 1 / 3, 1 / 3, 1) == pytest.approx(40 / 3)
    assert linear_demand(40, 0.4, 0.4, 1) == pytest.approx(12)
    assert linear_demand(10, 1.0, 0.0, 1.0) == pytest.approx(-5)
    assert duopoly_demand(10, 1.0, 0.0, 1.0) == 0


@given(D=st.floats(0, 100), a=price, b=price, k=price)
def test_monotone_in_own_and_rival_price(D, a, b, k):
    lo, hi = min(a, b), max(a, b)
    assert duopoly_demand(D, hi, k, 1) <= duopoly_demand(D, lo, k, 1) + 1e-12
    assert duopoly_demand(D, k, lo, 1) <= duopoly_demand(D, k, hi, 1) + 1e-12


@given(D=st.floats(0.1, 100), k=price, pmax=st.floats(0.5, 5))
def test_threshold_zeroes_demand(D, k, pmax):
    pk = k * pmax
    thr = zero_demand_threshold(pk, pmax)
    assert linear_demand(D, thr, pk, pmax) == pytest.approx(0, abs=1e-9 * D)
    assert deterrence_price(pk, pmax) == thr


@given(D=st.floats(0.1, 100), a=st.floats(0, 0.49), b=st.floats(0, 0.49))
def test_total_served_is_sum(D, a, b):
    assert total_served(D, a, b, 1) == pytest.approx(
        linear_demand(D, a, b, 1) + linear_demand(D, b, a, 1))


def test_total_served_requires_both_positive():
    with pytest.raises(ValueError):
        total_served(10, 1.0, 0.0, 1.0)


def test_monopoly_demand():
    assert monopoly_demand(40, 0.55, 1) == pytest.approx(18)
    with pytest.raises(ValueError):
        monopoly_demand(40, 1.5, 1)


def test_negative_base_rejected():
    with pytest.raises(ValueError):
        linear_demand(-1, 0.2, 0.2, 1)


def test_elementwise_on_arrays():
    D = np.array([0.0, 10.0, 40.0])
    np.testing.assert_allclose(linear_demand(D, 0.5, 0.5, 1.0), D / 4)


@pytest.mark.parametrize("own,rival,pmax", [(-0.1, 0.2, 1), (0.2, 1.2, 1), (0.1, 0.1, 0)])
def test_price_pair_validation(own, rival, pmax):
    with pytest.raises(ValueError):
        PricePair(own, rival, pmax)
