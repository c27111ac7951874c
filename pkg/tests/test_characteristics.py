import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activesampling.characteristics import (
    Characteristic,
    Kind,
    Population,
    eval_characteristic,
    eval_gradient,
    hajek_mean,
    linear_mean,
    linear_total,
    make_population,
    ratio_of_weighted_totals,
    true_totals,
    true_value,
)
from activesampling.errors import DomainError


def test_linear_mean_value():
    assert eval_characteristic(linear_mean(4), [8.0]) == 2.0


def test_hajek_value_and_gradient():
    c = hajek_mean()
    assert eval_characteristic(c, [2.0, 6.0]) == 3.0
    np.testing.assert_allclose(eval_gradient(c, [2.0, 6.0]), [-1.5, 0.5])


def test_linear_mean_gradient_is_constant():
    np.testing.assert_array_equal(eval_gradient(linear_mean(10), [123.0]), [0.1])
    np.testing.assert_array_equal(eval_gradient(linear_total(), [-5.0]), [1.0])


def test_ratio_of_weighted_totals_hand_example():
    c = ratio_of_weighted_totals()
    pop = make_population(c, np.zeros((3, 1)), prior_weights=[1, 1, 1], r=[1, 1, 0], x=[2, 4, 9])
    np.testing.assert_array_equal(true_totals(pop, c), [2.0, 6.0])
    assert true_value(pop, c) == 3.0


def test_ratio_totals_with_prior_weights():
    c = ratio_of_weighted_totals()
    pop = make_population(c, np.zeros((2, 1)), prior_weights=[0.5, 0.5], r=[1, 0], x=[4, 9])
    np.testing.assert_allclose(true_totals(pop, c), [0.5, 2.0])


def test_ratio_outcome_may_be_missing_without_event():
    c = ratio_of_weighted_totals()
    y = c.map_responses(p=[1.0, 2.0], r=[1, 0], x=[3.0, np.nan])
    np.testing.assert_array_equal(y, [[1.0, 3.0], [0.0, 0.0]])


def test_true_totals_examples():
    pop = make_population(linear_total(), np.zeros((2, 1)), y=[1.0, 3.0])
    np.testing.assert_array_equal(true_totals(pop, linear_total()), [4.0])
    pop = make_population(hajek_mean(), np.zeros((2, 1)), y=[2.0, 4.0])
    np.testing.assert_array_equal(true_totals(pop, hajek_mean()), [2.0, 6.0])


@pytest.mark.parametrize("kind", [Kind.HAJEK_MEAN, Kind.RATIO])
def test_zero_denominator_raises(kind):
    c = Characteristic(kind)
    with pytest.raises(DomainError):
        c.value([0.0, 1.0])
    with pytest.raises(DomainError):
        c.gradient([0.0, 1.0])


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ValueError):
        hajek_mean().value([1.0])
    with pytest.raises(ValueError):
        linear_mean(0)


def test_population_validation():
    with pytest.raises(ValueError):
        Population(responses=np.array([[1.0], [np.inf]]), auxiliaries=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Population(responses=np.ones((2, 1)), auxiliaries=np.zeros((2, 1)), prior_weights=[1.0, 0.0])
    pop = Population(responses=np.ones(3), auxiliaries=np.zeros(3))
    assert pop.size == 3 and pop.dimension == 1
    np.testing.assert_array_equal(pop.weights, np.ones(3))


def test_linear_and_hajek_agree_on_true_totals():
    y = np.random.default_rng(3).normal(size=50)
    lin = make_population(linear_mean(50), np.zeros((50, 1)), y=y)
    haj = lin.with_characteristic(hajek_mean())
    assert true_value(lin, lin.characteristic) == pytest.approx(y.mean(), abs=1e-14)
    assert true_value(haj, haj.characteristic) == pytest.approx(y.mean(), abs=1e-14)


def _fd_gradient(c, u):
    u = np.asarray(u, dtype=float)
    g = np.empty_like(u)
    for j in range(u.size):
        h = 1e-5 * max(1.0, abs(u[j]))
        up, dn = u.copy(), u.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (c.value(up) - c.value(dn)) / (2 * h)
    return g


finite = st.floats(-50, 50, allow_nan=False)
denominator = st.one_of(st.floats(0.5, 50), st.floats(-50, -0.5))


@settings(max_examples=100, deadline=None)
@given(u1=denominator, u2=finite, kind=st.sampled_from(list(Kind)))
def test_gradient_matches_finite_differences(u1, u2, kind):
    c = Characteristic(kind, 7 if kind is Kind.LINEAR_MEAN else None)
    u = [u1, u2] if c.dimension == 2 else [u2]
    np.testing.assert_allclose(c.gradient(u), _fd_gradient(c, u), rtol=1e-6, atol=1e-9)
