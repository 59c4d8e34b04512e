from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from anatknn.data import AttributeSchema, Dataset, Kind, Role
from anatknn.theory import (
    ConvergenceModel, Kernel, ParzenEstimator, PosteriorPoint, bayes_error_point, beta_constant, check_bound_chain,
    check_bounds, convergence_fit, convergence_predict, knn_asymptotic_error, parzen_bayes_error,
)

Q_GRID = [round(0.05 * i, 2) for i in range(1, 11)]


def binomial_vote_error(q1: float, k: int) -> float:
    """Query label ~ Bernoulli(q1), k neighbor labels i.i.d. the same; error = vote disagrees."""
    half = (k + 1) // 2
    class1_wins = sps.binom.sf(half - 1, k, q1)
    return q1 * (1 - class1_wins) + (1 - q1) * class1_wins


def series_oracle(q1: Fraction, terms: int) -> Fraction:
    p = q1 * (1 - q1)
    return sum(Fraction(math.comb(2 * i - 2, i - 1), i) * p**i for i in range(1, terms + 1))


def beta_oracle(d: int) -> mpmath.mpf:
    with mpmath.workdps(40):
        e = mpmath.mpf(2) / (d + 1)
        return mpmath.gamma(mpmath.mpf(d + 3) / 2) ** e * mpmath.gamma(e + 1) / (mpmath.pi * (d + 1))


@pytest.mark.parametrize("k", [1, 3, 5, 7, 9, 15])
@pytest.mark.parametrize("q1", Q_GRID)
def test_knn_error_matches_binomial_vote(q1, k):
    assert knn_asymptotic_error(PosteriorPoint.of(q1), k) == pytest.approx(binomial_vote_error(q1, k), abs=1e-12)


def test_knn_error_examples():
    assert knn_asymptotic_error(PosteriorPoint.of(0.5), 1) == 0.5
    assert knn_asymptotic_error(PosteriorPoint.of(0.1), 1) == pytest.approx(0.18, abs=1e-15)
    assert knn_asymptotic_error(PosteriorPoint.of(0.1), 3) == pytest.approx(0.1224, abs=1e-15)
    assert knn_asymptotic_error(PosteriorPoint.of(0.0), 5) == 0.0


def test_knn_error_large_k_goes_to_bayes():
    for k in (31, 101, 1001):
        assert knn_asymptotic_error(PosteriorPoint.of(0.3), k) == pytest.approx(binomial_vote_error(0.3, k), abs=1e-9)


@given(st.floats(0, 1), st.sampled_from([1, 3, 5, 7, 9, 11]))
def test_knn_error_symmetric_and_bounded(q1, k):
    a = knn_asymptotic_error(PosteriorPoint.of(q1), k)
    b = knn_asymptotic_error(PosteriorPoint(1 - q1, q1), k)
    assert a == pytest.approx(b, abs=1e-12)
    r = min(q1, 1 - q1)
    assert r - 1e-12 <= a <= 2 * r + 1e-12
    assert knn_asymptotic_error(PosteriorPoint.of(q1), k + 2) <= a + 1e-12


def test_even_k_rejected():
    with pytest.raises(ValueError):
        knn_asymptotic_error(PosteriorPoint.of(0.2), 2)


def test_posterior_must_sum_to_one():
    with pytest.raises(ValueError):
        PosteriorPoint(0.3, 0.3)


def test_bayes_series_exact_partial_sums():
    r, s = bayes_error_point(PosteriorPoint.of(0.1), 3)
    assert r == 0.1
    assert s == pytest.approx(float(series_oracle(Fraction(1, 10), 3)), abs=1e-15)
    assert s == pytest.approx(0.099558, abs=1e-12)


def test_bayes_series_slow_at_half():
    # at q1 = 1/2 the tail shrinks like 1/(2 sqrt(pi n)); 50 terms still miss by ~0.04
    _, s50 = bayes_error_point(PosteriorPoint.of(0.5), 50)
    assert s50 == pytest.approx(float(series_oracle(Fraction(1, 2), 50)), abs=1e-12)
    assert 0.5 - s50 == pytest.approx(1 / (2 * math.sqrt(math.pi * 50)), rel=0.05)
    _, s1000 = bayes_error_point(PosteriorPoint.of(0.5), 1000)
    assert 0.5 - s1000 < 1e-2


@given(st.floats(0, 1), st.integers(1, 60))
def test_bayes_series_monotone_and_bounded(q1, n):
    q = PosteriorPoint.of(q1)
    r, s = bayes_error_point(q, n)
    _, s_next = bayes_error_point(q, n + 1)
    assert s <= s_next + 1e-15
    assert s_next <= r + 1e-12


def test_bounds_checks():
    assert check_bounds(0.1, 0.15)
    assert not check_bounds(0.1, 0.21)
    assert check_bounds(0.1, 0.205, tolerance=0.01)
    assert not check_bounds(0.1, 0.085)
    with pytest.raises(ValueError):
        check_bounds(0.6, 0.7)
    assert check_bound_chain(0.1, {1: 0.18, 3: 0.15, 5: 0.13})
    assert not check_bound_chain(0.1, {1: 0.15, 3: 0.18})


def test_beta_examples():
    assert beta_constant(1) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
    assert beta_constant(4) == pytest.approx(float(beta_oracle(4)), abs=1e-12)
    with pytest.raises(ValueError):
        beta_constant(0)


@pytest.mark.parametrize("d", range(1, 65))
def test_beta_matches_high_precision(d):
    assert abs(beta_constant(d) - float(beta_oracle(d))) < 1e-9


def test_convergence_fit_recovers_constant():
    truth = ConvergenceModel(0.1, 3.0, 4, 2)
    n = [1000, 2000, 4000, 8000, 1e9]
    pts = list(zip(n, convergence_predict(truth, n)))
    fit = convergence_fit(pts, 4, 2)
    assert fit.asymptote == pytest.approx(min(e for _, e in pts))
    # the smallest observed error sits 5e-4 above the true asymptote, which biases c slightly
    assert fit.constant == pytest.approx(3.0, rel=0.01)
    both = convergence_fit(pts, 4, 2, fit_asymptote=True)
    assert both.asymptote == pytest.approx(0.1, abs=1e-9)
    assert both.constant == pytest.approx(3.0, rel=1e-6)


def test_convergence_flat_when_constant_zero():
    m = ConvergenceModel(0.2, 0.0, 3)
    assert np.all(convergence_predict(m, [10, 100, 1000]) == 0.2)


@given(st.floats(0.01, 10), st.integers(1, 20), st.integers(1, 4))
def test_convergence_strictly_decreasing(c, d, l):
    m = ConvergenceModel(0.1, c, d, l)
    y = convergence_predict(m, [100, 200, 400, 800])
    assert np.all(np.diff(y) < 0)


def test_convergence_clamps_negative_constant():
    # error growing with n: the two-parameter fit wants c < 0
    fit = convergence_fit([(100, 0.1), (200, 0.2), (400, 0.3)], 2, fit_asymptote=True)
    assert fit.constant == 0.0
    # with the minimum as asymptote every residual is >= 0, so c >= 0 already
    assert convergence_fit([(100, 0.1), (200, 0.2), (400, 0.3)], 2).constant > 0


SCHEMA_1D = (
    AttributeSchema("x", Kind.NUMERIC, Role.QUASI_IDENTIFYING),
    AttributeSchema("s", Kind.CATEGORICAL, Role.SENSITIVE),
    AttributeSchema("y", Kind.CATEGORICAL, Role.CLASS),
)


def two_gaussians(n, sep, rng, id0=0):
    y = rng.integers(0, 2, n)
    x = rng.normal(np.where(y == 0, -sep / 2, sep / 2), 1.0)
    return Dataset(
        SCHEMA_1D,
        {"x": x, "s": np.array(["one"] * n, dtype=object), "y": np.where(y == 0, "1", "2").astype(object)},
        np.arange(id0, id0 + n),
    )


def test_parzen_near_gaussian_bayes_error():
    rng = np.random.default_rng(0)
    train, test = two_gaussians(4000, 2.0, rng), two_gaussians(4000, 2.0, rng, 4000)
    est = parzen_bayes_error(train, test)
    assert est == pytest.approx(sps.norm.cdf(-1.0), abs=0.02)


def test_parzen_indistinguishable_classes():
    rng = np.random.default_rng(1)
    train, test = two_gaussians(3000, 0.0, rng), two_gaussians(3000, 0.0, rng, 3000)
    assert parzen_bayes_error(train, test) == pytest.approx(0.5, abs=0.04)


def test_parzen_uniform_kernel_and_zero_density():
    rng = np.random.default_rng(2)
    train, test = two_gaussians(2000, 2.0, rng), two_gaussians(500, 2.0, rng, 2000)
    est = parzen_bayes_error(train, test, ParzenEstimator(Kernel.UNIFORM_HYPERCUBE, 0.05))
    assert 0.1 < est < 0.3
    with pytest.raises(ValueError):
        ParzenEstimator(width=0.0)


def test_parzen_needs_both_classes():
    rng = np.random.default_rng(3)
    data = two_gaussians(50, 1.0, rng)
    one = data.take(np.flatnonzero(data.labels == "1"))
    with pytest.raises(ValueError, match="both classes"):
        parzen_bayes_error(one, data)


def test_convergence_fit_rejects_worse_than_chance():
    with pytest.raises(ValueError, match="chance"):
        convergence_fit([(100, 0.6), (200, 0.55)], 2)
