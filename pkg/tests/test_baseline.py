import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from infoflow.baseline import (
    gradient,
    index_heterogeneity,
    log_likelihood,
    logistic_error_rate,
    logistic_mle,
)
from infoflow.errors import FitError, Separation, SingularHessian


def noisy_data(seed, n=200, p=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    beta = rng.normal(size=p + 1)
    eta = beta[0] + x @ beta[1:]
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(int)
    return x, y


seeds = st.integers(0, 10_000)


@given(seeds)
def test_gradient_matches_finite_differences(seed):
    x, y = noisy_data(seed, n=40, p=2)
    beta = np.random.default_rng(seed + 1).normal(size=3)
    h = 1e-6
    numeric = [
        (log_likelihood(beta + h * e, x, y) - log_likelihood(beta - h * e, x, y)) / (2 * h)
        for e in np.eye(3)
    ]
    assert np.allclose(gradient(beta, x, y), numeric, rtol=1e-5, atol=1e-5)


@settings(max_examples=30)
@given(seeds)
def test_mle_matches_generic_optimizer(seed):
    x, y = noisy_data(seed)
    try:
        fit = logistic_mle(x, y)
    except Separation:
        return
    ref = minimize(lambda b: -log_likelihood(b, x, y), np.zeros(4), jac=lambda b: -gradient(b, x, y), method="BFGS", options={"gtol": 1e-10})
    assert fit.converged
    assert fit.log_likelihood >= -ref.fun - 1e-6
    assert np.allclose(fit.beta, ref.x, atol=1e-3)


@settings(max_examples=30)
@given(seeds, st.floats(0.1, 100), st.floats(-50, 50))
def test_fitted_probabilities_are_affine_invariant(seed, scale, shift):
    x, y = noisy_data(seed)
    try:
        a = logistic_mle(x, y)
        b = logistic_mle(x * scale + shift, y)
    except Separation:
        return
    assert np.allclose(a.predict_proba(x), b.predict_proba(x * scale + shift), atol=1e-6)


def test_separation_detected():
    x = np.arange(10.0)[:, None]
    y = (x[:, 0] > 4.5).astype(int)
    with pytest.raises(Separation):
        logistic_mle(x, y)


def test_singular_design():
    rng = np.random.default_rng(2)
    a = rng.normal(size=50)
    x = np.column_stack([a, 2 * a])
    y = (rng.uniform(size=50) < 0.5).astype(int)
    with pytest.raises(SingularHessian):
        logistic_mle(x, y)


def test_invalid_inputs():
    with pytest.raises(FitError):
        logistic_mle(np.zeros((5, 1)), [0, 0, 0, 0, 0])
    with pytest.raises(FitError):
        logistic_mle(np.zeros((5, 1)), [0, 1, 2, 0, 1])
    with pytest.raises(FitError):
        logistic_mle(np.zeros((2, 3)), [0, 1])


def test_error_rate_thresholds():
    x, y = noisy_data(4)
    fit = logistic_mle(x, y)
    assert logistic_error_rate(fit, x, y, 0.0) == pytest.approx(np.mean(y == 0))
    assert logistic_error_rate(fit, x, y, 1.0) == pytest.approx(np.mean(y == 1))
    assert 0 <= logistic_error_rate(fit, x, y) <= min(np.mean(y), 1 - np.mean(y)) + 0.05
    with pytest.raises(ValueError):
        logistic_error_rate(fit, x, y, 1.5)


def test_index_heterogeneity_on_blobs():
    rng = np.random.default_rng(8)
    x = np.concatenate([rng.normal(-4, 0.3, 60), rng.normal(0, 0.3, 60), rng.normal(4, 0.3, 60)])[:, None]
    y = np.concatenate([np.zeros(60), (rng.uniform(size=60) < 0.5), np.ones(60)]).astype(int)
    fit = logistic_mle(x, y)
    het = index_heterogeneity(fit, x, y, 3)
    sizes = [c["size"] for c in het["clusters"]]
    assert sizes == [60, 60, 60]
    entropies = [c["entropy"] for c in het["clusters"]]
    assert entropies[0] == 0.0 and entropies[2] == 0.0
    assert entropies[1] > 0.5
    with pytest.raises(ValueError):
        index_heterogeneity(fit, x, y, 1)
