import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from mnar_gauss.errors import GridTooCoarse
from mnar_gauss.gaussian import GaussianParams
from mnar_gauss.likelihood import LikelihoodOracle, QuadratureGrid, likelihood_oracle_eval, truncated_moments
from mnar_gauss.missingness import LinearThresholdModel, audit_alpha_subset

MAX_MODEL = LinearThresholdModel([[-1.0, 1.0], [1.0, -1.0]], [0.0, 0.0])
MAX_TRUTH = GaussianParams([0.5, -0.5], [[1.0, 0.3], [0.3, 1.0]])
GENERIC_MODEL = LinearThresholdModel([[1.0, 0.5], [-0.3, 1.0]], [0.5, 0.8])
GENERIC_TRUTH = GaussianParams([0.0, 0.3], [[1.2, 0.4], [0.4, 0.8]])
INSTANCES = {"max": (MAX_MODEL, MAX_TRUTH), "generic": (GENERIC_MODEL, GENERIC_TRUTH)}
BETA = 0.5


@pytest.fixture(scope="module")
def oracles():
    return {k: LikelihoodOracle(m, t.cov, t) for k, (m, t) in INSTANCES.items()}


@pytest.fixture(scope="module")
def alphas():
    return {
        k: audit_alpha_subset(t, m, BETA, 400_000, np.random.default_rng(1)).value for k, (m, t) in INSTANCES.items()
    }


def _ball_points(truth, count, radius, seed):
    rng = np.random.default_rng(seed)
    L = truth.chol
    pts = []
    for _ in range(count):
        u = rng.normal(size=truth.dim)
        pts.append(truth.mean + radius * rng.uniform() ** (1 / truth.dim) * L @ (u / np.linalg.norm(u)))
    return pts


# ----------------------------------------------------------------------------
# truncated moments helper


def test_truncated_moments_match_quadrature():
    for m, s, lo, hi in [(0.0, 1.0, 1.0, math.inf), (0.3, 2.0, -1.0, 0.5), (-1.0, 0.5, -math.inf, -3.0)]:
        logZ, mean, var = truncated_moments(m, s, lo, hi)
        Z = integrate.quad(lambda y: norm.pdf(y, m, s), lo, hi)[0]
        m1 = integrate.quad(lambda y: y * norm.pdf(y, m, s), lo, hi)[0] / Z
        m2 = integrate.quad(lambda y: y * y * norm.pdf(y, m, s), lo, hi)[0] / Z
        assert float(np.exp(logZ)) == pytest.approx(Z, rel=1e-8)
        assert float(mean) == pytest.approx(m1, abs=1e-7)
        assert float(var) == pytest.approx(m2 - m1 * m1, abs=1e-7)


def test_truncated_moments_far_tail_is_finite():
    logZ, mean, var = truncated_moments(0.0, 1.0, 30.0, math.inf)
    assert np.isfinite(logZ) and 30.0 <= mean <= 30.1 and 0 < var < 1e-2


# ----------------------------------------------------------------------------
# one dimension against closed form


def test_one_dimensional_value_and_gradient_closed_form():
    model = LinearThresholdModel([[1.0]], [1.0])  # hidden exactly when y > 1
    truth = GaussianParams([0.2], [[1.5]])
    s = math.sqrt(1.5)
    for mu in (-0.5, 0.2, 1.3):
        res = LikelihoodOracle(model, truth.cov, truth).evaluate([mu])
        seen = integrate.quad(
            lambda y: norm.pdf(y, 0.2, s) * -norm.logpdf(y, mu, s), -np.inf, 1.0, epsabs=1e-12
        )[0]
        hidden = -norm.sf(1.0, 0.2, s) * norm.logsf(1.0, mu, s)
        assert res.value == pytest.approx(seen + hidden, abs=1e-8)
        # d/dmu of the two parts
        g_seen = -integrate.quad(lambda y: norm.pdf(y, 0.2, s) * (y - mu) / 1.5, -np.inf, 1.0, epsabs=1e-12)[0]
        g_hidden = -norm.sf(1.0, 0.2, s) * norm.pdf(1.0, mu, s) / norm.sf(1.0, mu, s)
        assert res.grad[0] == pytest.approx(g_seen + g_hidden, abs=1e-8)


# ----------------------------------------------------------------------------
# two dimensions against Monte Carlo


def _log_censored_density(model, mu, S, mask, y):
    """Independent evaluation of log f_mu(A, x) from scipy distributions."""
    seen = np.flatnonzero(mask)
    hidden = np.flatnonzero(~mask)
    if hidden.size == 0:
        return multivariate_normal(mu, S).logpdf(y)
    if seen.size == 0:
        # P(v_i . y > b_i for every row), rows with zero normal are always satisfied here
        rows = [i for i in range(2) if np.any(model.v[i] != 0)]
        A = model.v[rows]
        cov = A @ S @ A.T
        m = A @ mu - model.b[rows]
        # P(Z > 0) for Z ~ N(m, cov) equals P(-Z < 0)
        return math.log(multivariate_normal(-m, cov).cdf(np.zeros(len(rows))))
    o, q = seen[0], hidden[0]
    x = y[o]
    slope = S[q, o] / S[o, o]
    mc = mu[q] + slope * (x - mu[o])
    sc = math.sqrt(S[q, q] - slope * S[q, o])
    lo, hi = -math.inf, math.inf
    for i in range(2):
        sign = 1.0 if mask[i] else -1.0  # seen rows need v.y <= b, hidden rows v.y > b
        n = sign * model.v[i, q]
        c = sign * (model.b[i] - model.v[i, o] * x)
        if n > 0:
            hi = min(hi, c / n)
        elif n < 0:
            lo = max(lo, c / n)
    mass = norm.cdf(hi, mc, sc) - norm.cdf(lo, mc, sc)
    return norm.logpdf(x, mu[o], math.sqrt(S[o, o])) + math.log(mass)


@pytest.mark.parametrize("name", ["max", "generic"])
def test_two_dimensional_value_matches_monte_carlo(name, oracles):
    model, truth = INSTANCES[name]
    rng = np.random.default_rng(3)
    n = 20_000
    Y = rng.multivariate_normal(truth.mean, truth.cov, size=n)
    M = model.seen_mask(Y)
    mu = truth.mean + np.array([0.3, -0.2])
    vals = np.array([-_log_censored_density(model, mu, truth.cov, M[i], Y[i]) for i in range(n)])
    est = vals.mean()
    se = vals.std() / math.sqrt(n)
    assert abs(oracles[name].evaluate(mu).value - est) <= 4 * se


# ----------------------------------------------------------------------------
# structural properties


@pytest.mark.parametrize("name", ["max", "generic"])
def test_gradient_vanishes_at_truth(name, oracles):
    _, truth = INSTANCES[name]
    assert np.linalg.norm(oracles[name].evaluate(truth.mean).grad) <= 1e-3


@pytest.mark.parametrize("name", ["max", "generic"])
def test_gradient_matches_finite_differences(name, oracles):
    _, truth = INSTANCES[name]
    h = 1e-4
    for mu in _ball_points(truth, 20, 1.5, seed=4):
        res = oracles[name].evaluate(mu)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (oracles[name].evaluate(mu + e).value - oracles[name].evaluate(mu - e).value) / (2 * h)
            assert abs(res.grad[k] - fd) <= 1e-5


@pytest.mark.parametrize("name", ["max", "generic"])
def test_hessian_matches_gradient_differences(name, oracles):
    _, truth = INSTANCES[name]
    h = 1e-4
    for mu in _ball_points(truth, 5, 1.5, seed=5):
        H = oracles[name].evaluate(mu).hess
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (oracles[name].evaluate(mu + e).grad - oracles[name].evaluate(mu - e).grad) / (2 * h)
            assert np.allclose(H[:, k], fd, atol=1e-5)


@pytest.mark.parametrize("name", ["max", "generic"])
def test_hessian_strongly_convex(name, oracles, alphas):
    _, truth = INSTANCES[name]
    lam = alphas[name] * BETA / truth.lambda_max
    assert lam > 0
    for mu in _ball_points(truth, 20, 1.0, seed=6):
        assert np.linalg.eigvalsh(oracles[name].evaluate(mu).hess).min() >= lam - 1e-3


@pytest.mark.parametrize("name", ["max", "generic"])
def test_truth_is_global_minimum_on_grid(name, oracles):
    _, truth = INSTANCES[name]
    best = oracles[name].evaluate(truth.mean).value
    offsets = np.linspace(-1.5, 1.5, 5)
    grid = [truth.mean + np.array([a, b]) for a in offsets for b in offsets[:4]]
    assert len(grid) == 20
    for mu in grid:
        assert oracles[name].evaluate(mu).value >= best - 1e-12


@pytest.mark.parametrize("name", ["max", "generic"])
def test_gradient_is_a_strict_descent_direction(name, oracles, alphas):
    _, truth = INSTANCES[name]
    lam = alphas[name] * BETA / truth.lambda_max
    for mu in _ball_points(truth, 20, 1.0, seed=7):
        diff = mu - truth.mean
        inner = float(oracles[name].evaluate(mu).grad @ diff)
        assert inner >= lam * float(diff @ diff) * (1 - 1e-2)


def test_mass_covered(oracles):
    res = oracles["generic"].evaluate(GENERIC_TRUTH.mean)
    assert abs(res.mass - 1.0) <= 1e-6


def test_coarse_grid_rejected():
    with pytest.raises(GridTooCoarse):
        QuadratureGrid(points=399)


def test_narrow_window_rejected():
    oracle = LikelihoodOracle(GENERIC_MODEL, GENERIC_TRUTH.cov, GENERIC_TRUTH, QuadratureGrid(width=3.0))
    with pytest.raises(GridTooCoarse):
        oracle.evaluate(GENERIC_TRUTH.mean)


def test_three_dimensions_rejected():
    model = LinearThresholdModel(np.zeros((3, 3)), np.zeros(3))
    truth = GaussianParams(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        LikelihoodOracle(model, truth.cov, truth)


def test_functional_interface(oracles):
    value, grad, hess = likelihood_oracle_eval(MAX_TRUTH.mean, MAX_MODEL, MAX_TRUTH.cov, MAX_TRUTH)
    res = oracles["max"].evaluate(MAX_TRUTH.mean)
    assert value == res.value and np.array_equal(grad, res.grad) and np.array_equal(hess, res.hess)

