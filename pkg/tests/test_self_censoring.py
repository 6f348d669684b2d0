import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from mnar_gauss.errors import PairStarved
from mnar_gauss.experiments import self_censoring_instance
from mnar_gauss.gaussian import GaussianParams, sqrtm_psd
from mnar_gauss.missingness import ObservationTable, SelfCensoringModel, generate_observations, simulate
from mnar_gauss.self_censoring import (
    SelfCensorEstimate,
    SelfCensoringConfig,
    _repair_psd,
    available_case_moments,
    evaluate_estimate,
    fit_self_censoring,
)

HALF = [(-1.5, math.inf)]


def _fit(truth, model, n, seed, cfg=None):
    rng = np.random.default_rng(seed)
    table, _ = simulate(truth, model, n, rng)
    return fit_self_censoring(table, model, rng, cfg)


def test_no_censoring_reduces_to_moments():
    truth = GaussianParams([1.0, 2.0, 3.0], np.eye(3))
    est = _fit(truth, SelfCensoringModel.uncensored(3), 100_000, 1)
    assert np.linalg.norm(est.mean - truth.mean) <= 0.05
    assert np.linalg.norm(est.cov - np.eye(3)) <= 0.15


@pytest.mark.slow
def test_off_diagonal_recovered_under_censoring():
    cov = np.eye(3)
    cov[0, 1] = cov[1, 0] = 0.5
    truth = GaussianParams(np.zeros(3), cov)
    est = _fit(truth, SelfCensoringModel([HALF] * 3), 400_000, 2)
    assert abs(est.cov[0, 1] - 0.5) <= 0.1
    # the available-case covariance is visibly biased on the same instance
    rng = np.random.default_rng(2)
    table, _ = simulate(truth, SelfCensoringModel([HALF] * 3), 400_000, rng)
    _, naive = available_case_moments(table)
    assert abs(naive[0, 1] - 0.5) > abs(est.cov[0, 1] - 0.5)


def test_accepts_observation_list(rng):
    truth = GaussianParams(np.zeros(2), np.eye(2))
    obs = generate_observations(truth, SelfCensoringModel([HALF] * 2), 5_000, rng)
    est = fit_self_censoring(obs, SelfCensoringModel([HALF] * 2), rng)
    assert est.mean.shape == (2,) and est.cov.shape == (2, 2)


def test_permutation_equivariance():
    truth, model = self_censoring_instance()
    perm = np.array([2, 0, 1])
    permuted_model = SelfCensoringModel([model.sets[p] for p in perm])
    rng = np.random.default_rng(7)
    table, Y = simulate(truth, model, 100_000, rng)
    a = fit_self_censoring(table, model, np.random.default_rng(8))
    # same underlying draws with the coordinate labels permuted
    Yp = Y[:, perm]
    ptable = ObservationTable.from_complete(Yp, permuted_model.seen_mask(Yp))
    b = fit_self_censoring(ptable, permuted_model, np.random.default_rng(8))
    assert np.allclose(b.mean, a.mean[perm], atol=0.03)
    assert np.allclose(b.cov, a.cov[np.ix_(perm, perm)], atol=0.05)


def test_diagonal_comes_from_one_dimensional_fits():
    truth, model = self_censoring_instance()
    est = _fit(truth, model, 30_000, 3)
    for i in range(3):
        assert est.cov[i, i] == est.per_pair_diagnostics[(i, i)]["variance"]
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        diag = est.per_pair_diagnostics[(i, j)]
        assert est.cov[i, j] == diag["covariance"]
        # the pair fit estimates the diagonal too, but those values are not used
        assert est.cov[i, i] != diag["pair_diagonal"][0]


def test_covariance_exactly_symmetric():
    truth, model = self_censoring_instance()
    est = _fit(truth, model, 20_000, 4)
    assert np.array_equal(est.cov, est.cov.T)
    assert est.psd_projected is False


def test_pair_starved_names_the_pair():
    truth = GaussianParams(np.zeros(3), np.eye(3))
    model = SelfCensoringModel([HALF, [(1.5, math.inf)], [(1.5, math.inf)]])
    rng = np.random.default_rng(5)
    table, _ = simulate(truth, model, 20_000, rng)
    with pytest.raises(PairStarved) as info:
        fit_self_censoring(table, model, rng)
    assert info.value.pair in {(1, 2), (1, 1), (2, 2)}
    assert info.value.count < 2000


def test_pair_starved_for_a_pair_only():
    truth = GaussianParams(np.zeros(2), np.eye(2))
    model = SelfCensoringModel([[(0.5, math.inf)], [(0.5, math.inf)]])
    rng = np.random.default_rng(6)
    table, _ = simulate(truth, model, 10_000, rng)
    # each coordinate is seen about 3100 times, the pair only about 950 times
    with pytest.raises(PairStarved) as info:
        fit_self_censoring(table, model, rng)
    assert info.value.pair == (0, 1)


def test_worker_count_does_not_change_result():
    truth, model = self_censoring_instance()
    rng = np.random.default_rng(9)
    table, _ = simulate(truth, model, 20_000, rng)
    a = fit_self_censoring(table, model, np.random.default_rng(1), SelfCensoringConfig(workers=1))
    b = fit_self_censoring(table, model, np.random.default_rng(1), SelfCensoringConfig(workers=3))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)


def test_epsilon_caps_rows_per_subproblem():
    truth, model = self_censoring_instance()
    cfg = SelfCensoringConfig(epsilon=0.3)
    est = _fit(truth, model, 40_000, 10, cfg)
    cap = cfg.rows_cap(3)
    assert cap == math.ceil(1 / ((0.3 / 3) ** 2))
    assert all(diag["samples"] <= cap for diag in est.per_pair_diagnostics.values())


# ----------------------------------------------------------------------------
# PSD repair


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 6), scale=st.floats(0.01, 2.0))
def test_psd_repair_never_moves_away_from_psd_truth(seed, d, scale):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, d, 0.01, 1.0)
    E = rng.normal(scale=scale, size=(d, d))
    raw = S + E
    raw = 0.5 * (raw + raw.T)
    fixed, _ = _repair_psd(raw)
    assert np.linalg.eigvalsh(fixed).min() >= -1e-12
    assert np.linalg.norm(S - fixed) <= np.linalg.norm(S - raw) + 1e-12
    assert np.array_equal(fixed, fixed.T)


def test_psd_repair_in_pipeline_flags_and_helps():
    # nearly singular truth and a small sample make the assembled matrix indefinite
    cov = np.array([[1.0, 0.99, 0.98], [0.99, 1.0, 0.99], [0.98, 0.99, 1.0]])
    truth = GaussianParams(np.zeros(3), cov)
    model = SelfCensoringModel([HALF] * 3)
    for seed in range(20):
        raw = _fit(truth, model, 3_000, seed)
        if np.linalg.eigvalsh(raw.cov).min() < 0:
            break
    else:
        pytest.fail("no indefinite estimate found")
    fixed = _fit(truth, model, 3_000, seed, SelfCensoringConfig(psd_repair=True))
    assert fixed.psd_projected
    assert np.linalg.eigvalsh(fixed.cov).min() >= -1e-12
    assert np.linalg.norm(cov - fixed.cov) <= np.linalg.norm(cov - raw.cov)


# ----------------------------------------------------------------------------
# sample-size trend


@pytest.mark.slow
def test_quadrupling_n_shrinks_whitened_error():
    truth, model = self_censoring_instance()
    assert np.linalg.cond(truth.cov) <= 4

    def median_error(n):
        errs = [evaluate_estimate(truth, _fit(truth, model, n, 100 + s))["whitened_cov_error"] for s in range(10)]
        return float(np.median(errs))

    assert median_error(25_000) / median_error(100_000) >= 1.5


# ----------------------------------------------------------------------------
# evaluate_estimate


def _est(mean, cov):
    return SelfCensorEstimate(np.asarray(mean, float), np.asarray(cov, float), {}, False)


def test_evaluate_exact_estimate_is_zero(rng):
    truth, _ = self_censoring_instance()
    m = evaluate_estimate(truth, _est(truth.mean, truth.cov), rng, tv_samples=20_000)
    for k in ("mahalanobis_mean_error", "whitened_cov_error", "mean_l2_error", "cov_frobenius_error"):
        assert m[k] == pytest.approx(0.0, abs=1e-12)
    assert m["tv_distance"] <= 3 * m["tv_stderr"] + 1e-9


def test_evaluate_mahalanobis_shift_is_exact():
    truth, _ = self_censoring_instance()
    root = sqrtm_psd(truth.cov)
    m = evaluate_estimate(truth, _est(truth.mean + 0.1 * root[:, 0], truth.cov))
    assert m["mahalanobis_mean_error"] == pytest.approx(0.1, abs=1e-12)


def test_evaluate_entrywise_perturbation_bound(rng):
    S = random_spd(rng, 5)
    truth = GaussianParams(np.zeros(5), S)
    signs = rng.choice([-1.0, 1.0], size=(5, 5))
    signs = np.triu(signs) + np.triu(signs, 1).T
    m = evaluate_estimate(truth, _est(np.zeros(5), S + 0.01 * signs))
    assert m["cov_frobenius_error"] <= 0.05


def test_evaluate_dimension_mismatch():
    truth, _ = self_censoring_instance()
    with pytest.raises(ValueError):
        evaluate_estimate(truth, _est(np.zeros(2), np.eye(2)))


def test_evaluate_indefinite_estimate_skips_tv(rng):
    truth, _ = self_censoring_instance()
    m = evaluate_estimate(truth, _est(truth.mean, -np.eye(3)), rng, tv_samples=1_000)
    assert m["tv_distance"] is None
