"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. Every test is
marked ``acceptance`` and ``slow``; the whole file takes roughly 5 minutes
on one core.
"""

import math
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import norm, special_ortho_group

from mnar_gauss.cli import loglog_slope
from mnar_gauss.experiments import anchored_instance, run_anchored, run_self_censoring, self_censoring_instance
from mnar_gauss.gaussian import GaussianParams, condition_gaussian
from mnar_gauss.likelihood import LikelihoodOracle
from mnar_gauss.linear_threshold import (
    INIT_BIAS_C,
    DescentConfig,
    GradientSampler,
    NonMixingWarning,
    default_r_proj,
    initialize,
)
from mnar_gauss.missingness import (
    LinearThresholdModel,
    Observation,
    audit_alpha_pair,
    audit_alpha_subset,
    audit_anchoring,
    empirical_alpha_subset,
    simulate,
)
from mnar_gauss.truncated import TruncationSet, sample_truncated, truncated_fit
from test_truncated import oracle_mle_1d, oracle_mle_orthant

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def verdict(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}")
        return passed

    return emit


# ----------------------------------------------------------------------------
# self-censoring: one sweep shared by criteria 1 and 2

SWEEP_NS = (25_000, 100_000, 400_000, 1_600_000)
SWEEP_SEEDS = range(5)


@pytest.fixture(scope="module")
def sweep():
    return {n: [run_self_censoring(n, 1000 + s) for s in SWEEP_SEEDS] for n in SWEEP_NS}


def test_criterion_1_self_censoring_recovery(sweep, verdict):
    truth, model = self_censoring_instance()
    cond = float(np.linalg.cond(truth.cov))
    alpha = audit_alpha_pair(truth, model, 400_000, np.random.default_rng(0)).value
    runs = sweep[400_000]
    mean_err = float(np.median([r.metrics["mahalanobis_mean_error"] for r in runs]))
    cov_err = float(np.median([r.metrics["whitened_cov_error"] for r in runs]))
    seconds = sum(r.seconds for r in runs)
    ok = cond <= 4 and alpha >= 0.3 and mean_err <= 0.1 and cov_err <= 0.2 and seconds <= 600
    verdict(
        1,
        "self-censoring recovery",
        ok,
        f"cond={cond:.2f} alpha_pair={alpha:.3f} median mean err={mean_err:.4f} (<=0.1) "
        f"median whitened cov err={cov_err:.4f} (<=0.2) fit time 5 seeds={seconds:.1f}s",
    )
    assert ok


def test_criterion_2_rate(sweep, verdict):
    ns = [n for n in SWEEP_NS for _ in SWEEP_SEEDS]
    errs = [r.metrics["whitened_cov_error"] for n in SWEEP_NS for r in sweep[n]]
    slope = loglog_slope(ns, errs)
    raw = loglog_slope(ns, [r.metrics["cov_frobenius_error"] for n in SWEEP_NS for r in sweep[n]])
    meds = [float(np.median([r.metrics["whitened_cov_error"] for r in sweep[n]])) for n in SWEEP_NS]
    ok = -0.7 <= slope <= -0.3
    verdict(
        2,
        "error rate",
        ok,
        f"whitened Frobenius slope={slope:.3f} in [-0.7,-0.3] (raw Frobenius slope={raw:.3f}), "
        f"medians={np.round(meds, 4).tolist()}",
    )
    assert ok


# ----------------------------------------------------------------------------
# truncated MLE against direct optimization


def test_criterion_3_truncated_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    half = TruncationSet([[(0.0, math.inf)]])

    # sampler: half-normal mean in closed form
    draws = sample_truncated(GaussianParams([0.0], [[1.0]]), half, rng, size=100_000)
    sampler_err = abs(draws.mean() - math.sqrt(2 / math.pi))

    # 1D fit against the grid + Nelder-Mead oracle
    x = sample_truncated(GaussianParams([0.0], [[1.0]]), half, rng, size=100_000)
    est = truncated_fit(x, half, rng)
    mu, s2 = oracle_mle_1d(x, [(0.0, math.inf)])
    err_1d = max(abs(est.mean[0] - mu), abs(est.cov[0, 0] - s2))

    # 2D orthant fit against the quadrature oracle
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    orthant = TruncationSet([[(0.0, math.inf)], [(0.0, math.inf)]])
    X = sample_truncated(GaussianParams([0.0, 0.0], S), orthant, rng, size=200_000)
    est2 = truncated_fit(X, orthant, rng)
    mu2, C2 = oracle_mle_orthant(X)
    err_2d = max(np.max(np.abs(est2.mean - mu2)), np.max(np.abs(est2.cov - C2)))
    off_diag = abs(est2.cov[0, 1] - 0.5)

    seconds = time.perf_counter() - t0
    ok = sampler_err <= 0.01 and err_1d <= 0.1 and err_2d <= 0.1 and off_diag <= 0.1 and seconds <= 120
    verdict(
        3,
        "truncated MLE oracle equivalence",
        ok,
        f"half-normal mean err={sampler_err:.4f} (<=0.01) 1D vs oracle={err_1d:.4f} 2D vs oracle={err_2d:.4f} "
        f"|Sigma12-0.5|={off_diag:.4f} (all <=0.1) time={seconds:.1f}s",
    )
    assert ok


# ----------------------------------------------------------------------------
# likelihood stationarity and strong convexity

LIKELIHOOD_INSTANCES = [
    (LinearThresholdModel([[-1.0, 1.0], [1.0, -1.0]], [0.0, 0.0]), GaussianParams([0.5, -0.5], [[1.0, 0.3], [0.3, 1.0]])),
    (LinearThresholdModel([[1.0, 0.5], [-0.3, 1.0]], [0.5, 0.8]), GaussianParams([0.0, 0.3], [[1.2, 0.4], [0.4, 0.8]])),
]


def test_criterion_4_stationarity_and_convexity(verdict):
    t0 = time.perf_counter()
    beta = 0.5
    worst_grad, worst_gap, lines = 0.0, math.inf, []
    for k, (model, truth) in enumerate(LIKELIHOOD_INSTANCES):
        rng = np.random.default_rng(40 + k)
        alpha = audit_alpha_subset(truth, model, beta, 400_000, rng).value
        lam = alpha * beta / truth.lambda_max
        oracle = LikelihoodOracle(model, truth.cov, truth)
        grad = float(np.linalg.norm(oracle.evaluate(truth.mean).grad))
        # the projection ball around an initializer run on simulated data
        table, _ = simulate(truth, model, 100_000, rng)
        mu0 = initialize(table, beta, 100_000)
        radius = default_r_proj(alpha, beta, truth)
        eig = []
        for _ in range(20):
            u = rng.normal(size=2)
            mu = mu0 + radius * math.sqrt(rng.uniform()) * truth.chol @ (u / np.linalg.norm(u))
            eig.append(np.linalg.eigvalsh(oracle.evaluate(mu).hess).min())
        gap = min(eig) - (lam - 1e-3)
        worst_grad = max(worst_grad, grad)
        worst_gap = min(worst_gap, gap)
        lines.append(f"inst{k}: |grad|={grad:.1e} lambda={lam:.3f} min eig={min(eig):.3f} r_proj={radius:.1f}")
    seconds = time.perf_counter() - t0
    ok = worst_grad <= 1e-3 and worst_gap >= 0 and seconds <= 300
    verdict(4, "stationarity and convexity", ok, "; ".join(lines) + f" time={seconds:.1f}s")
    assert ok


# ----------------------------------------------------------------------------
# Langevin sampler against rejection sampling


def _lmc_instance(rng):
    """Random d=2 instance with a partially hidden pattern of probability at least 0.1."""
    while True:
        Q = special_ortho_group.rvs(2, random_state=rng)
        truth = GaussianParams(rng.normal(size=2), Q @ np.diag(rng.uniform(0.5, 2.0, 2)) @ Q.T)
        model = LinearThresholdModel(rng.normal(size=(2, 2)), rng.normal(size=2))
        table, _ = simulate(truth, model, 20_000, rng)
        pats, counts = np.unique(table.mask, axis=0, return_counts=True)
        keep = [p for p, c in zip(pats, counts) if c / 20_000 >= 0.1 and not p.all()]
        if keep:
            return truth, model, table, keep[0]


def _rejection_mean(truth, model, obs, pattern, rng, draws=1_000_000):
    hidden = np.flatnonzero(~pattern)
    if obs.seen.size:
        cond = condition_gaussian(truth, obs.seen, obs.values)
        mc, Sc = cond.mu_cond, cond.sigma_cond
    else:
        mc, Sc = truth.mean, truth.cov
    Z = rng.multivariate_normal(mc, Sc, size=draws)
    full = np.empty((draws, 2))
    full[:, obs.seen] = obs.values
    full[:, hidden] = Z
    keep = (model.seen_mask(full) == pattern).all(axis=1)
    return Z[keep].mean(axis=0), int(keep.sum())


def test_criterion_5_lmc_fidelity(verdict):
    rng = np.random.default_rng(5)
    errors = []
    for _ in range(10):
        truth, model, table, pattern = _lmc_instance(rng)
        rows = np.flatnonzero((table.mask == pattern).all(axis=1))
        for row in rows:
            ref, accepted = _rejection_mean(truth, model, table[row], pattern, rng)
            if accepted >= 20_000:
                break
        obs = table[row]
        sampler = GradientSampler(truth, model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonMixingWarning)
            chain = np.array([sampler.hidden_draw(obs, truth.mean, 4000, rng) for _ in range(8000)])
        errors.append(float(np.max(np.abs(chain.mean(axis=0) - ref))))

    tail = GradientSampler(GaussianParams([0.0], [[1.0]]), LinearThresholdModel([[1.0]], [1.0]))
    empty = Observation(np.array([], dtype=int), np.array([]))
    draws = np.array([tail.hidden_draw(empty, np.zeros(1), 4000, rng)[0] for _ in range(10_000)])
    exact = norm.pdf(1.0) / (1 - ndtr(1.0))
    tail_err = abs(draws.mean() - exact)
    ok = max(errors) <= 0.05 and tail_err <= 0.05
    verdict(
        5,
        "Langevin sampler fidelity",
        ok,
        f"10 d=2 instances max |chain mean - rejection mean|={max(errors):.4f} (<=0.05), "
        f"1D tail mean={draws.mean():.4f} vs {exact:.4f}",
    )
    assert ok


# ----------------------------------------------------------------------------
# MissingDescent end to end


def test_criterion_6_missing_descent(verdict):
    truth, model, beta, anchor = anchored_instance()
    rng = np.random.default_rng(6)
    alpha = audit_alpha_subset(truth, model, beta, 200_000, rng).value
    gamma = audit_anchoring(truth, model, anchor, 200_000, rng).gamma
    cfg = DescentConfig(beta=beta, M_init=100_000, M_sgd=100_000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonMixingWarning)
        runs = [run_anchored(600 + s, cfg, use_generating_start=False) for s in range(5)]
    errs = [r.metrics["mahalanobis_mean_error"] for r in runs]
    naive = [r.metrics["naive_mahalanobis_mean_error"] for r in runs]
    seconds = sum(r.seconds for r in runs)
    med = float(np.median(errs))
    beats = all(e < n for e, n in zip(errs, naive))
    ok = alpha > 0 and gamma > 0 and med <= 0.15 and beats and seconds <= 1200
    verdict(
        6,
        "MissingDescent end to end",
        ok,
        f"alpha={alpha:.3f} gamma={gamma:.3f} median err={med:.4f} (<=0.15) errors={np.round(errs, 4).tolist()} "
        f"naive={np.round(naive, 4).tolist()} time={seconds:.0f}s",
    )
    assert ok


def test_criterion_7_initialization_bias(verdict):
    truth, model, beta, _ = anchored_instance()
    worst, bound_min = 0.0, math.inf
    passed = 0
    for seed in range(20):
        table, _ = simulate(truth, model, 100_000, np.random.default_rng(700 + seed))
        alpha_hat = empirical_alpha_subset(table, beta).value
        bound = INIT_BIAS_C * math.sqrt(truth.lambda_max / beta * math.log(1 / alpha_hat))
        err = float(np.linalg.norm(initialize(table, beta, 100_000) - truth.mean))
        passed += err <= bound
        worst = max(worst, err)
        bound_min = min(bound_min, bound)
    ok = passed == 20
    verdict(7, "initialization bias", ok, f"{passed}/20 within bound, worst err={worst:.4f}, smallest bound={bound_min:.3f}")
    assert ok


# ----------------------------------------------------------------------------
# invariant suites

INVARIANTS = [
    # projection idempotence and containment
    "tests/test_linear_threshold.py::test_project_to_domain_idempotent",
    "tests/test_linear_threshold.py::test_project_to_domain_is_nearest_point_in_metric",
    "tests/test_linear_threshold.py::test_project_onto_L_output_feasible",
    "tests/test_linear_threshold.py::test_project_onto_L_matches_exact_and_grid_oracles",
    "tests/test_linear_threshold.py::test_descent_iterates_respect_projection_radius",
    "tests/test_missingness.py::TestPolytope::test_projection_lands_inside",
    # Gaussian conditioning
    "tests/test_gaussian.py::TestConditioning",
    # determinism
    "tests/test_missingness.py::TestGenerate::test_deterministic",
    "tests/test_self_censoring.py::test_worker_count_does_not_change_result",
    "tests/test_cli.py::test_generate_is_byte_identical_on_rerun",
    "tests/test_cli.py::test_estimate_is_deterministic",
    # membership polytope round trip
    "tests/test_missingness.py::TestPolytope",
    "tests/test_missingness.py::TestModels::test_json_round_trip_is_bit_exact",
    # gradients vanish at the truth
    "tests/test_truncated.py::test_stochastic_gradient_unbiased_at_truth",
    "tests/test_truncated.py::test_stochastic_gradient_unbiased_2d",
    "tests/test_likelihood.py::test_gradient_vanishes_at_truth",
    "tests/test_linear_threshold.py::test_sample_gradient_unbiased_at_truth",
]


def test_criterion_8_invariant_suites(verdict):
    res = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *INVARIANTS],
        cwd=ROOT,
        capture_output=True,
        text=True,
    )
    summary = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr.strip()[-200:]
    ok = res.returncode == 0 and "failed" not in summary and "error" not in summary
    verdict(8, "invariant suites", ok, summary)
    assert ok, res.stdout[-4000:]
