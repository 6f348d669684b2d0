"""Benchmark instances and single-replica runners used by scripts and tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .gaussian import GaussianParams, mahalanobis_norm
from .linear_threshold import DescentConfig, available_case_mean, missing_descent
from .missingness import LinearThresholdModel, SelfCensoringModel, simulate
from .self_censoring import SelfCensoringConfig, evaluate_estimate, fit_self_censoring


def self_censoring_instance():
    """d=3, condition number about 2.8, every coordinate seen on ``[-1.5, inf)``."""
    truth = GaussianParams(
        np.array([0.5, -0.3, 0.2]),
        np.array([[1.0, 0.5, 0.2], [0.5, 1.5, 0.3], [0.2, 0.3, 1.0]]),
    )
    model = SelfCensoringModel([[(-1.5, math.inf)]] * 3)
    return truth, model


def anchored_instance():
    """Max-observation pair on coordinates 0 and 1, coordinate 2 always seen.

    Exactly one of ``y0, y1`` is seen: the larger one. ``y0 - y1`` is
    independent of ``y2`` under this covariance, so every pattern keeps the
    same probability at every anchor value.
    """
    truth = GaussianParams(
        np.array([0.5, -0.5, 1.0]),
        np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.2], [0.2, 0.2, 1.0]]),
    )
    model = LinearThresholdModel([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]], [0.0, 0.0, 0.0])
    return truth, model, 1 / 3, (2,)


@dataclass
class RunResult:
    n: int
    seed: int
    metrics: dict
    seconds: float
    extra: dict = field(default_factory=dict)


def run_self_censoring(n, seed, cfg=None, truth=None, model=None):
    if truth is None:
        truth, model = self_censoring_instance()
    rng = np.random.default_rng(seed)
    table, _ = simulate(truth, model, n, rng)
    t0 = time.perf_counter()
    est = fit_self_censoring(table, model, rng, cfg or SelfCensoringConfig())
    secs = time.perf_counter() - t0
    return RunResult(n, seed, evaluate_estimate(truth, est), secs, {"mean": est.mean, "cov": est.cov})


def run_anchored(seed, cfg=None, use_generating_start=True):
    truth, model, beta, _ = anchored_instance()
    cfg = cfg or DescentConfig(beta=beta)
    rng = np.random.default_rng(seed)
    table, Y = simulate(truth, model, cfg.M_init + cfg.M_sgd, rng)
    t0 = time.perf_counter()
    trace = missing_descent(table, model, truth.cov, cfg, rng, complete=Y if use_generating_start else None)
    secs = time.perf_counter() - t0
    metrics = {
        "mahalanobis_mean_error": mahalanobis_norm(trace.mean - truth.mean, truth),
        "naive_mahalanobis_mean_error": mahalanobis_norm(available_case_mean(table) - truth.mean, truth),
        "init_l2_error": float(np.linalg.norm(trace.mu0 - truth.mean)),
    }
    return RunResult(cfg.M_init + cfg.M_sgd, seed, metrics, secs, {"trace": trace})
