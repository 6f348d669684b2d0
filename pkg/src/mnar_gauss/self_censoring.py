"""Mean and covariance recovery under self-censoring.

Each coordinate is fit on its own by a one-dimensional truncated MLE, which
gives the mean and the diagonal. Each pair is fit by a two-dimensional
truncated MLE on the rows where both coordinates are seen, and only the
off-diagonal entry of that fit is kept.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PairStarved
from .gaussian import GaussianParams, mahalanobis_norm, sqrtm_psd, tv_distance_mc
from .missingness import SelfCensoringModel, as_table
from .truncated import TruncatedFitConfig, TruncationSet, truncated_fit


@dataclass(frozen=True)
class SelfCensoringConfig:
    min_samples: int = 2000
    psd_repair: bool = False
    epsilon: float | None = None  # target accuracy; caps rows per subproblem when set
    workers: int = 1
    truncated: TruncatedFitConfig = field(default_factory=TruncatedFitConfig)

    def rows_cap(self, d, alpha=1.0):
        """Rows per subproblem implied by ``epsilon`` split as ``epsilon / d``."""
        if self.epsilon is None:
            return None
        eps_sub = self.epsilon / d
        return int(math.ceil(1.0 / (alpha * eps_sub**2)))


@dataclass(frozen=True, eq=False)
class SelfCensorEstimate:
    mean: np.ndarray
    cov: np.ndarray
    per_pair_diagnostics: dict
    psd_projected: bool

    @property
    def params(self):
        return GaussianParams(self.mean, self.cov)


def subproblem_rng(seed, i, j):
    """Independent generator for subproblem ``(i, j)`` (``i == j`` for 1D fits)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(i), int(j))))


def _repair_psd(cov):
    w, V = np.linalg.eigh(cov)
    if w[0] >= 0:
        return cov, False
    fixed = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (fixed + fixed.T), True


def fit_self_censoring(observations, model, rng, cfg=None):
    """Assemble ``(mean, cov)`` from 1D and 2D truncated fits.

    Parameters
    ----------
    observations : list of Observation or ObservationTable
    model : SelfCensoringModel
    rng : numpy.random.Generator
        Only used to draw a base seed; subproblem ``(i, j)`` gets its own
        stream so results do not depend on ``cfg.workers``.
    cfg : SelfCensoringConfig, optional

    Raises
    ------
    PairStarved
        A coordinate or pair is seen in fewer than ``cfg.min_samples`` rows.
    """
    cfg = cfg or SelfCensoringConfig()
    if not isinstance(model, SelfCensoringModel):
        raise TypeError("fit_self_censoring needs a SelfCensoringModel")
    d = model.dim
    table = as_table(observations, d)
    mask, vals = table.mask, table.values
    cap = cfg.rows_cap(d)

    jobs = [(i, i) for i in range(d)] + list(itertools.combinations(range(d), 2))
    for i, j in jobs:
        count = int((mask[:, i] & mask[:, j]).sum())
        if count < cfg.min_samples:
            raise PairStarved(i, j, count, cfg.min_samples)

    seed = int(rng.integers(2**63 - 1))
    tcfg = cfg.truncated

    def run(job):
        i, j = job
        coords = [i] if i == j else [i, j]
        rows = mask[:, coords].all(axis=1)
        X = vals[rows][:, coords]
        if cap is not None:
            X = X[:cap]
        tset = TruncationSet([model.sets[c] for c in coords])
        return truncated_fit(X, tset, subproblem_rng(seed, i, j), tcfg), X.shape[0]

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = dict(zip(jobs, pool.map(run, jobs)))
    else:
        results = {job: run(job) for job in jobs}

    mean = np.empty(d)
    cov = np.empty((d, d))
    diagnostics = {}
    for (i, j), (fit, used) in results.items():
        diag = {"samples": used, "iterations": fit.iterations, "lambda_sc": fit.lambda_sc}
        if i == j:
            mean[i] = fit.mean[0]
            cov[i, i] = fit.cov[0, 0]
            diag["variance"] = float(fit.cov[0, 0])
        else:
            off = float(fit.cov[0, 1])
            cov[i, j] = off
            cov[j, i] = off
            diag["covariance"] = off
            diag["pair_diagonal"] = [float(fit.cov[0, 0]), float(fit.cov[1, 1])]
        diagnostics[(i, j)] = diag

    projected = False
    if cfg.psd_repair:
        cov, projected = _repair_psd(cov)
    return SelfCensorEstimate(mean, cov, diagnostics, projected)


def available_case_moments(observations, d=None):
    """Per-coordinate and pairwise-complete moments; biased under MNAR."""
    table = as_table(observations, d)
    mask, vals = table.mask, np.nan_to_num(table.values)
    cnt = mask.sum(axis=0)
    mean = (vals * mask).sum(axis=0) / np.maximum(cnt, 1)
    d = table.dim
    cov = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            rows = mask[:, i] & mask[:, j]
            xi, xj = vals[rows, i], vals[rows, j]
            c = float(np.mean((xi - xi.mean()) * (xj - xj.mean()))) if rows.any() else np.nan
            cov[i, j] = cov[j, i] = c
    return mean, cov


def evaluate_estimate(truth, est, rng=None, tv_samples=100_000):
    """Error functionals of an estimate against the true parameters.

    ``mahalanobis_mean_error`` is ``||Sigma*^{-1/2}(mu* - mu_hat)||``,
    ``whitened_cov_error`` is ``||I - Sigma*^{-1/2} Sigma_hat Sigma*^{-1/2}||_F``.
    The TV entry is a Monte Carlo estimate and is omitted when ``rng`` is
    ``None`` or the estimated covariance is not positive definite.
    """
    mean = np.asarray(est.mean, dtype=float)
    cov = np.asarray(est.cov, dtype=float)
    if mean.shape != truth.mean.shape or cov.shape != truth.cov.shape:
        raise ValueError("dimension mismatch")
    root_inv = sqrtm_psd(truth.cov, inverse=True)
    out = {
        "mahalanobis_mean_error": mahalanobis_norm(truth.mean - mean, truth),
        "whitened_cov_error": float(np.linalg.norm(np.eye(truth.dim) - root_inv @ cov @ root_inv)),
        "mean_l2_error": float(np.linalg.norm(truth.mean - mean)),
        "cov_frobenius_error": float(np.linalg.norm(truth.cov - cov)),
    }
    if rng is not None:
        try:
            est_params = GaussianParams(mean, 0.5 * (cov + cov.T))
        except ValueError:
            out["tv_distance"] = None
            out["tv_stderr"] = None
        else:
            tv = tv_distance_mc(truth, est_params, tv_samples, rng)
            out["tv_distance"] = tv.value
            out["tv_stderr"] = tv.stderr
    return out
