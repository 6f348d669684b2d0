"""Dense Gaussian primitives: parameters, factorization, conditioning, sampling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite, SingularBlock

#: relative pivot floor, scaled by trace(cov)/d
LAMBDA_FLOOR = 1e-9


class MonteCarloValue(NamedTuple):
    value: float
    stderr: float


def cholesky(cov, floor=LAMBDA_FLOOR):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises :class:`NotPositiveDefinite` when any pivot ``L_ii**2`` falls at or
    below ``floor * trace(cov) / d``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    d = cov.shape[0]
    scale = np.trace(cov) / d
    if not np.isfinite(scale) or scale <= 0:
        raise NotPositiveDefinite("covariance has non-positive trace")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(L) ** 2
    if np.any(pivots <= floor * scale):
        k = int(np.argmin(pivots))
        raise NotPositiveDefinite(f"pivot {k} = {pivots[k]:.3g} below floor {floor * scale:.3g}")
    return L


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean and covariance of a d-variate normal, with a cached factor."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {d}")
        asym = np.abs(cov - cov.T).max() if d else 0.0
        if asym > 1e-12 * max(np.abs(cov).max(), 1.0):
            raise ValueError(f"cov is not symmetric (max asymmetry {asym:.3g})")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        # factor eagerly so invalid covariances fail at construction
        _ = self.chol

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def chol(self):
        L = cholesky(self.cov)
        L.setflags(write=False)
        return L

    @cached_property
    def precision(self):
        Linv = solve_triangular(self.chol, np.eye(self.dim), lower=True)
        P = Linv.T @ Linv
        P = 0.5 * (P + P.T)
        P.setflags(write=False)
        return P

    @cached_property
    def eigvals(self):
        return np.linalg.eigvalsh(self.cov)

    @property
    def lambda_min(self):
        return float(self.eigvals[0])

    @property
    def lambda_max(self):
        return float(self.eigvals[-1])

    def logpdf(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z = solve_triangular(self.chol, (y - self.mean).T, lower=True)
        logdet = 2.0 * np.log(np.diag(self.chol)).sum()
        return -0.5 * (z * z).sum(axis=0) - 0.5 * logdet - 0.5 * self.dim * np.log(2 * np.pi)

    def marginal(self, coords):
        idx = np.asarray(coords, dtype=int)
        return GaussianParams(self.mean[idx], self.cov[np.ix_(idx, idx)])


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """Law of the hidden block given the seen block.

    ``whitener`` is the lower factor W with ``W @ W.T == sigma_cond``.
    """

    seen: np.ndarray
    hidden: np.ndarray
    mu_cond: np.ndarray
    sigma_cond: np.ndarray
    whitener: np.ndarray


def condition_gaussian(params, seen, x):
    """Condition ``params`` on ``y[seen] == x``.

    Uses the Schur complement
    ``mu_cond = mu_h + S_hs S_ss^{-1} (x - mu_s)`` and
    ``sigma_cond = S_hh - S_hs S_ss^{-1} S_sh``.
    """
    d = params.dim
    seen = np.asarray(seen, dtype=int)
    x = np.asarray(x, dtype=float).reshape(-1)
    if seen.size == 0 or seen.size >= d:
        raise ValueError("seen must be a nonempty proper subset of the coordinates")
    if x.shape[0] != seen.shape[0]:
        raise ValueError("x must have one value per seen coordinate")
    mask = np.zeros(d, dtype=bool)
    mask[seen] = True
    hidden = np.flatnonzero(~mask)
    S = params.cov
    try:
        Lss = cholesky(S[np.ix_(seen, seen)])
    except NotPositiveDefinite as exc:
        raise SingularBlock(f"seen block is not factorizable: {exc}") from None
    # K = S_hs S_ss^{-1}, computed through two triangular solves
    tmp = solve_triangular(Lss, S[np.ix_(seen, hidden)], lower=True)
    resid = solve_triangular(Lss, x - params.mean[seen], lower=True)
    mu_cond = params.mean[hidden] + tmp.T @ resid
    sigma_cond = S[np.ix_(hidden, hidden)] - tmp.T @ tmp
    sigma_cond = 0.5 * (sigma_cond + sigma_cond.T)
    try:
        W = cholesky(sigma_cond)
    except NotPositiveDefinite as exc:
        raise SingularBlock(f"conditional covariance is degenerate: {exc}") from None
    return ConditionalGaussian(seen, hidden, mu_cond, sigma_cond, W)


def mahalanobis_norm(v, cov):
    """``sqrt(v^T cov^{-1} v)``; ``v`` may carry leading batch axes."""
    v = np.asarray(v, dtype=float)
    L = cov.chol if isinstance(cov, GaussianParams) else _factor_or_singular(cov)
    flat = v.reshape(-1, L.shape[0]).T
    z = solve_triangular(L, flat, lower=True)
    out = np.sqrt((z * z).sum(axis=0))
    return float(out[0]) if v.ndim == 1 else out.reshape(v.shape[:-1])


def _factor_or_singular(cov):
    try:
        return cholesky(cov)
    except NotPositiveDefinite as exc:
        raise SingularBlock(str(exc)) from None


def sample_gaussian(params, n, rng):
    """``n`` i.i.d. rows ``mean + L z`` with ``z`` standard normal."""
    if n < 1:
        raise ValueError("n must be positive")
    z = rng.standard_normal((n, params.dim))
    return params.mean + z @ params.chol.T


def tv_distance_mc(p, q, n, rng):
    """Monte Carlo total variation distance between two Gaussians.

    Averages ``max(0, 1 - q(y)/p(y))`` over ``y ~ p``; this is unbiased for
    TV(p, q). Returns the estimate with its standard error.
    """
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    y = sample_gaussian(p, n, rng)
    log_ratio = q.logpdf(y) - p.logpdf(y)
    terms = np.maximum(0.0, -np.expm1(np.minimum(log_ratio, 0.0)))
    stderr = terms.std(ddof=1) / np.sqrt(n) if n > 1 else float("nan")
    return MonteCarloValue(float(min(1.0, terms.mean())), float(stderr))


def sqrtm_psd(cov, inverse=False):
    """Symmetric square root (or inverse square root) via eigendecomposition."""
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    if inverse:
        if np.any(w <= 0):
            raise SingularBlock("matrix is not positive definite")
        w = 1.0 / np.sqrt(w)
    else:
        w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w) @ V.T
