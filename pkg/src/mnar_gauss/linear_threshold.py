"""Mean recovery under linear-thresholding missingness with known covariance.

The estimator minimizes the population negative log-likelihood of the
censored observations by projected SGD. Gradients need the conditional mean
of the hidden block given the seen values and the pattern; a projected
Langevin chain over the pattern polytope supplies one approximate draw per
step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import solve_triangular

from .errors import BlockStarved, EmptyFeasible, InsufficientStream, NoConvergence
from .gaussian import GaussianParams, cholesky, mahalanobis_norm
from .missingness import (
    TAU_STRICT,
    LinearThresholdModel,
    as_table,
    empirical_alpha_subset,
    subset_size,
)

INIT_BIAS_C = 4.0
DYKSTRA_TOL = 1e-8
DYKSTRA_SWEEPS = 500
FEASIBILITY_TOL = 1e-6


class NonMixingWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class DescentConfig:
    beta: float
    M_init: int = 100_000
    M_sgd: int = 100_000
    M_grad: int = 4000
    lmc_burn_in: int = 1000
    eta_lmc: float = 0.002
    R_lmc: float | None = None  # per-pattern default sqrt(k) + sqrt(2 log(1/delta_R))
    delta_R: float = 1e-6
    lambda_sgd: float | None = None  # alpha * beta / lambda_max(Sigma)
    r_proj: float | None = None
    alpha: float | None = None  # subset mass; estimated from the initialization rows when None
    grad_growth: float = 0.0  # M_grad at step i is M_grad * i**grad_growth

    def __post_init__(self):
        for name in ("M_init", "M_sgd", "M_grad", "eta_lmc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.lmc_burn_in <= self.M_grad:
            raise ValueError("lmc_burn_in must lie in [0, M_grad]")


@dataclass(frozen=True, eq=False)
class IterateTrace:
    """Everything MissingDescent did; ``mean`` is the averaged iterate."""

    mu0: np.ndarray
    iterates: np.ndarray
    etas: np.ndarray
    grad_norms: np.ndarray
    dist_to_mu0: np.ndarray
    mean: np.ndarray
    lambda_sgd: float
    r_proj: float
    alpha: float

    def rows(self):
        """``(iter, eta, grad_norm, dist_to_mu0)`` tuples for the trace CSV."""
        for i in range(self.etas.shape[0]):
            yield i + 1, float(self.etas[i]), float(self.grad_norms[i]), float(self.dist_to_mu0[i])


def _as_params(sigma):
    if isinstance(sigma, GaussianParams):
        return sigma
    sigma = np.asarray(sigma, dtype=float)
    return GaussianParams(np.zeros(sigma.shape[0]), sigma)


def initialize(observations, beta, M_init, d=None):
    """Blockwise complete-case means over the first ``M_init`` rows.

    Coordinates are cut into consecutive blocks of ``beta * d``; each block's
    mean uses only the rows that see the whole block.
    """
    table = as_table(observations, d)
    d = table.dim
    if len(table) < M_init:
        raise InsufficientStream(f"initialization needs {M_init} rows, stream has {len(table)}")
    k = subset_size(beta, d)
    mask = table.mask[:M_init]
    vals = table.values[:M_init]
    w = np.empty(d)
    for i in range(math.ceil(d / k)):
        s, t = i * k, min((i + 1) * k, d)
        rows = mask[:, s:t].all(axis=1)
        if not rows.any():
            raise BlockStarved(i, range(s, t))
        w[s:t] = vals[rows, s:t].mean(axis=0)
    return w


def project_to_domain(mu0, v, r_proj, sigma):
    """Metric projection onto the Mahalanobis ball of radius ``r_proj`` about ``mu0``."""
    mu0 = np.asarray(mu0, dtype=float)
    v = np.asarray(v, dtype=float)
    diff = v - mu0
    dist = mahalanobis_norm(diff, sigma)
    if dist <= r_proj:
        return v.copy()
    return mu0 + (r_proj / dist) * diff


@numba.njit(cache=True, nogil=True)
def _feasible(x, normals, offsets, sq, center, radius):
    m, k = normals.shape
    for i in range(m):
        if sq[i] > 0.0:
            s = 0.0
            for a in range(k):
                s += normals[i, a] * x[a]
            if s > offsets[i]:
                return False
    if math.isfinite(radius):
        s = 0.0
        for a in range(k):
            s += (x[a] - center[a]) ** 2
        if s > radius * radius:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def _dykstra_inplace(x, normals, offsets, sq, center, radius, tol, max_sweeps, incr, prev, y):
    """Dykstra's method on ``x`` in place; returns ``(sweeps, converged)``."""
    m, k = normals.shape
    if _feasible(x, normals, offsets, sq, center, radius):
        return 0, True
    incr[:] = 0.0
    for sweep in range(1, max_sweeps + 1):
        for a in range(k):
            prev[a] = x[a]
        # the end-of-sweep point can stall while the corrections still cycle,
        # so convergence also requires the corrections to settle
        shift = 0.0
        for i in range(m):
            if sq[i] == 0.0:
                continue
            s = 0.0
            for a in range(k):
                y[a] = x[a] + incr[i, a]
                s += normals[i, a] * y[a]
            f = (s - offsets[i]) / sq[i] if s > offsets[i] else 0.0
            for a in range(k):
                x[a] = y[a] - f * normals[i, a]
                new = f * normals[i, a]
                shift += (new - incr[i, a]) ** 2
                incr[i, a] = new
        if math.isfinite(radius):
            s = 0.0
            for a in range(k):
                y[a] = x[a] + incr[m, a]
                s += (y[a] - center[a]) ** 2
            s = math.sqrt(s)
            f = radius / s if s > radius else 1.0
            for a in range(k):
                x[a] = center[a] + f * (y[a] - center[a])
                new = y[a] - x[a]
                shift += (new - incr[m, a]) ** 2
                incr[m, a] = new
        move = 0.0
        for a in range(k):
            move += (x[a] - prev[a]) ** 2
        if math.sqrt(move) <= tol and math.sqrt(shift) <= tol:
            return sweep, True
    return max_sweeps, False


@numba.njit(cache=True, nogil=True)
def _row_norms(normals):
    m, k = normals.shape
    sq = np.empty(m)
    for i in range(m):
        s = 0.0
        for a in range(k):
            s += normals[i, a] * normals[i, a]
        sq[i] = s
    return sq


@numba.njit(cache=True, nogil=True)
def _dykstra(point, normals, offsets, center, radius, tol, max_sweeps):
    m, k = normals.shape
    x = point.copy()
    sweeps, ok = _dykstra_inplace(
        x, normals, offsets, _row_norms(normals), center, radius, tol, max_sweeps,
        np.empty((m + 1, k)), np.empty(k), np.empty(k),
    )
    return x, sweeps, ok


@numba.njit(cache=True, nogil=True)
def _violation(z, normals, offsets, center, radius):
    m, k = normals.shape
    worst = 0.0
    for i in range(m):
        s = 0.0
        nz = False
        for a in range(k):
            s += normals[i, a] * z[a]
            nz = nz or normals[i, a] != 0.0
        if not nz and offsets[i] < 0.0:
            return math.inf
        if nz:
            worst = max(worst, s - offsets[i])
    if math.isfinite(radius):
        s = 0.0
        for a in range(k):
            s += (z[a] - center[a]) ** 2
        worst = max(worst, math.sqrt(s) - radius)
    return worst


def project_onto_L(point, halfspaces, center, radius, tol=DYKSTRA_TOL, max_sweeps=DYKSTRA_SWEEPS):
    """Euclidean projection onto ``{z : N z <= c} ∩ ball(center, radius)``.

    Runs Dykstra's alternating projection until an entire sweep moves the
    iterate by at most ``tol``. Raises :class:`NoConvergence` when the sweep
    budget runs out or the result violates a constraint by more than 1e-6.
    """
    normals, offsets = halfspaces
    point = np.asarray(point, dtype=float).reshape(-1)
    k = point.shape[0]
    normals = np.asarray(normals, dtype=float).reshape(-1, k)
    offsets = np.asarray(offsets, dtype=float).reshape(-1)
    center = np.asarray(center, dtype=float).reshape(k)
    radius = float(radius)
    if np.any((np.einsum("ij,ij->i", normals, normals) == 0) & (offsets < 0)):
        raise EmptyFeasible("a constraint without hidden coordinates is violated")
    z, sweeps, ok = _dykstra(point, normals, offsets, center, radius, tol, max_sweeps)
    if not ok or _violation(z, normals, offsets, center, radius) > FEASIBILITY_TOL:
        raise NoConvergence(f"Dykstra projection did not settle within {max_sweeps} sweeps")
    return z


@numba.njit(cache=True, nogil=True)
def _lmc_chain(z0, center, normals, offsets, radius, eta, noise, burn_in, tol, max_sweeps):
    """Projected Langevin chain for N(center, I) restricted to the constraint set."""
    M, k = noise.shape
    m = normals.shape[0]
    sq = _row_norms(normals)
    incr = np.empty((m + 1, k))
    prev = np.empty(k)
    y = np.empty(k)
    last = np.empty(k)
    # mixing is judged on post-burn-in steps when there are enough of them
    judge_from = burn_in if M - burn_in >= 100 else 0
    z = z0.copy()
    root = math.sqrt(eta)
    failures = 0
    spread = 0.0
    for t in range(M):
        for a in range(k):
            last[a] = z[a]
            z[a] = z[a] - 0.5 * eta * (z[a] - center[a]) + root * noise[t, a]
        # inline feasibility test; Dykstra only runs for the minority of infeasible proposals
        inside = True
        for i in range(m):
            s = 0.0
            for a in range(k):
                s += normals[i, a] * z[a]
            if sq[i] > 0.0 and s > offsets[i]:
                inside = False
        s = 0.0
        for a in range(k):
            s += (z[a] - center[a]) ** 2
        if s > radius * radius:
            inside = False
        if not inside:
            _, ok = _dykstra_inplace(z, normals, offsets, sq, center, radius, tol, max_sweeps, incr, prev, y)
            if not ok:
                failures += 1
        if t >= judge_from:
            for a in range(k):
                spread += (z[a] - last[a]) ** 2
    return z, failures, spread / (M - judge_from)


@dataclass(eq=False)
class _Pattern:
    seen: np.ndarray
    hidden: np.ndarray
    regress: np.ndarray  # Sigma_hs Sigma_ss^{-1}
    W: np.ndarray
    Winv: np.ndarray
    normals: np.ndarray  # whitened, all d rows
    sign: np.ndarray  # +1 for seen rows (<=), -1 for hidden rows (>)
    v_seen: np.ndarray
    R: float
    empty_rows: np.ndarray  # constraints that involve no hidden coordinate


@dataclass(eq=False)
class GradientSampler:
    """Per-pattern cache of the conditioning and whitening work.

    The conditional covariance, whitener and whitened constraint normals
    depend only on the pattern, so they are computed once per pattern.
    """

    sigma: GaussianParams
    model: LinearThresholdModel
    eta_lmc: float = 0.002
    R_lmc: float | None = None
    delta_R: float = 1e-6
    burn_in: int = 1000
    tau: float = TAU_STRICT
    _cache: dict = field(default_factory=dict, repr=False)

    def pattern(self, seen):
        seen = np.asarray(seen, dtype=int)
        key = seen.tobytes()
        pat = self._cache.get(key)
        if pat is None:
            pat = self._cache[key] = self._build(seen)
        return pat

    def _build(self, seen):
        d = self.model.dim
        mask = np.zeros(d, dtype=bool)
        mask[seen] = True
        hidden = np.flatnonzero(~mask)
        S = self.sigma.cov
        if seen.size:
            Lss = cholesky(S[np.ix_(seen, seen)])
            tmp = solve_triangular(Lss, S[np.ix_(seen, hidden)], lower=True)
            regress = solve_triangular(Lss, tmp, lower=True, trans="T").T
            cond = S[np.ix_(hidden, hidden)] - tmp.T @ tmp
        else:
            regress = np.zeros((hidden.size, 0))
            cond = S.copy()
        W = cholesky(0.5 * (cond + cond.T))
        sign = np.where(mask, 1.0, -1.0)
        normals = (sign[:, None] * self.model.v[:, hidden]) @ W
        k = hidden.size
        R = self.R_lmc if self.R_lmc is not None else math.sqrt(k) + math.sqrt(2 * math.log(1 / self.delta_R))
        Winv = solve_triangular(W, np.eye(W.shape[0]), lower=True)
        return _Pattern(seen, hidden, regress, W, Winv, np.ascontiguousarray(normals), sign, self.model.v[:, seen].copy(), R,
                        ~np.any(normals != 0, axis=1))

    def conditional(self, pat, x, mu):
        return mu[pat.hidden] + pat.regress @ (x - mu[pat.seen])

    def constraints(self, pat, x):
        shift = self.model.b - pat.v_seen @ x
        return pat.normals, pat.sign * shift - self.tau * (pat.sign < 0)

    def __call__(self, obs, mu, M_grad, rng, z_start=None):
        """One gradient draw ``-Sigma^{-1}(x o y_hidden - mu)``.

        ``z_start`` is an optional feasible value of the hidden block (the
        generating point, when simulating) used to start the chain.
        """
        mu = np.asarray(mu, dtype=float)
        d = mu.shape[0]
        x = np.asarray(obs.values, dtype=float)
        if obs.seen.size == d:
            return -(self.sigma.precision @ (x - mu))
        pat = self.pattern(obs.seen)
        mu_cond = self.conditional(pat, x, mu)
        normals, offsets = self.constraints(pat, x)
        center = pat.Winv @ mu_cond
        if np.any(pat.empty_rows & (offsets < 0)):
            raise EmptyFeasible("a constraint without hidden coordinates is violated")
        R = pat.R
        if self.R_lmc is None:
            # the truncated law sits near the face of K closest to the center
            near, _, ok = _dykstra(center, normals, offsets, center, math.inf, DYKSTRA_TOL, DYKSTRA_SWEEPS)
            R = R + float(np.sqrt(np.sum((near - center) ** 2)))
        start = center if z_start is None else pat.Winv @ np.asarray(z_start, dtype=float)
        z0, _, ok = _dykstra(start, normals, offsets, center, R, DYKSTRA_TOL, DYKSTRA_SWEEPS)
        if not ok or _violation(z0, normals, offsets, center, R) > FEASIBILITY_TOL:
            raise EmptyFeasible("no feasible starting point for the Langevin chain")
        noise = rng.standard_normal((int(M_grad), pat.hidden.size))
        burn = min(self.burn_in, int(M_grad) - 1)
        z, failures, spread = _lmc_chain(
            z0, center, normals, offsets, R, self.eta_lmc, noise, burn, DYKSTRA_TOL, DYKSTRA_SWEEPS
        )
        if failures or spread < 1e-3 * self.eta_lmc:
            warnings.warn(
                f"Langevin chain may not mix (projection failures={failures}, mean squared step={spread:.2e})",
                NonMixingWarning,
                stacklevel=2,
            )
        y = np.empty(d)
        y[pat.seen] = x
        y[pat.hidden] = pat.W @ z
        return -(self.sigma.precision @ (y - mu))

    def hidden_draw(self, obs, mu, M_grad, rng, z_start=None):
        """The completed hidden block ``W z^(M)`` behind one gradient draw."""
        g = self(obs, mu, M_grad, rng, z_start)
        y = mu - self.sigma.cov @ g
        return y[self.pattern(obs.seen).hidden]


def sample_gradient(obs, mu, sigma, model, eta_lmc, R_lmc, M_grad, rng, z_start=None, burn_in=1000):
    """Stochastic gradient of the censored negative log-likelihood at ``mu``.

    Fully observed rows return the exact ``-Sigma^{-1}(x - mu)``. Otherwise a
    projected Langevin chain of ``M_grad`` steps targets the conditional law
    of the hidden block, whitened, restricted to the pattern polytope and a
    ball of radius ``R_lmc`` (``None`` picks the per-pattern default).
    """
    sampler = GradientSampler(_as_params(sigma), model, eta_lmc, R_lmc, burn_in=burn_in)
    return sampler(obs, mu, M_grad, rng, z_start)


def default_r_proj(alpha, beta, sigma):
    """Radius that holds the truth given the initializer's bias bound.

    The bound ``C sqrt((lambda_max / beta) log(1/alpha))`` is Euclidean; it is
    doubled and converted to the Mahalanobis metric. ``alpha`` is capped at
    1/2 so an uncensored stream still gets a nonzero radius.
    """
    a = min(alpha, 0.5)
    bound = INIT_BIAS_C * math.sqrt(sigma.lambda_max / beta * math.log(1.0 / a))
    return 2.0 * bound / math.sqrt(sigma.lambda_min)


def missing_descent(observations, model, sigma, cfg, rng, complete=None):
    """Averaged projected SGD for the mean; returns the full iterate trace.

    Rows ``[0, M_init)`` initialize, rows ``[M_init, M_init + M_sgd)`` feed one
    SGD step each. ``complete`` optionally holds the uncensored rows and is
    only used to start each Langevin chain from the generating point.
    """
    sigma = _as_params(sigma)
    d = sigma.dim
    table = as_table(observations, d)
    need = cfg.M_init + cfg.M_sgd
    if len(table) < need:
        raise InsufficientStream(f"need {need} observations, stream has {len(table)}")
    mu0 = initialize(table, cfg.beta, cfg.M_init)
    alpha = cfg.alpha
    if alpha is None:
        alpha = empirical_alpha_subset(table[: cfg.M_init], cfg.beta).value
    if not alpha > 0:
        raise BlockStarved(-1, range(d))
    lam = cfg.lambda_sgd if cfg.lambda_sgd is not None else alpha * cfg.beta / sigma.lambda_max
    if lam > 1.0 / sigma.lambda_min + 1e-12:
        raise ValueError("lambda_sgd exceeds 1 / lambda_min(Sigma)")
    r_proj = cfg.r_proj if cfg.r_proj is not None else default_r_proj(alpha, cfg.beta, sigma)
    sampler = GradientSampler(sigma, model, cfg.eta_lmc, cfg.R_lmc, cfg.delta_R, cfg.lmc_burn_in)

    T = cfg.M_sgd
    Linv = solve_triangular(sigma.chol, np.eye(d), lower=True)
    iterates = np.empty((T, d))
    etas = np.empty(T)
    gnorms = np.empty(T)
    dists = np.empty(T)
    mu = mu0.copy()
    for i in range(1, T + 1):
        row = cfg.M_init + i - 1
        obs = table[row]
        z_start = None
        if complete is not None and obs.seen.size < d:
            z_start = complete[row, sampler.pattern(obs.seen).hidden]
        M_i = cfg.M_grad if cfg.grad_growth == 0 else int(math.ceil(cfg.M_grad * i**cfg.grad_growth))
        eta = 1.0 / (lam * i)
        g = sampler(obs, mu, M_i, rng, z_start)
        v = mu - eta * g
        dist = float(np.linalg.norm(Linv @ (v - mu0)))
        mu = v if dist <= r_proj else mu0 + (r_proj / dist) * (v - mu0)
        iterates[i - 1] = mu
        etas[i - 1] = eta
        gnorms[i - 1] = float(np.linalg.norm(g))
        dists[i - 1] = float(np.linalg.norm(Linv @ (mu - mu0)))
    return IterateTrace(mu0, iterates, etas, gnorms, dists, iterates.mean(axis=0), lam, r_proj, alpha)


def available_case_mean(observations, d=None):
    """Per-coordinate mean over the rows where the coordinate is seen."""
    table = as_table(observations, d)
    cnt = table.mask.sum(axis=0)
    return np.where(table.mask, table.values, 0.0).sum(axis=0) / np.maximum(cnt, 1)
