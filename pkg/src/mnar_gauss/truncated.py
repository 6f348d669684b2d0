"""Truncated-normal maximum likelihood in one and two dimensions.

The fit runs projected SGD on the truncated negative log-likelihood in the
natural parameters ``nu = Sigma^{-1} mu`` and ``T = Sigma^{-1}``, where the
objective is convex. Each step compares the sufficient statistics
``(u, -u u^T / 2)`` of one data point with those of one rejection sample from
the current model. Everything happens in coordinates whitened by the
empirical mean and covariance of the truncated data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import MassTooLow, NonConvergent
from .gaussian import GaussianParams, cholesky, sample_gaussian

MASS_FLOOR = 1e-4
MAX_ATTEMPTS = 1_000_000


@dataclass(frozen=True, eq=False)
class TruncationSet:
    """Product of per-coordinate interval unions, in one or two dimensions."""

    intervals: tuple

    def __post_init__(self):
        from .missingness import _normalize_intervals

        ivs = tuple(_normalize_intervals(s) for s in self.intervals)
        if not 1 <= len(ivs) <= 2:
            raise ValueError("truncation sets are one- or two-dimensional")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def whole_line(cls, dim=1):
        return cls([[(-math.inf, math.inf)]] * dim)

    @property
    def dim(self):
        return len(self.intervals)

    def contains(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        ok = np.ones(X.shape[0], dtype=bool)
        for j, ivs in enumerate(self.intervals):
            hit = np.zeros(X.shape[0], dtype=bool)
            for lo, hi in ivs:
                hit |= (X[:, j] >= lo) & (X[:, j] <= hi)
            ok &= hit
        return ok

    def shifted(self, c):
        c = np.broadcast_to(np.asarray(c, dtype=float), (self.dim,))
        return TruncationSet([[(lo + cj, hi + cj) for lo, hi in ivs] for ivs, cj in zip(self.intervals, c)])

    def packed(self):
        width = max(len(ivs) for ivs in self.intervals)
        lo = np.full((self.dim, width), np.inf)
        hi = np.full((self.dim, width), -np.inf)
        for j, ivs in enumerate(self.intervals):
            for r, (a, b) in enumerate(ivs):
                lo[j, r], hi[j, r] = a, b
        return lo, hi

    def mass_mc(self, params, n, rng):
        return float(self.contains(sample_gaussian(params, n, rng)).mean())


@dataclass(frozen=True)
class TruncatedFitConfig:
    min_samples: int = 100
    steps: int | None = None  # defaults to the number of samples
    lambda_sc: float | None = None  # defaults to the smallest curvature at the initializer
    max_step: float = 0.1  # step offset keeps the first step at most this large
    c_dom: float = 16.0
    r_dom: float = 8.0
    settle_tol: float = 0.25
    mass_floor: float = MASS_FLOOR
    max_attempts: int = MAX_ATTEMPTS
    average_from: float = 0.5  # iterates before this fraction of the run are left out of the average


@dataclass(frozen=True, eq=False)
class TruncatedEstimate:
    mean: np.ndarray
    cov: np.ndarray
    iterations: int
    final_step: float
    lambda_sc: float
    attempts: int

    @property
    def params(self):
        return GaussianParams(self.mean, self.cov)


def _check_mass(params, tset, rng, mass_floor):
    n = int(math.ceil(100.0 / mass_floor))
    mass = tset.mass_mc(params, n, rng)
    if mass < mass_floor:
        raise MassTooLow(f"set mass {mass:.3g} under current parameters is below floor {mass_floor:g}")
    return mass


def sample_truncated(params, tset, rng, size=None, mass_floor=MASS_FLOOR, max_attempts=MAX_ATTEMPTS):
    """Rejection sample ``N(mean, cov)`` conditioned on ``tset``.

    Returns one vector, or a ``(size, dim)`` array. Raises
    :class:`MassTooLow` if the Monte Carlo mass of the set is below
    ``mass_floor`` or the attempt budget runs out.
    """
    if params.dim != tset.dim:
        raise ValueError("dimension mismatch")
    _check_mass(params, tset, rng, mass_floor)
    want = 1 if size is None else int(size)
    out = []
    got = attempts = 0
    budget = max_attempts * want
    while got < want:
        chunk = min(max(2 * (want - got), 1024), 1_000_000)
        X = sample_gaussian(params, chunk, rng)
        keep = X[tset.contains(X)]
        attempts += chunk
        out.append(keep[: want - got])
        got += min(keep.shape[0], want - got)
        if got < want and attempts >= budget:
            raise MassTooLow(f"only {got} of {want} draws accepted in {attempts} attempts")
    draws = np.concatenate(out, axis=0)
    return draws[0] if size is None else draws


def sufficient_statistics(U):
    """``(u, -u u^T/2)`` in an orthonormal basis of symmetric matrices."""
    U = np.atleast_2d(U)
    k = U.shape[1]
    cols = [U, -0.5 * U**2]
    if k == 2:
        cols.append((-U[:, 0] * U[:, 1] / math.sqrt(2.0))[:, None])
    return np.column_stack(cols)


def stochastic_gradient(params, tset, x_data, rng):
    """Stochastic gradient of the truncated NLL at ``params``.

    ``x_data`` is one sample, shape ``(k,)``, or a batch, shape ``(m, k)``;
    each row is paired with a fresh draw from the current truncated model.
    Returns ``(g_nu, g_T)`` in the original coordinates, batched like
    ``x_data``. The expectation vanishes when ``params`` are the truncated
    model's true parameters.
    """
    X = np.asarray(x_data, dtype=float)
    single = X.ndim <= 1
    X = X.reshape(-1, tset.dim)
    Z = sample_truncated(params, tset, rng, size=X.shape[0])
    g_nu = Z - X
    g_T = -0.5 * np.einsum("ni,nj->nij", Z, Z) + 0.5 * np.einsum("ni,nj->nij", X, X)
    if single:
        return g_nu[0], g_T[0]
    return g_nu, g_T


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _inside(x, lo, hi):
    for j in range(x.shape[0]):
        hit = False
        for r in range(lo.shape[1]):
            if lo[j, r] <= x[j] <= hi[j, r]:
                hit = True
                break
        if not hit:
            return False
    return True


@numba.njit(cache=True)
def _clip_eigs(T, lo, hi):
    k = T.shape[0]
    if k == 1:
        T[0, 0] = min(max(T[0, 0], lo), hi)
        return
    a, b, c = T[0, 0], T[0, 1], T[1, 1]
    half_tr = 0.5 * (a + c)
    disc = math.sqrt(0.25 * (a - c) ** 2 + b * b)
    l1, l2 = half_tr + disc, half_tr - disc
    m1, m2 = min(max(l1, lo), hi), min(max(l2, lo), hi)
    if m1 == l1 and m2 == l2:
        return
    if disc < 1e-300:
        T[0, 0] = m1
        T[1, 1] = m1
        T[0, 1] = 0.0
        T[1, 0] = 0.0
        return
    # eigenvector of l1
    if abs(b) > 1e-300:
        v0, v1 = l1 - c, b
    elif a >= c:
        v0, v1 = 1.0, 0.0
    else:
        v0, v1 = 0.0, 1.0
    nrm = math.sqrt(v0 * v0 + v1 * v1)
    v0 /= nrm
    v1 /= nrm
    T[0, 0] = m1 * v0 * v0 + m2 * v1 * v1
    T[1, 1] = m1 * v1 * v1 + m2 * v0 * v0
    off = (m1 - m2) * v0 * v1
    T[0, 1] = off
    T[1, 0] = off


@numba.njit(cache=True, nogil=True)
def _sgd_kernel(U, order, m, L, lo, hi, lam, t0, c_dom, r_dom, max_attempts, seed, avg_start):
    k = U.shape[1]
    nu = np.zeros(k)
    T = np.eye(k)
    nu_avg = np.zeros(k)
    T_avg = np.zeros((k, k))
    nu_90 = np.zeros(k)
    T_90 = np.zeros((k, k))
    steps = order.shape[0]
    mark = max(int(0.9 * steps), avg_start + 1)
    u_m = np.zeros(k)
    x = np.zeros(k)
    S = np.zeros((k, k))
    C = np.zeros((k, k))
    mu = np.zeros(k)
    total = 0
    eta = 0.0
    _seed(seed)
    for t in range(1, steps + 1):
        # current model: Sigma = T^{-1}, mu = Sigma nu
        if k == 1:
            S[0, 0] = 1.0 / T[0, 0]
            C[0, 0] = math.sqrt(S[0, 0])
            mu[0] = S[0, 0] * nu[0]
        else:
            det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
            S[0, 0] = T[1, 1] / det
            S[1, 1] = T[0, 0] / det
            S[0, 1] = -T[0, 1] / det
            S[1, 0] = S[0, 1]
            C[0, 0] = math.sqrt(S[0, 0])
            C[1, 0] = S[1, 0] / C[0, 0]
            C[1, 1] = math.sqrt(max(S[1, 1] - C[1, 0] ** 2, 0.0))
            C[0, 1] = 0.0
            mu[0] = S[0, 0] * nu[0] + S[0, 1] * nu[1]
            mu[1] = S[1, 0] * nu[0] + S[1, 1] * nu[1]
        accepted = False
        for _ in range(max_attempts):
            total += 1
            for a in range(k):
                u_m[a] = mu[a]
            for a in range(k):
                z = np.random.standard_normal()
                for b in range(a, k):
                    u_m[b] += C[b, a] * z
            for a in range(k):
                acc = m[a]
                for b in range(k):
                    acc += L[a, b] * u_m[b]
                x[a] = acc
            if _inside(x, lo, hi):
                accepted = True
                break
        if not accepted:
            return nu_avg, T_avg, nu_90, T_90, t, total, eta, False
        u_d = U[order[t - 1]]
        eta = 1.0 / (lam * (t + t0))
        for a in range(k):
            nu[a] -= eta * (u_m[a] - u_d[a])
            for b in range(k):
                T[a, b] -= eta * (0.5 * u_d[a] * u_d[b] - 0.5 * u_m[a] * u_m[b])
        nrm = 0.0
        for a in range(k):
            nrm += nu[a] * nu[a]
        nrm = math.sqrt(nrm)
        if nrm > r_dom:
            for a in range(k):
                nu[a] *= r_dom / nrm
        _clip_eigs(T, 1.0 / c_dom, c_dom)
        if t <= avg_start:
            continue
        w = 1.0 / (t - avg_start)
        for a in range(k):
            nu_avg[a] += w * (nu[a] - nu_avg[a])
            for b in range(k):
                T_avg[a, b] += w * (T[a, b] - T_avg[a, b])
        if t == mark:
            nu_90[:] = nu_avg
            T_90[:, :] = T_avg
    return nu_avg, T_avg, nu_90, T_90, steps, total, eta, True


def _natural_to_standard(nu, T):
    cov = np.linalg.inv(T)
    cov = 0.5 * (cov + cov.T)
    return cov @ nu, cov


def truncated_fit(samples, tset, rng, cfg=None):
    """Fit ``N(mean, cov)`` to samples observed only inside ``tset``.

    Parameters
    ----------
    samples : array_like, shape (n,) or (n, k)
        Draws from the truncated distribution, ``k = tset.dim``.
    tset : TruncationSet
    rng : numpy.random.Generator
    cfg : TruncatedFitConfig, optional

    Returns
    -------
    TruncatedEstimate
        Mean and covariance in standard parameterization, recovered from the
        Polyak average of the natural-parameter iterates.
    """
    cfg = cfg or TruncatedFitConfig()
    X = np.asarray(samples, dtype=float).reshape(-1, tset.dim)
    n, k = X.shape
    if n < cfg.min_samples:
        raise ValueError(f"{n} samples is fewer than min_samples={cfg.min_samples}")
    if not tset.contains(X).all():
        raise ValueError("samples must lie inside the truncation set")
    m = X.mean(axis=0)
    C = np.cov(X, rowvar=False).reshape(k, k)
    L = cholesky(C)
    U = np.linalg.solve(L, (X - m).T).T
    init = GaussianParams(m, C)
    _check_mass(init, tset, rng, cfg.mass_floor)
    if cfg.lambda_sc is None:
        lam = float(np.linalg.eigvalsh(np.cov(sufficient_statistics(U), rowvar=False))[0])
    else:
        lam = float(cfg.lambda_sc)
    t0 = max(0.0, 1.0 / (lam * cfg.max_step) - 1.0)
    steps = n if cfg.steps is None else int(cfg.steps)
    reps = -(-steps // n)
    order = np.concatenate([rng.permutation(n) for _ in range(reps)])[:steps].astype(np.int64)
    lo, hi = tset.packed()
    seed = int(rng.integers(2**31 - 1))
    nu, T, nu90, T90, done, attempts, eta, ok = _sgd_kernel(
        np.ascontiguousarray(U), order, m, np.ascontiguousarray(L), lo, hi,
        lam, t0, cfg.c_dom, cfg.r_dom, int(cfg.max_attempts), seed, int(cfg.average_from * steps),
    )
    if not ok:
        raise MassTooLow(f"rejection sampler exhausted {cfg.max_attempts} attempts at step {done}")
    movement = math.sqrt(float(np.sum((nu - nu90) ** 2) + np.sum((T - T90) ** 2)))
    if steps >= 10 and movement > cfg.settle_tol:
        raise NonConvergent(f"averaged iterate moved {movement:.3g} over the final 10% of steps")
    mu_u, cov_u = _natural_to_standard(nu, T)
    mean = m + L @ mu_u
    cov = L @ cov_u @ L.T
    cov = 0.5 * (cov + cov.T)
    return TruncatedEstimate(mean, cov, steps, eta, lam, int(attempts))
