"""Deterministic quadrature for the censored negative log-likelihood, d <= 2.

For a candidate mean ``mu`` (covariance known) the population objective is

    l(mu) = -E_{(A, x) ~ truth} log f_mu(A, x),
    f_mu(A, x) = phi_mu(x on A) * P_mu(hidden block lands in K(A, x) | x),

and its gradient and Hessian are
``-E[Sigma^{-1}(E_mu[y | A, x] - mu)]`` and
``E[Sigma^{-1} - Sigma^{-1} Cov_mu(y | A, x) Sigma^{-1}]``.

In two dimensions one coordinate is integrated numerically (composite
Gauss-Legendre with panel edges at every constraint-line crossing) and the
other in closed form through truncated-normal moments. Nodes depend only on
the model, the truth and the grid, so finite differences see a smooth
function.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .errors import GridTooCoarse
from .gaussian import GaussianParams
from .missingness import LinearThresholdModel

MIN_POINTS = 400
MASS_TOL = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class QuadratureGrid:
    points: int = 800  # outer nodes
    width: float = 10.0  # half-range in marginal standard deviations
    order: int = 8  # Gauss-Legendre nodes per panel

    def __post_init__(self):
        if self.points < MIN_POINTS:
            raise GridTooCoarse(f"need at least {MIN_POINTS} nodes per dimension, got {self.points}")


@dataclass(frozen=True)
class LikelihoodValue:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    mass: float  # truth mass covered by the grid


def _log_phi(t):
    return -0.5 * t * t - _LOG_SQRT_2PI


def _log_interval_mass(a, b):
    """``log(Phi(b) - Phi(a))`` without cancellation in either tail."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = np.full(a.shape, -np.inf)
    ok = b > a
    flip = ok & (a > 0)
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lb = log_ndtr(hi)
        la = log_ndtr(lo)
        out[ok] = (lb + np.log1p(-np.exp(la - lb)))[ok]
    return out


def truncated_moments(m, s, lo, hi):
    """``(log Z, mean, var)`` of ``N(m, s^2)`` restricted to ``[lo, hi]``."""
    a = (lo - m) / s
    b = (hi - m) / s
    logZ = _log_interval_mass(a, b)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ra = np.where(np.isfinite(a), np.exp(_log_phi(np.where(np.isfinite(a), a, 0.0)) - logZ), 0.0)
        rb = np.where(np.isfinite(b), np.exp(_log_phi(np.where(np.isfinite(b), b, 0.0)) - logZ), 0.0)
        aa = np.where(np.isfinite(a), a, 0.0) * ra
        bb = np.where(np.isfinite(b), b, 0.0) * rb
    empty = ~np.isfinite(logZ)
    ra, rb, aa, bb = (np.where(empty, 0.0, t) for t in (ra, rb, aa, bb))
    mean = m + s * (ra - rb)
    var = s * s * np.maximum(1.0 + aa - bb - (ra - rb) ** 2, 0.0)
    return logZ, mean, var


def _interval(normals, offsets, inner, outer, x):
    """Range of the inner coordinate allowed by ``normals @ y <= offsets`` at outer value ``x``."""
    lo = np.full(x.shape, -np.inf)
    hi = np.full(x.shape, np.inf)
    for n, c in zip(normals, offsets):
        rhs = c - n[outer] * x
        if n[inner] > 0:
            hi = np.minimum(hi, rhs / n[inner])
        elif n[inner] < 0:
            lo = np.maximum(lo, rhs / n[inner])
        else:
            hi = np.where(rhs >= 0, hi, -np.inf)
    return lo, hi


def _breakpoints(model, outer):
    """Outer-coordinate values where the inner interval's formula changes."""
    v, b = model.v, model.b
    inner = 1 - outer
    pts = []
    for i in range(v.shape[0]):
        if v[i, inner] == 0 and v[i, outer] != 0:
            pts.append(b[i] / v[i, outer])
    for i, j in itertools.combinations(range(v.shape[0]), 2):
        det = v[i, 0] * v[j, 1] - v[i, 1] * v[j, 0]
        if abs(det) > 1e-14:
            y = np.linalg.solve(v[[i, j]], b[[i, j]])
            pts.append(y[outer])
    return np.array(pts)


def _nodes(lo, hi, breaks, grid):
    edges = np.unique(np.concatenate([[lo, hi], breaks[(breaks > lo) & (breaks < hi)]]))
    lengths = np.diff(edges)
    panels = np.maximum(1, np.round(lengths / lengths.sum() * grid.points / grid.order)).astype(int)
    gx, gw = np.polynomial.legendre.leggauss(grid.order)
    xs, ws = [], []
    for a, b, k in zip(edges[:-1], edges[1:], panels):
        e = np.linspace(a, b, k + 1)
        half = 0.5 * np.diff(e)[:, None]
        mid = 0.5 * (e[:-1] + e[1:])[:, None]
        xs.append((mid + half * gx).ravel())
        ws.append((half * gw).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def _pattern_constraints(model, seen_mask):
    sign = np.where(seen_mask, 1.0, -1.0)
    return sign[:, None] * model.v, sign * model.b


@dataclass(frozen=True, eq=False)
class LikelihoodOracle:
    """Quadrature evaluator of ``l``, its gradient and Hessian (test oracle)."""

    model: LinearThresholdModel
    sigma: np.ndarray
    truth: GaussianParams
    grid: QuadratureGrid = QuadratureGrid()

    def __post_init__(self):
        sigma = self.sigma.cov if isinstance(self.sigma, GaussianParams) else np.asarray(self.sigma, float)
        object.__setattr__(self, "sigma", sigma)
        d = self.model.dim
        if d > 2:
            raise ValueError("quadrature oracle supports d <= 2")
        if sigma.shape != (d, d) or self.truth.dim != d:
            raise ValueError("dimension mismatch")

    def _range(self, mu, coord):
        sd = math.sqrt(self.sigma[coord, coord])
        lo = min(self.truth.mean[coord], mu[coord]) - self.grid.width * sd
        hi = max(self.truth.mean[coord], mu[coord]) + self.grid.width * sd
        return lo, hi

    def evaluate(self, mu):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        d = self.model.dim
        P = np.linalg.inv(self.sigma)
        logdet = np.linalg.slogdet(2 * math.pi * self.sigma)[1]
        value, grad, hess, mass = 0.0, np.zeros(d), np.zeros((d, d)), 0.0
        for bits in itertools.product([False, True], repeat=d):
            seen = np.array(bits)
            N, c = _pattern_constraints(self.model, seen)
            if seen.all():
                M0, M1, M2 = self._region_moments(self.truth.mean, N, c, mu)
                Q = M2 - np.outer(M1, mu) - np.outer(mu, M1) + M0 * np.outer(mu, mu)
                value += 0.5 * float(np.sum(P * Q)) + 0.5 * logdet * M0
                grad += -P @ (M1 - M0 * mu)
                hess += M0 * P
            elif not seen.any():
                W0 = self._region_moments(self.truth.mean, N, c, mu)[0]
                if W0 == 0:
                    continue
                Z, M1, M2 = self._region_moments(mu, N, c, mu)
                E = M1 / Z
                C = M2 / Z - np.outer(E, E)
                value += -W0 * math.log(Z)
                grad += -W0 * (P @ (E - mu))
                hess += W0 * (P - P @ C @ P)
            else:
                W0, v, g, h = self._partial(mu, seen, N, c, P)
                value += v
                grad += g
                hess += h
            mass += W0 if not seen.all() else M0
        if abs(1.0 - mass) > MASS_TOL:
            raise GridTooCoarse(f"quadrature covers {mass:.9f} of the probability mass")
        return LikelihoodValue(float(value), grad, 0.5 * (hess + hess.T), float(mass))

    def _region_moments(self, m, N, c, mu):
        """Unnormalized 0th/1st/2nd moments of ``N(m, Sigma)`` on ``{N y <= c}``."""
        S = self.sigma
        d = m.shape[0]
        if d == 1:
            lo, hi = self._interval_1d(N, c)
            logZ, mean, var = truncated_moments(m[0], math.sqrt(S[0, 0]), lo, hi)
            Z = float(np.exp(logZ))
            return Z, np.array([Z * float(mean)]), np.array([[Z * float(var + mean**2)]])
        x, w = _nodes(*self._range(mu, 0), _breakpoints(self.model, 0), self.grid)
        s0 = math.sqrt(S[0, 0])
        slope = S[1, 0] / S[0, 0]
        s1 = math.sqrt(S[1, 1] - slope * S[1, 0])
        lo, hi = _interval(N, c, 1, 0, x)
        logZ, mean, var = truncated_moments(m[1] + slope * (x - m[0]), s1, lo, hi)
        wt = w * np.exp(_log_phi((x - m[0]) / s0) + logZ) / s0
        M0 = wt.sum()
        M1 = np.array([wt @ x, wt @ mean])
        M2 = np.array([[wt @ (x * x), wt @ (x * mean)], [wt @ (x * mean), wt @ (var + mean * mean)]])
        return float(M0), M1, M2

    def _interval_1d(self, N, c):
        lo, hi = -math.inf, math.inf
        for n, cc in zip(N[:, 0], c):
            if n > 0:
                hi = min(hi, cc / n)
            elif n < 0:
                lo = max(lo, cc / n)
            elif cc < 0:
                return 0.0, 0.0
        return lo, hi

    def _partial(self, mu, seen, N, c, P):
        """One coordinate seen (outer, integrated numerically), the other hidden."""
        o = int(np.flatnonzero(seen)[0])
        q = 1 - o
        S = self.sigma
        x, w = _nodes(*self._range(mu, o), _breakpoints(self.model, o), self.grid)
        so = math.sqrt(S[o, o])
        slope = S[q, o] / S[o, o]
        sq = math.sqrt(S[q, q] - slope * S[q, o])
        lo, hi = _interval(N, c, q, o, x)
        ms = self.truth.mean
        logZs, _, _ = truncated_moments(ms[q] + slope * (x - ms[o]), sq, lo, hi)
        wt = w * np.exp(_log_phi((x - ms[o]) / so) + logZs) / so
        live = wt > 0
        x, wt, lo, hi = x[live], wt[live], lo[live], hi[live]
        logZ, mean, var = truncated_moments(mu[q] + slope * (x - mu[o]), sq, lo, hi)
        logf = _log_phi((x - mu[o]) / so) - math.log(so) + logZ
        value = -float(wt @ logf)
        Y = np.empty((x.size, 2))
        Y[:, o] = x
        Y[:, q] = mean
        grad = -P @ (wt @ (Y - mu))
        pq = P[:, q]
        hess = wt.sum() * P - (wt @ var) * np.outer(pq, pq)
        return float(wt.sum()), value, grad, hess


def likelihood_oracle_eval(mu, model, sigma, truth, grid=None):
    """``(l(mu), grad l(mu), hess l(mu))`` by quadrature; ``d <= 2`` only."""
    res = LikelihoodOracle(model, sigma, truth, grid or QuadratureGrid()).evaluate(mu)
    return res.value, res.grad, res.hess
