"""Known missing-not-at-random mechanisms and assumption auditors.

Two mechanisms are supported. Under self-censoring coordinate ``i`` is seen
iff ``y_i`` lies in a fixed union of closed intervals ``S_i``. Under linear
thresholding coordinate ``i`` is seen iff ``v_i . y <= b_i`` (ties count as
seen).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnchorViolated, InvalidBeta
from .gaussian import MonteCarloValue, sample_gaussian
from .io import dumps_exact, parse_float

#: slack used when a strict face ``v.y > b`` is closed for projection
TAU_STRICT = 1e-9
#: subset audits enumerate exhaustively up to this many subsets
EXHAUSTIVE_SUBSETS = 10_000
SAMPLED_SUBSETS = 1_000


@dataclass(frozen=True, eq=False)
class Observation:
    """Seen coordinates (strictly increasing) and their values."""

    seen: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        seen = np.array(self.seen, dtype=int).reshape(-1)
        values = np.array(self.values, dtype=float).reshape(-1)
        if seen.shape != values.shape:
            raise ValueError("seen and values must have equal length")
        if seen.size > 1 and np.any(np.diff(seen) <= 0):
            raise ValueError("seen must be strictly increasing")
        seen.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "seen", seen)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return np.array_equal(self.seen, other.seen) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.seen.tobytes(), self.values.tobytes()))

    def __repr__(self):
        return f"Observation(seen={self.seen.tolist()}, values={self.values.tolist()})"


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Columnar view of many observations: boolean mask plus NaN-padded values."""

    mask: np.ndarray
    values: np.ndarray

    @classmethod
    def from_observations(cls, observations, d=None):
        observations = list(observations)
        if d is None:
            d = 1 + max((int(o.seen[-1]) for o in observations if o.seen.size), default=-1)
        mask = np.zeros((len(observations), d), dtype=bool)
        vals = np.full((len(observations), d), np.nan)
        for r, o in enumerate(observations):
            mask[r, o.seen] = True
            vals[r, o.seen] = o.values
        return cls(mask, vals)

    @classmethod
    def from_complete(cls, Y, mask):
        vals = np.where(mask, Y, np.nan)
        return cls(np.asarray(mask, dtype=bool), vals)

    @property
    def dim(self):
        return self.mask.shape[1]

    def __len__(self):
        return self.mask.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ObservationTable(self.mask[idx], self.values[idx])
        seen = np.flatnonzero(self.mask[idx])
        return Observation(seen, self.values[idx, seen])

    def __iter__(self):
        for r in range(len(self)):
            yield self[r]

    def to_observations(self):
        return list(self)


def as_table(observations, d=None):
    if isinstance(observations, ObservationTable):
        return observations
    return ObservationTable.from_observations(observations, d)


def _normalize_intervals(intervals):
    out = []
    for pair in intervals:
        lo, hi = (parse_float(v) if isinstance(v, str) else float(v) for v in pair)
        if math.isnan(lo) or math.isnan(hi) or lo > hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
        out.append((lo, hi))
    for (lo0, hi0), (lo1, hi1) in zip(out, out[1:]):
        if not hi0 < lo1:
            raise ValueError("intervals must be sorted and disjoint")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class SelfCensoringModel:
    """Coordinate ``i`` is seen iff ``y_i`` is in ``sets[i]``."""

    sets: tuple
    kind: str = field(default="self_censoring", init=False)

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(_normalize_intervals(s) for s in self.sets))

    @classmethod
    def uncensored(cls, d):
        return cls([[(-math.inf, math.inf)]] * d)

    @property
    def dim(self):
        return len(self.sets)

    def coordinate_mask(self, i, values):
        values = np.asarray(values, dtype=float)
        hit = np.zeros(values.shape, dtype=bool)
        for lo, hi in self.sets[i]:
            hit |= (values >= lo) & (values <= hi)
        return hit

    def seen_mask(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.column_stack([self.coordinate_mask(i, Y[:, i]) for i in range(self.dim)])

    def to_dict(self):
        return {"kind": self.kind, "sets": [[list(iv) for iv in s] for s in self.sets]}


@dataclass(frozen=True, eq=False)
class LinearThresholdModel:
    """Coordinate ``i`` is seen iff ``v[i] @ y <= b[i]``."""

    v: np.ndarray
    b: np.ndarray
    kind: str = field(default="linear_threshold", init=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or b.shape[0] != v.shape[0]:
            raise ValueError(f"v must be d x d and b length d, got {v.shape} and {b.shape}")
        v.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.b.shape[0]

    def seen_mask(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return Y @ self.v.T <= self.b

    def to_dict(self):
        return {"kind": self.kind, "v": self.v.tolist(), "b": self.b.tolist()}


def model_to_json(model):
    return dumps_exact(model.to_dict())


def model_from_dict(doc):
    kind = doc.get("kind")
    if kind == "self_censoring":
        return SelfCensoringModel(doc["sets"])
    if kind == "linear_threshold":
        v = [[parse_float(x) for x in row] for row in doc["v"]]
        return LinearThresholdModel(v, [parse_float(x) for x in doc["b"]])
    raise ValueError(f"unknown missingness kind {kind!r}")


def model_from_json(text):
    return model_from_dict(json.loads(text))


def apply_missingness(model, y):
    """The observation ``(S(y), y[S(y)])`` produced by one complete vector."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != model.dim:
        raise ValueError("dimension mismatch")
    seen = np.flatnonzero(model.seen_mask(y[None, :])[0])
    return Observation(seen, y[seen])


def simulate(params, model, n, rng):
    """Draw ``n`` complete rows and censor them; returns ``(table, Y)``."""
    Y = sample_gaussian(params, n, rng)
    return ObservationTable.from_complete(Y, model.seen_mask(Y)), Y


def generate_observations(params, model, n, rng):
    table, _ = simulate(params, model, n, rng)
    return table.to_observations()


def _binomial_se(p, n):
    return float(math.sqrt(max(p * (1.0 - p), 0.0) / n))


def audit_alpha_pair(params, model, mc, rng):
    """Smallest probability that a pair of coordinates is seen together."""
    if not isinstance(model, SelfCensoringModel):
        raise TypeError("pairwise audit applies to self-censoring models")
    mask = model.seen_mask(sample_gaussian(params, mc, rng)).astype(float)
    joint = (mask.T @ mask) / mc
    d = params.dim
    if d == 1:
        p = float(joint[0, 0])
    else:
        iu = np.triu_indices(d, k=1)
        p = float(joint[iu].min())
    return MonteCarloValue(p, _binomial_se(p, mc))


def subset_size(beta, d):
    k = beta * d
    if not (abs(k - round(k)) < 1e-9 and 1 <= round(k) <= d):
        raise InvalidBeta(f"beta * d = {k:g} is not a positive integer at most d = {d}")
    return int(round(k))


@dataclass(frozen=True)
class SubsetAudit:
    value: float
    stderr: float
    subsets_checked: int
    exhaustive: bool
    worst_subset: tuple


def audit_alpha_subset(params, model, beta, mc, rng):
    """Smallest probability that every coordinate of a ``beta*d`` subset is seen.

    Enumerates all subsets when there are at most 10^4 of them, otherwise
    samples 10^3 uniformly.
    """
    d = params.dim
    k = subset_size(beta, d)
    mask = model.seen_mask(sample_gaussian(params, mc, rng))
    total = math.comb(d, k)
    if total <= EXHAUSTIVE_SUBSETS:
        subsets = itertools.combinations(range(d), k)
        exhaustive = True
    else:
        subsets = (tuple(sorted(rng.choice(d, size=k, replace=False))) for _ in range(SAMPLED_SUBSETS))
        exhaustive = False
    best, worst = math.inf, ()
    checked = 0
    for sub in subsets:
        checked += 1
        p = float(mask[:, list(sub)].all(axis=1).mean())
        if p < best:
            best, worst = p, tuple(sub)
    return SubsetAudit(best, _binomial_se(best, mc), checked, exhaustive, worst)


@dataclass(frozen=True)
class AnchorAudit:
    gamma: float
    stderr: float
    bin_width: float
    cells: int
    skipped_fraction: float


def audit_anchoring(params, model, anchor, mc, rng, bin_width=None, min_count=50):
    """Binned estimate of the anchoring constant of ``anchor``.

    Every draw must show all anchor coordinates, otherwise
    :class:`AnchorViolated`. Anchor values are binned into hypercubes of side
    ``bin_width`` (default ``0.25 * sqrt(lambda_max)``); within each bin
    holding at least ``min_count`` draws the relative frequency of every
    observed pattern is computed, and the smallest of these is returned.
    This approximates exact conditioning on the anchor values.
    """
    if not isinstance(model, LinearThresholdModel):
        raise TypeError("anchoring audit applies to linear-threshold models")
    anchor = np.asarray(sorted(anchor), dtype=int)
    Y = sample_gaussian(params, mc, rng)
    mask = model.seen_mask(Y)
    bad = int((~mask[:, anchor]).any(axis=1).sum()) if anchor.size else 0
    if bad:
        raise AnchorViolated(bad, mc)
    if bin_width is None:
        bin_width = 0.25 * math.sqrt(params.lambda_max)
    if anchor.size:
        cell = np.floor(Y[:, anchor] / bin_width).astype(np.int64)
    else:
        cell = np.zeros((mc, 0), dtype=np.int64)
    packed = np.packbits(mask, axis=1)
    keys = np.concatenate([cell.view(np.uint8).reshape(mc, -1), packed], axis=1)
    cell_keys = cell.view(np.uint8).reshape(mc, -1)
    _, cell_id, cell_count = np.unique(cell_keys, axis=0, return_inverse=True, return_counts=True)
    _, pat_id, pat_count = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    cell_id = cell_id.reshape(-1)
    pat_id = pat_id.reshape(-1)
    # cell of each (cell, pattern) group
    first = np.zeros(pat_count.shape[0], dtype=np.int64)
    first[pat_id] = np.arange(mc)
    owner = cell_id[first]
    n_cell = cell_count[owner]
    keep = n_cell >= min_count
    if not keep.any():
        return AnchorAudit(float("nan"), float("nan"), bin_width, 0, 1.0)
    freqs = pat_count[keep] / n_cell[keep]
    j = int(np.argmin(freqs))
    gamma = float(freqs[j])
    used_cells = np.unique(owner[keep])
    skipped = 1.0 - cell_count[used_cells].sum() / mc
    return AnchorAudit(gamma, _binomial_se(gamma, int(n_cell[keep][j])), bin_width, int(used_cells.size), float(skipped))


@dataclass
class AssumptionReport:
    alpha_pair_min: float | None = None
    alpha_subset_min: float | None = None
    beta: float | None = None
    gamma_min: float | None = None
    mc_samples: int = 0
    std_errors: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "alpha_pair_min": self.alpha_pair_min,
            "alpha_subset_min": self.alpha_subset_min,
            "beta": self.beta,
            "gamma_min": self.gamma_min,
            "mc_samples": self.mc_samples,
            "std_errors": dict(self.std_errors),
            "details": dict(self.details),
        }


def audit_assumptions(params, model, mc, rng, beta=None, anchor=None, bin_width=None):
    """Run every auditor that applies to ``model`` and collect the results."""
    rep = AssumptionReport(mc_samples=mc, beta=beta)
    if isinstance(model, SelfCensoringModel):
        a = audit_alpha_pair(params, model, mc, rng)
        rep.alpha_pair_min = a.value
        rep.std_errors["alpha_pair_min"] = a.stderr
    if beta is not None:
        s = audit_alpha_subset(params, model, beta, mc, rng)
        rep.alpha_subset_min = s.value
        rep.std_errors["alpha_subset_min"] = s.stderr
        rep.details["subsets_checked"] = s.subsets_checked
        rep.details["subsets_exhaustive"] = s.exhaustive
        rep.details["worst_subset"] = list(s.worst_subset)
    if anchor is not None and isinstance(model, LinearThresholdModel):
        g = audit_anchoring(params, model, anchor, mc, rng, bin_width=bin_width)
        rep.gamma_min = g.gamma
        rep.std_errors["gamma_min"] = g.stderr
        rep.details["gamma_bin_width"] = g.bin_width
        rep.details["gamma_cells"] = g.cells
        rep.details["gamma_skipped_fraction"] = g.skipped_fraction
        rep.details["gamma_method"] = "binned Monte Carlo approximation"
    return rep


@dataclass(frozen=True, eq=False)
class PatternPolytope:
    """Completions ``z`` of the hidden block consistent with an observation.

    ``le_normals @ z <= le_offsets`` for the seen rows and
    ``gt_normals @ z > gt_offsets`` for the hidden rows.
    """

    seen: np.ndarray
    hidden: np.ndarray
    le_normals: np.ndarray
    le_offsets: np.ndarray
    gt_normals: np.ndarray
    gt_offsets: np.ndarray

    @property
    def dim(self):
        return self.hidden.shape[0]

    def contains(self, z, tau=0.0):
        """Membership; ``tau`` relaxes the strict faces by that much."""
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.dim:
            raise ValueError("dimension mismatch")
        ok_le = np.all(self.le_normals @ z <= self.le_offsets + tau)
        ok_gt = np.all(self.gt_normals @ z > self.gt_offsets - tau)
        return bool(ok_le and ok_gt)

    def halfspaces(self, tau=TAU_STRICT):
        """Closed relaxation as ``(normals, offsets)`` with ``normals @ z <= offsets``.

        Strict faces are shifted inward by ``tau``.
        """
        normals = np.vstack([self.le_normals, -self.gt_normals])
        offsets = np.concatenate([self.le_offsets, -(self.gt_offsets + tau)])
        return normals, offsets

    def project(self, point, center=None, radius=math.inf, tau=TAU_STRICT):
        from .linear_threshold import project_onto_L

        normals, offsets = self.halfspaces(tau)
        if center is None:
            center = np.zeros(self.dim)
        return project_onto_L(point, (normals, offsets), center, radius)


def membership_polytope(model, obs):
    if not isinstance(model, LinearThresholdModel):
        raise TypeError("pattern polytopes are defined for linear-threshold models")
    d = model.dim
    seen = np.asarray(obs.seen, dtype=int)
    x = np.asarray(obs.values, dtype=float)
    mask = np.zeros(d, dtype=bool)
    mask[seen] = True
    hidden = np.flatnonzero(~mask)
    V_h = model.v[:, hidden]
    shift = model.b - model.v[:, seen] @ x
    return PatternPolytope(seen, hidden, V_h[seen], shift[seen], V_h[hidden], shift[hidden])


def empirical_alpha_subset(observations, beta, d=None):
    """Data-side version of :func:`audit_alpha_subset`.

    The probability that a subset is seen is directly observable from the
    censoring patterns, so no ground truth is needed.
    """
    table = as_table(observations, d)
    d = table.dim
    k = subset_size(beta, d)
    mask = table.mask
    n = mask.shape[0]
    best = math.inf
    if math.comb(d, k) <= EXHAUSTIVE_SUBSETS:
        subsets = itertools.combinations(range(d), k)
    else:
        rng = np.random.default_rng(0)
        subsets = (tuple(rng.choice(d, size=k, replace=False)) for _ in range(SAMPLED_SUBSETS))
    for sub in subsets:
        best = min(best, float(mask[:, list(sub)].all(axis=1).mean()))
    return MonteCarloValue(best, _binomial_se(best, n))
