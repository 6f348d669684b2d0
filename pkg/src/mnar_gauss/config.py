"""Experiment configuration: JSON schema, validation and digests."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InvalidBeta, NotPositiveDefinite, SchemaError
from .gaussian import GaussianParams
from .io import parse_float
from .linear_threshold import DescentConfig
from .missingness import model_from_dict, subset_size
from .self_censoring import SelfCensoringConfig
from .truncated import TruncatedFitConfig

SCHEMA_VERSION = 1

_number = {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_count = {"type": "integer", "minimum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}

_truncated = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "min_samples": _count,
        "steps": _count,
        "lambda_sc": _pos,
        "max_step": _pos,
        "c_dom": _pos,
        "r_dom": _pos,
        "settle_tol": _pos,
        "mass_floor": _pos,
        "max_attempts": _count,
    },
}

_self_censoring_est = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "min_samples": _count,
        "psd_repair": {"type": "boolean"},
        "epsilon": _pos,
        "workers": _count,
        "truncated": _truncated,
    },
}

_descent_est = {
    "type": "object",
    "additionalProperties": False,
    "required": ["beta"],
    "properties": {
        "beta": _pos,
        "M_init": _count,
        "M_sgd": _count,
        "M_grad": _count,
        "lmc_burn_in": {"type": "integer", "minimum": 0},
        "eta_lmc": _pos,
        "R_lmc": _pos,
        "delta_R": _pos,
        "lambda_sgd": _pos,
        "r_proj": _pos,
        "alpha": _pos,
        "grad_growth": {"type": "number", "minimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "scenario", "dimension", "truth", "model", "n", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "scenario": {"enum": ["self_censoring", "linear_threshold"]},
        "dimension": _count,
        "truth": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mean", "cov"],
            "properties": {"mean": _vector, "cov": _matrix},
        },
        "model": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["self_censoring", "linear_threshold"]}},
        },
        "n": _count,
        "seed": {"type": "integer", "minimum": 0},
        "estimator": {"type": "object"},
        "audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mc": _count,
                "beta": _pos,
                "anchor": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "bin_width": _pos,
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tv_samples": {"type": "integer", "minimum": 0}},
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"observations": {"type": "string"}, "hidden": {"type": "string"}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
        "acceptance": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}

#: keys that vary across the replicas of one sweep
SWEEP_KEYS = ("n", "seed", "data", "output", "name")


def canonical_digest(doc):
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _build(cls, doc, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise SchemaError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**doc, **extra)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    base_dir: Path
    scenario: str
    truth: GaussianParams
    model: object
    n: int
    seed: int
    estimator: object
    audit: dict
    acceptance: dict
    tv_samples: int

    @property
    def dim(self):
        return self.truth.dim

    @property
    def digest(self):
        return canonical_digest(self.raw)

    @property
    def family_digest(self):
        """Digest with the sweep axes removed; replicas of one sweep share it."""
        return canonical_digest({k: v for k, v in self.raw.items() if k not in SWEEP_KEYS})

    @property
    def out_dir(self):
        return self._path(self.raw.get("output", {}).get("dir", "."))

    @property
    def observations_path(self):
        data = self.raw.get("data", {})
        return self._path(data["observations"]) if "observations" in data else self.out_dir / "observations.jsonl"

    @property
    def hidden_path(self):
        data = self.raw.get("data", {})
        return self._path(data["hidden"]) if "hidden" in data else self.out_dir / "hidden.jsonl"

    def _path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _fail(where, msg):
    raise SchemaError(f"{where}: {msg}")


def parse_config(doc, base_dir=".", source="<config>", seed=None, out=None):
    """Validate a config document and build the typed :class:`ExperimentConfig`.

    ``seed`` and ``out`` override the corresponding fields before the
    digest is taken, so the digest always describes what actually ran.
    """
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc.setdefault("output", {})["dir"] = str(Path(out).resolve())
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        field = "/".join(str(p) for p in e.absolute_path) or "<root>"
        _fail(f"{source}: {field}", e.message)

    d = doc["dimension"]
    scenario = doc["scenario"]
    mean = [parse_float(x) for x in doc["truth"]["mean"]]
    cov = [[parse_float(x) for x in row] for row in doc["truth"]["cov"]]
    if len(mean) != d or len(cov) != d or any(len(r) != d for r in cov):
        _fail(f"{source}: truth", f"mean and cov must have dimension {d}")
    try:
        truth = GaussianParams(np.array(mean), np.array(cov))
    except (NotPositiveDefinite, ValueError) as exc:
        _fail(f"{source}: truth/cov", str(exc))

    if doc["model"]["kind"] != scenario:
        _fail(f"{source}: model/kind", f"model kind {doc['model']['kind']!r} does not match scenario {scenario!r}")
    try:
        model = model_from_dict(doc["model"])
    except (KeyError, ValueError, TypeError) as exc:
        _fail(f"{source}: model", str(exc))
    if model.dim != d:
        _fail(f"{source}: model", f"model has dimension {model.dim}, expected {d}")

    est_doc = doc.get("estimator", {})
    schema = _self_censoring_est if scenario == "self_censoring" else _descent_est
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(est_doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        _fail(f"{source}: estimator/" + "/".join(str(p) for p in e.absolute_path), e.message)
    try:
        if scenario == "self_censoring":
            est_doc = dict(est_doc)
            tcfg = _build(TruncatedFitConfig, est_doc.pop("truncated", {}))
            estimator = _build(SelfCensoringConfig, est_doc, truncated=tcfg)
        else:
            estimator = _build(DescentConfig, est_doc)
            subset_size(estimator.beta, d)
            if estimator.M_init + estimator.M_sgd > doc["n"]:
                _fail(f"{source}: n", f"n = {doc['n']} is smaller than M_init + M_sgd")
    except (InvalidBeta, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        _fail(f"{source}: estimator", str(exc))

    audit = dict(doc.get("audit", {}))
    if "beta" in audit:
        try:
            subset_size(audit["beta"], d)
        except InvalidBeta as exc:
            _fail(f"{source}: audit/beta", str(exc))
    if any(a >= d for a in audit.get("anchor", [])):
        _fail(f"{source}: audit/anchor", f"anchor coordinates must be below {d}")

    return ExperimentConfig(
        raw=doc,
        base_dir=Path(base_dir),
        scenario=scenario,
        truth=truth,
        model=model,
        n=doc["n"],
        seed=doc["seed"],
        estimator=estimator,
        audit=audit,
        acceptance=dict(doc.get("acceptance", {})),
        tv_samples=doc.get("evaluation", {}).get("tv_samples", 0),
    )


def load_config(path, seed=None, out=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise SchemaError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    return parse_config(doc, base_dir=path.parent, source=str(path), seed=seed, out=out)
