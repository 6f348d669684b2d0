"""Command line front end: ``mnar-gauss generate|audit|estimate|report``.

Exit codes: 0 success, 1 a report failed its acceptance thresholds,
2 schema or input error, 3 assumption violation, 4 estimator did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import (
    AnchorViolated,
    AssumptionViolation,
    BlockStarved,
    EmptyFeasible,
    InsufficientStream,
    InvalidBeta,
    MassTooLow,
    NoConvergence,
    NonConvergent,
    PairStarved,
    SchemaError,
)
from .gaussian import mahalanobis_norm
from .io import dumps_exact, read_rows, read_table, write_json, write_rows, write_table
from .linear_threshold import available_case_mean, missing_descent
from .missingness import audit_assumptions, simulate
from .self_censoring import available_case_moments, evaluate_estimate, fit_self_censoring

log = logging.getLogger("mnar_gauss")

EXIT_OK, EXIT_ACCEPTANCE, EXIT_SCHEMA, EXIT_ASSUMPTION, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4

HINTS = {
    PairStarved: "increase n or check that every pair of coordinates is observed together often enough",
    BlockStarved: "increase M_init or check that every coordinate block is sometimes fully observed",
    AnchorViolated: "choose anchor coordinates that are always observed",
    MassTooLow: "the truncation set carries too little mass; check the censoring sets",
    NonConvergent: "increase n or the number of SGD steps",
    NoConvergence: "the projection did not settle; check the constraint system",
    EmptyFeasible: "the observation is inconsistent with the model",
}

#: default error metric for the convergence summary
SUMMARY_METRIC = {"self_censoring": "whitened_cov_error", "linear_threshold": "mahalanobis_mean_error"}


def streams(seed):
    """Independent generators for data generation, estimation and auditing."""
    gen, est, aud = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(gen), np.random.default_rng(est), np.random.default_rng(aud)


def _audit_mc(cfg):
    return int(cfg.audit.get("mc", 200_000))


def _beta(cfg):
    if "beta" in cfg.audit:
        return cfg.audit["beta"]
    return getattr(cfg.estimator, "beta", None)


def cmd_generate(cfg):
    gen, _, _ = streams(cfg.seed)
    table, Y = simulate(cfg.truth, cfg.model, cfg.n, gen)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_table(cfg.observations_path, table)
    write_rows(cfg.hidden_path, Y)
    meta = {
        "seed": cfg.seed,
        "n": cfg.n,
        "config_digest": cfg.digest,
        "observations": str(cfg.observations_path),
        "hidden": str(cfg.hidden_path),
        "fraction_seen": table.mask.mean(axis=0),
    }
    write_json(cfg.out_dir / "generate.json", meta)
    return meta


def run_audit(cfg):
    _, _, aud = streams(cfg.seed)
    anchor = cfg.audit.get("anchor")
    rep = audit_assumptions(
        cfg.truth, cfg.model, _audit_mc(cfg), aud, beta=_beta(cfg), anchor=anchor, bin_width=cfg.audit.get("bin_width")
    )
    return rep


def _violations(rep):
    out = []
    for key in ("alpha_pair_min", "alpha_subset_min", "gamma_min"):
        val = getattr(rep, key)
        if val is not None and not val > 0:
            out.append(key)
    return out


def cmd_audit(cfg):
    rep = run_audit(cfg)
    doc = rep.to_dict()
    doc["violations"] = _violations(rep)
    doc["config_digest"] = cfg.digest
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "audit.json", doc)
    return doc


def _load_data(cfg):
    path = cfg.observations_path
    if not path.exists():
        raise SchemaError(f"{path}: observation file not found (run generate first)")
    try:
        table = read_table(path, cfg.dim)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    hidden = read_rows(cfg.hidden_path) if cfg.hidden_path.exists() else None
    if hidden is not None and hidden.shape != (len(table), cfg.dim):
        raise SchemaError(f"{cfg.hidden_path}: expected {len(table)} rows of length {cfg.dim}")
    return table, hidden


def _acceptance(cfg, metrics):
    failures = []
    for key, limit in cfg.acceptance.items():
        val = metrics.get(key)
        if val is None or not val <= limit:
            failures.append({"metric": key, "value": val, "limit": limit})
    return {"thresholds": dict(cfg.acceptance), "passed": not failures, "failures": failures}


def cmd_estimate(cfg, trace_path=None):
    """Fit the configured estimator and return the EstimateReport document."""
    table, hidden = _load_data(cfg)
    if len(table) < cfg.n:
        raise InsufficientStream(f"observation file holds {len(table)} rows, config asks for {cfg.n}")
    table = table[: cfg.n]
    _, est_rng, _ = streams(cfg.seed)
    audit = run_audit(cfg).to_dict()
    t0 = time.perf_counter()
    out = {
        "schema_version": 1,
        "scenario": cfg.scenario,
        "n": cfg.n,
        "seed": cfg.seed,
        "dimension": cfg.dim,
        "config_digest": cfg.digest,
        "family_digest": cfg.family_digest,
        "audit": audit,
    }
    if cfg.scenario == "self_censoring":
        est = fit_self_censoring(table, cfg.model, est_rng, cfg.estimator)
        tv_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(99,)))
        metrics = evaluate_estimate(
            cfg.truth, est, rng=tv_rng if cfg.tv_samples else None, tv_samples=max(cfg.tv_samples, 1)
        )
        naive_mean, naive_cov = available_case_moments(table)
        naive = evaluate_estimate(cfg.truth, type(est)(naive_mean, naive_cov, {}, False))
        metrics["naive_mahalanobis_mean_error"] = naive["mahalanobis_mean_error"]
        metrics["naive_whitened_cov_error"] = naive["whitened_cov_error"]
        out["estimate"] = {"mean": est.mean, "cov": est.cov, "psd_projected": est.psd_projected}
        out["diagnostics"] = {f"{i},{j}": v for (i, j), v in est.per_pair_diagnostics.items()}
    else:
        complete = hidden[: cfg.n] if hidden is not None else None
        trace = missing_descent(table, cfg.model, cfg.truth.cov, cfg.estimator, est_rng, complete=complete)
        beta = cfg.estimator.beta
        lam_max = cfg.truth.lambda_max
        init_bound = 4.0 * math.sqrt(lam_max / beta * math.log(1.0 / min(trace.alpha, 1.0 - 1e-12)))
        metrics = {
            "mahalanobis_mean_error": mahalanobis_norm(trace.mean - cfg.truth.mean, cfg.truth),
            "mean_l2_error": float(np.linalg.norm(trace.mean - cfg.truth.mean)),
            "init_l2_error": float(np.linalg.norm(trace.mu0 - cfg.truth.mean)),
            "init_bias_bound": init_bound,
            "naive_mahalanobis_mean_error": mahalanobis_norm(available_case_mean(table) - cfg.truth.mean, cfg.truth),
        }
        out["estimate"] = {"mean": trace.mean, "mu0": trace.mu0}
        out["diagnostics"] = {
            "lambda_sgd": trace.lambda_sgd,
            "r_proj": trace.r_proj,
            "alpha_used": trace.alpha,
            "max_dist_to_mu0": float(trace.dist_to_mu0.max()),
            "final_grad_norm": float(trace.grad_norms[-1]),
            "simulation_start": complete is not None,
            # the distance from the truth to the iterates is not observable at run time;
            # r_proj and the initialization bound stand in for it
            "distance_bound_surrogate": {"r_proj": trace.r_proj, "init_bias_bound": init_bound},
        }
        trace_path = trace_path or cfg.out_dir / "trace.csv"
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "eta", "grad_norm", "dist_to_mu0"])
            for row in trace.rows():
                w.writerow([row[0], *(repr(x) for x in row[1:])])
        out["trace"] = str(trace_path)
    out["metrics"] = metrics
    out["acceptance"] = _acceptance(cfg, metrics)
    out["runtime_seconds"] = time.perf_counter() - t0
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "report.json", out)
    return out


def load_report(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot read report ({exc})") from None


def loglog_slope(ns, errors):
    """Least-squares slope of ``log(error)`` against ``log(n)`` using per-n medians."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    levels = np.unique(ns)
    if levels.size < 2:
        return None
    med = np.array([np.median(errors[ns == k]) for k in levels])
    return float(np.polyfit(np.log(levels), np.log(med), 1)[0])


def cmd_report(paths, out_dir, allow_mixed=False, metric=None, svg=False):
    reports = [load_report(p) for p in paths]
    if not reports:
        raise SchemaError("report needs at least one report file")
    families = {r.get("family_digest") for r in reports}
    if len(families) > 1 and not allow_mixed:
        raise SchemaError("reports come from different configurations; pass --allow-mixed to combine them")
    metric = metric or SUMMARY_METRIC[reports[0]["scenario"]]
    rows = sorted(
        (r["n"], r["seed"], r["metrics"].get(metric), r["acceptance"]["passed"], p) for r, p in zip(reports, paths)
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "seed", metric, "passed", "report"])
        for n, seed, val, ok, p in rows:
            w.writerow([n, seed, "" if val is None else repr(val), ok, p])
    ns = [r[0] for r in rows if r[2] is not None]
    vals = [r[2] for r in rows if r[2] is not None]
    slope = loglog_slope(ns, vals)
    summary = {
        "metric": metric,
        "reports": len(rows),
        "slope": slope,
        "failed": [str(r[4]) for r in rows if not r[3]],
        "mixed": len(families) > 1,
    }
    write_json(out_dir / "summary.json", summary)
    if svg:
        _plot(ns, vals, metric, out_dir / "convergence.svg")
        summary["svg"] = str(out_dir / "convergence.svg")
    return summary


def _plot(ns, vals, metric, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(ns, vals, "o", alpha=0.6)
    levels = sorted(set(ns))
    med = [np.median([v for n, v in zip(ns, vals) if n == k]) for k in levels]
    ax.loglog(levels, med, "-", color="k")
    ax.set_xlabel("n")
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_parser():
    p = argparse.ArgumentParser(prog="mnar-gauss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate", "audit", "estimate"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
    r = sub.add_parser("report")
    r.add_argument("reports", nargs="*", help="EstimateReport JSON files")
    r.add_argument("--config", help='JSON file with a "reports" list (paths relative to it)')
    r.add_argument("--out", default=".")
    r.add_argument("--allow-mixed", action="store_true")
    r.add_argument("--metric")
    r.add_argument("--svg", action="store_true")
    return p


def _report_paths(args):
    paths = list(args.reports)
    if args.config:
        cpath = Path(args.config)
        try:
            doc = json.loads(cpath.read_text())
            paths += [str(cpath.parent / p) for p in doc["reports"]]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"{cpath}: expected a JSON object with a 'reports' list ({exc})") from None
    return paths


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            summary = cmd_report(_report_paths(args), args.out, args.allow_mixed, args.metric, args.svg)
            print(dumps_exact(summary, indent=2))
            return EXIT_ACCEPTANCE if summary["failed"] else EXIT_OK
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "generate":
            print(dumps_exact(cmd_generate(cfg), indent=2))
        elif args.command == "audit":
            doc = cmd_audit(cfg)
            print(dumps_exact(doc, indent=2))
            if doc["violations"]:
                print(f"assumption violated: {', '.join(doc['violations'])} is zero", file=sys.stderr)
                return EXIT_ASSUMPTION
        else:
            rep = cmd_estimate(cfg)
            print(dumps_exact({"metrics": rep["metrics"], "acceptance": rep["acceptance"]}, indent=2))
        return EXIT_OK
    except (SchemaError, InvalidBeta, InsufficientStream) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except AssumptionViolation as exc:
        print(f"assumption violated: {exc}\nhint: {_hint(exc)}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (NonConvergent, NoConvergence, MassTooLow, EmptyFeasible) as exc:
        print(f"estimator failed: {exc}\nhint: {_hint(exc)}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


def _hint(exc):
    for cls, text in HINTS.items():
        if isinstance(exc, cls):
            return text
    return "see the documentation"


if __name__ == "__main__":
    sys.exit(main())
