"""Error-versus-n sweep through the command line pipeline.

Writes one config per (n, seed) replica, runs generate and estimate for
each (optionally across a process pool), then aggregates with report.
"""

import argparse
import json
from multiprocessing import Pool
from pathlib import Path

from mnar_gauss import cli


def replica(job):
    cfg_path, out = job
    for cmd in ("generate", "estimate"):
        code = cli.main([cmd, "--config", str(cfg_path), "--out", str(out)])
        if code:
            raise SystemExit(f"{cmd} failed for {cfg_path} with exit code {code}")
    return str(Path(out) / "report.json")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "self_censoring_d3.json"))
    p.add_argument("--ns", type=int, nargs="+", default=[25_000, 100_000, 400_000, 1_600_000])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/sweep")
    args = p.parse_args()
    base = json.loads(Path(args.config).read_text())
    root = Path(args.out).resolve()
    jobs = []
    for n in args.ns:
        for seed in range(args.seeds):
            run = root / f"n{n}_s{seed}"
            run.mkdir(parents=True, exist_ok=True)
            doc = dict(base, n=n, seed=seed, output={"dir": "."})
            (run / "config.json").write_text(json.dumps(doc, indent=2))
            jobs.append((run / "config.json", run))
    if args.workers > 1:
        with Pool(args.workers) as pool:
            reports = pool.map(replica, jobs)
    else:
        reports = [replica(j) for j in jobs]
    raise SystemExit(cli.main(["report", *sorted(reports), "--out", str(root), "--svg"]))


if __name__ == "__main__":
    main()
