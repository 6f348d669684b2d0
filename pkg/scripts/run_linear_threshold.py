"""MissingDescent on the anchored d=3 linear-thresholding instance."""

import argparse

import numpy as np

from mnar_gauss.experiments import anchored_instance, run_anchored
from mnar_gauss.linear_threshold import DescentConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--m-init", type=int, default=100_000)
    p.add_argument("--m-sgd", type=int, default=100_000)
    p.add_argument("--m-grad", type=int, default=4000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--no-generating-start", action="store_true")
    args = p.parse_args()
    _, _, beta, _ = anchored_instance()
    cfg = DescentConfig(beta=beta, M_init=args.m_init, M_sgd=args.m_sgd, M_grad=args.m_grad, lmc_burn_in=args.burn_in)
    rows = [run_anchored(s, cfg, not args.no_generating_start) for s in range(args.seeds)]
    print(f"{'seed':>4} {'descent':>9} {'naive':>9} {'init_l2':>9} {'seconds':>8}")
    for r in rows:
        m = r.metrics
        print(f"{r.seed:4d} {m['mahalanobis_mean_error']:9.4f} {m['naive_mahalanobis_mean_error']:9.4f} "
              f"{m['init_l2_error']:9.4f} {r.seconds:8.1f}")
    print(f"median descent error: {np.median([r.metrics['mahalanobis_mean_error'] for r in rows]):.4f}")


if __name__ == "__main__":
    main()
