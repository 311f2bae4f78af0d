#!/usr/bin/env python3
"""Run the ETH overlap experiment from the command line.

Example:
    python scripts/eth_scaling.py --sizes 128 256 512 --samples 10 --profile two-block
"""

import argparse

import numpy as np

from wtlab import ensemble, harness

PROFILES = {
    "flat": ensemble.flat_profile("complex-hermitian"),
    "two-block": ensemble.ProfileSpec(
        (0.3, -0.4), ((1.0, 2.0), (2.0, 1.0)), None, "complex-hermitian"
    ),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=sorted(PROFILES), default="flat")
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    ap.add_argument("--samples", type=int, default=10)
    ap.add_argument("--rho-min", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    report = harness.eth_overlaps(
        PROFILES[args.profile], [1.0, -1.0], args.sizes, args.samples,
        args.rho_min, args.seed,
    )
    print(f"{'N':>6} {'max dev (med)':>14} {'sqrt(N) scaled':>14} {'rigidity':>10} {'bulk':>6}")
    for row in report.per_n:
        print(
            f"{row.n:6d} {row.max_dev_median:14.5f} {row.scaled_dev_median:14.4f} "
            f"{row.rigidity_median:10.3f} {row.bulk_size:6d}"
        )
    if report.fit is not None:
        print(
            f"fitted exponent: {report.fit.exponent:+.3f} "
            f"(stderr {report.fit.stderr:.3f}, r^2 {report.fit.r_squared:.4f})"
        )


if __name__ == "__main__":
    main()
