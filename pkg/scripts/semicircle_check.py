#!/usr/bin/env python3
"""Quick visual check: self-consistent density vs the semicircle closed form.

Prints a small table of (E, rho_solver, rho_exact, diff) for the flat profile
and the total-mass defect. No files are written.
"""

import argparse

import numpy as np

from wtlab import dyson, ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--eta-floor", type=float, default=1e-4)
    args = ap.parse_args()

    e = ensemble.build_ensemble(ensemble.flat_profile("complex-hermitian"), args.n)
    grid = np.linspace(-2.5, 2.5, 801)
    prof = dyson.density(e, grid, args.eta_floor)
    print(f"{'E':>6} {'rho':>12} {'semicircle':>12} {'diff':>10}")
    for energy in (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5):
        exact = np.sqrt(max(4 - energy**2, 0.0)) / (2 * np.pi)
        got = float(prof.rho_at(energy))
        print(f"{energy:6.2f} {got:12.8f} {exact:12.8f} {got - exact:10.2e}")
    print(f"total mass: {prof.total_mass:.8f} (defect {prof.total_mass - 1:+.2e})")


if __name__ == "__main__":
    main()
