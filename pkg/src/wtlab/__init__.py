"""Numerical laboratory for Wigner-type random matrix ensembles."""

__version__ = "0.1.0"

from . import cli, dyson, ensemble, flow, harness, stability
from .dyson import DensityProfile, DysonSolution, SpectralDomain, bulk_indices, density, solve_vde
from .ensemble import (
    EnsembleSpec,
    ProfileSpec,
    build_ensemble,
    check_assumptions,
    flat_profile,
    ou_step,
    sample_matrix,
)
from .flow import ConeChart, flow_map, psi, resolvent_integral_repr, ward_inequality_check
from .harness import eth_overlaps, eta_scaling_law, fit_exponent, phi_stats, resolvent
from .stability import chain_approx2, chain_approx3, kappa, regularize, smallest_eig, stability_matrix
