"""Vector Dyson equation solver and the self-consistent density of states.

The solution vector ``m(z)`` of ``-1/m = z - a + S m`` (with ``Im z`` and
``Im m`` sharing a half-plane) is computed by a damped fixed-point iteration
``m <- (1 - d) m + d * (-1 / (z - a + S m))`` with per-point adaptive damping
``d`` in [0.05, 1], halved whenever the residual would increase.  The map
preserves the half-plane, so the sign condition holds along the whole
iteration.  Spectral parameters may be scalars or length-N vectors with a
uniform half-plane sign; lower half-plane inputs are solved by conjugation.

Block-profile ensembles are solved on the reduced k-dimensional system (the
unique solution inherits the block symmetry), and many spectral points are
iterated as one vectorized batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .ensemble import EnsembleSpec

#: iteration budget per spectral point
MAX_ITERATIONS = 100_000
DAMPING_MIN = 0.05
DEFAULT_TOL = 1e-12


class DysonConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the requested residual."""

    def __init__(self, z, residual, iterations):
        self.z = z
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Dyson iteration stalled at z={z}: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


@dataclass(frozen=True)
class DysonSolution:
    """Converged solution at one spectral parameter.

    ``residual`` is ``max_j |1/m_j + z_j - a_j + (S m)_j|`` evaluated on the
    full N-dimensional system.
    """

    z: complex | np.ndarray
    m: np.ndarray
    residual: float
    iterations: int
    damping_used: float


@dataclass(frozen=True)
class DensityProfile:
    """Self-consistent density on an energy grid, with quantiles.

    ``rho`` comes from Stieltjes inversion at ``eta_used`` with one Richardson
    step toward the real axis; ``quantiles[j-1]`` is the energy gamma_j with
    cumulative mass j/N.
    """

    energies: np.ndarray
    rho: np.ndarray
    eta_used: float
    quantiles: np.ndarray
    total_mass: float
    notes: tuple = field(default=())

    def rho_at(self, energy) -> np.ndarray:
        """Linear interpolation of the density onto arbitrary energies."""
        return np.interp(energy, self.energies, self.rho)


@dataclass(frozen=True)
class SpectralDomain:
    """Bulk parameters: density floor, eta ceiling, and the exponent margin."""

    rho_star: float
    eta_star: float
    eps: float

    def __post_init__(self):
        if self.rho_star <= 0 or self.eta_star <= 0 or self.eps <= 0:
            raise ValueError("rho_star, eta_star and eps must be positive")


def _batch_iterate(z, a, s_op, m0, tol, max_iter):
    """Damped fixed-point iteration, vectorized over a batch of z points.

    ``z``, ``m0`` have shape (B, d); ``a`` shape (d,); ``s_op`` maps (B, d) ->
    (B, d) rowwise.  Returns (m, residual, iterations, damping) with residual
    measured in the sup norm rowwise.

    The damping is adapted per point: the dominant eigenvalue q of the
    undamped map's derivative is estimated from successive increments, and d
    is set to the minimizer of |1 - d (1 - q)| (clipped to [0.05, 1]), which
    handles both the rotational slow-down in the bulk (complex q of modulus
    near one, optimal d near 1/2) and the edge regime (q near +1, optimal
    d = 1).  A step that would increase the residual halves d and is retried.
    """
    m = m0.astype(complex).copy()

    def residual_of(mm):
        return np.abs(1.0 / mm + z - a + s_op(mm)).max(axis=1)

    # the equation contains z itself, so the attainable absolute residual
    # scales with |z|; convergence is judged against tol * max(1, |z|)
    scale = np.maximum(1.0, np.abs(z).max(axis=1))
    res = residual_of(m)
    damp = np.full(m.shape[0], 1.0)
    iters = np.zeros(m.shape[0], dtype=int)
    prev_step = np.zeros_like(m)
    have_prev = np.zeros(m.shape[0], dtype=bool)
    active = res > tol * scale
    total = 0
    while np.any(active) and total < max_iter:
        total += 1
        iters[active] += 1
        target = -1.0 / (z + s_op(m) - a)
        step = target - m
        cand = m + damp[:, None] * step
        cand_res = residual_of(cand)
        worse = active & (cand_res > res)
        accept = active & ~worse

        # increment-ratio estimate of the dominant derivative eigenvalue
        upd = accept & have_prev
        if np.any(upd):
            num = (np.conj(prev_step[upd]) * step[upd]).sum(axis=1)
            den = (np.abs(prev_step[upd]) ** 2).sum(axis=1)
            ok = den > 0
            q_damped = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
            q_raw = 1.0 + (q_damped - 1.0) / damp[upd]
            one_minus = 1.0 - q_raw
            mag2 = np.abs(one_minus) ** 2
            good = mag2 > 1e-30
            d_opt = np.where(good, one_minus.real / np.where(good, mag2, 1.0), 1.0)
            damp[upd] = np.clip(d_opt, DAMPING_MIN, 1.0)

        prev_step[accept] = step[accept]
        have_prev[accept] = True
        m[accept] = cand[accept]
        res[accept] = cand_res[accept]
        # halve on residual increase and retry; at the floor the step is taken
        # anyway so the iteration cannot stall on a noisy residual comparison
        at_floor = worse & (damp <= DAMPING_MIN)
        m[at_floor] = cand[at_floor]
        res[at_floor] = cand_res[at_floor]
        have_prev[worse] = False
        damp[worse & ~at_floor] *= 0.5
        damp = np.maximum(damp, DAMPING_MIN)
        active = res > tol * scale
    return m, res, iters, damp


def _is_block_constant(e: EnsembleSpec, vec: np.ndarray) -> bool:
    idx = e.block_index
    first = np.concatenate(([0], np.cumsum(e.block_sizes)[:-1]))
    return bool(np.all(vec == vec[first][idx]))


def _full_residual(e: EnsembleSpec, z, m) -> float:
    return float(np.abs(1.0 / m + z - e.a + e.s_apply(m)).max())


def solve_vde(
    e: EnsembleSpec,
    z,
    tol: float = DEFAULT_TOL,
    m0: np.ndarray | None = None,
    max_iter: int = MAX_ITERATIONS,
) -> DysonSolution:
    """Solve ``-1/m = z - a + S m`` with ``(Im z)(Im m) > 0`` entrywise.

    ``z`` may be a complex scalar or a length-N vector whose imaginary parts
    are nonzero and share one sign.  For ``Im z < 0`` the equation is solved
    at the conjugate point and the conjugate solution is returned.
    Convergence demands ``residual <= tol * max(1, |z|_inf)``: the equation
    contains ``z`` itself, so the attainable absolute residual grows with the
    spectral parameter (for order-one ``z`` this is plain ``tol``).

    Raises
    ------
    DysonConvergenceError
        If the residual is still above ``tol`` after the iteration budget.
    ValueError
        If the imaginary parts vanish or mix signs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    z_in = z
    scalar = np.isscalar(z) or np.asarray(z).ndim == 0
    zv = np.full(e.n, complex(z)) if scalar else np.asarray(z, dtype=complex)
    if zv.shape != (e.n,):
        raise ValueError(f"z must be scalar or length-{e.n}")
    ims = np.imag(zv)
    if np.any(ims == 0) or (np.any(ims > 0) and np.any(ims < 0)):
        raise ValueError("Im z must be nonzero and of one sign entrywise")
    conjugated = ims[0] < 0
    if conjugated:
        zv = np.conj(zv)
        if m0 is not None:
            m0 = np.conj(m0)

    reduced = e.block_sizes is not None and _is_block_constant(e, zv)
    if reduced:
        first = np.concatenate(([0], np.cumsum(e.block_sizes)[:-1]))
        zb = zv[first][None, :]
        ab = e.a_block
        c = e.reduced_s()
        start = m0[first][None, :] if m0 is not None else -1.0 / (zb - ab)
        mb, res, iters, damp = _batch_iterate(
            zb, ab, lambda mm: mm @ c.T, start, 0.5 * tol, max_iter
        )
        m = e.expand_blocks(mb[0])
    else:
        start = (
            m0[None, :].astype(complex)
            if m0 is not None
            else (-1.0 / (zv - e.a))[None, :]
        )
        mb, res, iters, damp = _batch_iterate(
            zv[None, :],
            e.a,
            lambda mm: np.stack([e.s_apply(row) for row in mm]),
            start,
            0.5 * tol,
            max_iter,
        )
        m = mb[0]

    residual = _full_residual(e, zv, m)
    if residual > tol * max(1.0, float(np.abs(zv).max())):
        raise DysonConvergenceError(z_in, residual, int(iters[0]))
    if conjugated:
        m = np.conj(m)
    return DysonSolution(
        z=z_in, m=m, residual=residual, iterations=int(iters[0]), damping_used=float(damp[0])
    )


def continue_vde(e: EnsembleSpec, targets, tol: float = DEFAULT_TOL) -> list:
    """Solve at several spectral points, warm-starting along descending |Im z|.

    Targets must share the sign of their imaginary parts.  Solutions are
    returned in the order the targets were given; internally the points are
    visited from the largest |Im z| down so each solve starts from its
    neighbor.  A failure names the first target that did not converge.
    """
    targets = list(targets)
    if not targets:
        return []
    signs = [np.sign(np.imag(np.atleast_1d(np.asarray(t, dtype=complex))[0])) for t in targets]
    if len({float(s) for s in signs}) > 1:
        raise ValueError("continuation targets must share the Im-sign")

    def im_scale(t):
        return float(np.abs(np.imag(np.asarray(t, dtype=complex))).min())

    order = sorted(range(len(targets)), key=lambda i: -im_scale(targets[i]))
    out: list = [None] * len(targets)
    warm = None
    for i in order:
        try:
            sol = solve_vde(e, targets[i], tol, m0=warm)
        except DysonConvergenceError as err:
            raise DysonConvergenceError(targets[i], err.residual, err.iterations) from err
        out[i] = sol
        warm = sol.m
    return out


def _grid_im_m(e: EnsembleSpec, energies, eta, tol):
    """Block values of m(E + i eta) for a whole grid of energies at once."""
    energies = np.asarray(energies, dtype=float)
    if e.block_sizes is not None:
        k = len(e.block_sizes)
        zb = energies[:, None] * np.ones(k)[None, :] + 1j * eta
        c = e.reduced_s()
        start = -1.0 / (zb - e.a_block)
        mb, res, iters, _ = _batch_iterate(
            zb, e.a_block, lambda mm: mm @ c.T, start, tol, MAX_ITERATIONS
        )
        bad = res > tol * np.maximum(1.0, np.abs(zb).max(axis=1))
        if np.any(bad):
            j = int(np.argmax(bad))
            raise DysonConvergenceError(
                complex(energies[j], eta), float(res[j]), int(iters[j])
            )
        return mb, e.block_weights()
    rows = [sol.m for sol in continue_vde(e, energies + 1j * eta, tol)]
    return np.asarray(rows), np.full(e.n, 1.0 / e.n)


def density(
    e: EnsembleSpec,
    grid,
    eta_floor: float = 1e-4,
    tol: float = DEFAULT_TOL,
) -> DensityProfile:
    """Self-consistent density on ``grid`` by Stieltjes inversion.

    Evaluates ``Im <m> / pi`` at ``eta_floor`` and ``2 eta_floor`` and
    Richardson-extrapolates linearly to the real axis, then integrates by the
    trapezoid rule and inverts the cumulative mass with a monotone cubic
    interpolant to obtain the j/N quantiles (ties broken leftmost).
    """
    if eta_floor <= 0:
        raise ValueError("eta_floor must be positive")
    energies = np.asarray(grid, dtype=float)
    if energies.ndim != 1 or energies.size < 3:
        raise ValueError("grid must contain at least 3 energies")
    m1, w = _grid_im_m(e, energies, eta_floor, tol)
    m2, _ = _grid_im_m(e, energies, 2 * eta_floor, tol)
    avg1 = (m1.imag * w).sum(axis=1)
    avg2 = (m2.imag * w).sum(axis=1)
    rho = np.maximum((2 * avg1 - avg2) / np.pi, 0.0)
    total = float(np.trapezoid(rho, energies))

    notes = []
    if abs(total - 1.0) > 1e-3:
        notes.append(f"total mass {total:.6f} deviates from 1 beyond 1e-3")
    dx = np.diff(energies)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * dx)))
    q = np.arange(1, e.n + 1) / e.n
    cdf_u, idx = np.unique(cdf, return_index=True)
    if cdf_u.size < 2:
        raise ValueError("density mass degenerate on this grid; widen the grid")
    inv = PchipInterpolator(cdf_u, energies[idx])
    q_cl = np.clip(q, cdf_u[0], cdf_u[-1])
    if q[-1] > cdf[-1] + 1e-6:
        notes.append(
            "grid truncates the support: top quantiles clamped to the grid edge"
        )
    quant = inv(q_cl)
    quant = np.maximum.accumulate(quant)
    return DensityProfile(
        energies=energies,
        rho=rho,
        eta_used=eta_floor,
        quantiles=quant,
        total_mass=total,
        notes=tuple(notes),
    )


def bulk_indices(d: DensityProfile, dom: SpectralDomain) -> np.ndarray:
    """0-based indices j with ``rho(gamma_{j+1}) >= rho_star``."""
    rho_at_gamma = d.rho_at(d.quantiles)
    return np.nonzero(rho_at_gamma >= dom.rho_star)[0]
