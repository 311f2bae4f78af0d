"""Characteristic flow of spectral parameters and the conformal resolvent chart.

The flow drives a scalar terminal parameter ``z`` backwards in time into a
vector-valued trajectory ``z_t`` along which the Dyson solution scales
exponentially, ``m(z_t) = exp((t - T)/2) m(z)``.  The terminal-value problem
has the closed form

    z_t = e^{(T-t)/2} z 1 + (1 - e^{(T-t)/2}) a + 2 sinh((T-t)/2) S[m(z)],

which this module uses directly; the ODE itself only appears as a test
oracle.  The conformal chart ``psi`` maps the closed upper half-plane onto a
tilted cone attached to ``z`` and turns the half-plane Schwarz formula into an
integral representation of the resolvent whose argument never leaves the cone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dyson
from .ensemble import EnsembleSpec


@dataclass(frozen=True)
class CharTrajectory:
    """Sampled characteristic trajectory ending at ``terminal_z`` at time T.

    ``comparability[i]`` is the max/min ratio of the (sign-corrected)
    imaginary parts of ``z_t`` at sample ``i``; ``eta_linear_ratio[i]`` is
    ``eta_t / (|Im z| + (T - t))``, the quantity that stays within constant
    multiples of one along the flow.
    """

    ts: np.ndarray
    z_of_t: np.ndarray
    eta_of_t: np.ndarray
    terminal_z: complex
    big_t: float
    comparability: np.ndarray
    eta_linear_ratio: np.ndarray


@dataclass(frozen=True)
class ConeChart:
    """Cone with vertex ``z``, aperture angle ``gamma * pi``, tilt ``omega``.

    ``xi`` is the small regularizer that displaces the image cone by
    ``-i e^(i omega) xi`` and smooths the kernel's 1/x quasi-singularity.
    """

    vertex: complex
    aperture: float = 0.25
    tilt: float = 0.0
    xi: float = 1e-8

    def __post_init__(self):
        if not 0 < self.aperture <= 0.25:
            raise ValueError("aperture must lie in (0, 1/4]")
        if abs(self.tilt) > np.pi * self.aperture / 2:
            raise ValueError("tilt must lie in [-pi*gamma/2, pi*gamma/2]")
        if self.xi <= 0:
            raise ValueError("xi must be positive")


@dataclass(frozen=True)
class IntegralReprReport:
    """Reconstruction of a resolvent from its imaginary part on the chart."""

    reconstruction: np.ndarray
    direct: np.ndarray
    max_abs_error: float
    evaluations: int
    tail_cutoff: float


def flow_map(e: EnsembleSpec, z, t: float, big_t: float, tol: float = 1e-12) -> np.ndarray:
    """Explicit characteristic trajectory value ``z_t`` for terminal ``z``."""
    if not 0 <= t <= big_t:
        raise ValueError("need 0 <= t <= T")
    z = complex(z)
    if z.imag == 0:
        raise ValueError("terminal spectral parameter must be off the real axis")
    m = dyson.solve_vde(e, z, tol).m
    tau = (big_t - t) / 2.0
    return (
        np.exp(tau) * z * np.ones(e.n)
        + (1.0 - np.exp(tau)) * e.a
        + 2.0 * np.sinh(tau) * e.s_apply(m)
    )


def verify_m_scaling(e: EnsembleSpec, z, t: float, big_t: float, tol: float = 1e-12) -> float:
    """Sup-norm discrepancy of ``m(z_t) = e^{(t-T)/2} m(z)``.

    Solves the vector-parameter Dyson equation at the trajectory point and
    compares with the rescaled terminal solution.
    """
    z = complex(z)
    zt = flow_map(e, z, t, big_t, tol)
    m_terminal = dyson.solve_vde(e, z, tol).m
    m_flow = dyson.solve_vde(e, zt, tol).m
    return float(np.abs(m_flow - np.exp((t - big_t) / 2.0) * m_terminal).max())


def eta_profile(e: EnsembleSpec, z, big_t: float, samples: int = 33, tol: float = 1e-12) -> CharTrajectory:
    """Sample the trajectory and its imaginary-part statistics on [0, T]."""
    z = complex(z)
    ts = np.linspace(0.0, big_t, samples)
    zs = np.stack([flow_map(e, z, float(t), big_t, tol) for t in ts])
    sgn = np.sign(z.imag)
    ims = sgn * zs.imag
    eta = np.abs(zs.imag.mean(axis=1))
    comp = ims.max(axis=1) / ims.min(axis=1)
    linear = eta / (abs(z.imag) + (big_t - ts))
    return CharTrajectory(ts, zs, eta, z, big_t, comp, linear)


def psi(chart: ConeChart, u):
    """Conformal map of the closed upper half-plane onto the displaced cone.

    ``psi(u) = z + e^(i omega) (-i xi + e^(i pi (1 - gamma)/2) u^gamma)`` with
    the branch of ``log`` cut along the negative imaginary axis, so that
    ``psi(i xi^(1/gamma)) = z`` exactly.
    """
    u = np.asarray(u, dtype=complex)
    if np.any(u.imag < 0):
        raise ValueError("psi is defined on the closed upper half-plane")
    gamma = chart.aperture
    powered = np.where(u == 0, 0.0 + 0j, np.exp(gamma * np.log(np.where(u == 0, 1.0, u))))
    val = chart.vertex + np.exp(1j * chart.tilt) * (
        -1j * chart.xi + np.exp(1j * np.pi * (1 - gamma) / 2) * powered
    )
    return val if val.ndim else complex(val)


def cone_contains(chart: ConeChart, zeta, shifted: bool = True, tol: float = 1e-12):
    """Defining inequality of the (optionally xi-displaced) cone at ``zeta``."""
    zeta = np.asarray(zeta, dtype=complex)
    base = chart.vertex
    if shifted:
        base = base - 1j * np.exp(1j * chart.tilt) * chart.xi
    w = zeta - base
    sgn = np.sign(chart.vertex.imag) if chart.vertex.imag != 0 else 1.0
    lhs = sgn * (np.exp(-1j * chart.tilt) * w).imag
    rhs = np.cos(np.pi * chart.aperture / 2) * np.abs(w)
    return lhs >= rhs - tol


def _adaptive_simpson(f, lo, hi, tol, depth, f_lo, f_mid, f_hi):
    mid = 0.5 * (lo + hi)
    h = hi - lo
    whole = h / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    lmid = 0.5 * (lo + mid)
    rmid = 0.5 * (mid + hi)
    f_lmid = f(lmid)
    f_rmid = f(rmid)
    left = h / 12.0 * (f_lo + 4.0 * f_lmid + f_mid)
    right = h / 12.0 * (f_mid + 4.0 * f_rmid + f_hi)
    err = np.abs(left + right - whole).max()
    # noise floor: once the estimate sits at rounding level, refining only
    # burns matrix inversions
    scale = abs(h) * max(
        np.abs(f_lo).max(), np.abs(f_mid).max(), np.abs(f_hi).max(), 1e-300
    )
    if err <= 15.0 * max(tol, 1e-15 * scale) or depth <= 0:
        return left + right + (left + right - whole) / 15.0
    return _adaptive_simpson(
        f, lo, mid, tol / 2, depth - 1, f_lo, f_lmid, f_mid
    ) + _adaptive_simpson(f, mid, hi, tol / 2, depth - 1, f_mid, f_rmid, f_hi)


def _panel_integrate(f, edges, tol):
    """Adaptive Simpson over seeded panels with a shared absolute tolerance."""
    total = None
    per_panel = tol / max(len(edges) - 1, 1)
    cache = {float(x): f(x) for x in edges}
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        part = _adaptive_simpson(
            f, lo, hi, per_panel, 36, cache[float(lo)], f(mid), cache[float(hi)]
        )
        total = part if total is None else total + part
    return total


def _dyadic_edges(inner: float, outer: float):
    """Symmetric dyadic panel edges covering [-outer, outer]."""
    pos = [inner]
    while pos[-1] < outer:
        pos.append(min(pos[-1] * 2.0, outer))
    pos = np.asarray(pos)
    return np.concatenate([-pos[::-1], [0.0], pos])


def _generalized_resolvent(h: np.ndarray, zvec: np.ndarray) -> np.ndarray:
    a = h - np.diag(zvec)
    return np.linalg.solve(a, np.eye(h.shape[0], dtype=complex))


def resolvent_integral_repr(
    h: np.ndarray,
    e: EnsembleSpec,
    z,
    chart: ConeChart | None = None,
    quad_tol: float = 1e-6,
    t: float | None = None,
    big_t: float = 1.0,
) -> IntegralReprReport:
    """Reconstruct ``G(h, f^t(z))`` from ``Im G`` sampled along the cone chart.

    Evaluates ``(1/pi) Int Im G(h, f^t(psi(x))) / (x - i xi^(1/gamma)) dx`` by
    adaptive quadrature.  The constant part of the numerator at ``x = 0`` is
    integrated in closed form, which removes the near-origin quasi-singularity;
    the rest is integrated in the variable ``u = sign(x) |x|^gamma`` where the
    integrand is bounded.  The tail cutoff is chosen so the neglected mass is
    below ``quad_tol / 10``.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("the chart is stated for upper half-plane parameters")
    if chart is None:
        chart = ConeChart(vertex=z, xi=1e-8)
    if chart.vertex != z:
        raise ValueError("chart vertex must match the spectral parameter")
    if t is None:
        t = big_t
    gamma = chart.aperture
    eps = chart.xi ** (1.0 / gamma)
    n = h.shape[0]

    def flowed(zeta: complex) -> np.ndarray:
        if t == big_t:
            return np.full(n, zeta)
        return flow_map(e, zeta, t, big_t)

    evals = [0]

    def im_g_at(x: float) -> np.ndarray:
        evals[0] += 1
        g = _generalized_resolvent(h, flowed(complex(psi(chart, complex(x, 0.0)))))
        return (g - g.conj().T) / 2j

    f0 = im_g_at(0.0)

    # tail: ||Im G|| <= 1 / (cos(pi gamma) |x|^gamma) for large |x|
    cosfac = np.cos(np.pi * gamma)
    cutoff_u = 20.0 / (np.pi * cosfac * gamma * quad_tol)
    p = 1.0 / gamma

    def integrand_u(u: float) -> np.ndarray:
        if u == 0.0:
            return np.zeros_like(f0)
        x = np.sign(u) * abs(u) ** p
        jac = p * abs(u) ** (p - 1.0)
        return (im_g_at(x) - f0) * (jac / (x - 1j * eps))

    edges = _dyadic_edges(min(1.0, cutoff_u), cutoff_u)
    body = _panel_integrate(integrand_u, edges, quad_tol)
    cutoff_x = cutoff_u**p
    log_term = np.log(cutoff_x - 1j * eps) - np.log(-cutoff_x - 1j * eps)
    recon = (body + f0 * log_term) / np.pi

    direct = _generalized_resolvent(h, flowed(z))
    err = float(np.abs(recon - direct).max())
    return IntegralReprReport(recon, direct, err, evals[0], float(cutoff_x))


def resolvent_stieltjes_repr(
    h: np.ndarray,
    z,
    xi: float = 1e-8,
    quad_tol: float = 1e-6,
) -> IntegralReprReport:
    """Horizontal-line Stieltjes reconstruction of a standard resolvent.

    ``G(z) = (1/pi) Int Im G(Re z + x + i(Im z - xi)) / (x - i xi) dx`` for a
    scalar parameter in the upper half-plane; the companion of the cone chart
    used for cross-validation.
    """
    z = complex(z)
    if not 0 < xi < z.imag:
        raise ValueError("need 0 < xi < Im z")
    n = h.shape[0]
    height = z.imag - xi
    evals = [0]

    def im_g_at(x: float) -> np.ndarray:
        evals[0] += 1
        g = np.linalg.solve(
            h - complex(z.real + x, height) * np.eye(n), np.eye(n, dtype=complex)
        )
        return (g - g.conj().T) / 2j

    f0 = im_g_at(0.0)
    # Im G ~ Im z / x^2 beyond the spectrum
    spread = float(np.abs(h).sum(axis=1).max() + abs(z.real) + 1.0)
    cutoff = max(spread, np.sqrt(20.0 * max(z.imag, 1.0) / (np.pi * quad_tol)))

    def integrand(x: float) -> np.ndarray:
        return (im_g_at(x) - f0) / (x - 1j * xi)

    edges = _dyadic_edges(min(1.0, cutoff), cutoff)
    body = _panel_integrate(integrand, edges, quad_tol)
    log_term = np.log(cutoff - 1j * xi) - np.log(-cutoff - 1j * xi)
    recon = (body + f0 * log_term) / np.pi
    direct = np.linalg.solve(h - z * np.eye(n), np.eye(n, dtype=complex))
    err = float(np.abs(recon - direct).max())
    return IntegralReprReport(recon, direct, err, evals[0], float(cutoff))


def ward_inequality_check(g: np.ndarray, z_vec) -> float:
    """Most negative eigenvalue of ``||(Im z)^{-1}||_inf Im G - G G*``.

    For a generalized resolvent at a one-signed vector parameter this matrix
    is positive semidefinite (the vector-parameter replacement of the Ward
    identity); the scalar case is an exact equality.  Lower half-plane
    parameters are handled by flipping the sign of ``Im G``.
    """
    z_vec = np.atleast_1d(np.asarray(z_vec, dtype=complex))
    ims = z_vec.imag
    if np.any(ims == 0) or (np.any(ims > 0) and np.any(ims < 0)):
        raise ValueError("Im z must be nonzero and one-signed")
    sgn = np.sign(ims[0])
    bound = float(np.abs(1.0 / ims).max())
    img = (g - g.conj().T) / 2j
    w = bound * sgn * img - g @ g.conj().T
    w = 0.5 * (w + w.conj().T)
    return float(np.linalg.eigvalsh(w)[0])
