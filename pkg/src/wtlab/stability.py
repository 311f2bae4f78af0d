"""Two-body stability operator, regular observables, and resolvent chains.

The non-Hermitian stability operator ``B_{z1,z2} = 1 - M(z1) M(z2) S`` acts on
length-N vectors; its smallest-modulus eigenvalue ``beta`` together with the
rank-one spectral projector ``Pi`` controls the two-resolvent deterministic
approximations near ``z2 ~ conj(z1)``.  Because ``S`` is symmetric, the left
eigenvector is ``conj(r / (m1 m2))`` whenever ``r`` is the right one, which
this module exploits throughout.

An observable ``A`` is regular for the ordered pair ``(z1, z2)`` when the
projector at the reflected pair annihilates its weighted diagonal,
``Pi_{z1^-, z2^+}[m(z1^-) a m(z2^+)] = 0`` with ``z^± = Re z ± i |Im z|``.
Outside the perturbative regime (no isolated small eigenvalue) every
observable counts as regular; the handoff is detected from the spectrum
rather than from a fixed distance threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import dyson, flow
from .ensemble import EnsembleSpec

#: isolation detector: smallest eigenvalue counts as isolated when the
#: second-smallest modulus is at least max(ISOLATION_FLOOR, 3 |beta|)
ISOLATION_FLOOR = 0.05
DENSE_EIG_LIMIT = 2048


@dataclass(frozen=True)
class StabilityEig:
    """Smallest-modulus spectral data of a stability matrix.

    ``gap`` is the modulus difference to the second-smallest eigenvalue and
    ``isolated`` records whether the detector's separation criterion held (a
    non-isolated smallest eigenvalue is not an error, only a regime flag).
    """

    beta: complex
    right_vec: np.ndarray
    left_vec: np.ndarray
    isolated: bool
    gap: float
    second_modulus: float = field(default=np.inf)

    def projector(self) -> np.ndarray:
        """Rank-one spectral projector ``r l* / <l, r>``."""
        denom = np.vdot(self.left_vec, self.right_vec)
        return np.outer(self.right_vec, np.conj(self.left_vec)) / denom

    def apply_projector(self, v: np.ndarray) -> np.ndarray:
        denom = np.vdot(self.left_vec, self.right_vec)
        return self.right_vec * (np.vdot(self.left_vec, v) / denom)


@dataclass(frozen=True)
class RegularDecomposition:
    """Split ``B = B_ring + b diag(direction)`` with a regular ``B_ring``."""

    regular_part: np.ndarray
    scalar_part: complex
    direction: np.ndarray
    residual: float


@dataclass(frozen=True)
class ChainApprox:
    """Deterministic approximation of a one/two/three-resolvent chain."""

    value: np.ndarray
    order: int
    inputs: dict


@dataclass(frozen=True)
class SaturatedF:
    """Norm, spectral gap and Perron vector of ``|M1 M2|^(1/2) S |M1 M2|^(1/2)``."""

    norm: float
    gap: float
    principal_vec: np.ndarray


def _solve_m(e: EnsembleSpec, z, tol) -> np.ndarray:
    return dyson.solve_vde(e, z, tol).m


def stability_matrix(e: EnsembleSpec, z1, z2, tol: float = 1e-12) -> np.ndarray:
    """Dense ``1 - diag(m(z1) m(z2)) S`` acting on length-N vectors."""
    m1 = _solve_m(e, z1, tol)
    m2 = _solve_m(e, z2, tol)
    return np.eye(e.n) - (m1 * m2)[:, None] * e.s


def _isolation(beta_mod: float, second_mod: float) -> tuple[bool, float]:
    isolated = second_mod >= max(ISOLATION_FLOOR, 3.0 * beta_mod)
    return isolated, float(second_mod - beta_mod)


def smallest_eig(b: np.ndarray, tol: float = 1e-10) -> StabilityEig:
    """Smallest-modulus eigenvalue of a stability matrix with both eigenvectors.

    Uses a full dense non-Hermitian eigendecomposition up to dimension 2048
    and shift-inverted power iteration beyond.
    """
    n = b.shape[0]
    if b.shape != (n, n):
        raise ValueError("stability matrix must be square")
    if n <= DENSE_EIG_LIMIT:
        vals, vl, vr = scipy.linalg.eig(b, left=True, right=True)
        order = np.argsort(np.abs(vals))
        i0 = order[0]
        beta = complex(vals[i0])
        second = float(np.abs(vals[order[1]])) if n > 1 else np.inf
        r = vr[:, i0]
        ell = vl[:, i0]
        isolated, gap = _isolation(abs(beta), second)
        return StabilityEig(beta, r, ell, isolated, gap, second)
    return _smallest_eig_iterative(b, tol)


def _smallest_eig_iterative(b: np.ndarray, tol: float) -> StabilityEig:
    n = b.shape[0]
    lu, piv = scipy.linalg.lu_factor(b)
    x = np.full(n, 1.0 + 0j) / np.sqrt(n)
    y = x.copy()
    beta = np.inf
    for _ in range(200):
        x = scipy.linalg.lu_solve((lu, piv), x)
        x /= np.linalg.norm(x)
        y = scipy.linalg.lu_solve((lu, piv), y, trans=2)
        y /= np.linalg.norm(y)
        new_beta = np.vdot(y, b @ x) / np.vdot(y, x)
        if abs(new_beta - beta) <= tol * max(1.0, abs(new_beta)):
            beta = new_beta
            break
        beta = new_beta
    # deflated power step for the second modulus
    denom = np.vdot(y, x)
    z = np.random.default_rng(0).standard_normal(n) + 0j
    z -= x * (np.vdot(y, z) / denom)
    second = np.inf
    for _ in range(100):
        z = scipy.linalg.lu_solve((lu, piv), z)
        z -= x * (np.vdot(y, z) / denom)
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        z /= nz
        second_new = 1.0 / nz if nz > 0 else np.inf
        second = abs(np.vdot(z, b @ z) / np.vdot(z, z))
    isolated, gap = _isolation(abs(beta), float(second))
    return StabilityEig(complex(beta), x, y, isolated, gap, float(second))


def _principal_pair(e: EnsembleSpec, z_low, z_up, tol: float = 1e-12) -> StabilityEig:
    """Spectral data of ``B_{z_low, z_up}`` exploiting block structure.

    For block ensembles the eigenproblem reduces to the k x k matrix
    ``1 - diag(mu1 mu2) C`` (C the weighted block profile); the remaining
    eigenvalue 1 has multiplicity N - k.  The left eigenvector follows from
    ``l = conj(r / (m1 m2))``, and the expansion is verified against the full
    operator through the fast profile action.
    """
    m1 = _solve_m(e, z_low, tol)
    m2 = _solve_m(e, z_up, tol)
    mu = m1 * m2
    if e.block_sizes is not None:
        first = np.concatenate(([0], np.cumsum(e.block_sizes)[:-1]))
        k = len(e.block_sizes)
        reduced = np.eye(k) - mu[first][:, None] * e.reduced_s()
        w, v = np.linalg.eig(reduced)
        spectrum = np.concatenate([w, [1.0 + 0j]]) if e.n > k else w
        order = np.argsort(np.abs(spectrum))
        second = float(np.abs(spectrum[order[1]])) if len(spectrum) > 1 else np.inf
        if order[0] >= len(w):
            # the block-orthogonal eigenvalue 1 is the smallest: degenerate,
            # no block-constant eigenvector; use the dense route
            b = np.eye(e.n) - mu[:, None] * e.s
            return smallest_eig(b)
        beta = complex(spectrum[order[0]])
        i0 = int(np.argmin(np.abs(w - beta)))
        r = e.expand_blocks(v[:, i0])
        r /= np.linalg.norm(r)
        ell = np.conj(r / mu)
        ell /= np.linalg.norm(ell)
        # verify both eigen relations on the full operator
        res_r = np.abs(r - mu * e.s_apply(r) - beta * r).max()
        res_l = np.abs(ell - e.s_apply(np.conj(mu) * ell) - np.conj(beta) * ell).max()
        if max(res_r, res_l) <= 1e-8 * max(1.0, abs(beta)):
            isolated, gap = _isolation(abs(beta), second)
            return StabilityEig(beta, r, ell, isolated, gap, second)
    b = np.eye(e.n) - mu[:, None] * e.s
    return smallest_eig(b)


def _reg_context(e: EnsembleSpec, z1, z2, tol: float = 1e-12):
    """Projector data and diagonal weight for the (z2, z1)-regularity test.

    Returns ``(pair, weight)`` where ``pair`` is the spectral data of
    ``B_{z2^-, z1^+}`` and ``weight = m(z1^+) m(z2^-)``.
    """
    z1 = complex(z1)
    z2 = complex(z2)
    z1p = complex(z1.real, abs(z1.imag))
    z2m = complex(z2.real, -abs(z2.imag))
    pair = _principal_pair(e, z2m, z1p, tol)
    weight = _solve_m(e, z1p, tol) * _solve_m(e, z2m, tol)
    return pair, weight


def _hs_norm(a: np.ndarray) -> float:
    """Normalized Hilbert-Schmidt norm ``<|A|^2>^(1/2)``."""
    return float(np.linalg.norm(a) / np.sqrt(a.shape[0]))


def regularity_residual(a, e: EnsembleSpec, z1, z2, tol: float = 1e-12) -> float:
    """Size of the projector component obstructing (z1, z2)-regularity.

    Returns ``||Pi_{z1^-, z2^+}[m(z1^-) a_diag m(z2^+)]||_inf / <|A|^2>^(1/2)``.
    In the far regime, detected by the smallest eigenvalue failing the
    isolation criterion, every observable is regular and the residual is 0.
    """
    a = np.asarray(a)
    hs = _hs_norm(a)
    if hs == 0:
        return 0.0
    pair, weight = _reg_context(e, z2, z1, tol)
    if not pair.isolated:
        return 0.0
    comp = pair.apply_projector(weight * np.diagonal(a))
    return float(np.abs(comp).max() / hs)


def regularize(
    b,
    e: EnsembleSpec,
    z1,
    z2,
    t: float | None = None,
    big_t: float = 1.0,
    tol: float = 1e-12,
) -> RegularDecomposition:
    """Split ``B`` into a (z2, z1)-regular part plus a diagonal correction.

    The correction direction is ``dz = zhat_{1,t} - z_{2,t}`` along the
    characteristic flow (``zhat`` reflects the first trajectory into the
    half-plane of the second) and the scalar coefficient is the ratio of the
    projector components of ``m(z1^+) m(z2^-) b_diag`` and of the same weight
    times ``dz``.  The reconstruction ``B = B_ring + b diag(dz)`` is exact.

    In the far regime, or when the denominator degenerates (leaving the
    perturbative window), the split falls back to ``B_ring = B``, ``b = 0``.
    When ``B`` is itself a multiple of ``diag(dz)`` (the identity on a flat
    profile, say) the regular part vanishes at working precision and its
    normalized residual would be a ratio of rounding noise; the reported
    residual is 0 in that case.
    """
    b = np.asarray(b)
    z1 = complex(z1)
    z2 = complex(z2)
    if t is None:
        t = big_t
    z1_t = flow.flow_map(e, z1, t, big_t, tol)
    z2_t = flow.flow_map(e, z2, t, big_t, tol)
    sgn = np.sign(z2.imag) / np.sign(z1.imag)
    zhat = z1_t.real - 1j * sgn * z1_t.imag
    dz = zhat - z2_t

    pair, weight = _reg_context(e, z1, z2, tol)
    bdiag = np.diagonal(b)
    if pair.isolated:
        denom_scale = np.vdot(pair.left_vec, pair.right_vec)
        num = np.vdot(pair.left_vec, weight * bdiag)
        den = np.vdot(pair.left_vec, weight * dz)
        floor = 1e-12 * max(np.abs(weight * dz).max(), 1e-300) * abs(denom_scale)
        if abs(den) > floor:
            scalar = num / den
        else:
            scalar = 0.0 + 0j
    else:
        scalar = 0.0 + 0j
    ring = b - scalar * np.diag(dz)
    degenerate_scale = max(_hs_norm(b), abs(scalar) * float(np.abs(dz).max()))
    if _hs_norm(ring) <= 1e-12 * degenerate_scale:
        resid = 0.0
    else:
        resid = regularity_residual(ring, e, z2, z1, tol)
    return RegularDecomposition(ring, complex(scalar), dz, resid)


def regular_part(b, e: EnsembleSpec, z1, z2, tol: float = 1e-12) -> np.ndarray:
    """Observable regular with respect to the ordered pair ``(z1, z2)``."""
    return regularize(b, e, z2, z1, tol=tol).regular_part


def decompose_S(e: EnsembleSpec, z1, z2, tol: float = 1e-12):
    """Split ``S = (S_ring + s 1^t) / N`` with (z2, z1)-regular rows.

    Each row ``p`` of ``S_ring`` (as a diagonal observable) has vanishing
    projector component; ``s_p`` is the corresponding projector ratio.  Far
    regime falls back to ``S_ring = N S``, ``s = 0``.
    """
    pair, weight = _reg_context(e, z1, z2, tol)
    ns = e.n * e.s
    if not pair.isolated:
        return ns.copy(), np.zeros(e.n, dtype=complex)
    denom = np.vdot(pair.left_vec, weight)
    nums = ns @ (np.conj(pair.left_vec) * weight)
    s_vec = nums / denom
    s_ring = ns - s_vec[:, None]
    return s_ring, s_vec


def isotropic_observable(x, y, e: EnsembleSpec, z1, z2, tol: float = 1e-12):
    """Regular matrix and scalar with ``N y x* = sqrt(N) A2 + a I`` exactly.

    ``A2`` is (z2, z1)-regular; in the far regime ``a = 0`` and
    ``A2 = sqrt(N) y x*``.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    pair, weight = _reg_context(e, z1, z2, tol)
    if pair.isolated:
        denom = np.vdot(pair.left_vec, weight)
        num = np.vdot(pair.left_vec, weight * (y * np.conj(x)))
        a = e.n * num / denom
    else:
        a = 0.0 + 0j
    a2 = np.sqrt(e.n) * (np.outer(y, np.conj(x)) - (a / e.n) * np.eye(e.n))
    return a2, complex(a)


def _stab_solve(bs: np.ndarray, rhs: np.ndarray):
    """Linear solve against the stability matrix, with a conditioned fallback."""
    try:
        sol = np.linalg.solve(bs, rhs)
        if np.all(np.isfinite(sol)):
            return sol, None
    except np.linalg.LinAlgError:
        pass
    sol, *_ = np.linalg.lstsq(bs, rhs, rcond=None)
    cond = float(np.linalg.cond(bs))
    return sol, cond


def chain_approx2(e: EnsembleSpec, z1, b, z2, tol: float = 1e-12) -> ChainApprox:
    """Deterministic approximation ``M(z1, B, z2)`` of ``G(z1) B G(z2)``.

    Computed as ``M1 B_od M2 + diag(B_stab^{-1}[m1 b_diag m2])`` via a linear
    solve against the stability matrix (never an explicit inverse); a
    near-singular solve falls back to least squares and reports the condition
    estimate in ``inputs["condition"]``.
    """
    b = np.asarray(b)
    m1 = _solve_m(e, z1, tol)
    m2 = _solve_m(e, z2, tol)
    bdiag = np.diagonal(b)
    b_od = b - np.diag(bdiag)
    bs = np.eye(e.n) - (m1 * m2)[:, None] * e.s
    diag_sol, cond = _stab_solve(bs, m1 * bdiag * m2)
    value = m1[:, None] * b_od * m2[None, :] + np.diag(diag_sol)
    inputs = {"z1": complex(z1) if np.isscalar(z1) else z1, "z2": complex(z2) if np.isscalar(z2) else z2}
    if cond is not None:
        inputs["condition"] = cond
    return ChainApprox(value, 2, inputs)


def chain_approx3(e: EnsembleSpec, z1, a1, z2, a2, tol: float = 1e-12) -> ChainApprox:
    """Deterministic approximation of ``G(z1) A1 G(z2) A2 G(z1)``.

    ``(1 - M1 M3 S)^{-1}[ M1 (A1 + S[M_12]) M_21 ]`` where the resummation
    pairs the chain's *outer* resolvents, here both at ``z1``.  The inverse is
    applied through its diagonal/off-diagonal split: the off-diagonal part
    passes through, the diagonal solves against the stability matrix at
    ``(z1, z1)``.  (Monte Carlo arbitration: pairing the outer resolvents
    matches sampled chains; pairing ``(z1, z2)`` does not.)
    """
    m12 = chain_approx2(e, z1, a1, z2, tol).value
    m21 = chain_approx2(e, z2, a2, z1, tol).value
    m1 = _solve_m(e, z1, tol)
    s_m12 = np.diag(e.s_apply(np.diagonal(m12)))
    inner = m1[:, None] * ((np.asarray(a1) + s_m12) @ m21)
    kdiag = np.diagonal(inner)
    k_od = inner - np.diag(kdiag)
    bs = np.eye(e.n) - (m1 * m1)[:, None] * e.s
    diag_sol, cond = _stab_solve(bs, kdiag)
    value = k_od + np.diag(diag_sol)
    inputs = {"z1": complex(z1), "z2": complex(z2)}
    if cond is not None:
        inputs["condition"] = cond
    return ChainApprox(value, 3, inputs)


def saturated_F(e: EnsembleSpec, z1, z2, tol: float = 1e-12) -> SaturatedF:
    """Saturated self-energy operator ``|M1 M2|^(1/2) S |M1 M2|^(1/2)``.

    Symmetric and entrywise nonnegative; returns its largest eigenvalue, the
    difference of the two largest, and the (entrywise positive) principal
    eigenvector.
    """
    m1 = _solve_m(e, z1, tol)
    m2 = _solve_m(e, z2, tol)
    w = np.sqrt(np.abs(m1 * m2))
    f = w[:, None] * e.s * w[None, :]
    f = 0.5 * (f + f.T)
    vals, vecs = np.linalg.eigh(f)
    v = vecs[:, -1]
    if v.sum() < 0:
        v = -v
    gap = float(vals[-1] - vals[-2]) if e.n > 1 else float(vals[-1])
    return SaturatedF(float(vals[-1]), gap, v)


def kappa(e: EnsembleSpec, energy: float, tol: float = 1e-12, eta_floor: float = 1e-4) -> float:
    """Susceptibility ``2 <(Im m)^2 / |m|^2> / <Im m>`` at a bulk energy.

    Evaluated at ``eta_floor`` and ``2 eta_floor`` with the same linear
    extrapolation toward the real axis as the density module.
    """

    def one(eta):
        m = _solve_m(e, complex(energy, eta), tol)
        im = m.imag
        return 2.0 * np.mean(im**2 / np.abs(m) ** 2) / np.mean(im)

    return float(2.0 * one(eta_floor) - one(2 * eta_floor))
