"""Wigner-type ensembles: block profiles, sampling, and the matrix OU flow.

An ensemble is described by an expectation vector ``a`` (nonzero only on the
diagonal of the matrix), a variance profile ``s`` with ``s[j, k] = Var H_jk``,
and a second-moment matrix ``t`` with ``t[j, k] = E[(H_jk)^2]`` for ``j != k``.
The pair ``(s, t)`` interpolates between the real-symmetric case (``t = s``
off-diagonal) and the complex-Hermitian case with vanishing second moments
(``t = 0``).

Profiles are piecewise constant over ``k`` index blocks; the block structure
is kept on the ensemble object because it makes the action of the variance
profile on block-constant vectors exact and cheap, which the Dyson solver
exploits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

REAL_SYMMETRIC = "real-symmetric"
COMPLEX_HERMITIAN = "complex-hermitian"
SYMMETRY_CLASSES = (REAL_SYMMETRIC, COMPLEX_HERMITIAN)

#: cap on the primitivity search; profiles needing a longer power are rejected
PRIMITIVITY_CAP = 8


class ProfileError(ValueError):
    """Raised when a profile or ensemble violates a structural constraint."""


@dataclass(frozen=True)
class ProfileSpec:
    """Piecewise-constant description of a Wigner-type ensemble.

    Parameters
    ----------
    a_blocks : sequence of float
        Block values of the expectation function on [0, 1], length ``k``.
    s_blocks : array_like
        ``k x k`` symmetric nonnegative block values of the variance profile.
        Entry ``[i][j]`` is the *unnormalized* variance; the ensemble divides
        by the matrix dimension.
    t_blocks : array_like or None
        ``k x k`` complex block values of the second-moment phase, with
        ``|t| <= s`` entrywise.  ``None`` selects the symmetry-class default:
        ``t = s`` for real-symmetric, ``t = 0`` for complex-Hermitian.
    symmetry : str
        One of ``"real-symmetric"`` or ``"complex-hermitian"``.
    """

    a_blocks: tuple
    s_blocks: tuple
    t_blocks: tuple | None = None
    symmetry: str = COMPLEX_HERMITIAN

    def __post_init__(self):
        a = np.asarray(self.a_blocks, dtype=float)
        s = np.asarray(self.s_blocks, dtype=float)
        object.__setattr__(self, "a_blocks", tuple(a.tolist()))
        object.__setattr__(self, "s_blocks", tuple(map(tuple, s.tolist())))
        k = a.size
        if a.ndim != 1 or k == 0:
            raise ProfileError("a_blocks must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(a)):
            raise ProfileError("a_blocks must be finite")
        if s.shape != (k, k):
            raise ProfileError(f"s_blocks must be {k}x{k}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ProfileError("s_blocks must be finite")
        if not np.array_equal(s, s.T):
            raise ProfileError("s_blocks must be symmetric")
        if np.any(s < 0):
            raise ProfileError("s_blocks must be entrywise nonnegative")
        if self.symmetry not in SYMMETRY_CLASSES:
            raise ProfileError(f"unknown symmetry class {self.symmetry!r}")
        if self.t_blocks is not None:
            t = np.asarray(self.t_blocks, dtype=complex)
            if t.shape != (k, k):
                raise ProfileError(f"t_blocks must be {k}x{k}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ProfileError("t_blocks must be finite")
            if np.any(np.abs(t) > s * (1 + 1e-12) + 1e-300):
                raise ProfileError("|t_blocks| must not exceed s_blocks entrywise")
            if self.symmetry == REAL_SYMMETRIC and not np.allclose(t, s):
                raise ProfileError(
                    "real-symmetric entries force t = s; drop t_blocks or pass s_blocks"
                )
            object.__setattr__(
                self, "t_blocks", tuple(map(tuple, t.tolist()))
            )

    @property
    def k(self) -> int:
        return len(self.a_blocks)

    def resolved_t_blocks(self) -> np.ndarray:
        """Second-moment block values with the symmetry-class default filled in."""
        s = np.asarray(self.s_blocks, dtype=float)
        if self.t_blocks is not None:
            return np.asarray(self.t_blocks, dtype=complex)
        if self.symmetry == REAL_SYMMETRIC:
            return s.astype(complex)
        return np.zeros_like(s, dtype=complex)


def flat_profile(symmetry: str = COMPLEX_HERMITIAN, variance: float = 1.0) -> ProfileSpec:
    """Single-block profile with ``S_jk = variance / N`` (standard Wigner)."""
    return ProfileSpec((0.0,), ((variance,),), None, symmetry)


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Concrete N-dimensional ensemble built from a profile.

    Attributes
    ----------
    n : int
        Matrix dimension.
    a : ndarray
        Length-``n`` real expectation vector.
    s : ndarray
        ``n x n`` variance profile, entries in ``[0, c_sup / n]``.
    t : ndarray
        ``n x n`` complex second-moment matrix, ``|t| <= s``, zero diagonal.
    symmetry : str
        Symmetry class of the sampled matrices.
    block_sizes : tuple or None
        Sizes of the contiguous profile blocks when the ensemble came from a
        :class:`ProfileSpec`; enables exact O(N k) application of ``s``.
    """

    n: int
    a: np.ndarray
    s: np.ndarray
    t: np.ndarray
    symmetry: str
    c_sup: float = field(default=0.0)
    c_a: float = field(default=0.0)
    block_sizes: tuple | None = None
    a_block: np.ndarray | None = None
    s_block: np.ndarray | None = None

    def __post_init__(self):
        if self.s.shape != (self.n, self.n):
            raise ProfileError("variance profile has wrong shape")
        if not np.array_equal(self.s, self.s.T):
            raise ProfileError("variance profile must be symmetric")
        if np.any(self.s < 0):
            raise ProfileError("variance profile must be nonnegative")
        if self.t.shape != (self.n, self.n):
            raise ProfileError("second-moment matrix has wrong shape")
        if np.any(np.abs(np.diagonal(self.t)) > 0):
            raise ProfileError("second-moment matrix must have zero diagonal")
        off = ~np.eye(self.n, dtype=bool)
        if np.any(np.abs(self.t[off]) > self.s[off] * (1 + 1e-12) + 1e-300):
            raise ProfileError("|t| must not exceed s entrywise off the diagonal")
        object.__setattr__(self, "c_sup", float(self.n * self.s.max()))
        object.__setattr__(self, "c_a", float(np.abs(self.a).max()))

    @property
    def block_index(self) -> np.ndarray | None:
        if self.block_sizes is None:
            return None
        return np.repeat(np.arange(len(self.block_sizes)), self.block_sizes)

    def block_weights(self) -> np.ndarray:
        """Fractions n_b / n of the profile blocks."""
        if self.block_sizes is None:
            raise ProfileError("ensemble carries no block structure")
        return np.asarray(self.block_sizes, dtype=float) / self.n

    def reduced_s(self) -> np.ndarray:
        """k x k matrix C with (S v)_block = C @ v_block for block-constant v."""
        return self.s_block * self.block_weights()[None, :]

    def s_apply(self, v: np.ndarray) -> np.ndarray:
        """Apply the variance profile, ``(S v)_j = sum_k S_jk v_k``.

        Uses the block structure when available (exact, O(N k)); otherwise a
        dense matrix-vector product.
        """
        v = np.asarray(v)
        if self.block_sizes is None:
            return self.s @ v
        sizes = np.asarray(self.block_sizes)
        edges = np.concatenate(([0], np.cumsum(sizes)))
        sums = np.add.reduceat(v, edges[:-1], axis=0)
        out_block = (self.s_block @ sums) / self.n
        return np.repeat(out_block, sizes, axis=0)

    def expand_blocks(self, u: np.ndarray) -> np.ndarray:
        """Lift a per-block vector (last axis k) to a full length-n vector."""
        if self.block_sizes is None:
            raise ProfileError("ensemble carries no block structure")
        return np.repeat(u, self.block_sizes, axis=-1)


def _block_sizes(k: int, n: int) -> tuple:
    # last block absorbs the remainder rows
    base = n // k
    sizes = [base] * (k - 1) + [n - base * (k - 1)]
    return tuple(sizes)


def build_ensemble(profile: ProfileSpec, n: int) -> EnsembleSpec:
    """Instantiate a profile at dimension ``n``.

    Index ``j`` belongs to block ``ceil(j k / n)`` (contiguous equal blocks);
    when ``n`` is not divisible by ``k`` the last block absorbs the remainder.
    Variances are the block values divided by ``n``.
    """
    k = profile.k
    if n < k:
        raise ProfileError(f"need n >= k blocks, got n={n}, k={k}")
    sizes = _block_sizes(k, n)
    idx = np.repeat(np.arange(k), sizes)
    a = np.asarray(profile.a_blocks, dtype=float)[idx]
    s_blk = np.asarray(profile.s_blocks, dtype=float)
    t_blk = profile.resolved_t_blocks()
    s = s_blk[np.ix_(idx, idx)] / n
    t = t_blk[np.ix_(idx, idx)] / n
    np.fill_diagonal(t, 0.0)
    return EnsembleSpec(
        n=n,
        a=a,
        s=s,
        t=t,
        symmetry=profile.symmetry,
        block_sizes=sizes,
        a_block=np.asarray(profile.a_blocks, dtype=float),
        s_block=s_blk,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Numerical check of the structural assumptions on (a, S).

    ``flat_upper`` is ``N max S_jk``; ``primitivity_order`` the smallest
    ``L <= 8`` with ``S^L`` entrywise positive (``None`` if there is none, in
    which case the profile is flagged as non-primitive); ``primitivity_floor``
    is ``N min (S^L)_jk``; ``m_sup`` the largest sup-norm of the Dyson solution
    over the probe grid.
    """

    flat_upper: float
    primitivity_order: int | None
    primitivity_floor: float | None
    m_sup: float


def _primitivity(e: EnsembleSpec) -> tuple[int | None, float | None]:
    if e.block_sizes is not None:
        # block reduction: (S^L)_jk = (R^(L-1) s_block)[bi, bj] / n
        # with R = s_block * diag(sizes) / n; positivity transfers exactly.
        sizes = np.asarray(e.block_sizes, dtype=float)
        r = e.s_block * sizes[None, :] / e.n
        power = np.asarray(e.s_block, dtype=float)
        for order in range(1, PRIMITIVITY_CAP + 1):
            if np.all(power > 0):
                return order, float(power.min())
            power = r @ power
        return None, None
    power = np.array(e.s)
    for order in range(1, PRIMITIVITY_CAP + 1):
        if np.all(power > 0):
            return order, float(e.n * power.min())
        power = power @ e.s
    return None, None


def check_assumptions(e: EnsembleSpec, probe_grid) -> AssumptionReport:
    """Evaluate flatness, uniform primitivity, and the Dyson sup bound.

    The sup bound is necessarily sampled: it is taken over the finite probe
    grid only, all of whose points must lie off the real axis.
    """
    from . import dyson

    probes = list(probe_grid)
    if not probes:
        raise ValueError("probe grid must be nonempty")
    if any(complex(z).imag == 0 for z in probes):
        raise ValueError("probe grid points must have nonzero imaginary part")
    order, floor = _primitivity(e)
    m_sup = 0.0
    for z in probes:
        sol = dyson.solve_vde(e, complex(z))
        m_sup = max(m_sup, float(np.abs(sol.m).max()))
    return AssumptionReport(
        flat_upper=float(e.n * e.s.max()),
        primitivity_order=order,
        primitivity_floor=floor,
        m_sup=m_sup,
    )


def _standardized_entries(shape, rho, rng, entry_law: str):
    """Entries with E Z = 0, E|Z|^2 = 1 and E Z^2 = rho (|rho| <= 1)."""
    r = np.abs(rho)
    theta = np.angle(rho + 0j)
    if entry_law == "gaussian":
        x1 = rng.standard_normal(shape)
        x2 = rng.standard_normal(shape)
    elif entry_law == "rademacher":
        x1 = rng.integers(0, 2, shape) * 2.0 - 1.0
        x2 = rng.integers(0, 2, shape) * 2.0 - 1.0
    else:
        raise ValueError(f"unknown entry law {entry_law!r}")
    return np.exp(0.5j * theta) * (
        np.sqrt((1 + r) / 2) * x1 + 1j * np.sqrt((1 - r) / 2) * x2
    )


def _noise_matrix(e: EnsembleSpec, rng, entry_law: str = "gaussian") -> np.ndarray:
    """Centered Hermitian sample with Var W_jk = S_jk, E W_jk^2 = T_jk (j != k)."""
    n = e.n
    if e.symmetry == REAL_SYMMETRIC:
        if entry_law == "gaussian":
            draws = rng.standard_normal((n, n))
        else:
            draws = rng.integers(0, 2, (n, n)) * 2.0 - 1.0
        w = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        w[iu] = draws[iu] * np.sqrt(e.s[iu])
        w = w + w.T
        w[np.diag_indices(n)] = draws[np.diag_indices(n)] * np.sqrt(np.diagonal(e.s))
        return w
    s_off = np.array(e.s)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(s_off > 0, e.t / np.where(s_off > 0, s_off, 1.0), 0.0)
    z = _standardized_entries((n, n), rho, rng, entry_law)
    diag_draws = (
        rng.standard_normal(n)
        if entry_law == "gaussian"
        else rng.integers(0, 2, n) * 2.0 - 1.0
    )
    w = np.zeros((n, n), dtype=complex)
    iu = np.triu_indices(n, 1)
    w[iu] = z[iu] * np.sqrt(e.s[iu])
    w = w + w.conj().T
    w[np.diag_indices(n)] = diag_draws * np.sqrt(np.diagonal(e.s))
    return w


def sample_matrix(e: EnsembleSpec, seed: int, entry_law: str = "gaussian") -> np.ndarray:
    """Draw one matrix from the ensemble.

    Entries are independent up to the Hermitian symmetry, with
    ``E H_jk = delta_jk a_j``, ``Var H_jk = S_jk`` and ``E (H_jk)^2 = T_jk``
    off the diagonal.  Gaussian entries by default; ``entry_law="rademacher"``
    is a test hook with the same first two moments.

    The draw is a pure function of ``(e, seed, entry_law)``.
    """
    rng = np.random.default_rng(seed)
    w = _noise_matrix(e, rng, entry_law)
    h = w.copy()
    h[np.diag_indices(e.n)] += e.a
    return h


def ou_step(
    e: EnsembleSpec,
    h: np.ndarray,
    dt: float,
    seed: int,
    zero_noise: bool = False,
) -> np.ndarray:
    """One Euler-Maruyama step of the Ornstein-Uhlenbeck matrix flow.

    ``dH = -1/2 (H - diag a) dt + sqrt(S) o dB`` where the Brownian increment
    has its entrywise second moments matched to ``(S, T)``, so the first two
    moments of the ensemble are stationary along the flow up to O(dt^2) per
    step.  ``dt = 0`` returns the input unchanged; ``zero_noise`` is a test
    hook that drops the stochastic term.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return h.copy()
    drift = -0.5 * dt * h
    drift[np.diag_indices(e.n)] += 0.5 * dt * e.a
    out = h + drift
    if not zero_noise:
        rng = np.random.default_rng(seed)
        out = out + np.sqrt(dt) * _noise_matrix(e, rng)
    return out


def apply_S_diag(e: EnsembleSpec, b: np.ndarray) -> np.ndarray:
    """Diagonal self-energy component: ``diag(S[diag(B)])``."""
    b = np.asarray(b)
    if b.shape != (e.n, e.n):
        raise ValueError(f"expected a {e.n}x{e.n} matrix, got {b.shape}")
    return np.diag(e.s_apply(np.diagonal(b)))


def apply_T_offdiag(e: EnsembleSpec, b: np.ndarray) -> np.ndarray:
    """Off-diagonal self-energy component: ``T o (B_offdiag)^t``."""
    b = np.asarray(b)
    if b.shape != (e.n, e.n):
        raise ValueError(f"expected a {e.n}x{e.n} matrix, got {b.shape}")
    b_od = b - np.diag(np.diagonal(b))
    return e.t * b_od.T


# -- binary matrix persistence ------------------------------------------------
#
# 8-byte header: uint32 N, uint32 flag (0 real, 1 complex), little-endian.
# Payload: row-major float64; complex entries as adjacent (re, im) pairs.

_HEADER = struct.Struct("<II")


def save_matrix(path, m: np.ndarray) -> None:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("only square matrices are persisted")
    is_complex = np.iscomplexobj(m)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(m.shape[0], 1 if is_complex else 0))
        if is_complex:
            inter = np.empty((m.shape[0], m.shape[1], 2))
            inter[..., 0] = m.real
            inter[..., 1] = m.imag
            fh.write(inter.astype("<f8").tobytes())
        else:
            fh.write(m.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        n, flag = _HEADER.unpack(fh.read(_HEADER.size))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if flag == 0:
        return raw.reshape(n, n).copy()
    pairs = raw.reshape(n, n, 2)
    return (pairs[..., 0] + 1j * pairs[..., 1]).copy()
