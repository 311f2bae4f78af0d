"""Monte Carlo engine: resolvent statistics, ETH overlaps, scaling fits.

Sampling is deterministic and order-independent: the stream for sample ``i``
at dimension ``n`` is derived from ``(seed, n, i)``, and aggregations sort by
sample index, so a parallel run reproduces the serial statistics bitwise.
Fluctuation sizes are aggregated by medians; the heavy right tails at small
eta corrupt means long before they touch medians.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dyson, stability
from .ensemble import EnsembleSpec, ProfileSpec, build_ensemble, sample_matrix

#: margin in the bulk-domain constraint eta >= N^(-1+eps)
DOMAIN_EPS = 0.1
ETA_FLOOR = 1e-4


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares power law through (log x, log y)."""

    exponent: float
    intercept: float
    stderr: float
    r_squared: float
    points: tuple


@dataclass(frozen=True)
class LocalLawStats:
    """Per-sample normalized fluctuation sizes of one- and two-resolvent chains.

    Entries of ``phi1`` are ``N sqrt(eta1) |<(G1 - M1) A1>| / <|A1|^2>^(1/2)``;
    ``phi2_hs`` and ``phi2_op`` normalize ``|<(G1 A1 G2 - M) A2>|`` by
    ``sqrt(N eta)`` and the Hilbert-Schmidt resp. operator norm of ``A2``;
    ``phi11`` carries the extra ``sqrt(eta)`` of the mixed regular/general
    quantity.  ``metadata`` echoes sizes, spectral parameters, the observables'
    regularity residuals, and the seed.
    """

    phi1: np.ndarray
    phi2_hs: np.ndarray
    phi2_op: np.ndarray
    phi11: np.ndarray
    metadata: dict


@dataclass(frozen=True)
class OverlapRow:
    """Per-size ETH statistics (medians over samples unless noted)."""

    n: int
    max_dev_median: float
    max_dev_mean: float
    scaled_dev_median: float
    rigidity_median: float
    lambda_centered_dev_median: float
    bulk_size: int
    samples: int


@dataclass(frozen=True)
class OverlapReport:
    """ETH deviation statistics across sizes with the fitted exponent.

    ``fit`` is ``None`` when fewer than three sizes were run (a scaling fit
    needs at least three points).
    """

    per_n: tuple
    fit: ScalingFit | None
    rho_min: float
    observable_blocks: tuple


def fit_exponent(points) -> ScalingFit:
    """Slope of log y against log x with the standard error of the slope.

    Requires at least three points with positive coordinates and a
    non-degenerate x-range; all-explained fits report ``stderr = 0``.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points for a scaling fit")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(xs <= 0) or np.any(~np.isfinite(xs)):
        raise ValueError("x values must be positive and finite")
    if np.any(ys <= 0) or np.any(~np.isfinite(ys)):
        raise ValueError("degenerate data: y values must be positive and finite")
    lx, ly = np.log(xs), np.log(ys)
    sxx = np.sum((lx - lx.mean()) ** 2)
    if sxx <= 1e-20:
        raise ValueError("degenerate x-range")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (slope * lx + intercept)
    rss = float(np.sum(resid**2))
    tss = float(np.sum((ly - ly.mean()) ** 2))
    dof = len(pts) - 2
    stderr = float(np.sqrt(rss / dof / sxx)) if dof > 0 else 0.0
    r2 = 1.0 if tss == 0 else 1.0 - rss / tss
    return ScalingFit(slope, intercept, stderr, float(r2), tuple(zip(lx, ly)))


def sample_seed(seed: int, n: int, index: int) -> int:
    """Derived 64-bit stream for sample ``index`` at dimension ``n``."""
    ss = np.random.SeedSequence(entropy=(int(seed), int(n), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _sample_map(fn, count: int, workers: int = 1) -> list:
    """Evaluate ``fn(i)`` for i in range(count), optionally on a thread pool.

    Results come back ordered by sample index regardless of completion order.
    """
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def resolvent(h: np.ndarray, z) -> np.ndarray:
    """Dense resolvent ``(h - diag z)^{-1}`` by LU solve."""
    n = h.shape[0]
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        shift = complex(z) * np.eye(n)
        if complex(z).imag == 0:
            raise ValueError("spectral parameter must be off the real axis")
    else:
        zv = np.asarray(z, dtype=complex)
        ims = zv.imag
        if np.any(ims == 0) or (np.any(ims > 0) and np.any(ims < 0)):
            raise ValueError("Im z must be nonzero and one-signed")
        shift = np.diag(zv)
    return np.linalg.solve(h - shift, np.eye(n, dtype=complex))


def resolvent_symmetry_gap(h: np.ndarray, z) -> float:
    """On-demand check of ``G(conj z) = G(z)*``; returns the max deviation."""
    g = resolvent(h, z)
    gc = resolvent(h, np.conj(z))
    return float(np.abs(gc - g.conj().T).max())


def _hs(a: np.ndarray) -> float:
    return float(np.linalg.norm(a) / np.sqrt(a.shape[0]))


def _avg_tr(x: np.ndarray, y: np.ndarray) -> complex:
    """Normalized trace ``<X Y> = Tr[X Y] / N``."""
    return complex((x * y.T).sum() / x.shape[0])


def phi_stats(
    e: EnsembleSpec,
    z1,
    z2,
    a1: np.ndarray,
    a2: np.ndarray,
    samples: int,
    seed: int,
    workers: int = 1,
) -> LocalLawStats:
    """Sample the normalized one- and two-resolvent fluctuation statistics.

    The chain centering is the deterministic approximation ``M(z1, A1, z2)``;
    ``eta`` is ``min |Im z_j|`` (terminal-time slice).  The observables are
    used as passed; their regularity residuals are recorded in the metadata
    rather than enforced.
    """
    z1, z2 = complex(z1), complex(z2)
    eta1 = abs(z1.imag)
    eta = min(eta1, abs(z2.imag))
    n = e.n
    m1 = dyson.solve_vde(e, z1).m
    m12 = stability.chain_approx2(e, z1, a1, z2).value
    hs1, hs2 = _hs(a1), _hs(a2)
    op2 = float(np.linalg.norm(a2, 2))
    if hs1 == 0:
        zeros = np.zeros(samples)
        meta = {"n": n, "z1": z1, "z2": z2, "samples": samples, "seed": seed}
        return LocalLawStats(zeros, zeros, zeros, zeros, meta)

    def one(i: int):
        h = sample_matrix(e, sample_seed(seed, n, i))
        g1 = resolvent(h, z1)
        g2 = resolvent(h, z2)
        tr1 = _avg_tr(g1 - np.diag(m1), a1)
        k = g1 @ a1 @ g2 - m12
        tr2 = _avg_tr(k, a2)
        return abs(tr1), abs(tr2)

    rows = _sample_map(one, samples, workers)
    t1 = np.array([r[0] for r in rows])
    t2 = np.array([r[1] for r in rows])
    phi1 = n * np.sqrt(eta1) * t1 / hs1
    phi2_hs = np.sqrt(n * eta) * t2 / (hs1 * hs2) if hs2 > 0 else np.zeros(samples)
    phi2_op = np.sqrt(n * eta) * t2 / (hs1 * op2) if op2 > 0 else np.zeros(samples)
    phi11 = phi2_op * np.sqrt(eta)
    meta = {
        "n": n,
        "z1": z1,
        "z2": z2,
        "samples": samples,
        "seed": seed,
        "regularity_residual_a1": stability.regularity_residual(a1, e, z1, z2),
        "regularity_residual_a2": stability.regularity_residual(a2, e, z2, z1),
    }
    return LocalLawStats(phi1, phi2_hs, phi2_op, phi11, meta)


def observable_from_blocks(blocks, n: int) -> np.ndarray:
    """Diagonal observable sampled from a fixed block profile on [0, 1].

    The same device as the variance profile, so the Hilbert-Schmidt norm is
    stable across sizes and cross-N fits compare like with like.
    """
    blocks = np.asarray(blocks, dtype=float)
    k = blocks.size
    base = n // k
    sizes = [base] * (k - 1) + [n - base * (k - 1)]
    return np.diag(np.repeat(blocks, sizes))


def crossed_rank_one(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Hilbert-Schmidt-normalized rank-one pair coupling two basis directions.

    ``A1 = sqrt(n) e_2 e_1^H`` and ``A2 = sqrt(n) e_1 e_2^H``.  Both have zero
    diagonal, hence are regular for every spectral pair, and they saturate the
    averaged two-resolvent law (full-rank diagonal observables fluctuate at
    the parametrically smaller 1/(N eta) in the conjugate-pair configuration).
    """
    a1 = np.zeros((n, n), dtype=complex)
    a2 = np.zeros((n, n), dtype=complex)
    a1[1, 0] = np.sqrt(n)
    a2[0, 1] = np.sqrt(n)
    return a1, a2


def _as_observable(spec, n: int) -> np.ndarray:
    """Accept a ready matrix or a diagonal block profile."""
    arr = np.asarray(spec)
    if arr.ndim == 2:
        if arr.shape != (n, n):
            raise ValueError(f"observable must be {n}x{n}, got {arr.shape}")
        return arr
    return observable_from_blocks(arr, n)


def _density_grid(e: EnsembleSpec, points: int = 1201) -> np.ndarray:
    row_sum = float(e.s_apply(np.ones(e.n)).max())
    half = float(np.abs(e.a).max()) + 2.0 * np.sqrt(row_sum) + 0.75
    return np.linspace(-half, half, points)


def _quantile_frame(e: EnsembleSpec, rho_min: float, eta_floor: float = ETA_FLOOR):
    """Quantiles, bulk set, and the ETH centering data for one ensemble."""
    dens = dyson.density(e, _density_grid(e), eta_floor)
    gamma = dens.quantiles
    if e.block_sizes is not None:
        mb1, w = dyson._grid_im_m(e, gamma, eta_floor, 1e-12)
        mb2, _ = dyson._grid_im_m(e, gamma, 2 * eta_floor, 1e-12)
        im_m = 2 * mb1.imag - mb2.imag
        im_full = e.expand_blocks(im_m)
    else:
        sols1 = dyson.continue_vde(e, gamma + 1j * eta_floor)
        sols2 = dyson.continue_vde(e, gamma + 2j * eta_floor)
        im_full = np.stack(
            [2 * s1.m.imag - s2.m.imag for s1, s2 in zip(sols1, sols2)]
        )
        w = np.full(e.n, 1.0 / e.n)
    rho_at_gamma = np.maximum(im_full.mean(axis=1), 0.0) / np.pi
    bulk = np.nonzero(rho_at_gamma >= rho_min)[0]
    return dens, gamma, im_full, rho_at_gamma, bulk


def eth_overlaps(
    e_family: ProfileSpec,
    b_blocks,
    n_list,
    samples: int,
    rho_min: float,
    seed: int,
    workers: int = 1,
    eta_floor: float = ETA_FLOOR,
) -> OverlapReport:
    """Measure eigenvector-overlap deviations from the ETH centering.

    For each size, each sample is fully diagonalized; the deviation matrix is
    ``<u_j, B u_k> - delta_jk <Im M(gamma_j) B> / (pi rho(gamma_j))`` over the
    bulk index set, centered at the quantiles ``gamma_j`` (the alternative
    centering at the sampled eigenvalue is reported as a diagnostic).  The
    exponent of the median max deviation against N is fitted on a log-log
    scale.
    """
    n_list = [int(n) for n in n_list]
    if sorted(n_list) != n_list:
        raise ValueError("n_list must be ascending")
    rows = []
    for n in n_list:
        e = build_ensemble(e_family, n)
        b = observable_from_blocks(b_blocks, n)
        bvec = np.diagonal(b).copy()
        hs_b = _hs(b)
        dens, gamma, im_full, rho_g, bulk = _quantile_frame(e, rho_min, eta_floor)
        if bulk.size == 0:
            raise ValueError(f"empty bulk index set at n={n}; lower rho_min")
        centering = (im_full * bvec[None, :]).mean(axis=1) / (np.pi * rho_g)
        c_bulk = centering[bulk]
        gamma_bulk = gamma[bulk]

        def one(i: int, n=n, e=e, bvec=bvec, bulk=bulk, c_bulk=c_bulk, gamma_bulk=gamma_bulk, gamma=gamma, centering=centering):
            h = sample_matrix(e, sample_seed(seed, n, i))
            lam, u = np.linalg.eigh(h)
            ub = u[:, bulk]
            overlaps = (ub.conj().T * bvec) @ ub
            dev = overlaps - np.diag(c_bulk)
            max_dev = float(np.abs(dev).max())
            # diagnostic: center the diagonal at the sampled eigenvalue instead
            c_at_lambda = np.interp(lam[bulk], gamma, centering)
            dev_l = overlaps - np.diag(c_at_lambda)
            max_dev_l = float(np.abs(dev_l).max())
            rig = float((n * np.abs(lam[bulk] - gamma_bulk)).max())
            return max_dev, max_dev_l, rig

        res = _sample_map(one, samples, workers)
        max_devs = np.array([r[0] for r in res])
        max_devs_l = np.array([r[1] for r in res])
        rigs = np.array([r[2] for r in res])
        rows.append(
            OverlapRow(
                n=n,
                max_dev_median=float(np.median(max_devs)),
                max_dev_mean=float(max_devs.mean()),
                scaled_dev_median=float(np.sqrt(n) * np.median(max_devs) / hs_b),
                rigidity_median=float(np.median(rigs)),
                lambda_centered_dev_median=float(np.median(max_devs_l)),
                bulk_size=int(bulk.size),
                samples=samples,
            )
        )
    fit = (
        fit_exponent([(r.n, r.max_dev_median) for r in rows])
        if len(rows) >= 3
        else None
    )
    return OverlapReport(tuple(rows), fit, rho_min, tuple(np.asarray(b_blocks, float).tolist()))


def _single_resolvent_medians(e, z, observables: dict, samples, seed, workers=1) -> dict:
    """Median |<(G - M) A>| for several observables sharing the samples."""
    z = complex(z)
    m = dyson.solve_vde(e, z).m
    names = sorted(observables)

    def one(i: int):
        h = sample_matrix(e, sample_seed(seed, e.n, i))
        g = resolvent(h, z)
        gm = g - np.diag(m)
        return [abs(_avg_tr(gm, observables[k])) for k in names]

    rows = np.array(_sample_map(one, samples, workers))
    return {k: float(np.median(rows[:, j])) for j, k in enumerate(names)}


def single_resolvent_law(
    e_family: ProfileSpec,
    z,
    a_blocks,
    n_list,
    samples: int,
    seed: int,
    workers: int = 1,
    regularize: bool = True,
) -> ScalingFit:
    """Fit the size scaling of ``|<(G - M) A>|`` at fixed eta.

    The observable is rebuilt and (by default) regularized with respect to
    ``(conj z, z)`` at every size; the optimal averaged law at fixed eta gives
    slope -1.
    """
    z = complex(z)
    pts = []
    for n in n_list:
        e = build_ensemble(e_family, int(n))
        a = observable_from_blocks(a_blocks, int(n))
        if regularize:
            a = stability.regularize(a, e, z, z).regular_part
        med = _single_resolvent_medians(e, z, {"a": a}, samples, seed, workers)["a"]
        pts.append((int(n), med))
    return fit_exponent(pts)


def two_resolvent_sweep(
    e: EnsembleSpec,
    pair_list,
    observable_pairs: dict,
    samples: int,
    seed: int,
    workers: int = 1,
) -> dict:
    """Median |<(G1 A1 G2 - M) A2>| per (z1, z2) pair, shared samples.

    ``observable_pairs`` maps a label to a callable ``(e, z1, z2) -> (A1, A2)``
    built per pair (regularization depends on the spectral parameters).
    Returns ``{label: [(pair_index, median), ...]}`` flattened into arrays.
    """
    labels = sorted(observable_pairs)
    medians: dict = {k: [] for k in labels}
    for z1, z2 in pair_list:
        z1, z2 = complex(z1), complex(z2)
        built = {k: observable_pairs[k](e, z1, z2) for k in labels}
        centerings = {
            k: stability.chain_approx2(e, z1, built[k][0], z2).value for k in labels
        }

        def one(i: int):
            h = sample_matrix(e, sample_seed(seed, e.n, i))
            g1 = resolvent(h, z1)
            g2 = resolvent(h, z2)
            out = []
            for k in labels:
                a1, a2 = built[k]
                val = _avg_tr(g1 @ a1 @ g2 - centerings[k], a2)
                out.append(abs(val))
            return out

        rows = np.array(_sample_map(one, samples, workers))
        for j, k in enumerate(labels):
            medians[k].append(float(np.median(rows[:, j])))
    return medians


def check_eta_domain(n: int, eta_list, eta_star: float = 1.0, eps: float = DOMAIN_EPS):
    """Reject sweep etas outside the bulk domain [N^(-1+eps), eta_star]."""
    lo = n ** (-1.0 + eps)
    bad_low = [float(x) for x in eta_list if x < lo]
    bad_high = [float(x) for x in eta_list if x > eta_star]
    if bad_low:
        raise ValueError(
            f"eta values {bad_low} violate the bulk-domain constraint "
            f"eta >= N^(-1+{eps}) = {lo:.3e} at N={n}"
        )
    if bad_high:
        raise ValueError(f"eta values {bad_high} exceed eta_star = {eta_star}")


def eta_scaling_law(
    e_family: ProfileSpec,
    e1: float,
    e2: float,
    a1_spec,
    a2_spec,
    eta_list,
    n_fixed: int,
    samples: int,
    seed: int,
    workers: int = 1,
    regularize: bool = True,
    eta_star: float = 1.0,
) -> ScalingFit:
    """Fit the eta scaling of the averaged two-resolvent fluctuation at fixed N.

    Pairs are ``z1 = E1 + i eta`` against ``z2 = E2 - i eta``; the observables
    may be given as matrices or as diagonal block profiles.  Regular
    observables of unit Hilbert-Schmidt norm give slope -1/2 (saturated by the
    rank-one pair of :func:`crossed_rank_one`), while general ones fall off
    strictly faster.
    """
    etas = [float(x) for x in eta_list]
    check_eta_domain(n_fixed, etas, eta_star)
    e = build_ensemble(e_family, int(n_fixed))
    raw1 = _as_observable(a1_spec, int(n_fixed))
    raw2 = _as_observable(a2_spec, int(n_fixed))

    def build(e_, z1, z2):
        if not regularize:
            return raw1, raw2
        a1 = stability.regularize(raw1, e_, z2, z1).regular_part
        a2 = stability.regularize(raw2, e_, z1, z2).regular_part
        return a1, a2

    pairs = [(complex(e1, eta), complex(e2, -eta)) for eta in etas]
    med = two_resolvent_sweep(e, pairs, {"obs": build}, samples, seed, workers)["obs"]
    return fit_exponent(list(zip(etas, med)))
