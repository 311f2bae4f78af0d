"""Acceptance suite: one test per criterion, one printed pass/fail line each.

The Monte Carlo criteria run at the sizes stated in their tolerances (up to
N = 1024 with tens of samples), so the module takes on the order of ten
minutes end to end.  Heavy runs are shared through module-scoped fixtures.
"""

import numpy as np
import pytest

from wtlab import dyson
from wtlab import ensemble as ens
from wtlab import flow
from wtlab import harness
from wtlab import stability as stab

from conftest import semicircle_m

FLAT = ens.flat_profile("complex-hermitian")
TWO_BLOCK = ens.ProfileSpec((0.3, -0.4), ((1.0, 2.0), (2.0, 1.0)), None, "complex-hermitian")
TWO_BLOCK_REAL = ens.ProfileSpec((0.3, -0.4), ((1.0, 2.0), (2.0, 1.0)), None, "real-symmetric")


def _report(num, name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} ({name}): {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# -- 1: Dyson correctness -------------------------------------------------------


def test_criterion_01_dyson_correctness():
    e = ens.build_ensemble(FLAT, 64)
    probes = [complex(en, eta) for en in np.linspace(-1.8, 1.8, 12) for eta in (1.0, 0.1, 0.01, 1e-4)]
    probes += [1j, 2j]
    assert len(probes) == 50
    worst_res, worst_err = 0.0, 0.0
    for z in probes:
        sol = dyson.solve_vde(e, z, tol=3e-13)
        worst_res = max(worst_res, sol.residual)
        worst_err = max(worst_err, float(np.abs(sol.m - semicircle_m(z)).max()))
    named = {
        1j: 0.6180339887j,
        2j: 0.4142135624j,
    }
    pinned = max(
        abs(dyson.solve_vde(e, z).m[0] - val) for z, val in named.items()
    )
    ok = worst_res <= 1e-12 and worst_err <= 1e-10 and pinned <= 1e-9
    _report(
        1, "dyson",
        ok,
        f"max residual {worst_res:.2e} (<=1e-12), max semicircle error "
        f"{worst_err:.2e} (<=1e-10) over 50 probes incl. z=i, 2i",
    )


# -- 2: density -----------------------------------------------------------------


def test_criterion_02_density():
    e_flat = ens.build_ensemble(FLAT, 64)
    prof_flat = dyson.density(e_flat, np.linspace(-2.5, 2.5, 801), 1e-4)
    err0 = abs(prof_flat.rho_at(0.0) - 1 / np.pi)
    err1 = abs(prof_flat.rho_at(1.0) - np.sqrt(3) / (2 * np.pi))
    mass_flat = abs(prof_flat.total_mass - 1.0)

    e_blk = ens.build_ensemble(TWO_BLOCK, 128)
    grid = np.linspace(-4.0, 4.0, 1601)
    prof_blk = dyson.density(e_blk, grid, 1e-4)
    mass_blk = abs(prof_blk.total_mass - 1.0)

    # empirical eigenvalue distribution vs the self-consistent density
    n, samples = 2000, 20
    e_big = ens.build_ensemble(TWO_BLOCK_REAL, n)
    prof_big = dyson.density(e_big, grid, 1e-4)
    eigs = np.concatenate([
        np.linalg.eigvalsh(ens.sample_matrix(e_big, harness.sample_seed(2024, n, i)))
        for i in range(samples)
    ])
    eigs.sort()
    dx = np.diff(grid)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (prof_big.rho[1:] + prof_big.rho[:-1]) * dx)))
    cdf /= cdf[-1]
    model = np.interp(eigs, grid, cdf)
    m = eigs.size
    ks = max(
        float(np.abs(np.arange(1, m + 1) / m - model).max()),
        float(np.abs(np.arange(m) / m - model).max()),
    )
    ok = err0 <= 1e-6 and err1 <= 1e-6 and mass_flat <= 1e-4 and mass_blk <= 1e-4 and ks <= 0.02
    _report(
        2, "density",
        ok,
        f"rho(0) err {err0:.1e}, rho(1) err {err1:.1e} (<=1e-6); mass defects "
        f"{mass_flat:.1e}/{mass_blk:.1e} (<=1e-4); KS {ks:.4f} (<=0.02)",
    )


# -- 3: stability spectral data -------------------------------------------------


def test_criterion_03_stability_spectral_data():
    details = []
    ok = True

    # projector identities at a conjugate bulk pair
    for profile, energy in ((FLAT, 0.0), (TWO_BLOCK, 0.2)):
        e = ens.build_ensemble(profile, 64)
        eta = 1e-3
        bmat = stab.stability_matrix(e, complex(energy, -eta), complex(energy, eta))
        eig = stab.smallest_eig(bmat)
        pi = eig.projector()
        r1 = float(np.abs(pi @ pi - pi).max())
        r2 = float(np.abs(bmat @ pi - eig.beta * pi).max())
        ok &= r1 <= 1e-8 and r2 <= 1e-8
        details.append(f"Pi residuals {max(r1, r2):.1e}")

    # explicit projector at the real axis
    worst_pi = 0.0
    for profile, energy in ((FLAT, 0.0), (TWO_BLOCK, 0.2)):
        e = ens.build_ensemble(profile, 64)
        eta = 1e-6
        eig = stab.smallest_eig(
            stab.stability_matrix(e, complex(energy, -eta), complex(energy, eta))
        )
        m = dyson.solve_vde(e, complex(energy, eta)).m
        im, am = m.imag, np.abs(m)
        explicit = np.outer(im, im / am**2) / np.sum(im**2 / am**2)
        worst_pi = max(worst_pi, float(np.abs(eig.projector() - explicit).max()))
    ok &= worst_pi <= 1e-4
    details.append(f"explicit-Pi error {worst_pi:.1e} (<=1e-4)")

    e_flat = ens.build_ensemble(FLAT, 64)
    k0 = stab.kappa(e_flat, 0.0)
    k1 = stab.kappa(e_flat, 1.0)
    ok &= abs(k0 - 2.0) <= 1e-6 and abs(k1 - np.sqrt(3)) <= 1e-6
    details.append(f"kappa(0) err {abs(k0 - 2):.1e}, kappa(1) err {abs(k1 - np.sqrt(3)):.1e}")

    # finite-difference beta slope vs i/kappa
    for profile, energy in ((FLAT, 0.0), (TWO_BLOCK, 0.2)):
        e = ens.build_ensemble(profile, 64)
        z1 = complex(energy, 1e-6)
        delta = 1e-3
        beta_p = stab._principal_pair(e, np.conj(z1), z1 + delta).beta
        beta_m = stab._principal_pair(e, np.conj(z1), z1 - delta).beta
        kappa_fd = float((-1j / ((beta_p - beta_m) / (2 * delta))).real)
        rel = abs(kappa_fd - stab.kappa(e, energy)) / stab.kappa(e, energy)
        ok &= rel <= 0.05
        details.append(f"beta-slope rel err {rel:.3f} (<=0.05)")

    _report(3, "stability", ok, "; ".join(details))


# -- 4: deterministic chains ----------------------------------------------------


def test_criterion_04_deterministic_chains():
    e = ens.build_ensemble(FLAT, 64)
    m1, m2 = semicircle_m(1j), semicircle_m(2j)
    closed = m1 * m2 / (1 - m1 * m2)
    ca = stab.chain_approx2(e, 1j, np.eye(64), 2j)
    flat_err = float(np.abs(ca.value - closed * np.eye(64)).max())
    value_err = abs(closed.real - (-0.20382))

    n, samples = 512, 200
    e_blk = ens.build_ensemble(TWO_BLOCK, n)
    rng = np.random.default_rng(14)
    b = rng.standard_normal((n, n))
    b = (b + b.T) / 2
    z1, z2 = 0.1 + 0.05j, 0.1 - 0.05j
    approx = stab.chain_approx2(e_blk, z1, b, z2).value
    probes = [(i, j) for i in range(4) for j in range(4)]
    acc = np.zeros((samples, len(probes)), dtype=complex)
    for i in range(samples):
        h = ens.sample_matrix(e_blk, harness.sample_seed(44, n, i))
        g1 = harness.resolvent(h, z1)
        g2 = harness.resolvent(h, z2)
        chain = g1 @ b @ g2
        acc[i] = [chain[p] for p in probes]
    worst_sigma = 0.0
    for j, p in enumerate(probes):
        col = acc[:, j]
        se = np.sqrt(col.real.var() + col.imag.var()) / np.sqrt(samples)
        worst_sigma = max(worst_sigma, abs(col.mean() - approx[p]) / se)
    ok = flat_err <= 1e-10 and value_err <= 1e-5 and worst_sigma <= 3.0
    _report(
        4, "chains",
        ok,
        f"flat closed-form err {flat_err:.1e} (<=1e-10, value -0.20382); "
        f"structured MC worst deviation {worst_sigma:.2f} SE (<=3) on 16 probes",
    )


# -- 5: regularization calculus -------------------------------------------------


def test_criterion_05_regularization_calculus():
    e = ens.build_ensemble(FLAT, 64)
    e_blk = ens.build_ensemble(TWO_BLOCK, 64)
    rng = np.random.default_rng(15)
    ok = True
    details = []

    b = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    z1, z2 = 0.2 + 0.01j, 0.25 - 0.02j
    dec = stab.regularize(b, e_blk, z1, z2)
    recon = float(np.abs(dec.regular_part + dec.scalar_part * np.diag(dec.direction) - b).max())
    ok &= recon <= 1e-12 * np.abs(b).max() and dec.residual <= 1e-8
    details.append(f"regularize recon {recon:.1e}, residual {dec.residual:.1e}")

    s_ring, s_vec = stab.decompose_S(e_blk, z1, z2)
    recon_s = float(np.abs((s_ring + s_vec[:, None] * np.ones(64)) / 64 - e_blk.s).max())
    row_resids = [
        stab.regularity_residual(np.diag(s_ring[p]), e_blk, z2, z1) for p in range(64)
    ]
    ok &= recon_s <= 1e-14 and max(row_resids) <= 1e-8
    details.append(f"S-split recon {recon_s:.1e}, row residual {max(row_resids):.1e}")

    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    a2, a = stab.isotropic_observable(x, y, e_blk, z1, z2)
    recon_i = float(
        np.abs(np.sqrt(64) * a2 + a * np.eye(64) - 64 * np.outer(y, np.conj(x))).max()
    )
    resid_i = stab.regularity_residual(a2, e_blk, z2, z1)
    ok &= recon_i <= 1e-10 * 64 * np.abs(np.outer(y, x)).max() and resid_i <= 1e-8
    details.append(f"isotropic recon {recon_i:.1e}, residual {resid_i:.1e}")

    eta = 1e-3
    z = complex(0.0, eta)
    a_reg = harness.observable_from_blocks([1.0, -1.0], 64)
    hs = lambda v: float(np.linalg.norm(v) / 8.0)
    ratio_reg = hs(stab.chain_approx2(e, np.conj(z), a_reg, z).value) / hs(a_reg)
    ratio_gen = hs(stab.chain_approx2(e, np.conj(z), np.eye(64), z).value)
    ok &= ratio_reg <= 5.0 and ratio_gen >= 50.0
    details.append(f"hs ratio regular {ratio_reg:.2f} (<=5) vs identity {ratio_gen:.1f} (>=50)")

    _report(5, "regularization", ok, "; ".join(details))


# -- 6: flow identities ---------------------------------------------------------


def test_criterion_06_flow_identities():
    e = ens.build_ensemble(TWO_BLOCK, 16)
    z = 0.2 + 0.5j

    zs = np.full(16, z)
    s_now = 1.0
    warm = None

    def rhs(vec):
        nonlocal warm
        sol = dyson.solve_vde(e, vec, m0=warm)
        warm = sol.m
        return -e.s_apply(sol.m) - 0.5 * (vec - e.a)

    while s_now > 1e-15:
        h = -min(1e-3, s_now)
        k1 = rhs(zs)
        k2 = rhs(zs + 0.5 * h * k1)
        k3 = rhs(zs + 0.5 * h * k2)
        k4 = rhs(zs + h * k3)
        zs = zs + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        s_now += h
    rk4_err = float(np.abs(flow.flow_map(e, z, 0.0, 1.0) - zs).max())

    scaling = max(
        flow.verify_m_scaling(e, w, t, 1.0)
        for w in (0.2 + 0.3j, 0.1 - 0.2j)
        for t in (0.0, 0.5, 1.0)
    )
    traj = flow.eta_profile(e, 0.1 + 1e-3j, 1.0, samples=21)
    comp_ok = bool(
        np.all(traj.eta_linear_ratio >= 0.1) and np.all(traj.eta_linear_ratio <= 10.0)
    )
    chart = flow.ConeChart(vertex=0.1 + 0.2j, aperture=0.25, tilt=0.05, xi=1e-8)
    vertex_err = abs(flow.psi(chart, 1j * chart.xi ** (1 / chart.aperture)) - chart.vertex)
    ok = rk4_err <= 1e-8 and scaling <= 1e-8 and comp_ok and vertex_err <= 1e-13
    _report(
        6, "flow",
        ok,
        f"RK4 vs explicit {rk4_err:.1e} (<=1e-8); m-scaling {scaling:.1e} (<=1e-8); "
        f"eta ratio in [{traj.eta_linear_ratio.min():.2f}, {traj.eta_linear_ratio.max():.2f}] "
        f"(within [0.1, 10]); psi vertex {vertex_err:.1e}",
    )


# -- 7: integral representation -------------------------------------------------


def test_criterion_07_integral_representation():
    z = 0.1 + 0.2j
    errors = {}
    e1 = ens.build_ensemble(FLAT, 1)
    errors[1] = flow.resolvent_integral_repr(np.zeros((1, 1)), e1, 1j, quad_tol=1e-6).max_abs_error
    agreement = 0.0
    for n in (8, 64):
        e = ens.build_ensemble(FLAT, n)
        h = ens.sample_matrix(e, 100 + n)
        cone = flow.resolvent_integral_repr(h, e, z, quad_tol=1e-6)
        horiz = flow.resolvent_stieltjes_repr(h, z, quad_tol=1e-6)
        errors[n] = cone.max_abs_error
        agreement = max(agreement, float(np.abs(cone.reconstruction - horiz.reconstruction).max()))
    e8 = ens.build_ensemble(FLAT, 8)
    h8 = ens.sample_matrix(e8, 108)
    rep_a = flow.resolvent_integral_repr(h8, e8, z, flow.ConeChart(vertex=z, xi=1e-8), 1e-7)
    rep_b = flow.resolvent_integral_repr(h8, e8, z, flow.ConeChart(vertex=z, xi=1e-9), 1e-7)
    xi_drift = float(np.abs(rep_a.reconstruction - rep_b.reconstruction).max())
    worst = max(errors.values())
    ok = worst <= 1e-6 and agreement <= 1e-6 and xi_drift <= 1e-7
    _report(
        7, "integral-repr",
        ok,
        f"recon err {worst:.1e} over N in (1, 8, 64) (<=1e-6); variant agreement "
        f"{agreement:.1e} (<=1e-6); xi robustness {xi_drift:.1e} (<=1e-7)",
    )


# -- 8: Ward inequality ---------------------------------------------------------


def test_criterion_08_ward_inequality():
    e = ens.build_ensemble(TWO_BLOCK, 64)
    rng = np.random.default_rng(16)
    worst = 0.0
    for i in range(100):
        energy = rng.uniform(-0.8, 0.8)
        eta = 10 ** rng.uniform(-3, -0.3)
        t = rng.uniform(0.0, 1.0)
        zv = flow.flow_map(e, complex(energy, eta), t, 1.0)
        h = ens.sample_matrix(e, harness.sample_seed(55, 64, i))
        g = harness.resolvent(h, zv)
        worst = min(worst, flow.ward_inequality_check(g, zv))
    ok = worst >= -1e-10
    _report(8, "ward", ok, f"min eigenvalue {worst:.2e} over 100 (H, vector-z) pairs (>=-1e-10)")


# -- 9: OU moment preservation --------------------------------------------------


def test_criterion_09_ou_moment_preservation():
    n, paths, steps, dt = 64, 1000, 100, 0.01
    e = ens.build_ensemble(FLAT, n)
    probes = [(0, 1), (5, 9), (3, 3), (20, 40)]
    vals = np.empty((paths, len(probes)), dtype=complex)
    for i in range(paths):
        h = ens.sample_matrix(e, harness.sample_seed(70, n, i))
        for step in range(steps):
            h = ens.ou_step(e, h, dt, harness.sample_seed(71, n, i * steps + step))
        for j, p in enumerate(probes):
            vals[i, j] = h[p]
    ok = True
    worst_mean = worst_var = 0.0
    for j, (a, b) in enumerate(probes):
        col = vals[:, j]
        se_mean = col.std() / np.sqrt(paths)
        dev_mean = abs(col.mean() - (e.a[a] if a == b else 0.0)) / se_mean
        sq = np.abs(col - col.mean()) ** 2
        se_var = sq.std() / np.sqrt(paths)
        dev_var = abs(sq.mean() - e.s[a, b]) / se_var
        worst_mean = max(worst_mean, dev_mean)
        worst_var = max(worst_var, dev_var)
        ok &= dev_mean <= 3.0 and dev_var <= 3.0
    _report(
        9, "ou-flow",
        ok,
        f"worst mean drift {worst_mean:.2f} SE, worst variance drift {worst_var:.2f} SE "
        f"(<=3) at t=1 over {paths} paths",
    )


# -- 10/11: ETH scaling and rigidity --------------------------------------------


@pytest.fixture(scope="module")
def eth_reports():
    sizes = [128, 256, 512, 1024]
    out = {}
    for name, profile in (("flat", FLAT), ("two-block", TWO_BLOCK)):
        out[name] = harness.eth_overlaps(profile, [1.0, -1.0], sizes, 24, 0.1, 424)
    return out


def test_criterion_10_eth_scaling(eth_reports):
    ok = True
    details = []
    for name, report in eth_reports.items():
        expo = report.fit.exponent
        ok &= abs(expo - (-0.5)) <= 0.15
        details.append(f"{name} exponent {expo:+.3f}")
    e = ens.build_ensemble(FLAT, 256)
    _, _, im_full, rho_g, bulk = harness._quantile_frame(e, 0.1)
    bvec = np.diagonal(harness.observable_from_blocks([2.0, 0.5], 256))
    centering = (im_full * bvec[None, :]).mean(axis=1) / (np.pi * rho_g)
    cent_err = float(np.abs(centering[bulk] - bvec.mean()).max())
    ok &= cent_err <= 1e-6
    details.append(f"flat centering vs <B> err {cent_err:.1e} (<=1e-6)")
    _report(10, "eth-scaling", ok, "; ".join(details) + " (exponents within -0.5 +/- 0.15)")


def test_criterion_11_rigidity(eth_reports):
    worst = 0.0
    for report in eth_reports.values():
        for row in report.per_n:
            worst = max(worst, row.rigidity_median)
    ok = worst <= 50.0
    _report(
        11, "rigidity", ok,
        f"max over profiles and sizes of median bulk N|lambda_j - gamma_j| = {worst:.1f} (<=50)",
    )


# -- 12: two-resolvent eta scaling ----------------------------------------------


@pytest.fixture(scope="module")
def eta_sweep_medians():
    n = 1024
    e = ens.build_ensemble(FLAT, n)
    etas = [0.2, 0.1, 0.05, 0.025, 0.0125]
    harness.check_eta_domain(n, etas)
    a1, a2 = harness.crossed_rank_one(n)
    eye = np.eye(n)
    pairs = [(complex(0, eta), complex(0, -eta)) for eta in etas]
    med = harness.two_resolvent_sweep(
        e, pairs,
        {"regular": lambda e_, z1, z2: (a1, a2),
         "identity": lambda e_, z1, z2: (eye, eye)},
        24, 1212,
    )
    return etas, med


def test_criterion_12_eta_scaling(eta_sweep_medians):
    etas, med = eta_sweep_medians
    fit_reg = harness.fit_exponent(list(zip(etas, med["regular"])))
    fit_gen = harness.fit_exponent(list(zip(etas, med["identity"])))
    ok = abs(fit_reg.exponent - (-0.5)) <= 0.2
    ok &= fit_gen.exponent <= fit_reg.exponent - 0.5
    _report(
        12, "eta-scaling", ok,
        f"regular exponent {fit_reg.exponent:+.3f} (-0.5 +/- 0.2); identity exponent "
        f"{fit_gen.exponent:+.3f} (steeper by {fit_reg.exponent - fit_gen.exponent:.2f} >= 0.5)",
    )
