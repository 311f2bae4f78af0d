import numpy as np
import pytest

from wtlab import ensemble as ens


@pytest.fixture(scope="session")
def flat_complex():
    return ens.flat_profile("complex-hermitian")


@pytest.fixture(scope="session")
def flat_real():
    return ens.flat_profile("real-symmetric")


@pytest.fixture(scope="session")
def two_block():
    # entrywise positive variance blocks (uniformly primitive at order 1)
    return ens.ProfileSpec((0.3, -0.4), ((1.0, 2.0), (2.0, 1.0)), None, "complex-hermitian")


@pytest.fixture(scope="session")
def two_block_real():
    return ens.ProfileSpec((0.3, -0.4), ((1.0, 2.0), (2.0, 1.0)), None, "real-symmetric")


@pytest.fixture(scope="session")
def bipartite():
    return ens.ProfileSpec((0.0, 0.0), ((0.0, 1.0), (1.0, 0.0)), None, "real-symmetric")


def semicircle_m(z):
    """Stieltjes transform of the semicircle law, the Im z > 0 branch."""
    z = complex(z)
    root = np.sqrt(z * z - 4.0)
    m = (-z + root) / 2.0
    if m.imag * np.sign(z.imag) <= 0:
        m = (-z - root) / 2.0
    return m


def two_block_vde_oracle(profile, n, z, tol=1e-9):
    """Independent 2-block Dyson solution via the eliminated quartic.

    Eliminating m2 from the coupled pair of scalar equations leaves a quartic
    in m1 whose roots are found from the companion matrix; the half-plane
    constraint and the residual of both equations pick the physical root.
    """
    from numpy.polynomial import polynomial as P

    z = complex(z)
    assert z.imag > 0
    sizes = [n // 2, n - n // 2]
    w = np.array(sizes) / n
    s = np.asarray(profile.s_blocks, dtype=float)
    c = s * w[None, :]
    a1, a2 = profile.a_blocks
    u1, u2 = z - a1, z - a2
    c11, c12 = c[0]
    c21, c22 = c[1]
    # c12 m1 m2 = -1 - u1 m1 - c11 m1^2 =: p(m1)
    p = np.array([-1.0, -u1, -c11], dtype=complex)
    # -c12^2 m1^2 = u2 c12 m1 p + c21 c12 m1^2 p + c22 p^2
    x = np.array([0.0, 1.0], dtype=complex)
    poly = P.polyadd(
        P.polyadd(
            P.polymul(np.array([u2 * c12], dtype=complex), P.polymul(x, p)),
            P.polymul(np.array([0, 0, c21 * c12], dtype=complex), p),
        ),
        P.polymul(np.array([c22], dtype=complex), P.polymul(p, p)),
    )
    poly = P.polyadd(poly, np.array([0, 0, c12**2], dtype=complex))
    roots = P.polyroots(poly)
    best = None
    for m1 in roots:
        if m1 == 0:
            continue
        m2 = P.polyval(m1, p) / (c12 * m1)
        if m1.imag <= 0 or m2.imag <= 0:
            continue
        r1 = abs(1.0 / m1 + u1 + c11 * m1 + c12 * m2)
        r2 = abs(1.0 / m2 + u2 + c21 * m1 + c22 * m2)
        if max(r1, r2) < tol:
            assert best is None, "oracle found two admissible roots"
            best = (m1, m2)
    assert best is not None, "oracle found no admissible root"
    return np.repeat([best[0], best[1]], sizes)
