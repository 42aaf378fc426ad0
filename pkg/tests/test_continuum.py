import math

import numpy as np
import pytest

from gradsq.continuum import (
    ContinuumGreen,
    MobiusMap,
    TestFunction,
    green_disk,
    green_disk_dd_matrix,
    green_square,
    green_square_dd_matrix,
    integrate_box,
    l2_inner,
    mobius_apply,
    mobius_derivative,
)
from gradsq.errors import CoincidentPoints, OutsideDisk, OutsideDomain
from gradsq.lattice import DomainSpec

PAIRS_DISK = [((0.1, 0.2), (-0.3, 0.4)), ((0.5, -0.1), (0.0, 0.0)), ((-0.6, 0.3), (0.7, 0.1))]
PAIRS_SQUARE = [((0.3, 0.4), (0.6, 0.55)), ((0.2, 0.8), (0.7, 0.3)), ((0.5, 0.5), (0.52, 0.9))]


def _laplacian_x(G, x, y, h=1e-3):
    x = np.asarray(x, float)
    out = -4.0 * G(x, y)
    for a in range(2):
        e = np.eye(2)[a] * h
        out += G(x + e, y) + G(x - e, y)
    return out / h ** 2


def _fd_dd(G, x, y, h=1e-4):
    x, y = np.asarray(x, float), np.asarray(y, float)
    M = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            ea, eb = np.eye(2)[a] * h, np.eye(2)[b] * h
            M[a, b] = (G(x + ea, y + eb) - G(x + ea, y - eb) - G(x - ea, y + eb)
                       + G(x - ea, y - eb)) / (4 * h * h)
    return M


@pytest.mark.parametrize("G,pairs", [(green_disk, PAIRS_DISK), (green_square, PAIRS_SQUARE)])
def test_harmonic_off_diagonal(G, pairs):
    for x, y in pairs:
        assert abs(_laplacian_x(G, x, y)) < 1e-4


@pytest.mark.parametrize("G,pairs", [(green_disk, PAIRS_DISK), (green_square, PAIRS_SQUARE)])
def test_symmetric(G, pairs):
    for x, y in pairs:
        assert G(x, y) == pytest.approx(G(y, x), rel=1e-12)


def test_boundary_decay():
    y = (0.2, -0.1)
    vals = [green_disk((r, 0.0), y) for r in (0.99, 0.999, 0.9999)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 1e-4
    assert green_square((0.5, 1e-5), (0.5, 0.5)) < 1e-4


def test_log_singularity():
    # G ~ -(1/2pi) ln|x - y| near the diagonal
    y = (0.1, 0.1)
    for r in (1e-3, 1e-5):
        g = green_disk((0.1 + r, 0.1), y)
        assert g + math.log(r) / (2 * math.pi) == pytest.approx(
            green_disk((0.1 + 1e-6, 0.1), y) + math.log(1e-6) / (2 * math.pi), abs=1e-3)


@pytest.mark.parametrize("G,DD,pairs", [(green_disk, green_disk_dd_matrix, PAIRS_DISK),
                                        (green_square, green_square_dd_matrix, PAIRS_SQUARE)])
def test_dd_matches_finite_differences(G, DD, pairs):
    for x, y in pairs:
        assert np.allclose(DD(x, y), _fd_dd(G, x, y), atol=1e-5)


def test_square_matches_disk_scale_near_centre():
    # both are -(1/2pi) ln r + harmonic; the difference is smooth, so its Laplacian vanishes
    diff = lambda x, y: green_square(x, y) - green_disk(np.asarray(x) - 0.5, np.asarray(y) - 0.5)
    x = np.array([0.45, 0.5])
    y = np.array([0.55, 0.52])
    assert abs(_laplacian_x(diff, x, y)) < 1e-4


def test_errors():
    with pytest.raises(CoincidentPoints):
        green_disk((0.1, 0.1), (0.1, 0.1))
    with pytest.raises(OutsideDomain):
        green_disk((1.1, 0.0), (0.0, 0.0))
    with pytest.raises(OutsideDomain):
        green_square((0.5, 1.2), (0.5, 0.5))


def test_continuum_green_dispatch():
    x, y = (0.3, 0.4), (0.6, 0.55)
    assert ContinuumGreen("unit_square")(x, y) == green_square(x, y)
    assert np.array_equal(ContinuumGreen().dd(x, y), green_disk_dd_matrix(x, y))


# -- Möbius maps ------------------------------------------------------------------


def test_mobius_basics():
    h = MobiusMap(0.3 + 0.2j)
    assert abs(h.apply(0.3 + 0.2j)) < 1e-15
    for z in [0.1j, -0.5 + 0.3j, 0.7]:
        assert abs(h.apply(z)) < 1.0
        dz = 1e-6
        fd = (h.apply(z + dz) - h.apply(z - dz)) / (2 * dz)
        assert abs(fd - h.derivative(z)) < 1e-8
    assert mobius_apply(h, (0.1, 0.2)) == h.apply(0.1 + 0.2j)
    assert mobius_derivative(h, 0.0) == h.derivative(0j)
    with pytest.raises(OutsideDisk):
        h.apply(1.0)
    with pytest.raises(ValueError):
        MobiusMap(1.0)


@pytest.mark.parametrize("a", [0.2, -0.4 + 0.3j, 0.6j])
def test_green_conformal_invariance(a):
    h = MobiusMap(a)
    for x, y in PAIRS_DISK:
        assert green_disk(h.apply_xy(x), h.apply_xy(y)) == pytest.approx(green_disk(x, y), abs=1e-10)


def _jacobian(h, z):
    c = h.derivative(z)
    return np.array([[c.real, -c.imag], [c.imag, c.real]])


@pytest.mark.parametrize("a", [0.2, -0.4 + 0.3j])
def test_dd_chain_rule(a):
    h = MobiusMap(a)
    for x, y in PAIRS_DISK:
        lhs = green_disk_dd_matrix(x, y)
        Jx, Jy = _jacobian(h, x), _jacobian(h, y)
        rhs = Jx.T @ green_disk_dd_matrix(h.apply_xy(x), h.apply_xy(y)) @ Jy
        assert np.allclose(lhs, rhs, atol=1e-8)


def test_rotation_equivariance():
    t = 0.7
    Rm = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    for x, y in PAIRS_DISK:
        x, y = np.asarray(x), np.asarray(y)
        rot = green_disk_dd_matrix(Rm @ x, Rm @ y)
        assert np.allclose(Rm.T @ rot @ Rm, green_disk_dd_matrix(x, y), atol=1e-12)


# -- test functions ------------------------------------------------------------------


def test_bump_values():
    f = TestFunction("bump", (0.5, 0.5), 0.3)
    assert f((0.5, 0.5)) == pytest.approx(math.exp(-1.0))
    assert f((0.5, 0.8)) == 0.0
    assert f((0.9, 0.5)) == 0.0
    assert f.support_radius == 0.3
    g = TestFunction("product_bump", (0.5, 0.5), 0.2)
    assert g.support_radius == pytest.approx(0.2 * math.sqrt(2))
    assert g((0.5, 0.5)) == pytest.approx(math.exp(-2.0))


def test_poly_bump_and_json():
    f = TestFunction("poly_bump", (0.0, 0.0), 0.5, 2.0, (((1, 0), 3.0), ((0, 2), -1.0)))
    x = np.array([0.1, 0.2])
    u = x / 0.5
    expect = 2.0 * math.exp(-1 / (1 - u @ u)) * (3 * u[0] - u[1] ** 2)
    assert f(x) == pytest.approx(expect)
    assert TestFunction.from_json(f.to_json()) == f
    with pytest.raises(ValueError):
        TestFunction("gauss", (0, 0), 1.0)


def test_fits_inside():
    sq = DomainSpec.unit_square()
    assert TestFunction("bump", (0.5, 0.5), 0.3).fits_inside(sq)
    assert not TestFunction("bump", (0.5, 0.5), 0.3).fits_inside(sq, margin=0.25)
    assert not TestFunction("bump", (0.2, 0.5), 0.3).fits_inside(sq)


def test_l2_inner():
    f = TestFunction("bump", (0.5, 0.5), 0.3)
    val = l2_inner(f, f, DomainSpec.unit_square())
    # radial integral 2 pi r^2 int_0^1 exp(-2/(1-s^2)) s ds
    s, w = np.polynomial.legendre.leggauss(200)
    s = 0.5 * (s + 1)
    ref = 2 * math.pi * 0.09 * float(np.sum(0.5 * w * np.exp(-2 / (1 - s * s)) * s))
    assert val == pytest.approx(ref, rel=1e-8)
    far = TestFunction("bump", (0.1, 0.1), 0.05)
    assert l2_inner(f, far) == 0.0
    with pytest.raises(OutsideDomain):
        l2_inner(TestFunction("bump", (0.1, 0.5), 0.3), f, DomainSpec.unit_square())


def test_integrate_box_polynomial():
    val = integrate_box(lambda p: p[..., 0] ** 2 * p[..., 1], [0, 0], [1, 2])
    assert val == pytest.approx(2.0 / 3.0, rel=1e-12)
