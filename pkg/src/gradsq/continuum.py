"""Continuum reference objects in d = 2: Dirichlet Green's functions of the
unit disk (closed form) and unit square (sine series), Möbius maps of the
disk, and smooth compactly supported test functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentPoints, OutsideDisk, OutsideDomain, QuadratureNotConverged
from .lattice import DomainSpec


def _as_xy(p) -> np.ndarray:
    if isinstance(p, complex):
        return np.array([p.real, p.imag])
    return np.asarray(p, dtype=float)


def _check_pair(x: np.ndarray, y: np.ndarray, inside) -> None:
    if not (inside(x) and inside(y)):
        raise OutsideDomain(f"points {x}, {y} must lie in the open domain")
    if np.allclose(x, y, rtol=0.0, atol=1e-14):
        raise CoincidentPoints(f"x = y = {x}")


def _in_disk(p) -> bool:
    return float(p @ p) < 1.0


def _in_square(p) -> bool:
    return bool(np.all((p > 0.0) & (p < 1.0)))


# -- unit disk ----------------------------------------------------------------


def green_disk(x, y) -> float:
    """(1/2pi) ln(|1 - x conj(y)| / |x - y|); solves Delta G = -delta with G = 0 on |x| = 1."""
    x, y = _as_xy(x), _as_xy(y)
    _check_pair(x, y, _in_disk)
    zx, zy = complex(*x), complex(*y)
    return math.log(abs(1.0 - zx * zy.conjugate()) / abs(zx - zy)) / (2.0 * math.pi)


def green_disk_dd_matrix(x, y) -> np.ndarray:
    """2x2 matrix [a, b] -> d_a^(1) d_b^(2) G_disk(x, y)."""
    x, y = _as_xy(x), _as_xy(y)
    _check_pair(x, y, _in_disk)
    r = x - y
    s = float(r @ r)
    eye = np.eye(2)
    singular = eye / s - 2.0 * np.outer(r, r) / s ** 2
    xx, yy = float(x @ x), float(y @ y)
    q = 1.0 - 2.0 * float(x @ y) + xx * yy
    qx = -2.0 * y + 2.0 * yy * x
    qy = -2.0 * x + 2.0 * xx * y
    qxy = -2.0 * eye + 4.0 * np.outer(x, y)
    regular = 0.5 * (qxy / q - np.outer(qx, qy) / q ** 2)
    return (singular + regular) / (2.0 * math.pi)


def green_disk_dd(x, y, a: int, b: int) -> float:
    return float(green_disk_dd_matrix(x, y)[a, b])


# -- unit square ----------------------------------------------------------------

_SQUARE_TERMS = 4000


def _ratio(a, b, c, ca: bool, cb: bool):
    """f(a) g(b) / sinh(c) with f, g in {sinh, cosh}, for 0 <= a, b and a + b <= c."""
    sa = 1.0 if ca else -1.0
    sb = 1.0 if cb else -1.0
    return (np.exp(a + b - c) * (1.0 + sa * np.exp(-2.0 * a)) * (1.0 + sb * np.exp(-2.0 * b))
            / (2.0 * (1.0 - np.exp(-2.0 * c))))


def _square_series(x: np.ndarray, y: np.ndarray, tol: float = 1e-15):
    """Value and mixed second partials of G_square with the sine series along axis 0.

    Converges geometrically at rate exp(-pi |x_1 - y_1|).
    """
    m = np.arange(1, _SQUARE_TERMS + 1, dtype=float)
    k = m * math.pi
    s, t = x[1], y[1]
    lo, hi = min(s, t), max(s, t)
    a, b = k * lo, k * (1.0 - hi)
    gval = _ratio(a, b, k, False, False) / k
    # derivatives of g_m in s (x side) and t (y side)
    d_lo = _ratio(a, b, k, True, False)    # d/d lo of g * 1
    d_hi = -_ratio(a, b, k, False, True)   # d/d hi
    d_lohi = -k * _ratio(a, b, k, True, True)
    if s <= t:
        gs, gt = d_lo, d_hi
    else:
        gs, gt = d_hi, d_lo
    gst = d_lohi
    sx, sy = np.sin(k * x[0]), np.sin(k * y[0])
    cx, cy = np.cos(k * x[0]), np.cos(k * y[0])
    terms = {
        "G": 2.0 * sx * sy * gval,
        (0, 0): 2.0 * k * k * cx * cy * gval,
        (0, 1): 2.0 * k * cx * sy * gt,
        (1, 0): 2.0 * k * sx * cy * gs,
        (1, 1): 2.0 * sx * sy * gst,
    }
    decay = np.exp(-k * (hi - lo)) * k * k
    if decay[-1] > tol * max(1e-300, abs(terms[(0, 0)][0])) and hi - lo < 1e-3:
        raise QuadratureNotConverged("square Green series too slow for nearly aligned points")
    return {key: float(math.fsum(val)) for key, val in terms.items()}


def _square_eval(x, y):
    x, y = _as_xy(x), _as_xy(y)
    _check_pair(x, y, _in_square)
    if abs(x[1] - y[1]) >= abs(x[0] - y[0]):
        return _square_series(x, y), False
    return _square_series(x[::-1].copy(), y[::-1].copy()), True


def green_square(x, y) -> float:
    """Dirichlet Green's function of (0,1)^2 from a sine series in one coordinate."""
    res, _ = _square_eval(x, y)
    return res["G"]


def green_square_dd_matrix(x, y) -> np.ndarray:
    res, swapped = _square_eval(x, y)
    M = np.array([[res[(0, 0)], res[(0, 1)]], [res[(1, 0)], res[(1, 1)]]])
    if swapped:
        M = M[::-1, ::-1].copy()
    return M


@dataclass(frozen=True)
class ContinuumGreen:
    """Evaluator pair for G_U and its mixed second partials."""

    domain: str = "unit_disk"

    def __call__(self, x, y) -> float:
        return green_disk(x, y) if self.domain == "unit_disk" else green_square(x, y)

    def dd(self, x, y) -> np.ndarray:
        if self.domain == "unit_disk":
            return green_disk_dd_matrix(x, y)
        return green_square_dd_matrix(x, y)


# -- Möbius maps ------------------------------------------------------------------


def _as_complex(z) -> complex:
    if isinstance(z, (complex, float, int)):
        return complex(z)
    z = np.asarray(z, dtype=float)
    return complex(z[0], z[1])


@dataclass(frozen=True)
class MobiusMap:
    """Disk automorphism h(z) = (z - a) / (1 - conj(a) z), |a| < 1."""

    a: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        if abs(self.a) >= 1.0:
            raise ValueError("Möbius parameter must satisfy |a| < 1")

    def _check(self, z: complex) -> complex:
        if abs(z) >= 1.0:
            raise OutsideDisk(f"|z| = {abs(z)} >= 1")
        return z

    def apply(self, z) -> complex:
        z = self._check(_as_complex(z))
        return (z - self.a) / (1.0 - self.a.conjugate() * z)

    def derivative(self, z) -> complex:
        z = self._check(_as_complex(z))
        return (1.0 - abs(self.a) ** 2) / (1.0 - self.a.conjugate() * z) ** 2

    def apply_xy(self, z) -> np.ndarray:
        w = self.apply(z)
        return np.array([w.real, w.imag])


def mobius_apply(h: MobiusMap, z) -> complex:
    return h.apply(z)


def mobius_derivative(h: MobiusMap, z) -> complex:
    return h.derivative(z)


# -- test functions ---------------------------------------------------------------

KINDS = ("bump", "product_bump", "poly_bump")


def _bump_profile(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported f built from exp(-1/(1 - r^2)).

    ``bump``: radial profile in |x - center| / radius.
    ``product_bump``: product of 1-d profiles, support in the cube of half-width radius.
    ``poly_bump``: bump times sum_c coef * prod_k ((x_k - center_k)/radius)^{alpha_k}
    with ``coeffs`` a list of (alpha, coef).
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple
    radius: float
    amplitude: float = 1.0
    coeffs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown test-function kind {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "coeffs", tuple((tuple(int(e) for e in alpha), float(c))
                                                 for alpha, c in self.coeffs))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def support_radius(self) -> float:
        if self.kind == "product_bump":
            return self.radius * math.sqrt(self.d)
        return self.radius

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        r = self.radius
        return c - r, c + r

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = (x - np.asarray(self.center)) / self.radius
        if self.kind == "product_bump":
            val = np.prod(_bump_profile(u * u), axis=-1)
        else:
            val = _bump_profile(np.sum(u * u, axis=-1))
        if self.kind == "poly_bump":
            poly = np.zeros(val.shape)
            for alpha, coef in self.coeffs:
                poly = poly + coef * np.prod(u ** np.asarray(alpha), axis=-1)
            val = val * poly
        return self.amplitude * val

    def fits_inside(self, spec: DomainSpec, margin: float = 0.0) -> bool:
        """True if the support ball keeps at least ``margin`` from the boundary of U."""
        c = np.asarray(self.center)
        if not spec.contains(c):
            return False
        return float(spec.boundary_distance(c)) - self.support_radius > margin

    def to_json(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center), "radius": self.radius}
        if self.amplitude != 1.0:
            out["amplitude"] = self.amplitude
        if self.coeffs:
            out["coeffs"] = [[list(a), c] for a, c in self.coeffs]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TestFunction":
        return cls(obj["kind"], tuple(obj["center"]), float(obj["radius"]),
                   float(obj.get("amplitude", 1.0)),
                   tuple((tuple(a), c) for a, c in obj.get("coeffs", ())))


def _gauss_box(lo, hi, panels: int, order: int = 8):
    """Composite Gauss-Legendre nodes and weights on a box."""
    x, w = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        axes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return axes, weights


def integrate_box(func, lo, hi, tol: float = 1e-10, max_panels: int = 256) -> float:
    """Refine a composite tensor Gauss rule until two levels agree within tol."""
    d = len(lo)
    prev = None
    panels = 2
    while panels <= max_panels:
        axes, weights = _gauss_box(lo, hi, panels)
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(grids, axis=-1)
        W = weights[0]
        for w in weights[1:]:
            W = np.multiply.outer(W, w)
        val = float(np.sum(func(pts) * W))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        if (8 * panels * 2) ** d > 3e7:
            break
        panels *= 2
    raise QuadratureNotConverged("box quadrature did not settle")


def l2_inner(f: TestFunction, g: TestFunction, U: DomainSpec | None = None, tol: float = 1e-10) -> float:
    """int_U f g dx (supports are assumed inside U)."""
    if U is not None and not (f.fits_inside(U) and g.fits_inside(U)):
        raise OutsideDomain("test-function support leaves the domain")
    flo, fhi = f.support_box()
    glo, ghi = g.support_box()
    lo, hi = np.maximum(flo, glo), np.minimum(fhi, ghi)
    if np.any(lo >= hi):
        return 0.0
    return integrate_box(lambda p: f(p) * g(p), lo, hi, tol=tol)
