"""Discrete Green's functions.

Finite domains: G_{U_eps} = (-Delta_V)^{-1} for the normalised Laplacian
(1/2d) sum_{y~x}(f(y) - f(x)) with zero exterior values, so a vertex whose
neighbours are all exterior has G(x, x) = 1.

Infinite volume: the double differences

    K_ij(v) = grad_i^(1) grad_j^(2) G_0(0, v)
            = (2 pi)^-d  int e^{i th.v} (e^{i th_j} - 1)(e^{-i th_i} - 1) / phi(th) dth,
    phi(th) = (1/d) sum_k (1 - cos th_k),

which exist in every d >= 2 (for d = 2 G_0 is the potential kernel; only its
differences enter).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy import fft as sfft

from .errors import (
    ComplexityBudgetExceeded,
    PointOutsideDomain,
    QuadratureNotConverged,
    SingularSystem,
    TailBoundUnavailable,
)
from .lattice import DomainSpec, Edge, LatticeDomain

DENSE_LIMIT = 6000
# largest number of grid points for a single FFT / DST work array
GRID_BUDGET = 7.0e7


class GreenTable:
    """Green's function of a :class:`LatticeDomain`.

    Stored densely for small domains. Larger domains keep a sparse LU
    factorisation of -Delta_V and solve (and cache) columns on demand.
    Index -1 denotes an exterior point and always reads as 0.
    """

    def __init__(self, domain: LatticeDomain, matrix=None, lu=None):
        self.domain = domain
        self._G = matrix
        self._lu = lu
        self._columns: dict[int, np.ndarray] = {}
        self._chol = None
        if matrix is not None:
            matrix.setflags(write=False)

    @property
    def is_dense(self) -> bool:
        return self._G is not None

    @property
    def matrix(self) -> np.ndarray:
        if self._G is None:
            raise ComplexityBudgetExceeded(
                f"dense Green matrix not available for |V|={self.domain.n} > {DENSE_LIMIT}")
        return self._G

    def column(self, j: int) -> np.ndarray:
        if self._G is not None:
            return self._G[:, j]
        col = self._columns.get(j)
        if col is None:
            rhs = np.zeros(self.domain.n)
            rhs[j] = 1.0
            col = self._lu.solve(rhs)
            col.setflags(write=False)
            self._columns[j] = col
        return col

    def entries(self, rows, cols) -> np.ndarray:
        """Sub-matrix G[rows][:, cols] with zero-extension for index -1."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros((len(rows), len(cols)))
        rm, cm = rows >= 0, cols >= 0
        if self._G is not None:
            out[np.ix_(rm, cm)] = self._G[np.ix_(rows[rm], cols[cm])]
        else:
            sub = np.empty((rm.sum(), cm.sum()))
            for k, c in enumerate(cols[cm]):
                sub[:, k] = self.column(int(c))[rows[rm]]
            out[np.ix_(rm, cm)] = sub
        return out

    def value(self, x, y) -> float:
        i, j = self.domain.index_of(x), self.domain.index_of(y)
        if i < 0 or j < 0:
            return 0.0
        return float(self.entries([i], [j])[0, 0])

    def cholesky(self) -> np.ndarray:
        """Lower-triangular L with L L^T = G."""
        if self._chol is None:
            from .errors import FactorizationFailed

            try:
                self._chol = np.linalg.cholesky(self.matrix)
            except np.linalg.LinAlgError as exc:
                raise FactorizationFailed(str(exc)) from exc
            self._chol.setflags(write=False)
        return self._chol

    def laplacian_residual(self) -> float:
        """max |(-Delta_V) G - I| over the stored matrix."""
        lap = self.domain.neg_laplacian()
        return float(np.max(np.abs(lap @ self.matrix - np.eye(self.domain.n))))

    def header(self) -> dict:
        return {
            "d": self.domain.d,
            "eps": self.domain.eps,
            "shape": self.domain.spec.shape,
            "n_vertices": self.domain.n,
            "domain": self.domain.spec.to_json(),
            "dtype": "<f8",
            "order": "row-major",
        }

    def save(self, path) -> None:
        """Binary export: uint64 header length, JSON header, row-major <f8 data."""
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(np.uint64(len(head)).astype("<u8").tobytes())
            fh.write(head)
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())


def load_green(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        nhead = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        header = json.loads(fh.read(nhead))
        n = header["n_vertices"]
        data = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    return header, data


def solve_green(domain: LatticeDomain, dense_limit: int = DENSE_LIMIT) -> GreenTable:
    """G = (-Delta_V)^{-1} with zero boundary values."""
    lap = domain.neg_laplacian()
    if domain.n <= dense_limit:
        try:
            cf = sla.cho_factor(lap.toarray(), lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        G = sla.cho_solve(cf, np.eye(domain.n))
        G = 0.5 * (G + G.T)
        return GreenTable(domain, matrix=G)
    try:
        lu = spla.splu(lap.tocsc())
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    return GreenTable(domain, lu=lu)


def _require(domain: LatticeDomain, z) -> int:
    idx = domain.index_of(z)
    if idx < 0:
        raise PointOutsideDomain(f"{tuple(z)} is not a vertex of {domain!r}")
    return idx


def double_diff(G: GreenTable, v, w, i: int, j: int) -> float:
    """G(v+e_i, w+e_j) - G(v, w+e_j) - G(v+e_i, w) + G(v, w)."""
    dom = G.domain
    a = _require(dom, v)
    b = _require(dom, w)
    ai = dom.neighbor_indices(i)[a]
    bj = dom.neighbor_indices(j)[b]
    g = G.entries([a, ai], [b, bj])
    return float(g[1, 1] - g[0, 1] - g[1, 0] + g[0, 0])


def transfer_current(G: GreenTable, e: Edge, f: Edge) -> float:
    """T(e, f) = E[grad_e Gamma grad_f Gamma]."""
    return double_diff(G, e.tail, f.tail, e.direction, f.direction)


def gradient_covariance(G: GreenTable, idx) -> np.ndarray:
    """Array K[s, a, t, b] = grad_a^(1) grad_b^(2) G(v_s, v_t) for vertex indices ``idx``.

    Repeated indices are allowed. Reshaped to (m*d, m*d) it is the covariance
    matrix of the gradient vector (grad_a Gamma(v_s))_{s,a}.
    """
    dom = G.domain
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0):
        raise PointOutsideDomain("gradient_covariance needs interior vertex indices")
    m, d = len(idx), dom.d
    P = np.empty((m, d + 1), dtype=np.int64)
    P[:, 0] = idx
    for a in range(d):
        P[:, 1 + a] = dom.neighbor_indices(a)[idx]
    flat = P.ravel()
    if G.is_dense:
        g = G.entries(flat, flat)
    else:
        uniq, inv = np.unique(flat, return_inverse=True)
        g = G.entries(uniq, uniq)[np.ix_(inv, inv)]
    g = g.reshape(m, d + 1, m, d + 1)
    return g[:, 1:, :, 1:] - g[:, :1, :, 1:] - g[:, 1:, :, :1] + g[:, :1, :, :1]


def wick_diagonal(G: GreenTable) -> np.ndarray:
    """(n, d) array of Var(grad_i Gamma(x)) = grad_i grad_i G(x, x) for all vertices."""
    dom = G.domain
    n, d = dom.n, dom.d
    out = np.empty((n, d))
    if G.is_dense:
        M = G.matrix
        diag = np.diagonal(M)
        for i in range(d):
            nb = dom.neighbor_indices(i)
            ok = nb >= 0
            gnn = np.zeros(n)
            gxn = np.zeros(n)
            gnn[ok] = diag[nb[ok]]
            gxn[ok] = M[np.arange(n)[ok], nb[ok]]
            out[:, i] = gnn - 2.0 * gxn + diag
        return out
    for s in range(n):
        out[s] = np.diagonal(gradient_covariance(G, [s])[0, :, 0, :])
    return out


# ---------------------------------------------------------------------------
# infinite volume kernel


def _one_minus_cos(theta):
    return 2.0 * np.sin(0.5 * theta) ** 2


def _symbol(theta: np.ndarray, i: int, j: int) -> np.ndarray:
    """Fourier symbol of grad_i^(1) grad_j^(2) G_0(0, .) at points theta (..., d)."""
    d = theta.shape[-1]
    phi = np.sum(_one_minus_cos(theta), axis=-1) / d
    num = (np.exp(1j * theta[..., j]) - 1.0) * (np.exp(-1j * theta[..., i]) - 1.0)
    return num / phi


@lru_cache(maxsize=16)
def _duffy_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-pi, pi]^d for integrands homogeneous of degree 0 at 0.

    The cube is split into 2d pyramids with apex at the origin, one per face;
    th = u * pi * (s e_a + sum_{b != a} t_b e_b), u in (0,1], t in [-1,1]^{d-1}.
    The Jacobian pi^d u^{d-1} and the radial smoothness of the symbol make a
    tensor Gauss-Legendre rule converge geometrically.
    """
    xu, wu = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    xt, wt = np.polynomial.legendre.leggauss(n)
    grids = np.meshgrid(*([u] + [xt] * (d - 1)), indexing="ij")
    wgrids = np.meshgrid(*([wu] + [wt] * (d - 1)), indexing="ij")
    U = grids[0].ravel()
    T = [g.ravel() for g in grids[1:]]
    W = np.prod([g.ravel() for g in wgrids], axis=0) * math.pi ** d * U ** (d - 1)
    nodes, weights = [], []
    for a in range(d):
        others = [b for b in range(d) if b != a]
        for s in (1.0, -1.0):
            th = np.empty((U.size, d))
            th[:, a] = s * math.pi * U
            for b, t in zip(others, T):
                th[:, b] = math.pi * U * t
            nodes.append(th)
            weights.append(W)
    return np.concatenate(nodes), np.concatenate(weights) / (2.0 * math.pi) ** d


def _duffy_values(offsets: np.ndarray, i: int, j: int, d: int, n: int) -> np.ndarray:
    nodes, weights = _duffy_rule(d, n)
    F = _symbol(nodes, i, j) * weights
    out = np.zeros(len(offsets))
    chunk = max(1, int(4e6 // max(1, len(offsets))))
    for start in range(0, len(nodes), chunk):
        sl = slice(start, start + chunk)
        phase = np.exp(1j * (offsets @ nodes[sl].T))
        out += (phase @ F[sl]).real
    return out


_FOURIER_START = {2: 24, 3: 16}
_FOURIER_MAX = {2: 768, 3: 96}


def fourier_double_diff(offsets, i: int, j: int, d: int, tol: float = 1e-9) -> np.ndarray:
    """K_ij(v) for each row v of ``offsets`` by refined Duffy-Gauss quadrature."""
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    n = _FOURIER_START.get(d, 12)
    nmax = _FOURIER_MAX.get(d, 32)
    prev = _duffy_values(offsets, i, j, d, n)
    while n < nmax:
        n *= 2
        cur = _duffy_values(offsets, i, j, d, n)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise QuadratureNotConverged(
        f"K_{i}{j} quadrature in d={d} still moving at n={n}: {np.max(np.abs(cur - prev)):.2e}")


def _box_columns(d: int, N: int, sources) -> list[np.ndarray]:
    """Green's function columns of the box [-N, N]^d for source offsets from the centre."""
    n = 2 * N + 1
    if n ** d > GRID_BUDGET:
        raise ComplexityBudgetExceeded(f"box of {n}^{d} points exceeds budget")
    k = np.arange(1, n + 1)
    one_minus = _one_minus_cos(math.pi * k / (n + 1))
    lam = np.zeros((n,) * d)
    for a in range(d):
        shape = [1] * d
        shape[a] = n
        lam = lam + one_minus.reshape(shape)
    lam /= d
    cols = []
    for src in sources:
        rhs = np.zeros((n,) * d)
        rhs[tuple(N + c for c in src)] = 1.0
        cols.append(sfft.dstn(sfft.dstn(rhs, type=1, norm="ortho") / lam, type=1, norm="ortho"))
    return cols


def _bigbox_single(v, i: int, j: int, d: int, N: int) -> float:
    zero = (0,) * d
    ei = tuple(1 if a == i else 0 for a in range(d))
    c0, ci = _box_columns(d, N, [zero, ei])
    vj = tuple(N + vv + (1 if a == j else 0) for a, vv in enumerate(v))
    vv = tuple(N + x for x in v)
    return float(ci[vj] - c0[vj] - ci[vv] + c0[vv])


def bigbox_double_diff(v, i: int, j: int, d: int, N: int | None = None) -> float:
    """K_ij(v) from Dirichlet boxes of radius N and 2N.

    The boundary error is ~ L^-d in the distance L = N + 1 to the first
    exterior layer; one Richardson step in L leaves O(L^-(d+2)).
    """
    vmax = int(max(abs(x) for x in v)) if len(v) else 0
    if N is None:
        N = max({2: 64, 3: 24}.get(d, 12), 8 * vmax)
    if vmax > N // 4:
        raise ValueError(f"|v| = {vmax} exceeds N/4 for box radius {N}")
    k1 = _bigbox_single(v, i, j, d, N)
    k2 = _bigbox_single(v, i, j, d, 2 * N)
    w = _richardson_weight(N, d)
    return (w * k2 - k1) / (w - 1.0)


def _richardson_weight(N: int, d: int) -> float:
    return ((2 * N + 1) / (N + 1)) ** d


def infinite_double_diff(v, i: int, j: int, d: int, method: str = "fourier", **kw) -> float:
    """grad_i^(1) grad_j^(2) G_0(0, v) on Z^d."""
    v = tuple(int(x) for x in v)
    if len(v) != d:
        raise ValueError("offset dimension mismatch")
    if method == "fourier":
        return float(fourier_double_diff(np.array([v]), i, j, d, **kw)[0])
    if method == "bigbox":
        return bigbox_double_diff(v, i, j, d, **kw)
    raise ValueError(f"unknown method {method!r}")


def kappa0(v, d: int, method: str = "fourier") -> float:
    """kappa_0(0, v) = 2 sum_{i,j} K_ij(v)^2."""
    return 2.0 * sum(infinite_double_diff(v, i, j, d, method) ** 2
                     for i in range(d) for j in range(d))


# -- tables ------------------------------------------------------------------


def _torus_component(d: int, M: int, i: int, j: int) -> np.ndarray:
    """K_ij on the periodic torus (Z/M)^d (full M^d array).

    Dropping the zero mode shifts every entry by -(1/M^d) times the direction
    average of the symbol at 0, which is 2 delta_ij; that constant is added back.
    """
    k = np.arange(M) * (2.0 * math.pi / M)
    kh = np.arange(M // 2 + 1) * (2.0 * math.pi / M)
    axes = [k] * (d - 1) + [kh]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    phi = sum(_one_minus_cos(g) for g in grids) / d
    num = (np.exp(1j * grids[j]) - 1.0) * (np.exp(-1j * grids[i]) - 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        F = num / phi
    F[(0,) * d] = 0.0
    del num, phi
    out = sfft.irfftn(F, s=(M,) * d, overwrite_x=True)
    if i == j:
        out += 2.0 / M ** d
    return out


def _box_slice(arr: np.ndarray, R: int, d: int) -> np.ndarray:
    """Entries at offsets -R..R of a periodic array (index v mod M)."""
    M = arr.shape[0]
    idx = np.arange(-R, R + 1) % M
    return arr[np.ix_(*([idx] * d))]


def _torus_size(R: int, d: int = 2) -> int:
    """Periodic images leave O(|v|^2 / M^(d+2)); d = 2 can afford a much larger torus."""
    if d == 2:
        return sfft.next_fast_len(max(512, 3 * R + 1), real=True)
    return sfft.next_fast_len(max(64, 3 * R + 1), real=True)


def kernel_components(d: int, R: int, method: str = "fourier"):
    """Yield ((i, j), K_ij on offsets [-R, R]^d) one component at a time."""
    if method == "fourier":
        M = _torus_size(R, d)
        if M ** d > GRID_BUDGET:
            raise ComplexityBudgetExceeded(f"torus {M}^{d} exceeds budget")
        for i in range(d):
            for j in range(d):
                yield (i, j), _box_slice(_torus_component(d, M, i, j), R, d)
        return
    if method == "bigbox":
        N = max(4 * R, 16)
        zero = (0,) * d
        units = [tuple(1 if a == i else 0 for a in range(d)) for i in range(d)]
        levels = []
        for NN in (N, 2 * N):
            cols = _box_columns(d, NN, [zero] + units)
            c0 = cols[0]
            base = tuple(slice(NN - R, NN + R + 1) for _ in range(d))
            lev = {}
            for j in range(d):
                shifted = tuple(slice(NN - R + (1 if a == j else 0), NN + R + 1 + (1 if a == j else 0))
                                for a in range(d))
                for i in range(d):
                    ci = cols[1 + i]
                    lev[(i, j)] = ci[shifted] - c0[shifted] - ci[base] + c0[base]
            levels.append(lev)
            del cols
        w = _richardson_weight(N, d)
        for i in range(d):
            for j in range(d):
                yield (i, j), (w * levels[1][(i, j)] - levels[0][(i, j)]) / (w - 1.0)
        return
    raise ValueError(f"unknown method {method!r}")


@dataclass
class InfiniteKernel:
    """Table of M(v)[i][j] = K_ij(v) for offsets |v|_inf <= radius."""

    d: int
    radius: int
    method: str
    table: np.ndarray  # shape (2R+1,)*d + (d, d)
    tail_constant: float | None = None

    def at(self, v) -> np.ndarray:
        return self.table[tuple(int(x) + self.radius for x in v)]

    def kappa0(self) -> np.ndarray:
        return 2.0 * np.sum(self.table ** 2, axis=(-2, -1))

    def offsets(self) -> np.ndarray:
        ax = np.arange(-self.radius, self.radius + 1)
        g = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(g, axis=-1)

    def to_csv(self, path) -> None:
        offs = self.offsets().reshape(-1, self.d)
        vals = self.table.reshape(len(offs), self.d, self.d)
        header = ",".join([f"v{k + 1}" for k in range(self.d)] + ["i", "j", "value"])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for off, mat in zip(offs, vals):
                lead = ",".join(str(int(x)) for x in off)
                for i in range(self.d):
                    for j in range(self.d):
                        fh.write(f"{lead},{i},{j},{mat[i, j]:.17g}\n")


def kernel_table(d: int, radius: int, method: str = "fourier") -> InfiniteKernel:
    table = np.empty((2 * radius + 1,) * d + (d, d))
    for (i, j), comp in kernel_components(d, radius, method):
        table[..., i, j] = comp
    return InfiniteKernel(d, radius, method, table)


def kappa0_grid(d: int, R: int, method: str = "fourier") -> np.ndarray:
    """kappa_0(0, v) on offsets [-R, R]^d without holding all components at once."""
    acc = np.zeros((2 * R + 1,) * d)
    for _, comp in kernel_components(d, R, method):
        acc += comp * comp
    return 2.0 * acc


def _radii(d: int, R: int) -> np.ndarray:
    ax = np.arange(-R, R + 1, dtype=float)
    g = np.meshgrid(*([ax] * d), indexing="ij", sparse=True)
    return np.sqrt(sum(x * x for x in g))


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def tail_sum_bound(R: float, d: int) -> float:
    """Estimate of sum_{|v| > R} |v|^{-2d} (integral with a one-diagonal shift)."""
    r0 = R - math.sqrt(d)
    if r0 <= 0:
        return math.inf
    return _sphere_area(d) / (d * r0 ** d)


def fit_decay(kappa: np.ndarray, d: int, rmin: float, rmax: float) -> tuple[float, float]:
    """(least-squares slope of log kappa vs log |v|, envelope constant max kappa |v|^{2d})."""
    R = (kappa.shape[0] - 1) // 2
    r = np.broadcast_to(_radii(d, R), kappa.shape)
    sel = (r >= rmin) & (r <= rmax) & (kappa > 0)
    if sel.sum() < 3:
        raise TailBoundUnavailable("too few offsets in the decay-fit window")
    x, y = np.log(r[sel]), np.log(kappa[sel])
    slope = float(np.polyfit(x, y, 1)[0])
    const = float(np.max(kappa[sel] * r[sel] ** (2 * d)))
    return slope, const


@dataclass
class ChiResult:
    d: int
    value: float
    radius: int
    tail_estimate: float
    decay_constant: float
    decay_slope: float
    method: str
    tol: float
    shell_partial_sums: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "d": self.d, "value": self.value, "radius": self.radius,
            "tail_estimate": self.tail_estimate, "decay_constant": self.decay_constant,
            "decay_slope": self.decay_slope, "method": self.method, "tol": self.tol,
        }


_PILOT = {2: 32, 3: 16}


def chi_radius(d: int, tol: float, method: str = "fourier") -> tuple[int, float, float]:
    """Truncation radius R with c * sum_{|v|>R}|v|^{-2d} < tol, and the fitted (slope, c)."""
    R0 = _PILOT.get(d, 8)
    kap = kappa0_grid(d, R0, method)
    slope, c = fit_decay(kap, d, 4.0, R0 / 2)
    if slope > -2 * d + 0.2:
        raise TailBoundUnavailable(f"fitted decay slope {slope:.3f} is slower than -2d+0.2")
    S = _sphere_area(d)
    R = int(math.ceil(math.sqrt(d) + (c * S / (d * tol)) ** (1.0 / d)))
    return max(R, R0), slope, c


def chi_partial(d: int, R: int, method: str = "fourier") -> tuple[float, np.ndarray]:
    """sum_{|v| <= R} kappa_0(0, v) and the cumulative sums over integer radii 0..R."""
    kap = kappa0_grid(d, R, method)
    r = np.broadcast_to(_radii(d, R), kap.shape)
    inside = r <= R
    shells = np.bincount(np.floor(r[inside]).astype(np.int64), weights=kap[inside], minlength=R + 1)
    cumulative = np.cumsum(shells)
    return float(math.fsum(shells)), cumulative


def chi(d: int, tol: float = 1e-4, method: str = "fourier", radius: int | None = None) -> ChiResult:
    """chi = sum_v kappa_0(0, v), truncated where the fitted tail bound drops below tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    R, slope, c = chi_radius(d, tol, method)
    if radius is not None:
        R = radius
    value, cumulative = chi_partial(d, R, method)
    tail = c * tail_sum_bound(R, d)
    return ChiResult(d, value, R, tail, c, slope, method, tol, cumulative.tolist())


def chi_parseval(d: int) -> float:
    """Closed form of chi from Parseval: sum_ij |symbol_ij|^2 = (2d phi)^2/phi^2, so chi = 8 d^2."""
    return 8.0 * d * d
