"""k-point functions and joint cumulants of the gradient-squared field.

Everything is expressed through the gradient covariance block
K[s, a, t, b] = grad_a^(1) grad_b^(2) G(x_s, x_t) of the k input points.
For a cycle sigma on a block B the sum over direction labellings
eta: B -> [d] of prod_j K[j, eta(j), sigma(j), eta(sigma(j))] is the trace
of the product of the d x d blocks taken around the cycle, so

    joint cumulant(B) = 2^{|B|-1} sum_{sigma cyclic, no fixed point} tr prod K,
    k-point function  = sum_{partitions without singletons} prod_B cumulant(B).

Two oracles evaluate the same moment from Gaussian moment expansions of
Phi(x) = sum_i ((grad_i Gamma(x))^2 - Var) without any cycle structure.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import continuum
from .combinatorics import (
    full_cycles_no_fixed,
    group_forbidden,
    partitions_no_singletons,
    perfect_matchings,
    set_partitions,
)
from .errors import CoincidentPoints, ComplexityBudgetExceeded, PointOutsideDomain
from .greens import GreenTable, gradient_covariance

MAX_K = 7
MAX_K_FEYNMAN = 6
MAX_K_SUBSET = 5
# sandpile height-one constant
SANDPILE_C = 2.0 / math.pi - 4.0 / math.pi ** 2


@dataclass
class CorrelationRequest:
    points: list
    mode: str = "moment"          # moment | cumulant
    side: str = "discrete"        # discrete | continuum_limit
    eps: float | None = None      # floor-map continuum points when given

    def __post_init__(self):
        if len(self.points) < 1:
            raise ValueError("need at least one point")
        if self.mode not in ("moment", "cumulant"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.side not in ("discrete", "continuum_limit"):
            raise ValueError(f"unknown side {self.side!r}")
        self.points = [tuple(p) for p in self.points]

    def to_json(self) -> dict:
        return {"points": [list(p) for p in self.points], "mode": self.mode,
                "side": self.side, "eps": self.eps}

    @classmethod
    def from_json(cls, obj: dict) -> "CorrelationRequest":
        return cls(obj["points"], obj.get("mode", "moment"), obj.get("side", "discrete"), obj.get("eps"))


@dataclass
class CorrelationResult:
    value: float
    decomposition: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"value": self.value, "decomposition": self.decomposition, "metadata": self.metadata}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# -- kernel blocks ----------------------------------------------------------------


def _point_indices(G: GreenTable, points) -> np.ndarray:
    dom = G.domain
    idx = dom.indices(np.asarray(points, dtype=np.int64).reshape(len(points), dom.d))
    if np.any(idx < 0):
        bad = [tuple(p) for p, i in zip(points, idx) if i < 0]
        raise PointOutsideDomain(f"points {bad} are not vertices of {dom!r}")
    return idx


def discrete_block(G: GreenTable, points) -> np.ndarray:
    """K[s, a, t, b] for lattice points (repeats allowed)."""
    return gradient_covariance(G, _point_indices(G, points))


def continuum_block(points, domain: str = "unit_disk") -> np.ndarray:
    """K[s, a, t, b] = d_a^(1) d_b^(2) G_U(x_s, x_t) for s != t; diagonal blocks are zero."""
    pts = [continuum._as_xy(p) for p in points]
    k = len(pts)
    for s, t in itertools.combinations(range(k), 2):
        if np.allclose(pts[s], pts[t], rtol=0.0, atol=1e-14):
            raise CoincidentPoints(f"points {s} and {t} coincide")
    green = continuum.ContinuumGreen(domain)
    K = np.zeros((k, 2, k, 2))
    for s in range(k):
        for t in range(s + 1, k):
            M = green.dd(pts[s], pts[t])
            K[s, :, t, :] = M
            K[t, :, s, :] = M.T
    return K


# -- cycle / partition sums ---------------------------------------------------------


def cycle_trace(K: np.ndarray, cycle) -> np.ndarray:
    """sum_eta prod_j K[c_j, eta_j, c_{j+1}, eta_{j+1}]; K may carry leading batch axes."""
    n = len(cycle)
    prod = K[..., cycle[0], :, cycle[1 % n], :]
    for t in range(1, n):
        prod = prod @ K[..., cycle[t], :, cycle[(t + 1) % n], :]
    return np.trace(prod, axis1=-2, axis2=-1)


def _block_cumulant(K: np.ndarray, block) -> np.ndarray:
    terms = [cycle_trace(K, c) for c in full_cycles_no_fixed(block)]
    if not terms:
        return np.zeros(K.shape[:-4])
    return 2.0 ** (len(block) - 1) * np.sum(terms, axis=0)


def _check_budget(k: int, max_k: int) -> None:
    if k > max_k:
        raise ComplexityBudgetExceeded(f"k = {k} exceeds the configured maximum {max_k}")


def moment_from_block(K: np.ndarray, max_k: int = MAX_K) -> np.ndarray:
    """E[prod_j Phi(x_j)] from the block K (batched over leading axes)."""
    k = K.shape[-2]
    _check_budget(k, max_k)
    total = np.zeros(K.shape[:-4])
    cache: dict = {}
    for part in partitions_no_singletons(k):
        term = np.ones(K.shape[:-4])
        for B in part:
            if B not in cache:
                cache[B] = _block_cumulant(K, B)
            term = term * cache[B]
        total = total + term
    return total


def cumulant_from_block(K: np.ndarray, max_k: int = MAX_K) -> np.ndarray:
    k = K.shape[-2]
    _check_budget(k, max_k)
    return _block_cumulant(K, tuple(range(k)))


def _moment_result(K: np.ndarray, max_k: int, metadata: dict) -> CorrelationResult:
    k = K.shape[-2]
    _check_budget(k, max_k)
    terms = []
    for part in partitions_no_singletons(k):
        val = math.prod(float(_block_cumulant(K, B)) for B in part)
        terms.append({"partition": [list(B) for B in part], "value": val})
    value = math.fsum(t["value"] for t in terms)
    return CorrelationResult(value, terms, metadata)


def _cumulant_result(K: np.ndarray, max_k: int, metadata: dict) -> CorrelationResult:
    k = K.shape[-2]
    _check_budget(k, max_k)
    scale = 2.0 ** (k - 1)
    terms = [{"cycle": list(c), "value": scale * float(cycle_trace(K, c))}
             for c in full_cycles_no_fixed(range(k))]
    value = math.fsum(t["value"] for t in terms)
    return CorrelationResult(value, terms, metadata)


def _discrete_meta(G: GreenTable, method: str) -> dict:
    return {"eps": G.domain.eps, "domain": G.domain.spec.to_json(), "method": method}


def kpoint_exact(G: GreenTable, points, max_k: int = MAX_K) -> CorrelationResult:
    """E[prod_j Phi_eps(x_j)]; decomposition lists one term per partition."""
    K = discrete_block(G, points)
    return _moment_result(K, max_k, _discrete_meta(G, "partition-cycle"))


def joint_cumulant_exact(G: GreenTable, points, max_k: int = MAX_K) -> CorrelationResult:
    """kappa(Phi_eps(x_1), ..., Phi_eps(x_l)); decomposition lists one term per cycle."""
    K = discrete_block(G, points)
    return _cumulant_result(K, max_k, _discrete_meta(G, "cycle"))


def kpoint_limit_continuum(points, k: int | None = None, domain: str = "unit_disk",
                           max_k: int = MAX_K) -> float:
    """The partition/cycle sum with d^(1) d^(2) G_U in place of the discrete double differences."""
    if k is not None and k != len(points):
        raise ValueError("k must equal the number of points")
    K = continuum_block(points, domain)
    return _moment_result(K, max_k, {"domain": domain, "method": "continuum"}).value


def cumulant_limit_continuum(points, ell: int | None = None, domain: str = "unit_disk",
                             max_k: int = MAX_K) -> float:
    if ell is not None and ell != len(points):
        raise ValueError("ell must equal the number of points")
    K = continuum_block(points, domain)
    return _cumulant_result(K, max_k, {"domain": domain, "method": "continuum"}).value


def recompose_moment(points, cumulant) -> float:
    """sum over all set partitions of prod_B cumulant(points restricted to B)."""
    k = len(points)
    total = []
    for part in set_partitions(k):
        total.append(math.prod(cumulant([points[j] for j in B]) for B in part))
    return math.fsum(total)


def sandpile_cumulant_map(kappa_phi_limit: float, ell: int) -> float:
    """Predicted limiting height-one cumulant: -2 (C/2)^ell * kappa_phi_limit."""
    if ell < 2:
        raise ValueError("ell must be >= 2")
    return -2.0 * (SANDPILE_C / 2.0) ** ell * kappa_phi_limit


# -- oracles ------------------------------------------------------------------------


def _direction_cov(K: np.ndarray, d: int) -> np.ndarray:
    """(T, d^k, 2k, 2k) covariance of the doubled gradient variables for every direction tuple."""
    k = K.shape[-2]
    eta = np.array(list(itertools.product(range(d), repeat=k)), dtype=np.int64)  # (D, k)
    pt = np.repeat(np.arange(k), 2)                                               # variable -> point
    dirs = eta[:, pt]                                                             # (D, 2k)
    C = K[:, pt[:, None], dirs[:, :, None], pt[None, :], dirs[:, None, :]]
    return C


@lru_cache(maxsize=None)
def _restricted_matchings(k: int) -> np.ndarray:
    groups = [(2 * j, 2 * j + 1) for j in range(k)]
    ms = list(perfect_matchings(2 * k, group_forbidden(groups)))
    return np.array(ms, dtype=np.int64).reshape(len(ms), k, 2)


def _as_batch(K: np.ndarray) -> tuple[np.ndarray, bool]:
    if K.ndim == 4:
        return K[None], True
    return K, False


def feynman_from_block(K: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Complete Feynman diagrams: matchings of 2k gradient variables, no intra-point pairs."""
    K, single = _as_batch(K)
    T, k, d = K.shape[0], K.shape[1], K.shape[2]
    _check_budget(k, MAX_K_FEYNMAN)
    if k == 0:
        out = np.ones(T)
        return out[0] if single else out
    M = _restricted_matchings(k)
    out = np.empty(T)
    for lo in range(0, T, chunk):
        C = _direction_cov(K[lo:lo + chunk], d)
        vals = C[..., M[:, :, 0], M[:, :, 1]].prod(axis=-1)  # (t, D, nmatch)
        out[lo:lo + chunk] = vals.sum(axis=(-1, -2))
    return out[0] if single else out


def _hafnians_all_masks(C: np.ndarray) -> np.ndarray:
    """haf(C restricted to mask) for all 2^n masks; C has shape (..., n, n)."""
    n = C.shape[-1]
    H = np.zeros((1 << n,) + C.shape[:-2], dtype=C.dtype)
    H[0] = 1.0
    for mask in range(1, 1 << n):
        if bin(mask).count("1") % 2:
            continue
        low = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << low)
        acc = 0.0
        r = rest
        while r:
            b = (r & -r).bit_length() - 1
            r &= r - 1
            acc = acc + C[..., low, b] * H[rest & ~(1 << b)]
        H[mask] = acc
    return H


def subset_from_block(K: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Inclusion-exclusion over subsets S: E[prod (Y^2 - s^2)] = sum_S (-1)^{k-|S|} prod_{not S} s^2 E[prod_S Y^2].

    Raw moments E[prod_S Y_j^2] are hafnians of the doubled covariance. The
    alternating sum cancels heavily, so it runs in extended precision.
    """
    K, single = _as_batch(K)
    T, k, d = K.shape[0], K.shape[1], K.shape[2]
    _check_budget(k, MAX_K_SUBSET)
    out = np.empty(T)
    for lo in range(0, T, chunk):
        C = _direction_cov(K[lo:lo + chunk], d).astype(np.longdouble)  # (t, D, 2k, 2k)
        H = _hafnians_all_masks(C)                     # (4^k, t, D)
        var = C[..., np.arange(0, 2 * k, 2), np.arange(1, 2 * k, 2)]  # (t, D, k)
        total = np.zeros(C.shape[:2], dtype=np.longdouble)
        for S in range(1 << k):
            mask = 0
            weight = np.ones(C.shape[:2], dtype=np.longdouble)
            for j in range(k):
                if S >> j & 1:
                    mask |= 3 << (2 * j)
                else:
                    weight = -weight * var[..., j]
            total = total + weight * H[mask]
        out[lo:lo + chunk] = total.sum(axis=-1, dtype=np.longdouble)
    return out[0] if single else out


def kpoint_oracle_feynman(G: GreenTable, points) -> float:
    _check_budget(len(points), MAX_K_FEYNMAN)
    return float(feynman_from_block(discrete_block(G, points)))


def kpoint_oracle_subset(G: GreenTable, points) -> float:
    _check_budget(len(points), MAX_K_SUBSET)
    return float(subset_from_block(discrete_block(G, points)))


def tuple_blocks(G: GreenTable, tuples) -> np.ndarray:
    """Stacked K blocks (T, k, d, k, d) for a batch of k-tuples of lattice points."""
    tuples = np.asarray(tuples, dtype=np.int64)
    T, k, d = tuples.shape
    idx = _point_indices(G, tuples.reshape(-1, d)).reshape(T, k)
    uniq, inv = np.unique(idx, return_inverse=True)
    full = gradient_covariance(G, uniq)                # (u, d, u, d)
    inv = inv.reshape(T, k)
    return full[inv[:, :, None, None, None], np.arange(d)[None, None, :, None, None],
                inv[:, None, None, :, None], np.arange(d)[None, None, None, None, :]]


# -- cumulants of the paired field ---------------------------------------------------


def pairing_cumulants(G: GreenTable, weights: np.ndarray, orders=(2, 3, 4)) -> dict:
    """Exact cumulants of X = sum_v w_v Phi(v) over all lattice tuples.

    For a Gaussian quadratic form kappa_n(X) = 2^{n-1} (n-1)! tr((W K)^n) with K
    the (m d) x (m d) gradient covariance of the support and W = diag(w) (x) I_d.
    """
    w = np.asarray(weights, dtype=float)
    supp = np.nonzero(w)[0]
    out = {}
    if len(supp) == 0:
        return {n: 0.0 for n in orders}
    d = G.domain.d
    K = gradient_covariance(G, supp).reshape(len(supp) * d, len(supp) * d)
    K = 0.5 * (K + K.T)
    wd = np.repeat(w[supp], d)
    lam = _quadratic_form_spectrum(K, wd)
    for n in orders:
        if n == 1:
            out[n] = 0.0
            continue
        out[n] = 2.0 ** (n - 1) * math.factorial(n - 1) * math.fsum(lam ** n)
    return out


def _quadratic_form_spectrum(K: np.ndarray, wd: np.ndarray) -> np.ndarray:
    """Eigenvalues of W K via the congruent symmetric matrix L^T W L (K = L L^T)."""
    try:
        L = np.linalg.cholesky(K)
        B = L.T @ (wd[:, None] * L)
        return np.linalg.eigvalsh(0.5 * (B + B.T))
    except np.linalg.LinAlgError:
        return np.linalg.eigvals(wd[:, None] * K).real


def pairing_covariance(G: GreenTable, w1: np.ndarray, w2: np.ndarray) -> float:
    """Cov(sum_v w1_v Phi(v), sum_v w2_v Phi(v)) = 2 tr(W1 K W2 K)."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    supp = np.nonzero((w1 != 0) | (w2 != 0))[0]
    if len(supp) == 0:
        return 0.0
    d = G.domain.d
    K = gradient_covariance(G, supp).reshape(len(supp) * d, len(supp) * d)
    a = np.repeat(w1[supp], d)
    b = np.repeat(w2[supp], d)
    return 2.0 * float(np.sum((a[:, None] * K) * (b[:, None] * K).T))
