"""Monte Carlo for the DGFF and its Wick-centred gradient-squared field.

Replicates are drawn in fixed-size blocks; block b of a run with seed s uses
its own Philox stream keyed by (s, b), so results do not depend on how the
blocks are spread over threads.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .continuum import TestFunction
from .errors import InsufficientReplicates, SupportTooClose
from .greens import GreenTable, solve_green, wick_diagonal
from .lattice import DomainSpec, LatticeDomain, discretize

BLOCK = 1000
MIN_REPLICATES = 100


def thread_count(threads: int | None = None) -> int:
    """Worker count: GRADSQ_THREADS wins over the argument; default 1."""
    env = os.environ.get("GRADSQ_THREADS")
    if env:
        threads = int(env)
    return max(1, int(threads or 1))


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


@dataclass
class FieldSample:
    domain: LatticeDomain
    gamma: np.ndarray
    phi: np.ndarray | None = None
    boundary: np.ndarray | None = None   # vertices with an exterior forward neighbour

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary if self.boundary is not None else np.ones(self.domain.n, bool)


def boundary_flags(domain: LatticeDomain) -> np.ndarray:
    flags = np.zeros(domain.n, dtype=bool)
    for i in range(domain.d):
        flags |= domain.neighbor_indices(i) < 0
    return flags


def sample_dgff(G: GreenTable, rng_seed) -> FieldSample:
    """Gamma = L z with L L^T = G and z standard normal."""
    L = G.cholesky()
    z = np.random.Generator(np.random.Philox(np.random.SeedSequence(rng_seed))).standard_normal(G.domain.n)
    return FieldSample(G.domain, L @ z)


def _phi(gamma: np.ndarray, domain: LatticeDomain, wick: np.ndarray) -> np.ndarray:
    """Phi for one field (n,) or a stack of fields (N, n); exterior values of Gamma are 0."""
    ext = np.concatenate([gamma, np.zeros(gamma.shape[:-1] + (1,))], axis=-1)
    phi = -np.sum(wick, axis=1) * np.ones(gamma.shape)
    for i in range(domain.d):
        nb = domain.neighbor_indices(i)  # -1 picks the appended zero
        diff = ext[..., nb] - gamma
        phi = phi + diff * diff
    return phi


def phi_field(sample: FieldSample, G: GreenTable) -> FieldSample:
    """Fill phi(x) = sum_i ((Gamma(x+e_i) - Gamma(x))^2 - grad_i grad_i G(x, x))."""
    phi = _phi(sample.gamma, sample.domain, wick_diagonal(G))
    return FieldSample(sample.domain, sample.gamma, phi, boundary_flags(sample.domain))


# -- test-function weights -------------------------------------------------------------


def _check_support(f: TestFunction, domain: LatticeDomain) -> None:
    margin = domain.eps * math.sqrt(domain.d)
    if not f.fits_inside(domain.spec, margin=margin):
        raise SupportTooClose(f"support of {f.kind} at {f.center} is within eps*sqrt(d) of the boundary")


def cell_integrals(f: TestFunction, domain: LatticeDomain, order: int = 4) -> np.ndarray:
    """int over eps*(x + [0,1)^d) of f, per vertex, with an order^d Gauss rule."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    d = domain.d
    nodes = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
    weights = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    eps = domain.eps
    corners = domain.continuum_points()
    lo, hi = f.support_box()
    near = np.all((corners <= hi) & (corners + eps >= lo), axis=1)
    out = np.zeros(domain.n)
    pts = corners[near][:, None, :] + eps * nodes[None, :, :]
    out[near] = eps ** d * (f(pts) @ weights)
    return out


def test_function_weights(f: TestFunction, domain: LatticeDomain, mode: str = "sum") -> np.ndarray:
    """Vertex weights w with <Phi, f> = sum_x w_x Phi(x)."""
    _check_support(f, domain)
    if mode == "sum":
        return f(domain.continuum_points())
    if mode == "integral":
        return cell_integrals(f, domain)
    raise ValueError(f"unknown pairing mode {mode!r}")


test_function_weights.__test__ = False


def pair_with_test_function(sample: FieldSample, f: TestFunction, eps: float | None = None,
                            mode: str = "integral") -> float:
    """integral: sum_x phi(x) int_{A_x} f; sum: sum_x f(eps x) phi(x)."""
    if sample.phi is None:
        raise ValueError("phi has not been computed for this sample")
    if eps is not None and not math.isclose(eps, sample.domain.eps):
        raise ValueError("eps does not match the sample's domain")
    w = test_function_weights(f, sample.domain, mode)
    return math.fsum(w * sample.phi)


# -- Monte Carlo cumulants -------------------------------------------------------------


@dataclass
class McEstimate:
    statistic: str
    value: float
    stderr: float
    n: int
    seed: int
    f_id: int = 0
    order: int = 0

    def to_json(self) -> dict:
        return {"statistic": self.statistic, "value": self.value, "stderr": self.stderr,
                "n": self.n, "seed": self.seed, "f_id": self.f_id, "order": self.order}


def _central_sums(y: np.ndarray, n) -> tuple:
    """S_r = sum (y - mean)^r for r = 2..4 from raw power sums of y (last axis or given n)."""
    P1, P2, P3, P4 = y
    mu = P1 / n
    S2 = P2 - n * mu ** 2
    S3 = P3 - 3.0 * mu * P2 + 2.0 * n * mu ** 3
    S4 = P4 - 4.0 * mu * P3 + 6.0 * mu ** 2 * P2 - 3.0 * n * mu ** 4
    return mu, S2, S3, S4


def _kstats_from_sums(mu, S2, S3, S4, n, orders) -> dict:
    out = {}
    for r in orders:
        if r == 1:
            out[r] = mu
        elif r == 2:
            out[r] = S2 / (n - 1)
        elif r == 3:
            out[r] = n * S3 / ((n - 1) * (n - 2))
        elif r == 4:
            out[r] = (n * (n + 1) * S4 - 3.0 * (n - 1) * S2 ** 2) / ((n - 1) * (n - 2) * (n - 3))
        else:
            raise ValueError("k-statistics available for orders 1..4")
    return out


def k_statistics(x: np.ndarray, orders=(1, 2, 3, 4)) -> dict:
    """Unbiased cumulant estimators k_1..k_4."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    shift = float(np.mean(x))
    y = x - shift
    sums = [math.fsum(y ** r) for r in (1, 2, 3, 4)]
    out = {r: float(v) for r, v in _kstats_from_sums(*_central_sums(sums, n), n, orders).items()}
    if 1 in out:
        out[1] += shift
    return out


def jackknife_kstats(x: np.ndarray, orders=(1, 2, 3, 4)) -> tuple[dict, dict]:
    """k-statistics and their leave-one-out jackknife standard errors."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 5:
        raise InsufficientReplicates(f"need at least 5 replicates, got {n}")
    shift = float(np.mean(x))
    y = x - shift
    pw = np.stack([y, y ** 2, y ** 3, y ** 4])
    full = np.array([math.fsum(p) for p in pw])
    loo = full[:, None] - pw
    est = _kstats_from_sums(*_central_sums(full, n), n, orders)
    sub = _kstats_from_sums(*_central_sums(loo, n - 1), n - 1, orders)
    se = {}
    for r in orders:
        t = sub[r]
        se[r] = float(math.sqrt((n - 1) / n * float(np.sum((t - t.mean()) ** 2))))
    est = {r: float(v) for r, v in est.items()}
    if 1 in est:
        est[1] += shift
    return est, se


@dataclass
class McConfig:
    domain: DomainSpec
    eps: float
    functions: list
    n: int = 10_000
    seed: int = 0
    orders: tuple = (1, 2, 3, 4)
    mode: str = "sum"
    scale: float = 1.0
    threads: int | None = None
    extra: dict = field(default_factory=dict)


def simulate_pairings(G: GreenTable, weights: np.ndarray, n: int, seed: int,
                      threads: int | None = None) -> np.ndarray:
    """(n, F) array of sum_x w_{x,f} Phi(x) over n independent replicates.

    Only Gamma on the support of the weights and its forward neighbours is formed.
    """
    dom = G.domain
    W = np.asarray(weights, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    supp = np.nonzero(np.any(W != 0, axis=1))[0]
    need = [supp] + [dom.neighbor_indices(i)[supp] for i in range(dom.d)]
    need = np.unique(np.concatenate(need))
    need = need[need >= 0]
    pos = np.full(dom.n + 1, len(need), dtype=np.int64)  # exterior -> appended zero column
    pos[need] = np.arange(len(need))
    L = G.cholesky()[need]                 # Gamma_need = z @ L.T
    wick = wick_diagonal(G)[supp].sum(axis=1)
    sp = pos[supp]
    nbs = [pos[dom.neighbor_indices(i)[supp]] for i in range(dom.d)]
    Ws = W[supp]
    nblocks = -(-n // BLOCK)

    def run(b: int) -> np.ndarray:
        m = min(BLOCK, n - b * BLOCK)
        z = block_rng(seed, b).standard_normal((m, dom.n))
        gam = np.concatenate([z @ L.T, np.zeros((m, 1))], axis=1)
        base = gam[:, sp]
        phi = -wick * np.ones((m, 1))
        for nb in nbs:
            diff = gam[:, nb] - base
            phi += diff * diff
        return phi @ Ws

    workers = thread_count(threads)
    if workers == 1:
        parts = [run(b) for b in range(nblocks)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(nblocks)))
    return np.concatenate(parts, axis=0)


def mc_cumulants(config: McConfig | dict, G: GreenTable | None = None,
                 return_samples: bool = False):
    """k-statistics of scale * <Phi_eps, f> (sum or integral pairing) with jackknife errors."""
    if isinstance(config, dict):
        config = McConfig(**config)
    if config.n < MIN_REPLICATES:
        raise InsufficientReplicates(f"N = {config.n} < {MIN_REPLICATES}")
    if G is None:
        G = solve_green(discretize(config.domain, config.eps))
    dom = G.domain
    W = np.stack([test_function_weights(f, dom, config.mode) for f in config.functions], axis=1)
    vals = config.scale * simulate_pairings(G, W, config.n, config.seed, config.threads)
    out = []
    for fid in range(W.shape[1]):
        est, se = jackknife_kstats(vals[:, fid], config.orders)
        for r in config.orders:
            out.append(McEstimate(f"k{r}", est[r], se[r], config.n, config.seed, fid, r))
    if return_samples:
        return out, vals
    return out


def write_replicates_csv(path, values: np.ndarray) -> None:
    """Per-replicate pairings: columns replicate, f_id, value."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "f_id", "value"])
        for r in range(values.shape[0]):
            for fid in range(values.shape[1]):
                w.writerow([r, fid, "%.17g" % values[r, fid]])
