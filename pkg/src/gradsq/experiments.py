"""Reproducible experiments with JSON/CSV reports.

Every experiment takes an :class:`ExperimentConfig` (defaults per experiment
are merged in by :func:`make_config`) and returns an :class:`ExperimentReport`
whose pass/fail entries each name the tolerance key they were judged by.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .continuum import MobiusMap, TestFunction, green_disk_dd_matrix, l2_inner
from .correlation import kpoint_exact, kpoint_limit_continuum, pairing_covariance, pairing_cumulants
from .errors import ExtrapolationUnstable
from .greens import chi, chi_parseval, double_diff, solve_green
from .lattice import DomainSpec, discretize, floor_point
from .sampler import jackknife_kstats, simulate_pairings, test_function_weights

EXPERIMENTS = ("whitenoise", "cumulant", "green-convergence", "conformal", "chi",
               "green", "kpoint", "sample")

_SQUARE = {"shape": "unit_square", "d": 2}
_DISK = {"shape": "unit_disk", "d": 2}

DEFAULTS = {
    "whitenoise": {
        "domain": _SQUARE,
        "eps": [0.125, 0.0625, 0.03125],
        "functions": [
            {"kind": "bump", "center": [0.5, 0.5], "radius": 0.3},
            {"kind": "bump", "center": [0.35, 0.5], "radius": 0.14},
            {"kind": "bump", "center": [0.65, 0.5], "radius": 0.14},
        ],
        "replicates": 100000,
        "seed": 1,
        "tolerances": {"var_rel": 0.15, "improvement_margin": 0.0, "disjoint_rel": 0.05,
                       "mc_sigmas": 4.0, "skew_max": 0.1, "exkurt_max": 0.2},
        "params": {"variance_functions": [0], "disjoint_pairs": [[1, 2]], "chi_tol": 1e-5},
    },
    "cumulant": {
        "domain": _SQUARE,
        "eps": [0.125, 0.0625, 0.03125],
        "functions": [{"kind": "bump", "center": [0.5, 0.5], "radius": 0.3}],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"slope_min_3": 0.4, "slope_min": 0.0, "max_step_ratio": 1.0},
        "params": {"orders": [2, 3, 4]},
    },
    "green-convergence": {
        "domain": _DISK,
        "eps": [0.0625, 0.03125, 0.015625, 0.0078125],
        "functions": [],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"cauchy_rel": 0.03, "residual_rel": 0.02, "extrapolation_rel": 0.01},
        "params": {"v": [0.25, 0.0], "w": [-0.125, 0.375], "order": 1},
    },
    "conformal": {
        "domain": _DISK,
        "eps": [0.0625, 0.03125, 0.015625],
        "functions": [],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"continuum_rel": 1e-6, "discrete_rel": 0.10},
        "params": {
            "a": [0.2, 0.4],
            "point_sets": [
                [[0.2, 0.0], [-0.1, 0.4]],
                [[0.125, 0.3125], [-0.125, -0.125], [0.375, -0.125]],
            ],
        },
    },
    "green": {
        "domain": _SQUARE,
        "eps": [0.25, 0.125],
        "functions": [],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"residual": 1e-10, "symmetry": 1e-12},
        "params": {"save_binary": False},
    },
    "kpoint": {
        "domain": _SQUARE,
        "eps": [0.125],
        "functions": [],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"oracle_rel": 1e-10},
        "params": {"requests": [
            {"points": [[3, 3], [4, 5]], "mode": "moment"},
            {"points": [[3, 3], [4, 5], [5, 3]], "mode": "moment"},
            {"points": [[3, 3], [4, 5], [5, 3]], "mode": "cumulant"},
            {"points": [[0.2, 0.0], [-0.1, 0.4]], "mode": "moment", "side": "continuum_limit"},
        ]},
    },
    "sample": {
        "domain": _SQUARE,
        "eps": [0.125],
        "functions": [{"kind": "bump", "center": [0.5, 0.5], "radius": 0.3}],
        "replicates": 20000,
        "seed": 1,
        "tolerances": {"mc_sigmas": 4.0},
        "params": {"orders": [1, 2, 3, 4], "dump_replicates": False},
    },
    "chi": {
        "domain": None,
        "eps": [],
        "functions": [],
        "replicates": 0,
        "seed": 1,
        "tolerances": {"method_rel": 1e-4, "truncation_rel": 2e-4, "lower_bound": 16.0,
                       "chi_lower_bound": 8.0, "min_shell_increment": 0.0},
        "params": {"d": [2], "tol": 1e-4, "tol_fine": 1e-6, "methods": ["fourier", "bigbox"],
                   "bigbox_max_radius": {"3": 24}},
    },
}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentConfig:
    experiment: str
    domain: DomainSpec | None
    eps: list
    functions: list
    replicates: int = 0
    seed: int = 1
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    threads: int | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        self.eps = [float(e) for e in self.eps]
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps schedule must be strictly decreasing")
        self.functions = [f if isinstance(f, TestFunction) else TestFunction.from_json(f)
                          for f in self.functions]
        if self.domain is not None:
            for f in self.functions:
                if not f.fits_inside(self.domain):
                    raise ValueError(f"test function at {f.center} leaves the domain")

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "domain": None if self.domain is None else self.domain.to_json(),
            "eps": self.eps,
            "functions": [f.to_json() for f in self.functions],
            "replicates": self.replicates,
            "seed": self.seed,
            "tolerances": self.tolerances,
            "params": self.params,
        }

    def digest(self) -> str:
        return hashlib.sha256(_canonical(self.to_json()).encode()).hexdigest()


def make_config(experiment: str, overrides: dict | None = None, seed: int | None = None,
                threads: int | None = None) -> ExperimentConfig:
    """Defaults for ``experiment`` updated by ``overrides`` (dicts merged one level deep)."""
    if experiment not in DEFAULTS:
        raise ValueError(f"unknown experiment {experiment!r}")
    cfg = copy.deepcopy(DEFAULTS[experiment])
    for key, val in (overrides or {}).items():
        if key in ("experiment", "output"):
            continue
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    if seed is not None:
        cfg["seed"] = int(seed)
    dom = cfg.pop("domain")
    return ExperimentConfig(experiment, None if dom is None else DomainSpec.from_json(dom),
                            threads=threads, **cfg)


# -- reports --------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    tables: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add_table(self, name: str, columns: list, rows: list) -> None:
        self.tables[name] = {"columns": list(columns), "rows": [list(r) for r in rows]}

    def check(self, name: str, value, threshold, comparison: str, tolerance_key: str) -> bool:
        ops = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
               ">": lambda a, b: a > b, ">=": lambda a, b: a >= b}
        ok = value is not None and math.isfinite(value) and bool(ops[comparison](value, threshold))
        self.criteria.append({"name": name, "passed": ok, "value": value, "threshold": threshold,
                              "comparison": comparison, "tolerance_key": tolerance_key})
        return ok

    def criterion(self, name: str) -> dict:
        for c in self.criteria:
            if c["name"] == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def to_json(self) -> dict:
        return _clean({
            "experiment": self.experiment,
            "passed": self.passed,
            "criteria": self.criteria,
            "fits": self.fits,
            "tables": self.tables,
            "config": self.config,
            "provenance": self.provenance,
        })

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, "report.json")]
        with open(paths[0], "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
        for name, tab in sorted(self.tables.items()):
            path = os.path.join(out_dir, f"{name}.csv")
            write_csv(path, tab["columns"], tab["rows"])
            paths.append(path)
        return paths


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _new_report(config: ExperimentConfig) -> ExperimentReport:
    prov = {"config_hash": config.digest(), "code_version": __version__, "seed": config.seed}
    return ExperimentReport(config.experiment, config.to_json(), provenance=prov)


def loglog_slope(eps, values) -> float:
    """Least-squares slope of log|value| against log eps."""
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        return math.nan
    return float(np.polyfit(np.log(eps), np.log(v), 1)[0])


# -- white noise ------------------------------------------------------------------------


def _chi_value(d: int, tol: float) -> float:
    return chi(d, tol=tol).value


def run_whitenoise(config: ExperimentConfig) -> ExperimentReport:
    """Exact and Monte Carlo covariances of eps^{d/2}<Phi, f>_S against chi int f g."""
    rep = _new_report(config)
    tol = config.tolerances
    d = config.domain.d
    fs = config.functions
    chi_val = _chi_value(d, config.params.get("chi_tol", 1e-5))
    rep.fits["chi"] = chi_val
    nf = len(fs)
    gram = np.array([[l2_inner(f, g) for g in fs] for f in fs])
    norms = np.sqrt(np.diag(gram))
    rows, mc_rows = [], []
    ratios = {p: [] for p in config.params["variance_functions"]}
    disjoint = {tuple(q): [] for q in config.params["disjoint_pairs"]}
    moments = {}
    for eps in config.eps:
        G = solve_green(discretize(config.domain, eps))
        W = np.stack([test_function_weights(f, G.domain, "sum") for f in fs], axis=1)
        scale = eps ** d
        cov = np.array([[scale * pairing_covariance(G, W[:, p], W[:, q]) for q in range(nf)]
                        for p in range(nf)])
        vals = None
        if config.replicates:
            vals = eps ** (d / 2) * simulate_pairings(G, W, config.replicates, config.seed, config.threads)
        for p in range(nf):
            for q in range(p, nf):
                target = chi_val * gram[p, q]
                rel = cov[p, q] / target - 1.0 if target != 0 else math.nan
                rel_norm = cov[p, q] / (chi_val * norms[p] * norms[q])
                rows.append([eps, p, q, cov[p, q], target, rel, rel_norm])
                if vals is not None:
                    x, y = vals[:, p], vals[:, q]
                    zx, zy = x - x.mean(), y - y.mean()
                    prod = zx * zy
                    n = len(prod)
                    mc = math.fsum(prod) / (n - 1)
                    se = float(np.std(prod, ddof=1) / math.sqrt(n))
                    mc_rows.append([eps, p, q, mc, se, (mc - cov[p, q]) / se])
        for p in ratios:
            ratios[p].append(cov[p, p] / (chi_val * gram[p, p]))
        for pq in disjoint:
            disjoint[pq].append(cov[pq] / (chi_val * norms[pq[0]] * norms[pq[1]]))
        if vals is not None and eps == config.eps[-1]:
            for p in ratios:
                est, se = jackknife_kstats(vals[:, p])
                exact = pairing_cumulants(G, W[:, p], (2, 3, 4))
                exact = {n: c * eps ** (n * d / 2) for n, c in exact.items()}
                moments[p] = (est, se, exact)
    rep.add_table("covariance", ["eps", "p", "q", "exact", "chi_l2", "rel_err", "rel_norm"], rows)
    if mc_rows:
        rep.add_table("mc_covariance", ["eps", "p", "q", "mc", "stderr", "z"], mc_rows)
    for p, seq in ratios.items():
        rep.fits[f"var_ratio_f{p}"] = seq
        rep.check(f"var_ratio_f{p}", abs(seq[-1] - 1.0), tol["var_rel"], "<=", "var_rel")
        rep.check(f"var_ratio_improves_f{p}", abs(seq[-1] - 1.0) - abs(seq[0] - 1.0),
                  -tol["improvement_margin"], "<", "improvement_margin")
    for pq, seq in disjoint.items():
        rep.fits[f"disjoint_f{pq[0]}_f{pq[1]}"] = seq
        rep.check(f"disjoint_f{pq[0]}_f{pq[1]}", abs(seq[-1]), tol["disjoint_rel"], "<=",
                  "disjoint_rel")
    if mc_rows:
        fine = [r for r in mc_rows if r[0] == config.eps[-1]]
        for r in fine:
            p, q = r[1], r[2]
            if p == q and p in ratios or (p, q) in disjoint:
                rep.check(f"mc_consistent_f{p}_f{q}", abs(r[5]), tol["mc_sigmas"], "<=", "mc_sigmas")
        mrows = []
        for p, (est, se, exact) in moments.items():
            skew = est[3] / est[2] ** 1.5
            exk = est[4] / est[2] ** 2
            mrows.append([config.eps[-1], p, est[2], est[3], se[3], est[4], se[4], skew, exk,
                          exact[3] / exact[2] ** 1.5, exact[4] / exact[2] ** 2])
            rep.check(f"skewness_f{p}", abs(skew), tol["skew_max"], "<", "skew_max")
            rep.check(f"excess_kurtosis_f{p}", abs(exk), tol["exkurt_max"], "<", "exkurt_max")
            # the finite-eps non-Gaussianity itself is known exactly
            for n in (3, 4):
                rep.check(f"mc_k{n}_matches_exact_f{p}", abs(est[n] - exact[n]) / se[n],
                          tol["mc_sigmas"], "<=", "mc_sigmas")
        rep.add_table("normality", ["eps", "p", "k2", "k3", "k3_se", "k4", "k4_se", "skewness",
                                    "excess_kurtosis", "exact_skewness", "exact_excess_kurtosis"],
                      mrows)
    return rep


# -- cumulant decay ---------------------------------------------------------------------


def exact_paired_cumulants(domain: DomainSpec, eps: float, f: TestFunction, orders) -> dict:
    """kappa_n(eps^{d/2} <Phi_eps, f>_S) over all lattice n-tuples."""
    G = solve_green(discretize(domain, eps))
    w = test_function_weights(f, G.domain, "sum")
    raw = pairing_cumulants(G, w, orders)
    d = domain.d
    return {n: raw[n] * eps ** (n * d / 2) for n in orders}


def run_cumulant_decay(config: ExperimentConfig) -> ExperimentReport:
    rep = _new_report(config)
    d = config.domain.d
    orders = [int(n) for n in config.params["orders"]]
    rows = []
    for fid, f in enumerate(config.functions):
        per = {n: [] for n in orders}
        for eps in config.eps:
            kap = exact_paired_cumulants(config.domain, eps, f, orders)
            for n in orders:
                per[n].append(kap[n])
            rows.append([eps, fid] + [kap[n] for n in orders])
        for n in orders:
            seq = per[n]
            slope = loglog_slope(config.eps, seq)
            rep.fits[f"f{fid}_k{n}"] = {"values": seq, "slope": slope,
                                        "theory_slope": (d - 1) * (n - 2) / 2}
            if n < 3:
                continue
            steps = [b / a if a > 0 else math.inf for a, b in zip(seq, seq[1:])]
            tol = config.tolerances
            rep.check(f"f{fid}_k{n}_decreasing", max(steps), tol["max_step_ratio"], "<", "max_step_ratio")
            rep.check(f"f{fid}_k{n}_slope_positive", slope, tol["slope_min"], ">", "slope_min")
            key = f"slope_min_{n}"
            if key in config.tolerances:
                rep.check(f"f{fid}_k{n}_slope", slope, config.tolerances[key], ">=", key)
    rep.add_table("cumulants", ["eps", "f_id"] + [f"kappa{n}" for n in orders], rows)
    return rep


# -- Green-difference convergence -------------------------------------------------------------


def rescaled_double_diffs(domain: DomainSpec, eps: float, v, w) -> tuple[np.ndarray, np.ndarray]:
    """eps^{-d} grad_a^(1) grad_b^(2) G_{U_eps} at (floor(v/eps), floor(w/eps)) and with v, w swapped."""
    G = solve_green(discretize(domain, eps))
    zv, zw = floor_point(v, eps), floor_point(w, eps)
    d = domain.d
    fwd = np.array([[double_diff(G, zv, zw, a, b) for b in range(d)] for a in range(d)])
    bwd = np.array([[double_diff(G, zw, zv, a, b) for b in range(d)] for a in range(d)])
    return fwd / eps ** d, bwd / eps ** d


def run_green_convergence(config: ExperimentConfig) -> ExperimentReport:
    rep = _new_report(config)
    tol = config.tolerances
    v = np.asarray(config.params["v"], dtype=float)
    w = np.asarray(config.params["w"], dtype=float)
    p = float(config.params.get("order", 1))
    if len(config.eps) < 3:
        raise ExtrapolationUnstable("need at least three eps levels")
    pairs = [rescaled_double_diffs(config.domain, e, v, w) for e in config.eps]
    mats = [m for m, _ in pairs]
    swapped = [m for _, m in pairs]
    target = green_disk_dd_matrix(v, w)
    rows = []
    for e, M in zip(config.eps, mats):
        rows.append([e] + M.ravel().tolist())
    rep.add_table("rescaled", ["eps"] + [f"m{a}{b}" for a in range(2) for b in range(2)], rows)
    ratios = [float(np.linalg.norm(b) / np.linalg.norm(a)) for a, b in zip(mats, mats[1:])]
    steps = [float(np.linalg.norm(b - a) / np.linalg.norm(a)) for a, b in zip(mats, mats[1:])]
    extraps = []
    for (e1, A), (e2, B) in zip(zip(config.eps, mats), zip(config.eps[1:], mats[1:])):
        r = (e1 / e2) ** p
        extraps.append((r * B - A) / (r - 1.0))
    lim, prev = extraps[-1], extraps[-2]
    drift = float(np.linalg.norm(lim - prev) / np.linalg.norm(lim))
    c = float(np.sum(lim * target) / np.sum(target * target))
    resid = float(np.linalg.norm(lim - c * target) / np.linalg.norm(lim))
    rep.fits.update({
        "successive_norm_ratios": ratios,
        "successive_rel_steps": steps,
        "extrapolated": lim.tolist(),
        "continuum": target.tolist(),
        "fitted_constant": c,
        "residual": resid,
        "extrapolation_drift": drift,
        "extrapolation_order": p,
        # G(v, w) = G(w, v) forces M(v, w) = M(w, v)^T at every eps
        "swap_defect": max(float(np.max(np.abs(a - b.T))) for a, b in zip(mats, swapped)),
    })
    rep.check("cauchy_finest", abs(ratios[-1] - 1.0), tol["cauchy_rel"], "<=", "cauchy_rel")
    rep.check("extrapolation_stable", drift, tol["extrapolation_rel"], "<=", "extrapolation_rel")
    rep.check("one_constant_residual", resid, tol["residual_rel"], "<", "residual_rel")
    return rep


# -- conformal covariance ---------------------------------------------------------------------


def run_conformal(config: ExperimentConfig) -> ExperimentReport:
    rep = _new_report(config)
    tol = config.tolerances
    greens = {e: solve_green(discretize(config.domain, e)) for e in config.eps}
    crow, drow = [], []
    for a in config.params["a"]:
        h = MobiusMap(complex(*a) if isinstance(a, (list, tuple)) else a)
        for sid, pts in enumerate(config.params["point_sets"]):
            pts = [tuple(map(float, p)) for p in pts]
            hp = [tuple(h.apply_xy(p)) for p in pts]
            fac = math.prod(abs(h.derivative(p)) ** 2 for p in pts)
            lhs = kpoint_limit_continuum(pts)
            rhs = fac * kpoint_limit_continuum(hp)
            rel = abs(lhs - rhs) / abs(lhs)
            tag = f"a{abs(h.a):g}_set{sid}"
            crow.append([abs(h.a), sid, len(pts), lhs, rhs, rel])
            rep.check(f"continuum_{tag}", rel, tol["continuum_rel"], "<=", "continuum_rel")
            seq = []
            for e, G in greens.items():
                zx = [floor_point(p, e) for p in pts]
                zh = [floor_point(q, e) for q in hp]
                ratio = kpoint_exact(G, zx).value / kpoint_exact(G, zh).value
                seq.append(ratio / fac - 1.0)
                drow.append([abs(h.a), sid, e, ratio, fac, ratio / fac - 1.0])
            rep.fits[f"discrete_{tag}"] = {"rel_err": seq,
                                           "monotone": all(abs(b) <= abs(a_) for a_, b in zip(seq, seq[1:]))}
            rep.check(f"discrete_{tag}", abs(seq[-1]), tol["discrete_rel"], "<=", "discrete_rel")
    rep.add_table("continuum", ["a", "set", "k", "lhs", "rhs", "rel_err"], crow)
    rep.add_table("discrete", ["a", "set", "eps", "ratio", "prod_hprime_sq", "rel_err"], drow)
    return rep


# -- chi --------------------------------------------------------------------------------------


def run_chi(config: ExperimentConfig) -> ExperimentReport:
    rep = _new_report(config)
    tol = config.tolerances
    P = config.params
    rows, shells = [], []
    for d in P["d"]:
        d = int(d)
        base = chi(d, tol=P["tol"], method="fourier")
        fine = chi(d, tol=P["tol_fine"], method="fourier")
        cap = P.get("bigbox_max_radius", {}).get(str(d))
        results = {"fourier": base}
        if "bigbox" in P["methods"]:
            R = base.radius if cap is None else min(base.radius, int(cap))
            ref = base if R == base.radius else chi(d, tol=P["tol"], method="fourier", radius=R)
            results["fourier_common"] = ref
            results["bigbox"] = chi(d, tol=P["tol"], method="bigbox", radius=R)
        for name, res in [("fourier", base), ("fourier_fine", fine)] + \
                [(k, results[k]) for k in ("fourier_common", "bigbox") if k in results]:
            rows.append([d, name, res.value, res.radius, res.tail_estimate, res.decay_slope,
                         res.decay_constant])
        shells.extend([d, r, s] for r, s in enumerate(fine.shell_partial_sums))
        trunc = abs(base.value - fine.value) / fine.value
        increments = np.diff(fine.shell_partial_sums)
        rep.fits[f"d{d}"] = {"chi": base.value, "chi_fine": fine.value, "radius": base.radius,
                             "radius_fine": fine.radius, "tail_estimate": base.tail_estimate,
                             "parseval_reference": chi_parseval(d)}
        rep.check(f"d{d}_chi_above_lower_bound", base.value, tol["lower_bound"], ">", "lower_bound")
        rep.check(f"d{d}_chi_above_8", base.value, tol["chi_lower_bound"], ">", "chi_lower_bound")
        rep.check(f"d{d}_truncation_consistency", trunc, tol["truncation_rel"], "<=", "truncation_rel")
        rep.check(f"d{d}_partial_sums_nondecreasing", float(increments.min()),
                  tol["min_shell_increment"], ">=", "min_shell_increment")
        if "bigbox" in results:
            ref, bb = results["fourier_common"], results["bigbox"]
            agree = abs(ref.value - bb.value) / abs(ref.value)
            rep.fits[f"d{d}"].update({"bigbox": bb.value, "common_radius": bb.radius,
                                      "method_rel_diff": agree})
            rep.check(f"d{d}_method_agreement", agree, tol["method_rel"], "<=", "method_rel")
    rep.add_table("chi", ["d", "method", "value", "radius", "tail_estimate", "decay_slope",
                          "decay_constant"], rows)
    rep.add_table("chi_partial_sums", ["d", "radius", "partial_sum"], shells)
    return rep


# -- single-shot tasks ------------------------------------------------------------------------


def run_green(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Solve G_{U_eps} for each eps and check (-Delta_V) G = I and symmetry."""
    rep = _new_report(config)
    tol = config.tolerances
    rows = []
    for eps in config.eps:
        G = solve_green(discretize(config.domain, eps))
        M = G.matrix
        resid = G.laplacian_residual()
        asym = float(np.max(np.abs(M - M.T)))
        rows.append([eps, G.domain.n, float(np.max(np.diag(M))), float(np.min(M)), resid, asym])
        rep.check(f"laplacian_residual_eps{eps:g}", resid, tol["residual"], "<=", "residual")
        rep.check(f"symmetry_eps{eps:g}", asym, tol["symmetry"], "<=", "symmetry")
        rep.check(f"nonnegative_eps{eps:g}", float(np.min(M)), -tol["symmetry"], ">=", "symmetry")
        if config.params.get("save_binary") and out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            G.save(os.path.join(out_dir, f"green_eps{eps:g}.bin"))
    rep.add_table("green", ["eps", "n_vertices", "max_diag", "min_entry", "laplacian_residual",
                            "asymmetry"], rows)
    return rep


def run_kpoint(config: ExperimentConfig) -> ExperimentReport:
    """Exact k-point functions / cumulants for configured point lists, cross-checked by the oracles."""
    from .correlation import (CorrelationRequest, MAX_K_FEYNMAN, MAX_K_SUBSET,
                              cumulant_limit_continuum, joint_cumulant_exact,
                              kpoint_oracle_feynman, kpoint_oracle_subset)

    rep = _new_report(config)
    tol = config.tolerances
    eps = config.eps[0] if config.eps else None
    G = solve_green(discretize(config.domain, eps)) if eps is not None else None
    rows, results = [], []
    for rid, obj in enumerate(config.params["requests"]):
        req = CorrelationRequest.from_json(obj)
        if req.side == "continuum_limit":
            fn = kpoint_limit_continuum if req.mode == "moment" else cumulant_limit_continuum
            value = fn(req.points)
            rows.append([rid, req.mode, req.side, len(req.points), value, math.nan, math.nan])
            results.append({"request": req.to_json(), "value": value})
            continue
        e = req.eps if req.eps is not None else eps
        pts = req.points
        if req.eps is not None:
            pts = [floor_point(p, e) for p in pts]
        Gr = G if e == eps else solve_green(discretize(config.domain, e))
        res = (kpoint_exact if req.mode == "moment" else joint_cumulant_exact)(Gr, pts)
        fey = sub = math.nan
        if req.mode == "moment":
            k = len(pts)
            scale = max(abs(res.value), 1e-300)
            if k <= MAX_K_FEYNMAN:
                fey = kpoint_oracle_feynman(Gr, pts)
                rep.check(f"request{rid}_feynman", abs(fey - res.value) / scale, tol["oracle_rel"],
                          "<=", "oracle_rel")
            if k <= MAX_K_SUBSET:
                sub = kpoint_oracle_subset(Gr, pts)
                rep.check(f"request{rid}_subset", abs(sub - res.value) / scale, tol["oracle_rel"],
                          "<=", "oracle_rel")
        rows.append([rid, req.mode, req.side, len(pts), res.value, fey, sub])
        results.append({"request": req.to_json(), "lattice_points": [list(p) for p in pts],
                        "result": res.to_json()})
    rep.fits["results"] = results
    rep.add_table("kpoint", ["request", "mode", "side", "k", "value", "feynman", "subset"], rows)
    return rep


def run_sample(config: ExperimentConfig) -> ExperimentReport:
    """Monte Carlo k-statistics of eps^{d/2}<Phi, f>_S against the exact cumulants."""
    rep = _new_report(config)
    tol = config.tolerances
    d = config.domain.d
    orders = tuple(int(n) for n in config.params.get("orders", (1, 2, 3, 4)))
    rows, dumps = [], []
    for eps in config.eps:
        G = solve_green(discretize(config.domain, eps))
        W = np.stack([test_function_weights(f, G.domain, "sum") for f in config.functions], axis=1)
        vals = eps ** (d / 2) * simulate_pairings(G, W, config.replicates, config.seed, config.threads)
        for fid in range(W.shape[1]):
            est, se = jackknife_kstats(vals[:, fid], orders)
            exact = pairing_cumulants(G, W[:, fid], orders)
            for n in orders:
                ex = exact[n] * eps ** (n * d / 2)
                z = (est[n] - ex) / se[n]
                rows.append([eps, fid, n, est[n], se[n], ex, z])
                rep.check(f"eps{eps:g}_f{fid}_k{n}", abs(z), tol["mc_sigmas"], "<=", "mc_sigmas")
        if config.params.get("dump_replicates"):
            for r in range(vals.shape[0]):
                for fid in range(vals.shape[1]):
                    dumps.append([eps, r, fid, vals[r, fid]])
    rep.add_table("mc_cumulants", ["eps", "f_id", "order", "kstat", "stderr", "exact", "z"], rows)
    if dumps:
        rep.add_table("replicates", ["eps", "replicate", "f_id", "value"], dumps)
    return rep


RUNNERS = {
    "green": run_green,
    "kpoint": run_kpoint,
    "sample": run_sample,
    "whitenoise": run_whitenoise,
    "cumulant": run_cumulant_decay,
    "green-convergence": run_green_convergence,
    "conformal": run_conformal,
    "chi": run_chi,
}


def run(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    if config.experiment == "green":
        return run_green(config, out_dir)
    return RUNNERS[config.experiment](config)
