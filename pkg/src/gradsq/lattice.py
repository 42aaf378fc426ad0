"""Continuum domains, their lattice discretisations U_eps = U/eps ∩ Z^d, and
the floor map from continuum points to lattice points."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.csgraph import connected_components

from .errors import DimensionUnsupported, EmptyDomain

SHAPES = ("unit_square", "unit_disk", "rectangle", "mask")

# relative slack used when snapping x/eps to an integer in floor_point
_SNAP = 1e-12


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """An open domain U in R^d.

    ``unit_square`` is (0,1)^d, ``unit_disk`` the open unit ball centred at 0
    (d = 2 or 3), ``rectangle`` is prod_k (0, widths[k]) and ``mask`` is the
    union of the half-open cells ``origin + spacing*(idx + [0,1)^d)`` whose
    entry in the boolean array ``cells`` is True.
    """

    shape: str
    d: int = 2
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.d < 2:
            raise DimensionUnsupported(f"d={self.d}: only d >= 2 is supported")
        if self.shape == "unit_disk" and self.d not in (2, 3):
            raise DimensionUnsupported("unit_disk is available for d = 2, 3 only")
        if self.shape == "rectangle":
            widths = self.params.get("widths")
            if widths is None or len(widths) != self.d or min(widths) <= 0:
                raise ValueError("rectangle needs d positive widths")
        if self.shape == "mask":
            cells = np.asarray(self.params["cells"], dtype=bool)
            if cells.ndim != self.d:
                raise ValueError("mask dimension does not match d")
            if not cells.any():
                raise EmptyDomain("mask has no active cell")
            _, ncomp = ndimage.label(cells)
            if ncomp != 1:
                raise ValueError(f"mask must be connected, found {ncomp} components")
            # normalise storage so that equality/serialisation are stable
            object.__setattr__(self, "params", {
                "cells": cells,
                "origin": [float(o) for o in self.params.get("origin", [0.0] * self.d)],
                "spacing": float(self.params["spacing"]),
            })

    # -- constructors -----------------------------------------------------
    @classmethod
    def unit_square(cls, d: int = 2) -> "DomainSpec":
        return cls("unit_square", d)

    @classmethod
    def unit_disk(cls, d: int = 2) -> "DomainSpec":
        return cls("unit_disk", d)

    @classmethod
    def rectangle(cls, widths) -> "DomainSpec":
        widths = [float(w) for w in widths]
        return cls("rectangle", len(widths), {"widths": widths})

    @classmethod
    def mask(cls, cells, spacing: float, origin=None) -> "DomainSpec":
        cells = np.asarray(cells, dtype=bool)
        if origin is None:
            origin = [0.0] * cells.ndim
        return cls("mask", cells.ndim, {"cells": cells, "origin": origin, "spacing": spacing})

    # -- geometry ---------------------------------------------------------
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (lo, hi) of the closure of U."""
        d = self.d
        if self.shape == "unit_square":
            return np.zeros(d), np.ones(d)
        if self.shape == "unit_disk":
            return -np.ones(d), np.ones(d)
        if self.shape == "rectangle":
            return np.zeros(d), np.asarray(self.params["widths"], dtype=float)
        cells = self.params["cells"]
        origin = np.asarray(self.params["origin"])
        return origin, origin + self.params["spacing"] * np.asarray(cells.shape)

    def contains(self, x) -> np.ndarray:
        """Membership in the open set U for an array of points of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.shape == "unit_square":
            return np.all((x > 0.0) & (x < 1.0), axis=-1)
        if self.shape == "unit_disk":
            return np.sum(x * x, axis=-1) < 1.0
        if self.shape == "rectangle":
            w = np.asarray(self.params["widths"])
            return np.all((x > 0.0) & (x < w), axis=-1)
        cells = self.params["cells"]
        idx = np.floor((x - np.asarray(self.params["origin"])) / self.params["spacing"]).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(cells.shape)), axis=-1)
        out = np.zeros(inside.shape, dtype=bool)
        if inside.any():
            sel = idx[inside]
            out[inside] = cells[tuple(sel.T)]
        return out

    def boundary_distance(self, x) -> np.ndarray:
        """Distance from points of U to the boundary (negative outside).

        Exact for the analytic shapes; for masks it is measured to the
        nearest inactive cell centre minus one cell diagonal, which is a
        lower bound on the true distance.
        """
        x = np.asarray(x, dtype=float)
        if self.shape == "unit_square":
            return np.min(np.minimum(x, 1.0 - x), axis=-1)
        if self.shape == "unit_disk":
            return 1.0 - np.sqrt(np.sum(x * x, axis=-1))
        if self.shape == "rectangle":
            w = np.asarray(self.params["widths"])
            return np.min(np.minimum(x, w - x), axis=-1)
        cells = self.params["cells"]
        h = self.params["spacing"]
        padded = np.pad(cells, 1, constant_values=False)
        dist_cells = ndimage.distance_transform_edt(padded)[tuple(slice(1, -1) for _ in range(self.d))]
        idx = np.floor((x - np.asarray(self.params["origin"])) / h).astype(np.int64)
        inside = self.contains(x)
        out = np.full(inside.shape, -1.0)
        if inside.any():
            sel = idx[inside]
            out[inside] = (dist_cells[tuple(sel.T)] - math.sqrt(self.d)) * h
        return out

    def volume(self) -> float:
        if self.shape == "unit_square":
            return 1.0
        if self.shape == "unit_disk":
            return math.pi if self.d == 2 else 4.0 * math.pi / 3.0
        if self.shape == "rectangle":
            return float(np.prod(self.params["widths"]))
        return float(self.params["cells"].sum()) * self.params["spacing"] ** self.d

    def diameter(self) -> float:
        lo, hi = self.bounds()
        if self.shape == "unit_disk":
            return 2.0
        return float(np.linalg.norm(hi - lo))

    # -- serialisation ----------------------------------------------------
    def to_json(self) -> dict[str, Any]:
        params = dict(self.params)
        if self.shape == "mask":
            params["cells"] = params["cells"].astype(int).tolist()
        return {"shape": self.shape, "d": self.d, "params": params}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DomainSpec":
        return cls(obj["shape"], int(obj.get("d", 2)), dict(obj.get("params", {})))

    def __eq__(self, other):
        if not isinstance(other, DomainSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self.to_json()))


class Edge(NamedTuple):
    """Oriented nearest-neighbour edge from ``tail`` to ``tail + e_direction``."""

    tail: tuple
    direction: int

    @property
    def tip(self) -> tuple:
        z = list(self.tail)
        z[self.direction] += 1
        return tuple(z)


class LatticeDomain:
    """Vertices of U_eps in lexicographic order with a dense lookup grid."""

    def __init__(self, spec: DomainSpec, eps: float, vertices: np.ndarray):
        self.spec = spec
        self.eps = float(eps)
        self.d = spec.d
        self.vertices = np.ascontiguousarray(vertices, dtype=np.int64)
        self.vertices.setflags(write=False)
        self._lo = self.vertices.min(axis=0) - 1
        shape = tuple(self.vertices.max(axis=0) - self._lo + 2)
        lookup = np.full(shape, -1, dtype=np.int64)
        lookup[tuple((self.vertices - self._lo).T)] = np.arange(len(self.vertices))
        lookup.setflags(write=False)
        self._lookup = lookup
        self._neighbors: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"LatticeDomain({self.spec.shape}, d={self.d}, eps={self.eps:g}, |V|={len(self)})"

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index_of(self, z) -> int:
        """Index of lattice point z, or -1 if z is not a vertex."""
        return int(self.indices(np.asarray(z)[None, :])[0])

    def indices(self, points) -> np.ndarray:
        """Vectorised :meth:`index_of` for an (m, d) integer array."""
        p = np.asarray(points, dtype=np.int64) - self._lo
        shape = np.asarray(self._lookup.shape)
        ok = np.all((p >= 0) & (p < shape), axis=-1)
        out = np.full(p.shape[:-1], -1, dtype=np.int64)
        if ok.any():
            out[ok] = self._lookup[tuple(p[ok].T)]
        return out

    def __contains__(self, z) -> bool:
        return self.index_of(z) >= 0

    def neighbor_indices(self, direction: int, sign: int = 1) -> np.ndarray:
        """Index of v + sign*e_direction for every vertex v (-1 if exterior)."""
        key = (direction, sign)
        if key not in self._neighbors:
            shifted = self.vertices.copy()
            shifted[:, direction] += sign
            nb = self.indices(shifted)
            nb.setflags(write=False)
            self._neighbors[key] = nb
        return self._neighbors[key]

    def continuum_points(self) -> np.ndarray:
        return self.eps * self.vertices.astype(float)

    def neg_laplacian(self) -> sp.csr_matrix:
        """Sparse -Delta_V for the normalised Laplacian with zero exterior values."""
        n = self.n
        rows, cols = [], []
        for k in range(self.d):
            for s in (1, -1):
                nb = self.neighbor_indices(k, s)
                ok = nb >= 0
                rows.append(np.nonzero(ok)[0])
                cols.append(nb[ok])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return (sp.identity(n, format="csr") - adj / (2 * self.d)).tocsr()

    def is_connected(self) -> bool:
        lap = self.neg_laplacian()
        ncomp, _ = connected_components(lap, directed=False)
        return ncomp == 1


def discretize(spec: DomainSpec, eps: float) -> LatticeDomain:
    """All z in Z^d with eps*z in U, lexicographically ordered."""
    if spec.d < 2:
        raise DimensionUnsupported(f"d={spec.d}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    lo, hi = spec.bounds()
    zlo = np.floor(lo / eps).astype(np.int64) - 1
    zhi = np.ceil(hi / eps).astype(np.int64) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(zlo, zhi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.d)
    keep = spec.contains(eps * grid.astype(float))
    verts = grid[keep]
    if len(verts) == 0:
        raise EmptyDomain(f"no lattice point of {spec.shape} at eps={eps}")
    # meshgrid with indexing='ij' already enumerates lexicographically
    dom = LatticeDomain(spec, eps, verts)
    if not dom.is_connected():
        warnings.warn(f"{dom!r} is not connected under nearest-neighbour adjacency", stacklevel=2)
    return dom


def floor_point(x, eps: float) -> tuple:
    """The unique z with x/eps in z + [0,1)^d.

    Quotients within a relative 1e-12 of an integer are snapped to it, so
    that ``floor_point(eps*z, eps) == z`` despite rounding in eps*z.
    """
    q = np.asarray(x, dtype=float) / eps
    r = np.round(q)
    snap = np.abs(q - r) <= _SNAP * np.maximum(1.0, np.abs(q))
    z = np.where(snap, r, np.floor(q)).astype(np.int64)
    return tuple(int(c) for c in z)
