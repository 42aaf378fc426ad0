import warnings

import numpy as np
import pytest

from gradsq.errors import DimensionUnsupported, EmptyDomain
from gradsq.lattice import DomainSpec, Edge, discretize, floor_point


def test_single_vertex_square():
    dom = discretize(DomainSpec.unit_square(), 0.5)
    assert dom.n == 1
    assert tuple(dom.vertices[0]) == (1, 1)


def test_square_quarter_spacing():
    dom = discretize(DomainSpec.unit_square(), 0.25)
    assert dom.n == 9
    assert {tuple(v) for v in dom.vertices} == {(i, j) for i in (1, 2, 3) for j in (1, 2, 3)}


def test_disk_half_spacing():
    dom = discretize(DomainSpec.unit_disk(), 0.5)
    expected = {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)}
    assert {tuple(v) for v in dom.vertices} == expected


def test_lexicographic_order_and_index():
    dom = discretize(DomainSpec.unit_disk(), 0.2)
    verts = [tuple(v) for v in dom.vertices]
    assert verts == sorted(verts)
    for k, v in enumerate(verts):
        assert dom.index_of(v) == k
    assert dom.index_of((100, 100)) == -1


def test_membership_rule():
    spec = DomainSpec.unit_disk(3)
    dom = discretize(spec, 0.25)
    assert np.all(spec.contains(dom.continuum_points()))
    assert dom.is_connected()


def test_dimension_one_rejected():
    with pytest.raises(DimensionUnsupported):
        DomainSpec("unit_square", 1)
    with pytest.raises(DimensionUnsupported):
        DomainSpec("unit_disk", 4)


def test_empty_domain():
    with pytest.raises(EmptyDomain):
        discretize(DomainSpec.unit_square(), 1.0)


def test_rectangle_and_mask():
    dom = discretize(DomainSpec.rectangle([2.0, 1.0]), 0.5)
    assert dom.n == 3 * 1
    cells = np.zeros((4, 4), dtype=bool)
    cells[1:3, 1:3] = True
    spec = DomainSpec.mask(cells, spacing=0.25)
    assert spec.volume() == pytest.approx(0.25)
    dom = discretize(spec, 0.125)
    assert np.all(spec.contains(dom.continuum_points()))
    assert DomainSpec.from_json(spec.to_json()) == spec


def test_disconnected_mask_rejected():
    cells = np.zeros((5, 5), dtype=bool)
    cells[0, 0] = cells[4, 4] = True
    with pytest.raises(ValueError):
        DomainSpec.mask(cells, spacing=0.2)


def test_disconnected_lattice_warns():
    # two lobes joined by a strip thinner than the lattice spacing
    cells = np.zeros((4, 9), dtype=bool)
    cells[:, :3] = True
    cells[:, 6:] = True
    cells[2, 3:6] = True
    spec = DomainSpec.mask(cells, spacing=1.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        discretize(spec, 1.5)
    assert any("not connected" in str(w.message) for w in rec)


def test_floor_point_examples():
    assert floor_point((0.49, 0.51), 0.25) == (1, 2)
    assert floor_point((0.5, 0.5), 0.5) == (1, 1)
    assert floor_point((-0.3, 0.3), 0.2) == (-2, 1)


def test_floor_point_roundtrip():
    eps = 0.1
    for z in [(3, 7), (-4, 2), (0, -9)]:
        x = eps * np.asarray(z, dtype=float)
        assert floor_point(x, eps) == z


def test_edge_tip():
    e = Edge((1, 2), 1)
    assert e.tip == (1, 3)
    assert np.sum(np.subtract(e.tip, e.tail)) == 1


def test_neg_laplacian_rows():
    dom = discretize(DomainSpec.unit_square(), 0.25)
    L = dom.neg_laplacian().toarray()
    assert np.allclose(np.diag(L), 1.0)
    centre = dom.index_of((2, 2))
    assert np.isclose(L[centre].sum(), 0.0)
    corner = dom.index_of((1, 1))
    assert np.isclose(L[corner].sum(), 0.5)


def test_boundary_distance():
    sq = DomainSpec.unit_square()
    assert sq.boundary_distance(np.array([0.25, 0.5])) == pytest.approx(0.25)
    disk = DomainSpec.unit_disk()
    assert disk.boundary_distance(np.array([0.0, 0.6])) == pytest.approx(0.4)
