import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bookvib.errors import BandTooWide, InvalidGeometry, MeshDegenerate
from bookvib.geometry import (BookGeometry, MeshParams, build_book, bulk_widths,
                              expected_node_count, generate_mesh, junction_maps, mesh_from_lines,
                              refine_mesh)


def test_build_book_basic():
    g = build_book(3, [1.0, 0.5, 2.0], 1.0)
    assert g.K == 3
    assert g.area == pytest.approx(3.5)
    assert g.min_width == 0.5
    assert not g.coplanar_reducible
    assert build_book(2, 1.0, 1.0).coplanar_reducible


@pytest.mark.parametrize("K, widths, l", [
    (1, [1.0], 1.0),
    (2, [1.0], 1.0),
    (2, [1.0, 0.0], 1.0),
    (2, [1.0, -1.0], 1.0),
    (2, [1.0, 1.0], 0.0),
    (2, [1.0, np.inf], 1.0),
])
def test_invalid_geometry(K, widths, l):
    with pytest.raises(InvalidGeometry):
        build_book(K, widths, l)


def test_mesh_params_validation():
    with pytest.raises(MeshDegenerate):
        MeshParams(n_s=0)
    with pytest.raises(MeshDegenerate):
        MeshParams(grading_ratio=0.9)


def test_band_too_wide():
    g = build_book(2, [1.0, 0.3], 1.0)
    with pytest.raises(BandTooWide):
        generate_mesh(g, MeshParams(), 0.3)
    with pytest.raises(BandTooWide):
        generate_mesh(g, MeshParams(), 0.0)


def test_small_mesh_counts():
    g = build_book(2, [1.0, 1.0], 1.0)
    mesh = generate_mesh(g, MeshParams(n_s=4, n_band=2, n_bulk=3), 0.1)
    # 6 y-lines per sheet, gamma shared once
    assert mesh.n_nodes == (6 + 6 - 1) * 5
    assert mesh.gamma_dofs.size == 5
    assert np.all(np.diff(mesh.node_s[mesh.gamma_dofs]) > 0)
    assert mesh.band_aligned
    assert mesh.cells_in_band().sum() == 2 * 2 * 4


def test_gamma_shared_by_all_sheets():
    g = build_book(3, 1.0, 1.0)
    mesh = generate_mesh(g, MeshParams(n_s=4, n_band=2, n_bulk=3), 0.1)
    for k in range(3):
        cells = mesh.cells[mesh.cell_sheet == k]
        touched = np.intersect1d(cells.ravel(), mesh.gamma_dofs)
        np.testing.assert_array_equal(touched, mesh.gamma_dofs)


def test_junction_maps_partition_enumerated():
    g = build_book(2, 1.0, 1.0)
    mesh = mesh_from_lines(g, [[0, 0.5, 1.0], [0, 0.5, 1.0]], [0, 0.5, 1.0])
    maps = junction_maps(mesh)
    every = np.concatenate([maps.gamma_dofs, maps.all_interior])
    assert sorted(every.tolist()) == list(range(mesh.n_nodes))
    for I in maps.interior_dofs:
        assert np.intersect1d(I, maps.gamma_dofs).size == 0
    np.testing.assert_allclose(maps.gamma_s, [0, 0.5, 1.0])


def test_band_resolved_by_n_band_cells_for_each_eps():
    g = build_book(2, [1.0, 0.7], 1.0)
    params = MeshParams(n_s=4, n_band=5, n_bulk=10)
    for eps in (0.2, 0.1, 0.05, 0.025):
        mesh = generate_mesh(g, params, eps)
        for y in mesh.y_lines:
            assert np.count_nonzero(y[1:] <= eps * (1 + 1e-12)) == params.n_band
            assert y[-1] == pytest.approx(max(y))


def test_bulk_widths_cover_length_and_grade():
    w = bulk_widths(0.9, 10, 0.01, 1.3)
    assert w.sum() == pytest.approx(0.9)
    assert w[0] == pytest.approx(0.013)
    assert np.all(np.diff(w) >= -1e-15)


def test_stats_json_round_trip():
    mesh = generate_mesh(build_book(2, 1.0, 1.0), MeshParams(n_s=2, n_band=1, n_bulk=2), 0.2)
    stats = json.loads(mesh.stats_json())
    assert stats["n_nodes"] == mesh.n_nodes
    assert stats["band_aligned"] is True


def test_refinement_nests_nodes():
    mesh = generate_mesh(build_book(3, [1.0, 0.8, 0.6], 1.0),
                         MeshParams(n_s=3, n_band=2, n_bulk=3), 0.1)
    fine = refine_mesh(mesh)
    coarse_pts = set(zip(mesh.node_sheet.tolist(), mesh.node_y.round(14).tolist(),
                         mesh.node_s.round(14).tolist()))
    fine_pts = set(zip(fine.node_sheet.tolist(), fine.node_y.round(14).tolist(),
                       fine.node_s.round(14).tolist()))
    assert coarse_pts <= fine_pts
    assert fine.band_aligned


@settings(max_examples=40, deadline=None)
@given(K=st.integers(2, 5), n_s=st.integers(1, 6),
       counts=st.lists(st.integers(2, 6), min_size=5, max_size=5))
def test_node_count_formula(K, n_s, counts):
    counts = counts[:K]
    g = build_book(K, 1.0, 1.0)
    mesh = mesh_from_lines(g, [np.linspace(0, 1, c) for c in counts], np.linspace(0, 1, n_s + 1))
    assert mesh.n_nodes == expected_node_count(counts, n_s)
    assert mesh.n_cells == sum(c - 1 for c in counts) * n_s


def test_bad_lines_rejected():
    g = build_book(2, 1.0, 1.0)
    with pytest.raises(MeshDegenerate):
        mesh_from_lines(g, [[0, 1.0], [0, 0.5]], [0, 1.0])
    with pytest.raises(MeshDegenerate):
        mesh_from_lines(g, [[0, 1.0], [0, 1.0]], [0, 0.6, 0.5, 1.0])


def test_geometry_is_frozen():
    g = BookGeometry(2, (1.0, 1.0), 1.0)
    with pytest.raises(AttributeError):
        g.sheet_count = 3
