import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from bookvib.assembly import (CoefficientSet, assemble_band_mass, assemble_bulk_mass,
                              assemble_line_mass, assemble_stiffness, element_mass,
                              element_stiffness, export_coo, kappa_of, line_mass_1d, read_coo)
from bookvib.eigen import solve_gevp
from bookvib.errors import DomainError, InvalidCoefficients, MisalignedBand
from bookvib.geometry import MeshParams, build_book, generate_mesh, mesh_from_lines, refine_mesh


def unit_coeffs(K=2, **kw):
    return CoefficientSet(V=(1.0,) * K, rho=(1.0,) * K, q=(1.0,) * K, **kw)


@pytest.fixture(scope="module")
def book():
    g = build_book(2, [1.0, 0.7], 1.0)
    return generate_mesh(g, MeshParams(n_s=6, n_band=2, n_bulk=5), 0.1)


def test_element_matrices_closed_form():
    K = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    M = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36
    np.testing.assert_allclose(element_stiffness(), K, atol=1e-15)
    np.testing.assert_allclose(element_mass(), M, atol=1e-15)


def test_single_cell_stiffness_with_potential():
    # one sheet cell per side of gamma, check the cell-local block of sheet 0
    g = build_book(2, 1.0, 1.0)
    mesh = mesh_from_lines(g, [[0, 1.0], [0, 1.0]], [0, 1.0])
    H = assemble_stiffness(mesh, unit_coeffs()).toarray()
    cell = mesh.cells[0]
    block = element_stiffness() + element_mass()
    # gamma nodes are shared with sheet 1, so only the off-gamma rows match one element
    far = [1, 2]
    np.testing.assert_allclose(H[np.ix_(cell[far], cell)], block[far], atol=1e-15)


def test_constant_vector_energy(book):
    c = 1.7
    H = assemble_stiffness(book, CoefficientSet(V=(2.0, 2.0), rho=(1, 1), q=(1, 1)))
    one = np.full(book.n_nodes, c)
    assert one @ H @ one == pytest.approx(book.geometry.area * 2.0 * c ** 2, rel=1e-13)


def test_bulk_mass_totals(book):
    one = np.ones(book.n_nodes)
    whole = assemble_bulk_mass(book, unit_coeffs(), "whole")
    out = assemble_bulk_mass(book, unit_coeffs(), "outside_band")
    assert one @ whole @ one == pytest.approx(1.7, rel=1e-13)
    assert one @ out @ one == pytest.approx((0.9 + 0.6) * 1.0, rel=1e-13)


def test_bulk_mass_additivity(book):
    whole = assemble_bulk_mass(book, unit_coeffs(), "whole")
    parts = assemble_bulk_mass(book, unit_coeffs(), "outside_band") \
        + assemble_bulk_mass(book, unit_coeffs(), "band")
    assert abs(whole - parts).max() <= 1e-15


def test_misaligned_band():
    g = build_book(2, 1.0, 1.0)
    mesh = mesh_from_lines(g, [[0, 0.5, 1.0], [0, 0.5, 1.0]], [0, 1.0], epsilon=0.2)
    with pytest.raises(MisalignedBand):
        assemble_bulk_mass(mesh, unit_coeffs(), "outside_band")
    with pytest.raises(MisalignedBand):
        assemble_band_mass(mesh, unit_coeffs())


def test_band_mass_coefficient_eps_must_match_mesh(book):
    with pytest.raises(MisalignedBand):
        assemble_band_mass(book, unit_coeffs(epsilon=0.2))


@pytest.mark.parametrize("m", [1.0, 1.5, 2.0])
def test_band_mass_total(m):
    g = build_book(2, 1.0, 1.0)
    q = (1.0, 2.0)
    for eps in (0.1, 0.01):
        mesh = generate_mesh(g, MeshParams(n_s=4, n_band=2, n_bulk=4), eps)
        Mb = assemble_band_mass(mesh, CoefficientSet(V=(1, 1), rho=(1, 1), q=q, m=m))
        one = np.ones(mesh.n_nodes)
        assert one @ Mb @ one == pytest.approx(eps ** (1 - m) * 1.0 * sum(q), rel=1e-12)


def test_band_mass_power_law_ratio():
    g = build_book(2, 1.0, 1.0)
    tot = []
    for eps in (0.01, 0.0025):
        mesh = generate_mesh(g, MeshParams(n_s=4, n_band=2, n_bulk=4), eps)
        one = np.ones(mesh.n_nodes)
        tot.append(one @ assemble_band_mass(mesh, unit_coeffs(m=1.5)) @ one)
    assert tot[1] / tot[0] == pytest.approx(2.0, rel=1e-12)


def test_band_mass_supported_on_band(book):
    Mb = assemble_band_mass(book, unit_coeffs()).tocoo()
    band = set(book.band_dofs().tolist())
    assert set(Mb.row.tolist()) <= band


def test_line_mass_element_and_totals(book):
    h, kap = 0.25, 3.0
    M = line_mass_1d(np.array([0.0, h]), np.array([kap])).toarray()
    np.testing.assert_allclose(M, kap * h / 6 * np.array([[2, 1], [1, 2]]), atol=1e-15)
    one = np.ones(book.n_nodes)
    Mg = assemble_line_mass(book, CoefficientSet(V=(1, 1), rho=(1, 1), q=(1, 2)))
    assert one @ Mg @ one == pytest.approx(3.0, rel=1e-13)
    Mg_mod = assemble_line_mass(book, CoefficientSet(V=(1, 1), rho=(1, 1), q=(1, 2), a_mod=0.5))
    # midpoint sampling of a full cosine period on a uniform grid integrates it exactly
    assert one @ Mg_mod @ one == pytest.approx(3.0, rel=1e-12)
    assert set(Mg.tocoo().row.tolist()) <= set(book.gamma_dofs.tolist())


def test_kappa_of():
    assert kappa_of(CoefficientSet(V=(1,) * 3, rho=(1,) * 3, q=(1, 2, 3)), 0.3, 1.0) == 6.0
    c = CoefficientSet(V=(1, 1), rho=(1, 1), q=(1, 1), a_mod=0.5)
    assert kappa_of(c, 0.0, 1.0) == pytest.approx(3.0)
    assert kappa_of(c, 0.25, 1.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        kappa_of(c, 1.5, 1.0)


@pytest.mark.parametrize("kw", [dict(V=(0.0, 1.0)), dict(rho=(1.0, -1.0)), dict(a_mod=1.0),
                                dict(m=0.5), dict(epsilon=0.0)])
def test_invalid_coefficients(kw):
    base = dict(V=(1.0, 1.0), rho=(1.0, 1.0), q=(1.0, 1.0))
    base.update(kw)
    with pytest.raises(InvalidCoefficients):
        CoefficientSet(**base)


def test_exact_symmetry_and_spd(book):
    c = CoefficientSet(V=(1.0, 2.0), rho=(1.0, 3.0), q=(2.0, 1.0), m=1.3, a_mod=0.4)
    mats = [assemble_stiffness(book, c), assemble_bulk_mass(book, c, "outside_band"),
            assemble_band_mass(book, c), assemble_line_mass(book, c)]
    for A in mats:
        assert abs(A - A.T).max() == 0.0
        assert not np.any(A.data == 0.0)
    assert la.eigvalsh(mats[0].toarray())[0] > 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_discrete_form_identity(seed):
    g = build_book(2, [1.0, 0.6], 1.0)
    mesh = generate_mesh(g, MeshParams(n_s=3, n_band=2, n_bulk=3), 0.1)
    c = CoefficientSet(V=(1.0, 1.5), rho=(1.0, 2.0), q=(1.0, 0.5), m=1.2, a_mod=0.3)
    phi = np.random.default_rng(seed).standard_normal(mesh.n_nodes)
    # a_eps on one cell-by-cell sum versus the assembled quadratic form
    Mout = assemble_bulk_mass(mesh, c, "outside_band")
    Mb = assemble_band_mass(mesh, c)
    ref = 0.0
    s_mid = mesh.cell_s0 + 0.5 * mesh.cell_hs
    inside = mesh.cells_in_band()
    for ci, cell in enumerate(mesh.cells):
        Me = element_mass(mesh.cell_hy[ci], mesh.cell_hs[ci])
        k = mesh.cell_sheet[ci]
        wgt = (0.1 ** -1.2 * c.q[k] * c.w(s_mid[ci], 1.0)) if inside[ci] else c.rho[k]
        v = phi[cell]
        ref += wgt * v @ Me @ v
    assert phi @ (Mout + Mb) @ phi == pytest.approx(ref, rel=1e-12)


def test_galerkin_monotonicity_under_refinement():
    g = build_book(2, [1.0, 0.8], 1.0)
    coarse = generate_mesh(g, MeshParams(n_s=3, n_band=1, n_bulk=3), 0.2)
    fine = refine_mesh(coarse)
    c = unit_coeffs(epsilon=0.2)
    vals = []
    for mesh in (coarse, fine):
        H = assemble_stiffness(mesh, c)
        M = assemble_bulk_mass(mesh, c, "outside_band") + assemble_band_mass(mesh, c)
        vals.append(solve_gevp(H, M, 8).values)
    assert np.all(vals[1] <= vals[0] * (1 + 1e-12))


def test_coo_round_trip(tmp_path, book):
    H = assemble_stiffness(book, unit_coeffs())
    path = tmp_path / "H.txt"
    export_coo(H, path)
    back = read_coo(path)
    assert abs(back - H).max() == 0.0
    first = path.read_text().splitlines()[1].split()
    assert int(first[0]) <= int(first[1])
