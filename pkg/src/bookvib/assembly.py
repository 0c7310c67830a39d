"""Bilinear-form assembly on book meshes.

All element integrals are closed-form for bilinear quadrilaterals with
cell-wise constant coefficients.  The junction modulation ``w(s)`` is
sampled at the cell (or segment) midpoint in ``s``.

Matrices are returned as ``scipy.sparse.csr_matrix`` and are exactly
symmetric: only the upper triangle of the accumulated sum is kept and
mirrored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InvalidCoefficients, MisalignedBand
from .geometry import BookMesh

# 1D reference matrices on the unit interval
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
_M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
# local node -> (iy, is) for the counter-clockwise ordering used by the mesh
_LOC = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def _tensor(a, b):
    iy, is_ = _LOC[:, 0], _LOC[:, 1]
    return a[np.ix_(iy, iy)] * b[np.ix_(is_, is_)]


# K_y (x) M_s, M_y (x) K_s and M_y (x) M_s on the unit square
_KY_MS = _tensor(_K1, _M1)
_MY_KS = _tensor(_M1, _K1)
_MY_MS = _tensor(_M1, _M1)


def element_stiffness(hy: float = 1.0, hs: float = 1.0) -> np.ndarray:
    return hs / hy * _KY_MS + hy / hs * _MY_KS


def element_mass(hy: float = 1.0, hs: float = 1.0) -> np.ndarray:
    return hy * hs * _MY_MS


@dataclass(frozen=True)
class CoefficientSet:
    """Piecewise-constant coefficients per sheet plus the shared ``w(s)`` factor.

    ``epsilon`` is optional; when set, band assembly checks it against the
    mesh band width.
    """

    V: tuple[float, ...]
    rho: tuple[float, ...]
    q: tuple[float, ...]
    m: float = 1.0
    a_mod: float = 0.0
    epsilon: float | None = None

    def __post_init__(self):
        for name in ("V", "rho", "q"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            object.__setattr__(self, name, vals)
            if any(not np.isfinite(v) or v <= 0 for v in vals):
                raise InvalidCoefficients(f"{name} must be positive on every sheet, got {vals}")
        if not (len(self.V) == len(self.rho) == len(self.q)):
            raise InvalidCoefficients("V, rho and q need one entry per sheet")
        if not 0.0 <= self.a_mod < 1.0:
            raise InvalidCoefficients(f"a_mod must lie in [0, 1), got {self.a_mod}")
        if not self.m >= 1.0:
            raise InvalidCoefficients(f"mass exponent m must be >= 1, got {self.m}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidCoefficients(f"epsilon must be positive, got {self.epsilon}")

    @property
    def K(self) -> int:
        return len(self.V)

    @property
    def q_total(self) -> float:
        return float(sum(self.q))

    def w(self, s, l):  # noqa: E741
        return 1.0 + self.a_mod * np.cos(2.0 * np.pi * np.asarray(s, dtype=float) / l)

    def kappa(self, s, l):  # noqa: E741
        return self.w(s, l) * self.q_total

    def check_sheets(self, K: int) -> None:
        if self.K != K:
            raise InvalidCoefficients(f"coefficients given for {self.K} sheets, mesh has {K}")


def kappa_of(coeffs: CoefficientSet, s, l: float):  # noqa: E741
    """Line density ``kappa(s) = w(s) * sum_k q_k`` on ``[0, l]``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < -1e-14 * l) or np.any(s_arr > l * (1 + 1e-14)):
        raise DomainError(f"s must lie in [0, {l}], got {s}")
    out = coeffs.kappa(s_arr, l)
    return float(out) if np.ndim(out) == 0 else out


def finalize_symmetric(A) -> sp.csr_matrix:
    """Mirror the upper triangle so that ``A == A.T`` holds bit for bit."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    upper = sp.triu(A, format="csr")
    out = (upper + sp.triu(upper, k=1).T).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _assemble(mesh: BookMesh, local: np.ndarray, mask=None) -> sp.csr_matrix:
    """Scatter per-cell 4x4 blocks ``local`` (n_cells, 4, 4)."""
    cells = mesh.cells
    if mask is not None:
        cells, local = cells[mask], local[mask]
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return finalize_symmetric(A)


def _cell_mass_blocks(mesh: BookMesh, weight: np.ndarray) -> np.ndarray:
    return (weight * mesh.cell_hy * mesh.cell_hs)[:, None, None] * _MY_MS[None]


def _require_band(mesh: BookMesh, coeffs: CoefficientSet | None = None) -> None:
    if not mesh.band_aligned:
        raise MisalignedBand("mesh has no node line at y = epsilon")
    if coeffs is not None and coeffs.epsilon is not None \
            and abs(coeffs.epsilon - mesh.epsilon) > 1e-12 * mesh.epsilon:
        raise MisalignedBand(
            f"coefficient epsilon {coeffs.epsilon} differs from mesh band {mesh.epsilon}")


def assemble_stiffness(mesh: BookMesh, coeffs: CoefficientSet) -> sp.csr_matrix:
    """Matrix of the H-inner product: gradient term plus ``V`` times mass."""
    coeffs.check_sheets(mesh.geometry.K)
    hy, hs = mesh.cell_hy, mesh.cell_hs
    V = np.asarray(coeffs.V)[mesh.cell_sheet]
    local = ((hs / hy)[:, None, None] * _KY_MS[None]
             + (hy / hs)[:, None, None] * _MY_KS[None]
             + (V * hy * hs)[:, None, None] * _MY_MS[None])
    return _assemble(mesh, local)


def assemble_gradient(mesh: BookMesh) -> sp.csr_matrix:
    """Pure Dirichlet-energy matrix (no potential)."""
    hy, hs = mesh.cell_hy, mesh.cell_hs
    local = (hs / hy)[:, None, None] * _KY_MS[None] + (hy / hs)[:, None, None] * _MY_KS[None]
    return _assemble(mesh, local)


def assemble_bulk_mass(mesh: BookMesh, coeffs: CoefficientSet | None = None,
                       region: str = "whole") -> sp.csr_matrix:
    """``rho``-weighted mass over the whole book, outside the band, or inside it.

    With ``coeffs=None`` the weight is 1.
    """
    if coeffs is not None:
        coeffs.check_sheets(mesh.geometry.K)
        weight = np.asarray(coeffs.rho)[mesh.cell_sheet]
    else:
        weight = np.ones(mesh.n_cells)
    if region == "whole":
        mask = None
    elif region in ("outside_band", "band"):
        _require_band(mesh)
        inside = mesh.cells_in_band()
        mask = ~inside if region == "outside_band" else inside
    else:
        raise ValueError(f"unknown region {region!r}")
    return _assemble(mesh, _cell_mass_blocks(mesh, weight), mask)


def assemble_band_mass(mesh: BookMesh, coeffs: CoefficientSet,
                       m: float | None = None) -> sp.csr_matrix:
    """Concentrated mass ``eps**-m * q_k * w(s)`` on the band cells.

    ``m`` overrides ``coeffs.m`` (``m=0`` gives the unscaled ``q``-mass).
    """
    coeffs.check_sheets(mesh.geometry.K)
    _require_band(mesh, coeffs)
    eps = mesh.epsilon
    m = coeffs.m if m is None else m
    s_mid = mesh.cell_s0 + 0.5 * mesh.cell_hs
    weight = eps ** (-m) * np.asarray(coeffs.q)[mesh.cell_sheet] * coeffs.w(s_mid, mesh.geometry.l)
    return _assemble(mesh, _cell_mass_blocks(mesh, weight), mesh.cells_in_band())


def line_mass_1d(s_lines: np.ndarray, density: np.ndarray) -> sp.csr_matrix:
    """1D P1 mass on a partition of gamma with segment-wise constant density."""
    h = np.diff(s_lines)
    n = s_lines.size
    seg = np.arange(n - 1)
    local = (density * h)[:, None, None] * _M1[None]
    i = np.stack([seg, seg + 1], axis=1)
    rows = np.repeat(i, 2, axis=1).ravel()
    cols = np.tile(i, (1, 2)).ravel()
    return finalize_symmetric(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def assemble_line_mass(mesh: BookMesh, coeffs: CoefficientSet | None = None) -> sp.csr_matrix:
    """``kappa``-weighted trace mass on gamma, embedded in the global numbering.

    With ``coeffs=None`` the density is 1 (plain L2(gamma) trace mass).
    """
    s = mesh.s_lines
    s_mid = 0.5 * (s[:-1] + s[1:])
    density = np.ones_like(s_mid) if coeffs is None else coeffs.kappa(s_mid, mesh.geometry.l)
    local = line_mass_1d(s, density).tocoo()
    g = mesh.gamma_dofs
    n = mesh.n_nodes
    A = sp.coo_matrix((local.data, (g[local.row], g[local.col])), shape=(n, n))
    return finalize_symmetric(A)


def export_coo(A, path) -> None:
    """Write the upper triangle as ``row col value`` lines (0-based)."""
    U = sp.triu(sp.coo_matrix(A)).tocoo()
    order = np.lexsort((U.col, U.row))
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {order.size}\n")
        for r, c, v in zip(U.row[order], U.col[order], U.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path) -> sp.csr_matrix:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    n_rows, n_cols, _ = (int(t) for t in lines[0].lstrip("#").split())
    data = np.array([ln.split() for ln in lines[1:]], dtype=float).reshape(-1, 3)
    U = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                      shape=(n_rows, n_cols))
    return finalize_symmetric(U + sp.triu(U, k=1).T)
