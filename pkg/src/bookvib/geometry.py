"""Flat book domains and their band-aligned tensor-product meshes.

A book is ``K`` flat rectangular sheets ``(0, a_k) x (0, l)`` glued along the
common edge ``y_k = 0`` (the junction line gamma).  Only the combinatorics of
the gluing enter the discrete forms, so the angles between pages are never
represented.

Node numbering: the ``n_s + 1`` junction nodes come first, ordered by ``s``;
then, sheet by sheet, the remaining nodes row by row in ``y`` with ``s``
running fastest.  Sharing the junction nodes between sheets is what enforces
continuity across gamma.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BandTooWide, InvalidGeometry, MeshDegenerate

_ALIGN_TOL = 1e-12


@dataclass(frozen=True)
class BookGeometry:
    sheet_count: int
    widths: tuple[float, ...]
    junction_length: float

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(float(a) for a in self.widths))
        if int(self.sheet_count) != self.sheet_count or self.sheet_count < 2:
            raise InvalidGeometry(f"a junction needs at least 2 sheets, got K={self.sheet_count}")
        if len(self.widths) != self.sheet_count:
            raise InvalidGeometry(
                f"expected {self.sheet_count} widths, got {len(self.widths)}")
        if any(not np.isfinite(a) or a <= 0 for a in self.widths):
            raise InvalidGeometry(f"sheet widths must be positive, got {self.widths}")
        if not np.isfinite(self.junction_length) or self.junction_length <= 0:
            raise InvalidGeometry(
                f"junction length must be positive, got {self.junction_length}")

    @property
    def K(self) -> int:
        return self.sheet_count

    @property
    def l(self) -> float:  # noqa: E743
        return float(self.junction_length)

    @property
    def coplanar_reducible(self) -> bool:
        """Two sheets can always be unfolded into one plane domain cut by gamma."""
        return self.sheet_count == 2

    @property
    def area(self) -> float:
        return sum(self.widths) * self.l

    @property
    def min_width(self) -> float:
        return min(self.widths)


def build_book(K: int, widths, l: float) -> BookGeometry:  # noqa: E741
    """Validated book geometry; raises :class:`InvalidGeometry` otherwise."""
    if isinstance(widths, (int, float)):
        widths = [widths] * int(K)
    return BookGeometry(int(K), tuple(widths), float(l))


@dataclass(frozen=True)
class MeshParams:
    n_s: int = 32
    n_band: int = 8
    n_bulk: int = 24
    grading_ratio: float = 1.3

    def __post_init__(self):
        for name in ("n_s", "n_band", "n_bulk"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise MeshDegenerate(f"{name} must be a positive integer, got {v}")
        if not 1.0 <= self.grading_ratio <= 2.0:
            raise MeshDegenerate(f"grading_ratio must lie in [1, 2], got {self.grading_ratio}")


def bulk_widths(length: float, n: int, h0: float, ratio: float) -> np.ndarray:
    """Cell widths covering ``length`` with ``n`` cells graded from ``h0``.

    Widths grow as ``h0 * ratio**(i+1)`` and switch to a uniform tail as soon
    as the tail is at least as wide as the last graded cell.
    """
    best = np.full(n, length / n)
    if ratio > 1.0:
        for j in range(1, n):
            graded = h0 * ratio ** np.arange(1, j + 1)
            tail = (length - graded.sum()) / (n - j)
            if tail < graded[-1]:
                break
            best = np.concatenate([graded, np.full(n - j, tail)])
    if np.any(best <= _ALIGN_TOL * length) or not np.all(np.isfinite(best)):
        raise MeshDegenerate(f"grading produced a degenerate cell: {best.min()}")
    return best


def sheet_y_lines(width: float, epsilon: float, params: MeshParams) -> np.ndarray:
    h0 = epsilon / params.n_band
    band = np.linspace(0.0, epsilon, params.n_band + 1)
    widths = bulk_widths(width - epsilon, params.n_bulk, h0, params.grading_ratio)
    bulk = epsilon + np.cumsum(widths)
    bulk[-1] = width
    return np.concatenate([band, bulk])


@dataclass(frozen=True, eq=False)
class BookMesh:
    """Structured quadrilateral mesh of a book (immutable after construction)."""

    geometry: BookGeometry
    epsilon: float | None
    s_lines: np.ndarray
    y_lines: tuple[np.ndarray, ...]
    node_sheet: np.ndarray      # -1 on gamma
    node_y: np.ndarray
    node_s: np.ndarray
    cells: np.ndarray           # (n_cells, 4), counter-clockwise in (y, s)
    cell_sheet: np.ndarray
    cell_y0: np.ndarray
    cell_hy: np.ndarray
    cell_s0: np.ndarray
    cell_hs: np.ndarray
    gamma_dofs: np.ndarray
    sheet_dofs: tuple[np.ndarray, ...]
    boundary_edges: np.ndarray  # (n_edges, 2) node pairs on the outer boundary Gamma
    boundary_sheet: np.ndarray
    _line_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.node_y.size

    @property
    def n_s(self) -> int:
        return self.s_lines.size - 1

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def has_line(self, y: float) -> bool:
        """True when ``y`` is a mesh line in every sheet."""
        return all(np.min(np.abs(lines - y)) <= _ALIGN_TOL * max(1.0, y) for lines in self.y_lines)

    @property
    def band_aligned(self) -> bool:
        return self.epsilon is not None and self.has_line(self.epsilon)

    def cells_in_band(self) -> np.ndarray:
        if self.epsilon is None:
            return np.zeros(self.n_cells, dtype=bool)
        return self.cell_y0 + self.cell_hy <= self.epsilon * (1 + _ALIGN_TOL) + _ALIGN_TOL

    def band_dofs(self) -> np.ndarray:
        if self.epsilon is None:
            return np.empty(0, dtype=int)
        return np.flatnonzero(self.node_y <= self.epsilon * (1 + _ALIGN_TOL) + _ALIGN_TOL)

    def stats(self) -> dict:
        return {
            "K": self.geometry.K,
            "widths": list(self.geometry.widths),
            "l": self.geometry.l,
            "epsilon": self.epsilon,
            "n_s": self.n_s,
            "y_lines_per_sheet": [int(y.size) for y in self.y_lines],
            "n_nodes": self.n_nodes,
            "n_cells": self.n_cells,
            "n_gamma": int(self.gamma_dofs.size),
            "min_cell_width": float(self.cell_hy.min()),
            "max_cell_width": float(self.cell_hy.max()),
            "band_aligned": bool(self.band_aligned),
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats(), indent=2, sort_keys=True)


def mesh_from_lines(geometry: BookGeometry, y_lines, s_lines,
                    epsilon: float | None = None) -> BookMesh:
    """Assemble the node numbering and connectivity from explicit grid lines."""
    s_lines = np.asarray(s_lines, dtype=float)
    ys = tuple(np.asarray(y, dtype=float) for y in y_lines)
    if len(ys) != geometry.K:
        raise MeshDegenerate(f"need y-lines for {geometry.K} sheets, got {len(ys)}")
    if np.any(np.diff(s_lines) <= 0) or abs(s_lines[0]) > _ALIGN_TOL \
            or abs(s_lines[-1] - geometry.l) > _ALIGN_TOL * max(1.0, geometry.l):
        raise MeshDegenerate("s-lines must increase strictly from 0 to l")
    for k, y in enumerate(ys):
        if y.size < 2 or np.any(np.diff(y) <= 0) or y[0] != 0.0 \
                or abs(y[-1] - geometry.widths[k]) > _ALIGN_TOL * max(1.0, geometry.widths[k]):
            raise MeshDegenerate(f"y-lines of sheet {k} must increase strictly from 0 to a_k")

    ns1 = s_lines.size
    gamma = np.arange(ns1)
    node_sheet = [np.full(ns1, -1)]
    node_y = [np.zeros(ns1)]
    node_s = [s_lines.copy()]
    cells, cell_sheet, y0, hy, s0, hs = [], [], [], [], [], []
    sheet_dofs = []
    b_edges, b_sheet = [], []
    offset = ns1
    for k, y in enumerate(ys):
        ny = y.size
        idx = np.empty((ny, ns1), dtype=np.int64)
        idx[0] = gamma
        idx[1:] = offset + np.arange((ny - 1) * ns1).reshape(ny - 1, ns1)
        sheet_dofs.append(idx[1:].ravel())
        offset += (ny - 1) * ns1
        yy, ss = np.meshgrid(y[1:], s_lines, indexing="ij")
        node_sheet.append(np.full(yy.size, k))
        node_y.append(yy.ravel())
        node_s.append(ss.ravel())

        c = np.stack([idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]], axis=-1)
        cells.append(c.reshape(-1, 4))
        ncy, ncs = ny - 1, ns1 - 1
        cell_sheet.append(np.full(ncy * ncs, k))
        y0.append(np.repeat(y[:-1], ncs))
        hy.append(np.repeat(np.diff(y), ncs))
        s0.append(np.tile(s_lines[:-1], ncy))
        hs.append(np.tile(np.diff(s_lines), ncy))

        # outer boundary: far edge y = a_k and the two ends s = 0, s = l
        far = idx[-1]
        b_edges.append(np.stack([far[:-1], far[1:]], axis=1))
        for col in (0, ns1 - 1):
            side = idx[:, col]
            b_edges.append(np.stack([side[:-1], side[1:]], axis=1))
        b_sheet.append(np.full(ncs + 2 * ncy, k))

    return BookMesh(
        geometry=geometry,
        epsilon=None if epsilon is None else float(epsilon),
        s_lines=s_lines,
        y_lines=ys,
        node_sheet=np.concatenate(node_sheet),
        node_y=np.concatenate(node_y),
        node_s=np.concatenate(node_s),
        cells=np.concatenate(cells),
        cell_sheet=np.concatenate(cell_sheet),
        cell_y0=np.concatenate(y0),
        cell_hy=np.concatenate(hy),
        cell_s0=np.concatenate(s0),
        cell_hs=np.concatenate(hs),
        gamma_dofs=gamma,
        sheet_dofs=tuple(sheet_dofs),
        boundary_edges=np.concatenate(b_edges),
        boundary_sheet=np.concatenate(b_sheet),
    )


def generate_mesh(geometry: BookGeometry, params: MeshParams, epsilon: float) -> BookMesh:
    """Band-aligned graded mesh: ``n_band`` uniform cells on ``[0, eps]`` per sheet."""
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise BandTooWide(f"band width must be positive, got {epsilon}")
    if epsilon >= geometry.min_width:
        raise BandTooWide(
            f"band width {epsilon} must be smaller than every sheet width {geometry.widths}")
    ys = [sheet_y_lines(a, epsilon, params) for a in geometry.widths]
    s_lines = np.linspace(0.0, geometry.l, params.n_s + 1)
    return mesh_from_lines(geometry, ys, s_lines, epsilon)


def refine_mesh(mesh: BookMesh) -> BookMesh:
    """Halve every cell; the old node set is a subset of the new one."""
    def halve(lines):
        mid = 0.5 * (lines[:-1] + lines[1:])
        out = np.empty(2 * lines.size - 1)
        out[0::2] = lines
        out[1::2] = mid
        return out

    return mesh_from_lines(mesh.geometry, [halve(y) for y in mesh.y_lines],
                           halve(mesh.s_lines), mesh.epsilon)


@dataclass(frozen=True)
class JunctionMaps:
    gamma_dofs: np.ndarray
    interior_dofs: tuple[np.ndarray, ...]
    # index of each gamma node's ``s`` position; identity under our numbering
    gamma_s: np.ndarray

    @property
    def all_interior(self) -> np.ndarray:
        return np.concatenate(self.interior_dofs)


def junction_maps(mesh: BookMesh) -> JunctionMaps:
    return JunctionMaps(mesh.gamma_dofs.copy(), tuple(d.copy() for d in mesh.sheet_dofs),
                        mesh.node_s[mesh.gamma_dofs].copy())


def expected_node_count(y_line_counts, n_s: int) -> int:
    """Sum_k (#y-lines_k)(n_s+1) - (K-1)(n_s+1): gamma is counted once."""
    K = len(y_line_counts)
    return sum(y_line_counts) * (n_s + 1) - (K - 1) * (n_s + 1)
