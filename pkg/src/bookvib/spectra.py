"""Problem-level spectra of the loaded book.

Pencils (``H`` is the stiffness-plus-potential matrix):

* perturbed, fixed eps:  ``H x = lam (M_out + M_band) x``
* Neumann book (no band): ``H x = lam M_whole x``
* limit for m = 1:        ``H x = lam (M_whole + M_kappa) x``
* limit for m > 1:        ``H x = lam M_kappa x`` (solved on gamma via Schur)

``M_kappa`` is the kappa-weighted trace mass on gamma.  The junction
Dirichlet problems (operator D) restrict a pencil to the interior unknowns of
one sheet.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import brentq

from .assembly import (CoefficientSet, assemble_band_mass, assemble_bulk_mass,
                       assemble_line_mass, assemble_stiffness)
from .eigen import (GROUP_TOL, Partition, Spectrum, group_eigenvalues, schur_complement,
                    solve_gevp, solve_schur_gevp)
from .errors import ClassificationFailure, InteriorResonance
from .geometry import BookGeometry, BookMesh, MeshParams, generate_mesh

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-6
RANK_TOL = 1e-8
ROOT_TOL = 1e-8


@dataclass(frozen=True)
class SolverSettings:
    n_eig: int = 12
    tol: float = 1e-9
    max_iter: int | None = None
    seed: int = 42
    group_tol: float = GROUP_TOL

    def __post_init__(self):
        if self.n_eig < 1:
            raise ValueError("n_eig must be >= 1")


@dataclass(frozen=True)
class Scenario:
    geometry: BookGeometry
    coefficients: CoefficientSet
    mesh_params: MeshParams = MeshParams()
    solver: SolverSettings = SolverSettings()

    def __post_init__(self):
        self.coefficients.check_sheets(self.geometry.K)

    def eps(self, epsilon: float | None = None) -> float:
        eps = self.coefficients.epsilon if epsilon is None else epsilon
        if eps is None:
            raise ValueError("no epsilon given and none set in the coefficients")
        return float(eps)

    def with_(self, **changes) -> "Scenario":
        """Copy with coefficient fields (``m``, ``q``, ...) or top-level fields replaced."""
        top = {k: changes.pop(k) for k in list(changes)
               if k in ("geometry", "coefficients", "mesh_params", "solver")}
        scn = replace(self, **top) if top else self
        if changes:
            scn = replace(scn, coefficients=replace(scn.coefficients, **changes))
        return scn


@dataclass(frozen=True, eq=False)
class Discretization:
    """All matrices of one scenario on the mesh adapted to one band width."""

    mesh: BookMesh
    H: sp.csr_matrix
    M_whole: sp.csr_matrix
    M_out: sp.csr_matrix
    M_band: sp.csr_matrix
    M_kappa: sp.csr_matrix
    M_gamma: sp.csr_matrix   # plain trace mass, kappa = 1

    @property
    def partition(self) -> Partition:
        return Partition.from_gamma(self.mesh.n_nodes, self.mesh.gamma_dofs)

    @property
    def M_eps(self) -> sp.csr_matrix:
        return (self.M_out + self.M_band).tocsr()


@lru_cache(maxsize=32)
def discretize(scn: Scenario, epsilon: float | None = None) -> Discretization:
    eps = scn.eps(epsilon)
    mesh = generate_mesh(scn.geometry, scn.mesh_params, eps)
    coeffs = replace(scn.coefficients, epsilon=eps)
    return Discretization(
        mesh=mesh,
        H=assemble_stiffness(mesh, coeffs),
        M_whole=assemble_bulk_mass(mesh, coeffs, "whole"),
        M_out=assemble_bulk_mass(mesh, coeffs, "outside_band"),
        M_band=assemble_band_mass(mesh, coeffs),
        M_kappa=assemble_line_mass(mesh, coeffs),
        M_gamma=assemble_line_mass(mesh, None),
    )


def _solve(scn: Scenario, A, M, n_eig: int | None, **meta) -> Spectrum:
    s = scn.solver
    n = A.shape[0]
    spec = solve_gevp(A, M, min(n_eig or s.n_eig, n), tol=s.tol, max_iter=s.max_iter,
                      seed=s.seed, group_tol=s.group_tol)
    spec.meta.update(meta)
    return spec


def perturbed_spectrum(scn: Scenario, epsilon: float | None = None,
                       n_eig: int | None = None) -> Spectrum:
    """Lowest eigenpairs of the problem with the concentrated band at width ``epsilon``."""
    d = discretize(scn, epsilon)
    return _solve(scn, d.H, d.M_eps, n_eig, pencil="perturbed", epsilon=d.mesh.epsilon,
                  mesh=d.mesh)


def unperturbed_spectrum(scn: Scenario, epsilon: float | None = None,
                         n_eig: int | None = None) -> Spectrum:
    """Neumann book without any band (density ``rho`` everywhere)."""
    d = discretize(scn, epsilon)
    return _solve(scn, d.H, d.M_whole, n_eig, pencil="neumann", epsilon=d.mesh.epsilon,
                  mesh=d.mesh)


def limit_spectrum_m1(scn: Scenario, epsilon: float | None = None,
                      n_eig: int | None = None) -> Spectrum:
    """Limit for m = 1: bulk density plus the line mass ``kappa`` on gamma."""
    d = discretize(scn, epsilon)
    return _solve(scn, d.H, (d.M_whole + d.M_kappa).tocsr(), n_eig, pencil="limit_m1",
                  epsilon=d.mesh.epsilon, mesh=d.mesh)


def limit_spectrum_high_m(scn: Scenario, epsilon: float | None = None,
                          n_eig: int | None = None) -> Spectrum:
    """Limit for m > 1: weightless sheets, all mass on gamma (independent of ``m``).

    Returns every one of the ``n_s + 1`` junction eigenvalues unless ``n_eig`` truncates.
    """
    d = discretize(scn, epsilon)
    spec = solve_schur_gevp(d.H, d.M_kappa, d.partition, n_eig=n_eig,
                            group_tol=scn.solver.group_tol)
    spec.meta.update(pencil="limit_high_m", epsilon=d.mesh.epsilon, mesh=d.mesh)
    return spec


# ---------------------------------------------------------------------------
# junction Dirichlet operator D
# ---------------------------------------------------------------------------

@dataclass
class SigmaDEntry:
    lam: float
    r: int
    r_k: tuple[int, ...]
    dim_N: int
    vectors: np.ndarray   # global eigenvectors (zero on gamma and other sheets), columns
    fluxes: np.ndarray    # gamma residual (H - lam M) x per column
    values: np.ndarray    # individual member eigenvalues

    @property
    def defect(self) -> int:
        return self.r - self.dim_N

    def split(self, rank_tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
        """Eigenspace basis split into (flux-carrying, flux-free) combinations.

        Both blocks keep the mass-orthonormality of ``vectors``.
        """
        F = self.fluxes / np.linalg.norm(self.fluxes, axis=0)
        _, s, Vt = np.linalg.svd(F, full_matrices=True)
        rank = int(np.count_nonzero(s > rank_tol * s[0])) if s.size else 0
        V = Vt.T
        return self.vectors @ V[:, :rank], self.vectors @ V[:, rank:]


@dataclass
class SigmaDReport:
    entries: list[SigmaDEntry]
    per_sheet: list[Spectrum]
    gamma_dofs: np.ndarray
    pencil: str
    epsilon: float
    lam_max: float   # entries are complete below this value

    def values(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    @property
    def sigma_D(self) -> list[SigmaDEntry]:
        """Entries with a positive defect (the set Sigma_D)."""
        return [e for e in self.entries if e.defect > 0]

    def match(self, lam: float, rel_tol: float) -> SigmaDEntry | None:
        best = None
        for e in self.entries:
            if abs(e.lam - lam) <= rel_tol * max(abs(lam), abs(e.lam)):
                if best is None or abs(e.lam - lam) < abs(best.lam - lam):
                    best = e
        return best

    def records(self) -> list[dict]:
        return [{"lambda": e.lam, "r": e.r, "r_k": list(e.r_k), "dim_N": e.dim_N,
                 "defect": e.defect} for e in self.entries]


def flux_rank(F: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    """Numerical rank by column-pivoted QR, threshold relative to the leading pivot."""
    if F.size == 0:
        return 0
    norms = np.linalg.norm(F, axis=0)
    F = F[:, norms > 0] / norms[norms > 0]
    if F.shape[1] == 0:
        return 0
    _, R, _ = la.qr(F, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    return int(np.count_nonzero(d > rank_tol * d[0]))


def sigma_d(scn: Scenario, epsilon: float | None = None, perturbed: bool = False,
            n_eig: int | None = None, rank_tol: float = RANK_TOL) -> SigmaDReport:
    """Spectrum of D (gamma clamped, Neumann elsewhere) with multiplicity data.

    ``perturbed=False`` uses the bulk density ``rho`` (the operator attached
    to both limit problems); ``perturbed=True`` uses the density of the
    fixed-eps problem.
    """
    d = discretize(scn, epsilon)
    mesh = d.mesh
    mass = d.M_eps if perturbed else d.M_whole
    g = mesh.gamma_dofs
    n = mesh.n_nodes
    members = []   # (lam, sheet, global vector, flux)
    per_sheet = []
    lam_cut = np.inf
    for k, I in enumerate(mesh.sheet_dofs):
        A_k = d.H[I][:, I]
        M_k = mass[I][:, I]
        if n_eig is None and I.size <= 600:
            want = I.size
        else:
            want = min(n_eig or scn.solver.n_eig, I.size)
        spec = _solve(scn, A_k, M_k, want, pencil="dirichlet", sheet=k)
        per_sheet.append(spec)
        if want < I.size:
            lam_cut = min(lam_cut, spec.values[-1])
        X = np.zeros((n, len(spec)))
        X[I] = spec.vectors
        flux = (d.H @ X - (mass @ X) * spec.values)[g]
        for j, lam in enumerate(spec.values):
            members.append((lam, k, X[:, j], flux[:, j]))
    members.sort(key=lambda t: (t[0], t[1]))
    lams = np.array([t[0] for t in members])
    ids = group_eigenvalues(lams, scn.solver.group_tol)
    entries = []
    for gid in np.unique(ids):
        idx = np.flatnonzero(ids == gid)
        if np.isfinite(lam_cut) and lams[idx].max() >= lam_cut * (1 - scn.solver.group_tol):
            continue  # the multiplicity of the top cluster cannot be trusted
        sheets = [members[i][1] for i in idx]
        V = np.stack([members[i][2] for i in idx], axis=1)
        F = np.stack([members[i][3] for i in idx], axis=1)
        entries.append(SigmaDEntry(
            lam=float(lams[idx].mean()), r=idx.size,
            r_k=tuple(sheets.count(k) for k in range(scn.geometry.K)),
            dim_N=flux_rank(F, rank_tol), vectors=V, fluxes=F, values=lams[idx]))
    return SigmaDReport(entries, per_sheet, g, "perturbed" if perturbed else "limit",
                        d.mesh.epsilon, float(lam_cut))


# ---------------------------------------------------------------------------
# Dirichlet-to-Neumann scans
# ---------------------------------------------------------------------------

SIGMA_THETA = "sigma_theta"
LAMBDA_THETA = "lambda_theta"


@dataclass
class DtNEvaluation:
    lam: float
    mode: str
    smallest_eig: float | None      # signed eigenvalue of smallest magnitude
    interior_resonant: bool = False
    gamma_spectrum: np.ndarray | None = None
    negative_count: int | None = None   # eigenvalues of the full pencil below lam

    def record(self) -> dict:
        return {"lambda": self.lam, "mode": self.mode,
                "smallest_eig": np.nan if self.smallest_eig is None else self.smallest_eig,
                "interior_resonant": self.interior_resonant}


@dataclass(eq=False)
class DtNProblem:
    """Scanned matrix family for one pencil.

    ``sigma_theta``: ``S(lam)`` of ``H - lam M_mass``.
    ``lambda_theta``: ``S(lam) - lam (M_kappa)_gg`` with ``S`` from ``H - lam M_bulk``
    (``M_bulk`` may be ``None``: weightless sheets).
    """

    H: sp.csr_matrix
    mode: str
    M_volume: sp.csr_matrix | None
    M_line: sp.csr_matrix | None
    partition: Partition

    def __post_init__(self):
        if self.mode not in (SIGMA_THETA, LAMBDA_THETA):
            raise ValueError(f"unknown mode {self.mode!r}")
        g = self.partition.gamma_dofs
        self._line_gg = None
        if self.mode == LAMBDA_THETA:
            self._line_gg = self.M_line[g][:, g].toarray()
        self._fixed = None
        if self.M_volume is None:
            self._fixed = schur_complement(self.H, self.partition, lam=0.0)

    def evaluate(self, lam: float, full: bool = False) -> DtNEvaluation:
        lam = float(lam)
        try:
            if self._fixed is not None:
                res = self._fixed
            else:
                res = schur_complement((self.H - lam * self.M_volume).tocsr(), self.partition, lam)
        except InteriorResonance:
            return DtNEvaluation(lam, self.mode, None, interior_resonant=True)
        S = res.S if self._line_gg is None else res.S - lam * self._line_gg
        w = np.linalg.eigvalsh(S)
        small = float(w[np.argmin(np.abs(w))])
        count = None
        if res.interior_negatives is not None:
            count = res.interior_negatives + int(np.count_nonzero(w < 0))
        return DtNEvaluation(lam, self.mode, small, False, w if full else None, count)


def dtn_problem(scn: Scenario, mode: str, epsilon: float | None = None,
                perturbed: bool = False, bulk_mass: bool = True) -> DtNProblem:
    """Build the scanned family.

    ``sigma_theta`` with ``perturbed=True`` scans the fixed-eps problem;
    otherwise the Neumann-book density ``rho``.  ``lambda_theta`` scans the
    m = 1 limit, or the m > 1 limit when ``bulk_mass=False``.
    """
    d = discretize(scn, epsilon)
    if mode == SIGMA_THETA:
        vol = d.M_eps if perturbed else d.M_whole
        return DtNProblem(d.H, mode, vol, None, d.partition)
    if mode == LAMBDA_THETA:
        return DtNProblem(d.H, mode, d.M_whole if bulk_mass else None, d.M_kappa, d.partition)
    raise ValueError(f"unknown mode {mode!r}")


def theta_eval(scn: Scenario, lam: float, mode: str, epsilon: float | None = None,
               perturbed: bool = False, bulk_mass: bool = True) -> DtNEvaluation:
    return dtn_problem(scn, mode, epsilon, perturbed, bulk_mass).evaluate(lam, full=True)


@dataclass
class ScanResult:
    roots: list[float]
    evaluations: list[DtNEvaluation]
    rejected: list[float] = field(default_factory=list)   # sign flips that were not zeros

    def records(self) -> list[dict]:
        return [e.record() for e in sorted(self.evaluations, key=lambda e: e.lam)]


def _is_zero_crossing(f, r: float, delta: float) -> bool:
    """Genuine zeros decay linearly towards ``r``; jumps and poles do not."""
    vals = []
    for d in (delta, 0.1 * delta):
        lo, hi = f(r - d), f(r + d)
        if lo is None or hi is None:
            return False
        vals.append((abs(lo), abs(hi)))
    (a1, b1), (a2, b2) = vals
    return a2 <= 0.5 * a1 and b2 <= 0.5 * b1


def scan_roots(problem: DtNProblem, interval: tuple[float, float], grid_n: int = 200,
               root_tol: float = ROOT_TOL, max_depth: int = 40) -> ScanResult:
    """Zeros of the smallest-magnitude junction eigenvalue on ``interval``.

    Sign changes on a uniform grid are bracketed and refined with Brent's
    method.  When the pencil inertia says a cell holds more eigenvalues than
    roots found there, the cell is bisected (down to ``root_tol``); D-type
    eigenvalues legitimately leave such a surplus.  Interior-resonant grid
    points are replaced by two nearby points.
    """
    a, b = map(float, interval)
    if grid_n < 2 or not b > a:
        raise ValueError("need grid_n >= 2 and a non-empty interval")
    evals: list[DtNEvaluation] = []
    span = b - a
    bridge = 1e-7 * span / grid_n

    def ev(lam):
        e = problem.evaluate(lam)
        evals.append(e)
        return e

    def f(lam):
        e = problem.evaluate(lam)
        if e.interior_resonant:
            e = problem.evaluate(lam + 1e-3 * root_tol)
        return e.smallest_eig

    points = []
    for lam in np.linspace(a, b, grid_n):
        e = ev(lam)
        if e.interior_resonant:
            for lam2 in (lam - bridge, lam + bridge):
                if a <= lam2 <= b:
                    e2 = ev(lam2)
                    if not e2.interior_resonant:
                        points.append(e2)
        else:
            points.append(e)
    points.sort(key=lambda e: e.lam)

    roots: list[float] = []
    rejected: list[float] = []
    delta = max(100 * root_tol, 1e-12 * max(abs(a), abs(b)))

    def cell(ea: DtNEvaluation, eb: DtNEvaluation, depth: int) -> None:
        expected = None
        if ea.negative_count is not None and eb.negative_count is not None:
            expected = eb.negative_count - ea.negative_count
            if expected <= 0:
                return
        found = 0
        fa, fb = ea.smallest_eig, eb.smallest_eig
        if fa == 0.0:
            roots.append(ea.lam)
            found += 1
        elif fa * fb < 0:
            r = brentq(f, ea.lam, eb.lam, xtol=root_tol, rtol=4 * np.finfo(float).eps)
            if _is_zero_crossing(f, r, delta):
                roots.append(r)
                found += 1
            else:
                rejected.append(r)
        if expected is not None and found < expected and depth < max_depth \
                and eb.lam - ea.lam > 4 * root_tol:
            mid = ev(0.5 * (ea.lam + eb.lam))
            if mid.interior_resonant:
                return
            before = len(roots)
            del roots[len(roots) - found:]
            cell(ea, mid, depth + 1)
            cell(mid, eb, depth + 1)
            if len(roots) == before - found and found:
                # refinement lost the root found at this level; keep it
                roots.append(r)

    for ea, eb in zip(points[:-1], points[1:]):
        cell(ea, eb, 0)

    roots.sort()
    unique: list[float] = []
    for r in roots:
        if not unique or r - unique[-1] > 10 * root_tol:
            unique.append(r)
    return ScanResult(unique, evals, rejected)


# ---------------------------------------------------------------------------
# classification of computed spectra
# ---------------------------------------------------------------------------

@dataclass
class Classification:
    tags: list[str]
    trace_norms: np.ndarray
    vectors: np.ndarray
    clusters: list[dict]
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_failed(self) -> None:
        if self.violations:
            raise ClassificationFailure(self.violations)


def classify_spectrum(spectrum: Spectrum, report: SigmaDReport, trace_tol: float = TRACE_TOL,
                      group_tol: float = GROUP_TOL) -> Classification:
    """Tag eigenpairs as DtN-type (gamma moves) or D-type (gamma fixed).

    Inside each multiplicity cluster the eigenvectors are rotated so that
    the trace-free directions come last; the number of those is compared
    with the defect ``r - dim N`` of the matching D-eigenvalue.
    """
    n = len(spectrum)
    if n == 0:
        return Classification([], np.empty(0), spectrum.vectors, [], [])
    g = report.gamma_dofs
    X = spectrum.vectors.copy()
    tags = [""] * n
    violations: list[str] = []
    clusters = []
    groups = spectrum.groups()
    truncated = n < X.shape[0]
    for gi, idx in enumerate(groups):
        Xc = X[:, idx]
        T = Xc[g] / np.linalg.norm(Xc, axis=0)
        _, s, Vt = np.linalg.svd(T, full_matrices=True)
        n_dtn = int(np.count_nonzero(s > trace_tol))
        X[:, idx] = Xc @ Vt.T
        for pos, i in enumerate(idx):
            tags[i] = "dtn" if pos < n_dtn else "d"
        lam = float(spectrum.values[idx].mean())
        n_d = idx.size - n_dtn
        entry = report.match(lam, group_tol)
        partial = truncated and gi == len(groups) - 1
        clusters.append({"lambda": lam, "size": int(idx.size), "n_d": n_d,
                         "defect": None if entry is None else entry.defect,
                         "partial": partial})
        if n_d == 0 or partial:
            continue
        if entry is None:
            violations.append(f"gamma-fixed eigenvalue {lam:.10g} is not in sigma(D)")
        elif n_d > 0 and entry.defect == 0:
            violations.append(f"gamma-fixed eigenvalue {lam:.10g} has zero defect in sigma(D)")
        elif n_d < entry.defect:
            violations.append(f"cluster at {lam:.10g} has {n_d} gamma-fixed modes, "
                              f"defect requires {entry.defect}")
    # a cluster cut by truncation proves nothing about its multiplicity
    top = spectrum.values[groups[-1][0]] if truncated else spectrum.values[-1]
    for e in report.sigma_D:
        if e.lam < top * (1 - group_tol) and not any(
                c["n_d"] >= e.defect and abs(c["lambda"] - e.lam) <= group_tol * e.lam
                for c in clusters):
            violations.append(f"sigma_D point {e.lam:.10g} (defect {e.defect}) missing "
                              f"from the spectrum")
    norms = np.linalg.norm(X[g], axis=0) / np.linalg.norm(X, axis=0)
    return Classification(tags, norms, X, clusters, violations)
