"""Experiment harness: eps-sweeps with rate fits, form-discrepancy checks,
trace decay, spectral accumulation and quasimodes for 1 < m < 2.

Branch tracking across eps is by nearest value with ties going to the
smaller index.  All random inputs come from ``numpy.random.default_rng``
seeded by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import assemble_band_mass, assemble_bulk_mass
from .eigen import Spectrum, solve_spd
from .errors import (ConvergenceFailure, DegenerateQuasimode, DomainError, InsufficientData,
                     NumericalError)
from .spectra import (TRACE_TOL, Scenario, SigmaDEntry, discretize, limit_spectrum_high_m,
                      limit_spectrum_m1, perturbed_spectrum, sigma_d)

logger = logging.getLogger(__name__)

DEFAULT_ETA = 0.99


def alpha(m: float) -> float:
    """Low-frequency convergence exponent ``min(m - 1/2, 2(m - 1))`` for m > 1."""
    if not m > 1:
        raise DomainError(f"alpha(m) needs m > 1, got {m}")
    return min(m - 0.5, 2.0 * (m - 1.0))


def beta(m: float, eta: float = DEFAULT_ETA) -> float:
    """Quasimode error exponent; defined for ``1 < m < eta + 1`` with ``0 < eta < 1``."""
    if not 0 < eta < 1:
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    if not 1 < m < eta + 1:
        raise DomainError(f"beta(m, eta) needs 1 < m < eta + 1, got m={m}, eta={eta}")
    return m - 1.0 if m <= 1.0 + eta / 2.0 else eta - m + 1.0


def theoretical_exponent(m: float) -> float:
    return 0.5 if m == 1 else alpha(m)


@dataclass
class RateFit:
    slope: float
    constant: float
    n_points: int
    dropped: int = 0   # zero errors left out of the fit

    def record(self) -> dict:
        return {"slope": self.slope, "constant": self.constant, "n_points": self.n_points,
                "dropped": self.dropped}


def fit_rate(eps, errors) -> RateFit:
    """Least-squares line through ``(log eps, log error)``: error ~ constant * eps**slope."""
    eps = np.asarray(eps, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    if eps.shape != errors.shape:
        raise ValueError("eps and errors differ in length")
    if np.any(eps <= 0):
        raise ValueError("eps values must be positive")
    keep = errors > 0
    if np.count_nonzero(keep) < 2:
        raise InsufficientData(f"need >= 2 nonzero errors, got {np.count_nonzero(keep)}")
    x, y = np.log(eps[keep]), np.log(errors[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(float(slope), float(np.exp(intercept)), int(keep.sum()),
                   int((~keep).sum()))


def _check_eps_list(eps_list, minimum: int = 3) -> list[float]:
    eps = [float(e) for e in eps_list]
    if len(eps) < minimum:
        raise InsufficientData(f"need at least {minimum} eps values, got {len(eps)}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps list must be strictly decreasing")
    return eps


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    m: float
    epsilons: list[float]
    modes: list[int]              # 1-based eigenvalue indices j
    limit_values: np.ndarray
    records: list[dict] = field(default_factory=list)
    fits: dict[int, RateFit] = field(default_factory=dict)
    scaled_fits: dict[int, RateFit] = field(default_factory=dict)
    exponent: float = 0.5
    failure: str | None = None

    def errors(self, j: int, kind: str = "raw_error") -> np.ndarray:
        return np.array([r[kind] for r in self.records if r["j"] == j])

    def monotone(self, j: int) -> bool:
        e = self.errors(j)
        return bool(np.all(np.diff(e) < 0))

    def bound_holds(self, j: int, rtol: float = 1e-12) -> bool:
        """``error(eps) <= C eps**exponent`` with C calibrated at the first eps."""
        e = self.errors(j)
        eps = np.array(self.epsilons[:e.size])
        C = e[0] / eps[0] ** self.exponent
        return bool(np.all(e <= C * eps ** self.exponent * (1 + rtol)))

    def rates(self) -> dict:
        out = {"m": self.m, "theoretical_exponent": self.exponent, "modes": {}}
        for j in self.modes:
            entry = {"theoretical": self.exponent}
            if j in self.fits:
                entry.update(self.fits[j].record())
            if j in self.scaled_fits:
                entry["scaled_slope"] = self.scaled_fits[j].slope
            out["modes"][str(j)] = entry
        if self.failure:
            out["failure"] = self.failure
        return out


def _classes(spec: Spectrum, gamma_dofs, trace_tol: float) -> np.ndarray:
    return spec.gamma_trace_norms(gamma_dofs) > trace_tol


def _match_by_class(limit_cls, spec: Spectrum, gamma_dofs, trace_tol: float) -> np.ndarray:
    """Index in ``spec`` for each limit eigenvalue: k-th of its class to k-th of that class."""
    cls = _classes(spec, gamma_dofs, trace_tol)
    out = np.full(limit_cls.size, -1)
    for flag in (True, False):
        want = np.flatnonzero(limit_cls == flag)
        have = np.flatnonzero(cls == flag)
        n = min(want.size, have.size)
        out[want[:n]] = have[:n]
    return out


def sweep(scn: Scenario, eps_list, modes=(1, 2, 3, 4), track: str = "class",
          trace_tol: float = TRACE_TOL) -> SweepReport:
    """Perturbed spectra along ``eps_list`` against the limit spectrum.

    ``m = 1``: error ``|lam_eps - lam|`` against the m = 1 limit.
    ``m > 1``: raw error ``|lam_eps - eps**(m-1) lam|`` and scaled error
    ``|eps**(1-m) lam_eps - lam|`` against the weightless-sheet limit.
    The limit is computed once, on the mesh of the smallest eps.

    ``track="index"`` pairs eigenvalues by position.  ``track="class"``
    pairs them by position within their class (gamma moves or gamma fixed):
    on books with mirror-symmetric sheets the two classes live in different
    symmetry sectors and cross each other freely, so plain ordering would
    compare different branches.  Without gamma-fixed modes both agree.
    """
    eps = _check_eps_list(eps_list)
    modes = [int(j) for j in modes]
    if min(modes) < 1:
        raise ValueError("mode indices are 1-based")
    if track not in ("index", "class"):
        raise ValueError(f"unknown tracking {track!r}")
    m = scn.coefficients.m
    n_lim = max(modes)
    limit = (limit_spectrum_m1 if m == 1 else limit_spectrum_high_m)(scn, eps[-1], n_eig=n_lim)
    limit_cls = _classes(limit, discretize(scn, eps[-1]).mesh.gamma_dofs, trace_tol)
    report = SweepReport(m, eps, modes, limit.values.copy(), exponent=theoretical_exponent(m))
    for e in eps:
        n_eig = n_lim if track == "index" else 2 * n_lim + 4
        try:
            spec = perturbed_spectrum(scn, e, n_eig=n_eig)
            if track == "index":
                pick = np.arange(n_lim)
            else:
                pick = _match_by_class(limit_cls, spec, discretize(scn, e).mesh.gamma_dofs,
                                       trace_tol)
                if np.any(pick[np.array(modes) - 1] < 0):
                    raise NumericalError(f"too few eigenpairs of a class at eps={e}")
        except NumericalError as exc:
            report.failure = f"eps={e}: {exc}"
            logger.warning("sweep aborted at eps=%g: %s", e, exc)
            break
        for j in modes:
            lam_e, lam = float(spec.values[pick[j - 1]]), float(limit.values[j - 1])
            scale = e ** (m - 1.0)
            report.records.append({
                "epsilon": e, "j": j, "lambda_eps": lam_e, "lambda_limit": lam,
                "raw_error": abs(lam_e - scale * lam),
                "scaled_error": abs(lam_e / scale - lam)})
    done = sorted({r["epsilon"] for r in report.records}, reverse=True)
    if len(done) >= 2:
        for j in modes:
            report.fits[j] = fit_rate(done, report.errors(j, "raw_error"))
            report.scaled_fits[j] = fit_rate(done, report.errors(j, "scaled_error"))
    return report


# ---------------------------------------------------------------------------
# form discrepancies on smooth random fields
# ---------------------------------------------------------------------------

def smooth_random_field(mesh, rng: np.random.Generator, n_modes: int = 4) -> np.ndarray:
    """Nodal values of a random smooth function continuous across gamma.

    ``phi_k(y, s) = G(s) + y F_k(y, s)`` with trigonometric ``G`` shared by
    all sheets and per-sheet ``F_k``; amplitudes decay like ``1/(1+i+j)``.
    Being mesh-independent, such fields give eps-comparable ratios.
    """
    geo = mesh.geometry
    l = geo.l  # noqa: E741
    idx = np.arange(n_modes)
    amp = 1.0 / (1.0 + idx[:, None] + idx[None, :])
    cg = rng.standard_normal((2, n_modes)) / (1.0 + idx)
    s = mesh.node_s
    G = cg[0] @ np.cos(np.outer(idx, np.pi * s / l)) + cg[1] @ np.sin(np.outer(idx, np.pi * s / l))
    phi = G.copy()
    for k, I in enumerate(mesh.sheet_dofs):
        y = mesh.node_y[I]
        c = rng.standard_normal((n_modes, n_modes)) * amp
        cy = np.cos(np.outer(idx, np.pi * y / geo.widths[k]))
        cs = np.cos(np.outer(idx, np.pi * s[I] / l))
        phi[I] += y * np.einsum("ij,in,jn->n", c, cy, cs)
    return phi


@dataclass
class FormDiscrepancy:
    epsilon: float
    R1: np.ndarray
    R2: np.ndarray

    @property
    def R1_max(self) -> float:
        return float(self.R1.max())

    @property
    def R2_max(self) -> float:
        return float(self.R2.max())

    def record(self) -> dict:
        return {"epsilon": self.epsilon, "R1_max": self.R1_max, "R2_max": self.R2_max}


def form_ratios(scn: Scenario, eps: float, phis: np.ndarray):
    """Ratios R1, R2 for the columns of ``phis`` (nodal vectors on the eps mesh)."""
    d = discretize(scn, eps)
    band_l2 = assemble_bulk_mass(d.mesh, None, "band")
    band_q = assemble_band_mass(d.mesh, replace(scn.coefficients, epsilon=d.mesh.epsilon), m=0.0)
    phis = np.atleast_2d(phis.T).T
    h = np.einsum("ij,ij->j", phis, d.H @ phis)
    r1 = np.einsum("ij,ij->j", phis, band_l2 @ phis) / (eps * h)
    band = np.einsum("ij,ij->j", phis, band_q @ phis) / eps
    line = np.einsum("ij,ij->j", phis, d.M_kappa @ phis)
    r2 = np.abs(band - line) / (np.sqrt(eps) * h)
    return r1, r2


def form_discrepancy_check(scn: Scenario, eps: float, n_samples: int = 100,
                           seed: int = 42) -> FormDiscrepancy:
    """Band L2 mass against eps times the H-norm (R1), and the band-to-line
    mass discrepancy against eps**(1/2) times the H-norm (R2)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mesh = discretize(scn, eps).mesh
    rng = np.random.default_rng(seed)
    phis = np.stack([smooth_random_field(mesh, rng) for _ in range(n_samples)], axis=1)
    r1, r2 = form_ratios(scn, eps, phis)
    return FormDiscrepancy(float(eps), r1, r2)


def form_discrepancy_sweep(scn: Scenario, eps_list, n_samples: int = 100,
                           seed: int = 42) -> list[FormDiscrepancy]:
    # same seed per eps: the sampled functions are identical, only the mesh changes
    return [form_discrepancy_check(scn, e, n_samples, seed) for e in eps_list]


# ---------------------------------------------------------------------------
# trace decay and accumulation
# ---------------------------------------------------------------------------

def nearest_index(values, target: float) -> int:
    """Index of the value nearest ``target``; ties go to the smaller index."""
    d = np.abs(np.asarray(values) - target)
    return int(np.flatnonzero(d == d.min())[0])


def _spectrum_covering(scn: Scenario, eps: float, upper: float, n_start: int) -> Spectrum:
    """Perturbed spectrum whose largest computed eigenvalue exceeds ``upper``."""
    n = n_start
    dim = discretize(scn, eps).H.shape[0]
    while True:
        spec = perturbed_spectrum(scn, eps, n_eig=min(n, dim))
        if spec.values[-1] > upper or n >= dim:
            return spec
        n = min(2 * n, dim)


@dataclass
class TraceDecayReport:
    records: list[dict]
    ambiguous: list[float]

    def ratios(self) -> np.ndarray:
        return np.array([r["ratio"] for r in self.records])

    def ratio_slope(self) -> float:
        """Log-log slope of the ratio against eps (>= 0 means no growth as eps -> 0)."""
        eps = [r["epsilon"] for r in self.records]
        return fit_rate(eps, self.ratios()).slope


def trace_decay(scn: Scenario, eps_list, target_index: int = 0,
                target_lambda: float | None = None, moving_only: bool = False,
                trace_tol: float = TRACE_TOL) -> TraceDecayReport:
    """Gamma-trace of the H-normalized eigenvector on an O(1) branch.

    With ``target_lambda`` the branch is the eigenvalue nearest that value
    at every eps (``moving_only`` skips gamma-fixed eigenvectors, whose
    trace vanishes trivially); otherwise eigenvalue ``target_index``.
    Reports ``|u|^2_{L2(gamma)} / (eps**(m-1) + eps**(1/2))``.
    """
    m = scn.coefficients.m
    if not 1 < m < 2:
        raise DomainError(f"trace decay is stated for 1 < m < 2, got m={m}")
    eps = _check_eps_list(eps_list, minimum=2)
    records, ambiguous = [], []
    for e in eps:
        d = discretize(scn, e)
        if target_lambda is None:
            spec = perturbed_spectrum(scn, e, n_eig=max(scn.solver.n_eig, target_index + 1))
            i = target_index
        else:
            spec = _spectrum_covering(scn, e, 1.5 * target_lambda, scn.solver.n_eig)
            dist = np.abs(spec.values - target_lambda)
            if moving_only:
                dist[~_classes(spec, d.mesh.gamma_dofs, trace_tol)] = np.inf
            i = nearest_index(dist, 0.0)
            if np.count_nonzero(np.isclose(dist, dist[i], rtol=1e-9, atol=0)) > 1:
                ambiguous.append(e)
        u = spec.vectors[:, i]
        u = u / np.sqrt(u @ (d.H @ u))
        trace2 = float(u @ (d.M_gamma @ u))
        bound = e ** (m - 1) + np.sqrt(e)
        records.append({"epsilon": e, "index": i, "lambda": float(spec.values[i]),
                        "trace_sq": trace2, "bound": bound, "ratio": trace2 / bound})
    return TraceDecayReport(records, ambiguous)


@dataclass
class AccumulationReport:
    targets: list[float]
    records: list[dict]   # epsilon, target, distance, n_eig, inconclusive

    def distances(self, target: float) -> np.ndarray:
        return np.array([r["distance"] for r in self.records if r["target"] == target])

    def trend_slope(self, target: float) -> float:
        eps = [r["epsilon"] for r in self.records if r["target"] == target]
        return fit_rate(eps, self.distances(target)).slope


def accumulation_scan(scn: Scenario, targets, eps_list) -> AccumulationReport:
    """Distance from each target to the nearest perturbed eigenvalue, per eps."""
    if not scn.coefficients.m > 1:
        raise DomainError("accumulation needs m > 1")
    targets = [float(t) for t in targets]
    if any(t <= 0 for t in targets):
        raise ValueError("targets must be positive")
    eps = _check_eps_list(eps_list, minimum=2)
    records = []
    upper = 1.25 * max(targets)
    for e in eps:
        try:
            spec = _spectrum_covering(scn, e, upper, scn.solver.n_eig)
            inconclusive = bool(spec.values[-1] <= upper)
        except ConvergenceFailure as exc:
            spec, inconclusive = exc.partial, True
        for t in targets:
            dist = float(np.min(np.abs(spec.values - t)))
            records.append({"epsilon": e, "target": t, "distance": dist,
                            "n_eig": len(spec), "inconclusive": inconclusive})
    return AccumulationReport(targets, records)


# ---------------------------------------------------------------------------
# quasimodes
# ---------------------------------------------------------------------------

@dataclass
class Quasimode:
    lam: float
    u: np.ndarray          # H-normalized base vector
    g: np.ndarray          # corrector
    w: np.ndarray          # u - eps**(m-1) g
    epsilon: float
    m: float
    eta: float
    delta0: float
    flux: np.ndarray       # nodal junction flux sum of u

    @property
    def scale(self) -> float:
        return self.epsilon ** (self.m - 1.0)

    @property
    def beta(self) -> float:
        return beta(self.m, self.eta)

    @property
    def degenerate(self) -> bool:
        return not np.any(self.g)


def _check_quasimode_regime(m: float, eta: float) -> None:
    if not 1 < m < 2:
        raise DomainError(f"quasimodes need 1 < m < 2, got m={m}")
    if not m - 1 < eta < 1:
        raise DomainError(f"eta must satisfy m - 1 < eta < 1, got eta={eta}")


def junction_flux(scn: Scenario, eps: float, lam: float, u: np.ndarray) -> np.ndarray:
    """Nodal sum of inward normal derivatives on gamma of a gamma-clamped vector.

    The gamma rows of ``H u - lam M u`` equal minus the flux tested against
    the hat functions; inverting the plain trace mass gives nodal values.
    """
    d = discretize(scn, eps)
    g = d.mesh.gamma_dofs
    r = (d.H @ u - lam * (d.M_whole @ u))[g]
    M1 = d.M_gamma[g][:, g]
    return -solve_spd(M1, r)


def build_quasimode(scn: Scenario, d_eigenpair, eps: float, eta: float = DEFAULT_ETA,
                    delta0: float | None = None, allow_degenerate: bool = False) -> Quasimode:
    """Corrected D-eigenvector ``w = u - eps**(m-1) g`` on the eps mesh.

    ``d_eigenpair = (lam, u)`` with ``u`` from :func:`sigma_d` on the same
    eps; ``g = G(s) chi(y)``, ``G = flux / (lam kappa)`` and
    ``chi = max(0, 1 - y/delta0)``.
    """
    m = scn.coefficients.m
    _check_quasimode_regime(m, eta)
    lam, u = float(d_eigenpair[0]), np.asarray(d_eigenpair[1], dtype=float)
    if not lam > 0:
        raise DomainError(f"eigenvalue must be positive, got {lam}")
    d = discretize(scn, eps)
    mesh = d.mesh
    if u.shape != (mesh.n_nodes,):
        raise ValueError("eigenvector does not live on the eps mesh")
    delta0 = 0.25 * scn.geometry.min_width if delta0 is None else float(delta0)
    if not 0 < delta0 <= scn.geometry.min_width:
        raise DomainError(f"delta0 must lie in (0, min width], got {delta0}")
    u = u / np.sqrt(u @ (d.H @ u))
    flux = junction_flux(scn, eps, lam, u)
    if np.linalg.norm(flux) <= 1e-10 * np.sqrt(lam) * np.sqrt(mesh.geometry.l):
        if not allow_degenerate:
            raise DegenerateQuasimode("junction flux vanishes; u needs no correction")
        flux = np.zeros_like(flux)
    G = flux / (lam * scn.coefficients.kappa(mesh.s_lines, scn.geometry.l))
    col = np.searchsorted(mesh.s_lines, mesh.node_s)
    chi = np.maximum(0.0, 1.0 - mesh.node_y / delta0)
    g = G[col] * chi
    w = u - eps ** (m - 1.0) * g
    return Quasimode(lam, u, g, w, float(eps), m, eta, delta0, flux)


def quasimode_residual(qm: Quasimode, scn: Scenario, eps: float | None = None,
                       normalized: bool = False) -> float:
    """``|A_eps w - w/lam|_H`` where ``A_eps = H^{-1} M_eps``.

    ``normalized=True`` divides by ``|w|_H`` (the quasimode error proper).
    """
    eps = qm.epsilon if eps is None else eps
    d = discretize(scn, eps)
    w = qm.w
    z = solve_spd(d.H, d.M_eps @ w - (d.H @ w) / qm.lam)
    r = float(np.sqrt(max(z @ (d.H @ z), 0.0)))
    if normalized:
        r /= float(np.sqrt(w @ (d.H @ w)))
    return r


def d_eigenpair(entry: SigmaDEntry, kind: str = "flux", index: int = 0):
    """``(lam, u)`` from a sigma_d entry; ``kind`` selects flux-carrying or defect directions."""
    carrying, free = entry.split()
    block = {"flux": carrying, "defect": free, "any": entry.vectors}[kind]
    if index >= block.shape[1]:
        raise IndexError(f"entry has only {block.shape[1]} {kind} direction(s)")
    return entry.lam, block[:, index]


def quasimode_family(scn: Scenario, entry_index: int, eps: float,
                     eta: float = DEFAULT_ETA, delta0: float | None = None) -> list[Quasimode]:
    """Quasimodes from a basis of the whole D-eigenspace (defect directions included)."""
    rep = sigma_d(scn, eps)
    entry = rep.entries[entry_index]
    carrying, free = entry.split()
    basis = np.hstack([carrying, free])
    return [build_quasimode(scn, (entry.lam, basis[:, i]), eps, eta, delta0,
                            allow_degenerate=True) for i in range(basis.shape[1])]


def orthogonality_deviation(family: list[Quasimode], scn: Scenario) -> float:
    """``max |<w_i, w_j>_H - delta_ij|`` over the family."""
    d = discretize(scn, family[0].epsilon)
    W = np.stack([q.w for q in family], axis=1)
    G = W.T @ (d.H @ W)
    return float(np.abs(G - np.eye(len(family))).max())


@dataclass
class ClusterCount:
    count: int
    conclusive: bool


def cluster_multiplicity(spectrum: Spectrum, lam: float, half_width: float) -> ClusterCount:
    """Eigenvalues inside ``[lam - half_width, lam + half_width]``.

    Inconclusive when the spectrum was truncated below the interval's end.
    """
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    v = spectrum.values
    lo, hi = lam - half_width, lam + half_width
    count = int(np.count_nonzero((v >= lo) & (v <= hi)))
    dim = spectrum.vectors.shape[0]
    conclusive = len(spectrum) >= dim or (len(spectrum) > 0 and v[-1] > hi)
    return ClusterCount(count, bool(conclusive))


@dataclass
class QuasimodeReport:
    m: float
    eta: float
    lam_D: float
    J: int
    records: list[dict]
    fit: RateFit | None
    J_defect: int = 0

    @property
    def beta(self) -> float:
        return beta(self.m, self.eta)


def _window(lam: float, J: int, r: float) -> tuple[float, float]:
    """Interval in lambda for ``|1/lam* - 1/lam| <= 2 J r``."""
    mu, d = 1.0 / lam, 2 * J * r
    return 1.0 / (mu + d), (1.0 / (mu - d) if mu > d else np.inf)


def _count_in(scn: Scenario, eps: float, lo: float, hi: float, lam: float) -> ClusterCount:
    if not np.isfinite(hi):
        return ClusterCount(-1, False)
    spec = _spectrum_covering(scn, eps, max(hi, lam) * 1.05, scn.solver.n_eig)
    return cluster_multiplicity(spec, 0.5 * (lo + hi), 0.5 * (hi - lo))


def quasimode_study(scn: Scenario, eps_list, entry_index: int = 0,
                    eta: float = DEFAULT_ETA, delta0: float | None = None) -> QuasimodeReport:
    """Residual of the flux-carrying quasimode and the eigenvalue clusters it certifies.

    For each eps the whole D-eigenspace (size J) is turned into quasimodes.
    With ``r`` the largest normalized residual and ``theta`` the deviation
    from orthogonality, the window ``|1/lam* - 1/lam| <= 2 J r`` holds at
    least J eigenvalues whenever ``theta < 1/(2J)``.  The same is done for
    the flux-free directions alone (``J_defect`` of them, uncorrected and
    hence exactly orthonormal).  Counts are recorded, not asserted.
    """
    m = scn.coefficients.m
    _check_quasimode_regime(m, eta)
    eps = _check_eps_list(eps_list, minimum=2)
    records = []
    lam_D, J, J_defect = np.nan, 0, 0
    for e in eps:
        family = quasimode_family(scn, entry_index, e, eta, delta0)
        lam_D, J = family[0].lam, len(family)
        lead = family[0]
        if lead.degenerate:
            raise DegenerateQuasimode("D-eigenspace carries no junction flux")
        free = [q for q in family if q.degenerate]
        J_defect = len(free)
        residual = quasimode_residual(lead, scn, e)
        r_all = max(quasimode_residual(q, scn, e, normalized=True) for q in family)
        theta = orthogonality_deviation(family, scn)
        lo, hi = _window(lam_D, J, r_all)
        count = _count_in(scn, e, lo, hi, lam_D)
        rec = {"epsilon": e, "residual": residual, "beta_theoretical": beta(m, eta),
               "max_normalized_residual": r_all, "orthogonality_deviation": theta,
               "window_lo": lo, "window_hi": hi, "cluster_count": count.count,
               "conclusive": count.conclusive and theta < 1.0 / (2 * J)}
        if free:
            r_d = max(quasimode_residual(q, scn, e, normalized=True) for q in free)
            lo_d, hi_d = _window(lam_D, J_defect, r_d)
            count_d = _count_in(scn, e, lo_d, hi_d, lam_D)
            rec.update({"defect_residual": r_d, "defect_window_lo": lo_d,
                        "defect_window_hi": hi_d, "defect_cluster_count": count_d.count,
                        "defect_conclusive": count_d.conclusive and
                        orthogonality_deviation(free, scn) < 1.0 / (2 * J_defect)})
        records.append(rec)
    fit = fit_rate([r["epsilon"] for r in records], [r["residual"] for r in records])
    return QuasimodeReport(m, eta, float(lam_D), J, records, fit, J_defect)
