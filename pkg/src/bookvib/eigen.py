"""Linear-algebra kernels: SPD solves, symmetric pencils, Schur complements on gamma.

Sparse factorizations use SuperLU in symmetric mode with diagonal pivoting
only, so for a symmetric matrix the factorization is ``P A P^T = L D L^T``
in disguise and the signs of ``diag(U)`` give the inertia.  That is how
positive definiteness is checked and how negative eigenvalues of indefinite
interior blocks are counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ConvergenceFailure, InteriorResonance, NotSPD, NumericalError

logger = logging.getLogger(__name__)

LINEAR_TOL = 1e-10
GROUP_TOL = 1e-6
RESONANCE_TOL = 1e-12
DENSE_THRESHOLD = 600


class SymmetricFactor:
    """Sparse LDL^T-like factorization of a symmetric matrix.

    Raises :class:`InteriorResonance` when the matrix is (numerically) singular;
    ``lam`` is only used to label that error.
    """

    def __init__(self, A, lam: float | None = None, resonance_tol: float = RESONANCE_TOL):
        A = sp.csc_matrix(A)
        self.shape = A.shape
        self._A = A
        if A.shape[0] == 0:
            self._lu = None
            self.pivots = np.empty(0)
            self.symmetric_pivoting = True
            return
        try:
            self._lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise InteriorResonance(lam, f"singular block at lambda={lam!r}: {exc}") from exc
        self.pivots = self._lu.U.diagonal()
        self.symmetric_pivoting = bool(np.array_equal(self._lu.perm_r, self._lu.perm_c))
        mags = np.abs(self.pivots)
        if mags.min() <= resonance_tol * mags.max():
            raise InteriorResonance(lam, f"near-singular block at lambda={lam!r} "
                                         f"(pivot ratio {mags.min() / mags.max():.3e})")

    @property
    def negative_count(self) -> int | None:
        """Number of negative eigenvalues, or ``None`` if off-diagonal pivoting occurred."""
        if not self.symmetric_pivoting:
            return None
        return int(np.count_nonzero(self.pivots < 0))

    def solve(self, b):
        if self._lu is None:
            return np.zeros_like(b, dtype=float)
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)


class SPDFactor(SymmetricFactor):
    """Factorization that also certifies positive definiteness."""

    def __init__(self, A, linear_tol: float = LINEAR_TOL):
        try:
            super().__init__(A, resonance_tol=0.0)
        except InteriorResonance as exc:
            raise NotSPD("matrix is singular") from exc
        if not self.symmetric_pivoting or np.any(self.pivots <= 0):
            raise NotSPD("matrix is not positive definite")
        self.linear_tol = linear_tol

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = super().solve(b)
        # a couple of refinement steps keep the residual contract on stiff meshes
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return x
        for _ in range(3):
            r = b - self._A @ x
            if np.linalg.norm(r) <= self.linear_tol * bnorm:
                break
            x = x + super().solve(r)
        return x


def solve_spd(A, b, linear_tol: float = LINEAR_TOL) -> np.ndarray:
    """Solve ``A x = b`` for SPD ``A`` with relative residual <= ``linear_tol``."""
    factor = SPDFactor(A, linear_tol)
    x = factor.solve(b)
    b = np.asarray(b, dtype=float)
    res = np.linalg.norm(b - factor._A @ x)
    if res > linear_tol * max(np.linalg.norm(b), np.finfo(float).tiny):
        raise NumericalError(f"linear solve residual {res:.3e} above tolerance")
    return x


def group_eigenvalues(values, group_tol: float = GROUP_TOL) -> np.ndarray:
    """Group ids for ascending ``values``: neighbours closer than ``group_tol`` (relative) merge."""
    values = np.asarray(values, dtype=float)
    ids = np.zeros(values.size, dtype=int)
    for i in range(1, values.size):
        scale = max(abs(values[i]), abs(values[i - 1]), np.finfo(float).tiny)
        same = abs(values[i] - values[i - 1]) <= group_tol * scale
        ids[i] = ids[i - 1] if same else ids[i - 1] + 1
    return ids


def _fix_signs(X: np.ndarray) -> np.ndarray:
    if X.size == 0:
        return X
    idx = np.argmax(np.abs(X), axis=0)
    signs = np.sign(X[idx, np.arange(X.shape[1])])
    signs[signs == 0] = 1.0
    return X * signs


@dataclass
class Spectrum:
    """Ascending eigenvalues with mass-orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    group_ids: np.ndarray
    converged: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.values.size)

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.group_ids == g) for g in np.unique(self.group_ids)]

    def gamma_trace_norms(self, gamma_dofs) -> np.ndarray:
        """``||x_gamma|| / ||x||`` per eigenvector (Euclidean norms)."""
        X = self.vectors
        return np.linalg.norm(X[gamma_dofs], axis=0) / np.linalg.norm(X, axis=0)


def _residuals(A, M, values, X) -> np.ndarray:
    AX = A @ X
    R = AX - (M @ X) * values
    denom = np.linalg.norm(AX, axis=0)
    denom[denom == 0] = 1.0
    return np.linalg.norm(R, axis=0) / denom


def _rayleigh_ritz(A, M, X):
    Ar = X.T @ (A @ X)
    Mr = X.T @ (M @ X)
    Ar = 0.5 * (Ar + Ar.T)
    Mr = 0.5 * (Mr + Mr.T)
    vals, Q = la.eigh(Ar, Mr)
    return vals, X @ Q


def _make_spectrum(A, M, vals, X, group_tol, converged=True, **meta) -> Spectrum:
    order = np.argsort(vals, kind="stable")
    vals, X = np.asarray(vals)[order], X[:, order]
    X = _fix_signs(X)
    return Spectrum(values=vals, vectors=X, residuals=_residuals(A, M, vals, X),
                    group_ids=group_eigenvalues(vals, group_tol), converged=converged, meta=meta)


def solve_gevp(A, M, n_eig: int, tol: float = 1e-9, max_iter: int | None = None,
               seed: int = 42, group_tol: float = GROUP_TOL,
               dense_threshold: int = DENSE_THRESHOLD) -> Spectrum:
    """The ``n_eig`` smallest eigenpairs of ``A x = lam M x`` (A, M SPD).

    Small problems go through dense LAPACK; larger ones through ARPACK in
    shift-invert mode at shift 0 with a seeded starting vector, followed by
    a Rayleigh-Ritz polish on the returned block.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    n = A.shape[0]
    if not 1 <= n_eig <= n:
        raise ValueError(f"n_eig must lie in [1, {n}], got {n_eig}")
    factor = SPDFactor(A)

    if n <= dense_threshold or n_eig >= n - 1:
        try:
            vals, X = la.eigh(A.toarray(), M.toarray(), subset_by_index=[0, n_eig - 1])
        except la.LinAlgError as exc:
            raise NotSPD(f"mass matrix not positive definite: {exc}") from exc
        return _make_spectrum(A, M, vals, X, group_tol, method="dense")

    rng = np.random.default_rng(seed)
    guard = min(n - 1, n_eig + max(4, n_eig // 4)) - n_eig
    vals, X = _arpack(A, M, factor, n_eig + guard, tol, max_iter, rng, group_tol)
    # Lanczos can miss copies of multiple eigenvalues; Sylvester's law of
    # inertia tells how many are missing below the cut, deflation finds them.
    for _ in range(8):
        sigma = vals[n_eig - 1] * (1.0 + 10.0 * group_tol)
        missing = _missing_below(A, M, sigma, vals)
        if missing <= 0:
            break
        logger.debug("solve_gevp: %d eigenpair(s) missed below %.6g, deflating", missing, sigma)
        k_extra = min(n - vals.size - 1, missing + 2)
        if k_extra < 1:
            break
        _, Y = _arpack(A, M, factor, k_extra, tol, max_iter, rng, group_tol, deflate=(vals, X))
        vals, X = _rayleigh_ritz(A, M, np.hstack([X, Y]))
    vals, X = vals[:n_eig], X[:, :n_eig]
    spec = _make_spectrum(A, M, vals, X, group_tol, method="arpack")
    logger.debug("solve_gevp n=%d k=%d max residual %.2e", n, n_eig, spec.residuals.max())
    return spec


def _arpack(A, M, factor, k, tol, max_iter, rng, group_tol, deflate=None):
    """Shift-invert Lanczos at 0; ``deflate=(vals, X)`` removes known pairs (Wielandt)."""
    n = A.shape[0]
    if deflate is None:
        matvec = factor.solve
    else:
        d_vals, d_X = deflate
        def matvec(b):
            return factor.solve(b) - d_X @ ((d_X.T @ b) / d_vals)
    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    ncv = min(n, max(2 * k + 1, 24))
    try:
        vals, X = eigsh(A, k=k, M=M, sigma=0.0, which="LM", OPinv=op, tol=tol,
                        maxiter=max_iter, v0=rng.standard_normal(n), ncv=ncv)
    except ArpackNoConvergence as exc:
        partial = None
        if exc.eigenvalues is not None and len(exc.eigenvalues):
            partial = _make_spectrum(A, M, exc.eigenvalues, exc.eigenvectors, group_tol,
                                     converged=False, method="arpack")
        raise ConvergenceFailure(f"ARPACK did not converge for {k} eigenpairs",
                                 partial) from exc
    return _rayleigh_ritz(A, M, X)


def _missing_below(A, M, sigma: float, vals) -> int:
    """Eigenvalues below ``sigma`` not present in ``vals`` (0 if inertia is unavailable)."""
    try:
        neg = SymmetricFactor((A - sigma * M).tocsc(), resonance_tol=0.0).negative_count
    except InteriorResonance:
        return 0
    if neg is None:
        return 0
    return neg - int(np.count_nonzero(np.asarray(vals) < sigma))


@dataclass(frozen=True)
class Partition:
    gamma_dofs: np.ndarray
    interior_dofs: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma_dofs, dtype=int)
        i = np.asarray(self.interior_dofs, dtype=int)
        object.__setattr__(self, "gamma_dofs", g)
        object.__setattr__(self, "interior_dofs", i)
        if np.intersect1d(g, i).size:
            raise ValueError("gamma and interior index sets overlap")

    @classmethod
    def from_gamma(cls, n: int, gamma_dofs) -> "Partition":
        g = np.asarray(gamma_dofs, dtype=int)
        return cls(g, np.setdiff1d(np.arange(n), g))

    def check_covers(self, n: int) -> None:
        both = np.union1d(self.gamma_dofs, self.interior_dofs)
        if both.size != n or self.gamma_dofs.size + self.interior_dofs.size != n:
            raise ValueError("partition does not cover all DoFs exactly once")


@dataclass
class SchurResult:
    S: np.ndarray
    interior_negatives: int | None
    factor: SymmetricFactor


def schur_complement(P, part: Partition, lam: float | None = None) -> SchurResult:
    """``S = P_gg - P_gI P_II^{-1} P_Ig`` plus the inertia of ``P_II``."""
    P = sp.csr_matrix(P)
    g, i = part.gamma_dofs, part.interior_dofs
    P_gg = P[g][:, g].toarray()
    if i.size == 0:
        return SchurResult(0.5 * (P_gg + P_gg.T), 0, SymmetricFactor(sp.csc_matrix((0, 0))))
    P_II = P[i][:, i]
    P_Ig = P[i][:, g].toarray()
    factor = SymmetricFactor(P_II, lam=lam)
    Y = factor.solve(P_Ig)
    S = P_gg - P_Ig.T @ Y
    return SchurResult(0.5 * (S + S.T), factor.negative_count, factor)


def schur_on_gamma(P, part: Partition, lam: float | None = None) -> np.ndarray:
    """Dense Schur complement of ``P`` onto the gamma unknowns.

    With ``P = A - lam M`` this is the discrete (mass-weighted) operator
    ``-Theta(lam)`` of the junction problem.
    """
    return schur_complement(P, part, lam).S


def dense_sym_eig(S) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of a dense symmetric matrix, ascending."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return w, Q


def solve_schur_gevp(A, M_gamma, part: Partition, n_eig: int | None = None,
                     group_tol: float = GROUP_TOL) -> Spectrum:
    """Pencil ``A x = lam M_gamma x`` with mass supported on gamma only.

    Reduced to ``S(0) zeta = lam (M_gamma)_gg zeta``; eigenvectors are
    extended into the interior harmonically, ``x_I = -A_II^{-1} A_Ig zeta``.
    """
    A = sp.csr_matrix(A)
    M_gamma = sp.csr_matrix(M_gamma)
    g, i = part.gamma_dofs, part.interior_dofs
    res = schur_complement(A, part, lam=0.0)
    M_gg = M_gamma[g][:, g].toarray()
    vals, Z = la.eigh(res.S, 0.5 * (M_gg + M_gg.T))
    if n_eig is not None:
        vals, Z = vals[:n_eig], Z[:, :n_eig]
    X = np.zeros((A.shape[0], vals.size))
    X[g] = Z
    if i.size:
        X[i] = -res.factor.solve(A[i][:, g] @ Z)
    return _make_spectrum(A, M_gamma, vals, X, group_tol, method="schur")


def compact_operator_eigenvalues(H, M) -> np.ndarray:
    """Eigenvalues of the form operator ``H^{-1} M`` in the H-inner product, descending.

    Dense; meant for small meshes where the reciprocal relation with the
    pencil ``H x = lam M x`` is checked.
    """
    H = H.toarray() if sp.issparse(H) else np.asarray(H)
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    L = la.cholesky(H, lower=True)
    C = la.solve_triangular(L, la.solve_triangular(L, M, lower=True).T, lower=True)
    return np.sort(np.linalg.eigvalsh(0.5 * (C + C.T)))[::-1]
