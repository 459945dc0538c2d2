"""Christoffel-Minkowski type equation ``sigma_k(u_ij + u delta_ij) = f`` on S^n.

``u`` is a support-function-like scalar field and ``W = Hess u + u I`` is taken
in an orthonormal tangent frame.  Solutions are defined up to adding linear
functions ``c . x``; the gauge is fixed by quadrature orthogonality to the
coordinate functions.

On S^2 everything is spectral: fields are band-limited and the residual is the
spherical-harmonic projection of ``sigma_k(W) - f`` onto degrees ``<= L``.  On
S^3 the residual is the pointwise finite-difference residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh, subspace_angles

from . import symfun
from .errors import CompatibilityError, ConvergenceError, InadmissibleError
from .reports import SolveReport
from .sphere import Sphere3Grid, SphereGrid, make_grid

MARGIN_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# pointwise quantities


def covariant_hessian(u, grid) -> np.ndarray:
    """``W_ij = u_ij + u delta_ij`` per node, shape ``grid.shape + (n, n)``."""
    u = np.asarray(u, dtype=float)
    return grid.covariant_hessian(u) + u[..., None, None] * np.eye(grid.n)


def node_eigenvalues(W) -> np.ndarray:
    return np.linalg.eigvalsh(W)[..., ::-1]


def cone_margin_field(W, k: int) -> np.ndarray:
    return np.asarray(symfun.cone_margin(node_eigenvalues(W), k), dtype=float)


def _admissibility_error(lam, margin, k, what="W"):
    idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
    return InadmissibleError(
        f"{what} leaves Gamma_{k} (cone margin {margin[idx]:.3e} at node {idx}, "
        f"eigenvalues {np.round(lam[idx], 6)})",
        where=idx,
        eigenvalues=lam[idx],
    )


def sigma_k_field(W, k: int, *, check: bool = True, floor: float = 0.0) -> np.ndarray:
    lam = node_eigenvalues(W)
    if check:
        margin = np.asarray(symfun.cone_margin(lam, k), dtype=float)
        if not np.all(margin > floor):
            raise _admissibility_error(lam, margin, k)
    return np.asarray(symfun.sigma(lam, k), dtype=float)


def residual(u, f, k: int, grid) -> np.ndarray:
    """Pointwise ``sigma_k(lambda(W)) - f``; raises if some node is not k-admissible."""
    return sigma_k_field(covariant_hessian(u, grid), k) - np.asarray(f, dtype=float)


def coordinate_functions(grid) -> np.ndarray:
    return grid.coords


def _gram(grid):
    X = grid.coords.reshape(grid.n + 1, -1)
    w = grid.weights.ravel()
    return X, w, (X * w) @ X.T


def moments(f, grid) -> np.ndarray:
    """Quadrature moments ``int x_i f``."""
    X, w, _ = _gram(grid)
    return X @ (w * np.ravel(f))


def project_orthogonal(u, grid) -> np.ndarray:
    """Remove the quadrature projection of ``u`` onto span of the coordinate functions."""
    u = np.asarray(u, dtype=float)
    X, w, G = _gram(grid)
    c = np.linalg.solve(G, X @ (w * u.ravel()))
    return u - (c @ X).reshape(u.shape)


def compatibility_check(f, grid):
    """Moment vector ``int x_i f`` and its max norm."""
    m = moments(f, grid)
    return m, float(np.max(np.abs(m)))


def _compat_threshold(f):
    return 1e-8 * max(1.0, float(np.max(np.abs(f))))


# ---------------------------------------------------------------------------
# reports


def _monitors(u, W, f, k, grid) -> dict:
    lam = node_eigenvalues(W)
    grad = grid.gradient(u)
    return dict(
        sup_sigma1=float(np.max(np.sum(lam, axis=-1))),
        u_inf=float(np.max(np.abs(u))),
        sup_grad=float(np.sqrt(np.max(np.sum(grad**2, axis=-1)))),
        inf_f=float(np.min(f)),
        min_margin=float(np.min(symfun.cone_margin(lam, k))),
    )


def _linearization_coeffs(W, k):
    """``S = d sigma_k / dW`` per node: ``Q diag(sigma_{k-1;i}) Q^T``."""
    lam, Q = np.linalg.eigh(W)
    d = np.asarray(symfun.sigma_deleted(lam, k - 1), dtype=float)
    return np.einsum("...ia,...a,...ja->...ij", Q, d, Q)


# ---------------------------------------------------------------------------
# S^2 spectral Newton


class _SpectralProblem:
    def __init__(self, grid: SphereGrid, f, k):
        self.g = grid
        self.f = np.asarray(f, dtype=float)
        self.k = k
        self.deg = grid.packed_degree
        self.free = self.deg != 1

    def W_of(self, C):
        u = self.g.synthesize(C)
        return u, self.g.hessian_from_coeffs(C) + u[..., None, None] * np.eye(2)

    def proj(self, r):
        return self.g.synthesize(self.g.analyze(r))

    def solve_step(self, C, W, R, rtol, maxiter):
        g = self.g
        S = _linearization_coeffs(W, self.k)
        c = float(np.mean(np.trace(S, axis1=-2, axis2=-1))) / 2
        free = self.free

        def apply(v_in):
            v = np.where(free, v_in, 0.0)
            D = g.unpack(v)
            vv = g.synthesize(D)
            H = g.hessian_from_coeffs(D) + vv[..., None, None] * np.eye(2)
            out = g.pack(g.analyze(np.einsum("...ij,...ij->...", S, H)))
            return np.where(free, out, v_in)

        diag = np.where(free, c * (2.0 - self.deg * (self.deg + 1.0)), 1.0)
        n = g.ncoef
        A = spla.LinearOperator((n, n), matvec=apply, dtype=float)
        M = spla.LinearOperator((n, n), matvec=lambda x: x / diag, dtype=float)
        rhs = np.where(free, -g.pack(g.analyze(R)), 0.0)
        count = [0]

        def cb(_):
            count[0] += 1

        dv, info = spla.gmres(
            A, rhs, M=M, rtol=rtol, atol=0.0, restart=80, maxiter=maxiter, callback=cb,
            callback_type="pr_norm",
        )
        if not np.all(np.isfinite(dv)):
            raise ConvergenceError("singular linear solve")
        return g.unpack(np.where(free, dv, 0.0)), info, count[0]


# ---------------------------------------------------------------------------
# S^3 finite-difference Newton


class _FDProblem:
    def __init__(self, grid: Sphere3Grid, f, k):
        self.g = grid
        self.f = np.asarray(f, dtype=float)
        self.k = k

    def W_of(self, u):
        return u, covariant_hessian(u, self.g)

    def proj(self, r):
        return r

    def solve_step(self, u, W, R, rtol, maxiter):
        g = self.g
        n = g.n
        S = _linearization_coeffs(W, self.k)
        J = sp.csr_matrix((g.npts, g.npts))
        for a in range(n):
            for b in range(n):
                op = g.hessian_ops[a][b]
                if a == b:
                    op = op + sp.identity(g.npts)
                J = J + sp.diags(S[..., a, b].ravel()) @ op
        X = g.coords.reshape(n + 1, -1).T
        WX = X * g.weights.ravel()[:, None]
        K = sp.bmat([[J, sp.csr_matrix(X)], [sp.csr_matrix(WX.T), None]]).tocsc()
        rhs = np.concatenate([-R.ravel(), np.zeros(n + 1)])
        sol = spla.spsolve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise ConvergenceError("singular linear solve")
        return sol[: g.npts].reshape(g.shape), 0, 1


def roundoff_floor(grid, u, f) -> float:
    """Attainable residual size: second derivatives amplify unit roundoff by ``~L^4`` (or ``h^-2``)."""
    scale = max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(f))))
    amp = grid.res**4 if isinstance(grid, SphereGrid) else 1.0 / min(np.atleast_1d(grid.h)) ** 2
    return float(np.finfo(float).eps * amp * scale)


def newton_solve(
    f,
    k: int,
    u0,
    grid,
    tol: float = 1e-9,
    max_iter: int = 30,
    *,
    check_compatibility: bool = True,
    margin_floor: float = MARGIN_FLOOR,
    eps: Optional[float] = None,
    raise_on_failure: bool = True,
    linear_rtol: float = 1e-11,
):
    """Damped Newton iteration for ``sigma_k(W_u) = f``.

    Each step solves the linearization ``sum S_ij (v_ij + v delta_ij) = -R``
    with ``v`` orthogonal to the coordinate functions, then halves the step
    until every node keeps cone margin ``>= margin_floor`` and the residual
    decreases.

    Returns ``(u, report)``.  Raises :class:`CompatibilityError` if the moments of
    ``f`` do not vanish (unless ``check_compatibility`` is False),
    :class:`InadmissibleError` if ``u0`` is not admissible and
    :class:`ConvergenceError` on failure (with the report attached) unless
    ``raise_on_failure`` is False.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"f has shape {f.shape}, grid expects {grid.shape}")
    if not (1 <= k <= grid.n):
        raise ValueError(f"k must lie in 1..{grid.n}")
    if np.any(f <= 0):
        raise ValueError("newton_solve needs f > 0 on the grid")
    mom, mnorm = compatibility_check(f, grid)
    if check_compatibility and mnorm > _compat_threshold(f):
        raise CompatibilityError(
            f"right-hand side violates the moment condition: max |int x_i f| = {mnorm:.3e}"
        )
    spectral = isinstance(grid, SphereGrid)
    prob = _SpectralProblem(grid, f, k) if spectral else _FDProblem(grid, f, k)
    u0 = project_orthogonal(np.asarray(u0, dtype=float), grid)
    state = grid.analyze(u0) if spectral else u0
    u, W = prob.W_of(state)
    lam = node_eigenvalues(W)
    margin = np.asarray(symfun.cone_margin(lam, k), dtype=float)
    if np.min(margin) < margin_floor:
        raise _admissibility_error(lam, margin, k, what="initial W")

    def resid(W):
        r = np.asarray(symfun.sigma(node_eigenvalues(W), k), dtype=float) - f
        return r, prob.proj(r)

    R, Rp = resid(W)
    hist = [float(np.max(np.abs(Rp)))]
    floor = roundoff_floor(grid, u, f)
    tol_eff = max(tol, floor)
    lin_total = 0
    msg = "converged"
    it = 0
    while hist[-1] > tol_eff:
        if it >= max_iter:
            msg = f"no convergence in {max_iter} iterations"
            break
        it += 1
        step, info, nlin = prob.solve_step(state, W, Rp if spectral else R, linear_rtol, 40)
        lin_total += nlin
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = state + t * step
            if not spectral:
                trial = project_orthogonal(trial, grid)
            u_t, W_t = prob.W_of(trial)
            lam_t = node_eigenvalues(W_t)
            m_t = float(np.min(symfun.cone_margin(lam_t, k)))
            if m_t >= margin_floor:
                R_t, Rp_t = resid(W_t)
                r_t = float(np.max(np.abs(Rp_t)))
                if r_t < hist[-1] or r_t <= tol_eff:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            msg = "line search failed: no admissible step decreases the residual"
            break
        state, u, W, R, Rp = trial, u_t, W_t, R_t, Rp_t
        hist.append(r_t)
    if spectral:
        u = grid.synthesize(state)
    report = SolveReport(
        converged=hist[-1] <= tol_eff,
        iterations=it,
        residual_history=hist,
        eps=eps,
        moment_norm=mnorm,
        grid_residual=float(np.max(np.abs(R))),
        linear_iterations=lin_total,
        message=msg,
        extras={"roundoff_floor": floor, "tol_effective": tol_eff},
        **_monitors(u, W, f, k, grid),
    )
    if not report.converged and raise_on_failure:
        raise ConvergenceError(
            f"Newton did not converge ({msg}); residual {hist[-1]:.3e}, "
            f"moment norm of f {mnorm:.3e}",
            report=report,
        )
    return u, report


# ---------------------------------------------------------------------------
# degenerate continuation

EXPONENT_RULES = ("C21", "C11")


def regularized_rhs(g, eps: float, k: int, rule: str = "C21") -> np.ndarray:
    """``f_eps`` with ``f_eps^p = g + eps``.

    ``rule='C21'`` uses ``p = 3/(2k-2)``; ``'C11'`` uses ``p = 1/(k-1)``.
    """
    if k < 2:
        raise ValueError("degenerate families need k >= 2")
    p = exponent_p(k, rule)
    return (np.asarray(g, dtype=float) + eps) ** (1.0 / p)


def exponent_p(k: int, rule: str) -> float:
    if rule == "C21":
        return 3.0 / (2 * k - 2)
    if rule == "C11":
        return 1.0 / (k - 1)
    raise ValueError(f"unknown exponent rule {rule!r}; choose from {EXPONENT_RULES}")


def degenerate_sweep(
    g,
    k: int,
    eps_schedule: Sequence[float],
    grid,
    *,
    rule: str = "C21",
    u0=None,
    tol: float = 1e-9,
    max_iter: int = 40,
    return_solutions: bool = False,
):
    """Continuation in ``eps`` for ``sigma_k(W) = f_eps`` with warm starts.

    ``g`` must be even under ``x -> -x`` so every ``f_eps`` satisfies the moment
    condition exactly.  A failed step is retried once through the geometric
    midpoint of the previous and target ``eps``; a persistent failure is recorded
    and the sweep continues from the last good solution.
    """
    g = np.asarray(g, dtype=float)
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if np.any(g < 0):
        raise ValueError("g must be nonnegative")
    odd = float(np.max(np.abs(g - grid.antipodal(g))))
    if odd > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
        raise CompatibilityError(f"g is not antipodally even (defect {odd:.3e})")
    u = np.ones(grid.shape) if u0 is None else np.asarray(u0, dtype=float)
    reports, sols = [], []
    prev = None

    def attempt(e, start):
        return newton_solve(
            regularized_rhs(g, e, k, rule), k, start, grid, tol=tol, max_iter=max_iter, eps=e,
        )

    for e in eps_schedule:
        try:
            u_new, rep = attempt(e, u)
        except (ConvergenceError, InadmissibleError) as exc:
            rep = getattr(exc, "report", None)
            u_new = None
            if prev is not None:
                mid = float(np.sqrt(prev * e))
                try:
                    u_mid, _ = attempt(mid, u)
                    u_new, rep = attempt(e, u_mid)
                except (ConvergenceError, InadmissibleError) as exc2:
                    rep = getattr(exc2, "report", None) or rep
            if u_new is None:
                if rep is None:
                    rep = SolveReport(False, 0, [float("nan")], eps=e, message=str(exc))
                rep.eps = e
                rep.converged = False
                reports.append(rep)
                sols.append(None)
                continue
        reports.append(rep)
        sols.append(u_new)
        u, prev = u_new, e
    return (reports, sols) if return_solutions else reports


# ---------------------------------------------------------------------------
# checks


@dataclass
class SpectrumReport:
    n: int
    eigenvalues: np.ndarray
    target: float
    multiplicity: int
    max_deviation: float
    kernel_dim: int
    subspace_angle: float
    symmetry_defect: float
    passed: bool = False
    notes: list = field(default_factory=list)


def _s2_laplacian_matrix(grid: SphereGrid):
    """Laplacian in the real orthonormal harmonic basis, assembled through grid evaluations."""
    nc = grid.ncoef
    cols = []
    E = np.eye(nc)
    for start in range(0, nc, 256):
        block = np.stack([grid.unpack(E[j]) for j in range(start, min(nc, start + 256))])
        vals = grid.synthesize(block)
        coef = grid.analyze(grid.laplacian(vals))
        cols.append(np.stack([grid.pack(c) for c in coef], axis=1))
    A = np.concatenate(cols, axis=1)
    # packed entries with m > 0 carry norm sqrt(2) in L2(S^2)
    mm, _ = grid._pack_index
    nrm = np.concatenate([np.where(mm > 0, np.sqrt(2.0), 1.0), np.full(int(np.sum(mm > 0)), np.sqrt(2.0))])
    return (A * nrm[:, None]) / nrm[None, :], nrm


def spectrum_check(grid, tol: Optional[float] = None) -> SpectrumReport:
    """Eigenvalue ``-n`` of the discrete Laplace-Beltrami operator with multiplicity ``n+1``.

    S^2: the operator is assembled in the harmonic basis through grid transforms
    and diagonalized densely; eigenvectors at ``-2`` are compared with the
    coordinate functions.  S^3: exact separable eigen-decomposition of the
    finite-volume operator.
    """
    n = grid.n
    if isinstance(grid, SphereGrid):
        tol = 1e-8 if tol is None else tol
        A, nrm = _s2_laplacian_matrix(grid)
        sym = float(np.max(np.abs(A - A.T)))
        vals, vecs = eigh(0.5 * (A + A.T))
        vals = -vals[::-1]
        vecs = vecs[:, ::-1]
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        fields = np.stack([grid.synthesize(grid.unpack(v / nrm)) for v in vecs[:, : n + 2].T])
    else:
        tol = 1e-2 if tol is None else tol
        vals, fields = grid.laplacian_spectrum(max(n + 3, 6))
        K = grid.stiffness
        sym = float(abs(K - K.T).max())
    near = np.abs(vals - n) <= tol
    mult = int(np.sum(near))
    kernel = int(np.sum(np.abs(vals) <= 1e-8 * max(1.0, float(np.max(np.abs(vals))))))
    # the n+1 eigenvalues following the constants
    sel = np.arange(1, n + 2)
    w = np.sqrt(grid.weights.ravel())
    X = (grid.coords.reshape(n + 1, -1) * w).T
    V = (fields[sel].reshape(sel.size, -1) * w).T
    angle = float(np.max(subspace_angles(X, V)))
    dev = float(np.max(np.abs(vals[sel] - n)))
    passed = mult == n + 1 and dev <= tol and kernel == 1 and vals[0] > -1e-8
    return SpectrumReport(
        n=n,
        eigenvalues=-vals[: n + 3],
        target=-float(n),
        multiplicity=mult,
        max_deviation=dev,
        kernel_dim=kernel,
        subspace_angle=angle,
        symmetry_defect=sym,
        passed=bool(passed),
    )


def trace_identity_check(u, grid) -> float:
    """Relative defect between two evaluations of ``Lap(Lap u + n u)``.

    First: the trace ``H = tr W`` from the covariant Hessian, then
    ``sum_i Lap(W_ii)``.  Second (S^2): directly in harmonic space as
    ``-l(l+1) (n - l(l+1)) u_lm``; on S^3 the grid Laplacian of ``Lap u + n u``.
    """
    u = np.asarray(u, dtype=float)
    n = grid.n
    W = covariant_hessian(u, grid)
    lhs = sum(grid.laplacian(W[..., i, i]) for i in range(n))
    if isinstance(grid, SphereGrid):
        C = grid.analyze(u)
        ll = grid.ell * (grid.ell + 1)
        rhs = grid.synthesize(-ll * (n - ll) * C)
    else:
        rhs = grid.laplacian(grid.laplacian(u) + n * u)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    return float(np.max(np.abs(lhs - rhs)) / scale)


def constant_rhs(grid, k: int) -> np.ndarray:
    return np.full(grid.shape, float(comb(grid.n, k)))


__all__ = [
    "MARGIN_FLOOR",
    "SolveReport",
    "SpectrumReport",
    "compatibility_check",
    "constant_rhs",
    "coordinate_functions",
    "covariant_hessian",
    "degenerate_sweep",
    "exponent_p",
    "make_grid",
    "moments",
    "newton_solve",
    "project_orthogonal",
    "regularized_rhs",
    "residual",
    "spectrum_check",
    "trace_identity_check",
]
