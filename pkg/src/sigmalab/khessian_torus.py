"""Complex k-Hessian equation ``sigma_k(I + (u_{j kbar})) = f`` on the flat torus.

The torus is ``[0, 2 pi)^(2n)`` with the flat Kähler form, so ``W = I + u_{j kbar}``
and all curvature terms vanish (``gamma = 0``).  Solutions are normalized to
mean zero and ``f`` must satisfy ``mean f = C(n, k)``; it is rescaled
multiplicatively when needed.

Also here: the barrier functions used in the second-order estimate and a
pointwise probe of the lower bound for the quantity ``J`` built from
``f^(1/k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, log
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import symfun
from .degprobe import ProbeDomain, ProbeResult, ScalarField, complex_defect_field
from .errors import CompatibilityError, ConvergenceError, InadmissibleError
from .reports import SolveReport
from .torusgrid import TorusGrid

MARGIN_FLOOR = 1e-10
RESCALE_TOL = 1e-10

__all__ = [
    "BarrierParams",
    "TorusGrid",
    "barrier_check",
    "complex_hessian",
    "degenerate_sweep",
    "estimate_monitor",
    "j_lower_bound_probe",
    "newton_solve",
    "normalize",
    "residual",
]


def complex_hessian(u, grid: TorusGrid) -> np.ndarray:
    """``W = I + (u_{j kbar})`` per node, Hermitian ``n x n``."""
    return np.eye(grid.n_c) + grid.complex_hessian(np.asarray(u, dtype=float))


def node_eigenvalues(W) -> np.ndarray:
    return np.linalg.eigvalsh(W)[..., ::-1]


def sigma_k_field(W, k: int, *, check: bool = True) -> np.ndarray:
    lam = node_eigenvalues(W)
    if check:
        margin = np.asarray(symfun.cone_margin(lam, k), dtype=float)
        if not np.all(margin > 0):
            raise _admissibility_error(lam, margin, k)
    return np.asarray(symfun.sigma(lam, k), dtype=float)


def _admissibility_error(lam, margin, k, what="W"):
    idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
    return InadmissibleError(
        f"{what} leaves Gamma_{k} (cone margin {margin[idx]:.3e} at node {idx}, "
        f"eigenvalues {np.round(lam[idx], 6)})",
        where=idx,
        eigenvalues=lam[idx],
    )


def residual(u, f, k: int, grid: TorusGrid) -> np.ndarray:
    return sigma_k_field(complex_hessian(u, grid), k) - np.asarray(f, dtype=float)


def normalize(u) -> np.ndarray:
    """Subtract the mean (the torus volume form is uniform on the grid)."""
    u = np.asarray(u, dtype=float)
    return u - u.mean()


def estimate_monitor(u, grid: TorusGrid):
    """``(sup Lap u, sup |grad u|^2, sup Lap u / (sup |grad u|^2 + 1))`` with real derivatives."""
    u = np.asarray(u, dtype=float)
    lap = float(np.max(grid.laplacian(u)))
    g2 = float(np.max(np.sum(grid.gradient(u) ** 2, axis=-1)))
    return lap, g2, lap / (g2 + 1.0)


def _linearization_coeffs(W, k):
    lam, Q = np.linalg.eigh(W)
    d = np.asarray(symfun.sigma_deleted(lam, k - 1), dtype=float)
    return np.einsum("...ia,...a,...ja->...ij", Q, d, np.conj(Q))


def _apply_linearization(grid: TorusGrid, S, v):
    """``sum_{jk} S_kj v_{j kbar}`` (real)."""
    Hv = grid.complex_hessian(v)
    return np.einsum("...kj,...jk->...", S, Hv).real


def _rescale(f, n, k, rescale):
    f = np.asarray(f, dtype=float)
    target = comb(n, k)
    m = float(np.mean(f))
    c = target / m
    if abs(c - 1) > RESCALE_TOL:
        if not rescale:
            raise CompatibilityError(
                f"mean of f is {m:.12g}, expected C({n},{k}) = {target} (relative gap {abs(c - 1):.2e})"
            )
        if abs(np.log(c)) > np.log(2.0):
            raise CompatibilityError(
                f"mean of f is {m:.6g}; rescaling by {c:.3g} to reach C({n},{k}) is beyond tolerance"
            )
        return f * c, c
    return f, 1.0


def newton_solve(
    f,
    k: int,
    u0,
    grid: TorusGrid,
    tol: float = 1e-9,
    max_iter: int = 30,
    *,
    rescale: bool = True,
    margin_floor: float = MARGIN_FLOOR,
    eps: Optional[float] = None,
    raise_on_failure: bool = True,
    linear_rtol: float = 1e-11,
):
    """Damped Newton for ``sigma_k(I + u_{j kbar}) = f`` with mean-zero ``u``.

    Linear steps use GMRES preconditioned by the inverse of ``c Lap / 4`` in
    Fourier space (``c`` the mean of ``tr S / n``).  Steps are halved until
    every node keeps cone margin ``>= margin_floor`` and the residual decreases.
    ``f`` is rescaled so that ``mean f = C(n, k)``; the factor is recorded in
    ``report.extras['c_eps']``.  Returns ``(u, report)``.
    """
    n = grid.n_c
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in 1..{n}")
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"f has shape {f.shape}, grid expects {grid.shape}")
    if np.any(f <= 0):
        raise ValueError("newton_solve needs f > 0 on the grid")
    f, c = _rescale(f, n, k, rescale)
    u = normalize(u0)
    W = complex_hessian(u, grid)
    lam = node_eigenvalues(W)
    margin = np.asarray(symfun.cone_margin(lam, k), dtype=float)
    if np.min(margin) < margin_floor:
        raise _admissibility_error(lam, margin, k, what="initial W")
    R = np.asarray(symfun.sigma(lam, k), dtype=float) - f
    hist = [float(np.max(np.abs(R)))]
    k2 = sum(grid._symbol(a, 2) for a in range(grid.d))  # -|xi|^2
    N = grid.npts
    lin_total = 0
    it = 0
    msg = "converged"
    while hist[-1] > tol:
        if it >= max_iter:
            msg = f"no convergence in {max_iter} iterations"
            break
        it += 1
        S = _linearization_coeffs(W, k)
        cc = float(np.mean(np.trace(S, axis1=-2, axis2=-1).real)) / n
        sym = cc * k2 / 4.0
        sym = np.where(sym == 0, 1.0, sym)

        def apply(x):
            v = x.reshape(grid.shape)
            Jv = _apply_linearization(grid, S, v)
            return (Jv - Jv.mean() + v.mean()).ravel()

        def precond(x):
            return grid.ifft(grid.fft(x.reshape(grid.shape)) / sym).ravel()

        A = spla.LinearOperator((N, N), matvec=apply, dtype=float)
        M = spla.LinearOperator((N, N), matvec=precond, dtype=float)
        count = [0]
        dv, info = spla.gmres(
            A, -(R - R.mean()).ravel(), M=M, rtol=linear_rtol, atol=0.0, restart=60, maxiter=20,
            callback=lambda _: count.__setitem__(0, count[0] + 1), callback_type="pr_norm",
        )
        lin_total += count[0]
        if not np.all(np.isfinite(dv)):
            raise ConvergenceError("singular linear solve")
        dv = normalize(dv.reshape(grid.shape))
        t = 1.0
        accepted = False
        for _ in range(40):
            u_t = u + t * dv
            W_t = complex_hessian(u_t, grid)
            lam_t = node_eigenvalues(W_t)
            if float(np.min(symfun.cone_margin(lam_t, k))) >= margin_floor:
                R_t = np.asarray(symfun.sigma(lam_t, k), dtype=float) - f
                r_t = float(np.max(np.abs(R_t)))
                if r_t < hist[-1] or r_t <= tol:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            msg = "line search failed: no admissible step decreases the residual"
            break
        u, W, R = u_t, W_t, R_t
        hist.append(r_t)
    lap, g2, ratio = estimate_monitor(u, grid)
    lam = node_eigenvalues(W)
    report = SolveReport(
        converged=hist[-1] <= tol,
        iterations=it,
        residual_history=hist,
        sup_sigma1=float(np.max(np.sum(lam, axis=-1))),
        u_inf=float(np.max(np.abs(u))),
        sup_grad=float(np.sqrt(g2)),
        inf_f=float(np.min(f)),
        min_margin=float(np.min(symfun.cone_margin(lam, k))),
        eps=eps,
        grid_residual=hist[-1],
        linear_iterations=lin_total,
        message=msg,
        extras={"c_eps": c, "sup_lap": lap, "sup_grad2": g2, "ratio": ratio, "mean_residual": float(R.mean())},
    )
    if not report.converged and raise_on_failure:
        raise ConvergenceError(f"Newton did not converge ({msg}); residual {hist[-1]:.3e}", report=report)
    return u, report


def regularized_rhs(g, eps: float, k: int, n: int, rule: str = "C21"):
    """``c_eps (g + eps)^(1/p)`` with ``mean = C(n, k)``; returns ``(f, c_eps)``."""
    from .cm_solver import exponent_p

    base = (np.asarray(g, dtype=float) + eps) ** (1.0 / exponent_p(k, rule))
    c = comb(n, k) / float(np.mean(base))
    return c * base, c


def degenerate_sweep(
    g,
    k: int,
    eps_schedule: Sequence[float],
    grid: TorusGrid,
    *,
    rule: str = "C21",
    u0=None,
    tol: float = 1e-9,
    max_iter: int = 40,
    return_solutions: bool = False,
):
    """Warm-started continuation in ``eps`` for ``sigma_k(W) = c_eps (g + eps)^(1/p)``.

    Reports carry ``c_eps`` and the :func:`estimate_monitor` triple in
    ``extras``.  A failed step is retried once via the geometric midpoint.
    """
    g = np.asarray(g, dtype=float)
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if np.any(g < 0):
        raise ValueError("g must be nonnegative")
    u = np.zeros(grid.shape) if u0 is None else np.asarray(u0, dtype=float)
    reports, sols = [], []
    prev = None

    def attempt(e, start):
        f, c = regularized_rhs(g, e, k, grid.n_c, rule)
        u_new, rep = newton_solve(f, k, start, grid, tol=tol, max_iter=max_iter, eps=e)
        rep.extras["c_eps"] = c
        return u_new, rep

    for e in eps_schedule:
        try:
            u_new, rep = attempt(e, u)
        except (ConvergenceError, InadmissibleError) as exc:
            rep = getattr(exc, "report", None)
            u_new = None
            if prev is not None:
                try:
                    u_mid, _ = attempt(float(np.sqrt(prev * e)), u)
                    u_new, rep = attempt(e, u_mid)
                except (ConvergenceError, InadmissibleError) as exc2:
                    rep = getattr(exc2, "report", None) or rep
            if u_new is None:
                if rep is None:
                    rep = SolveReport(False, 0, [float("nan")], message=str(exc))
                rep.eps, rep.converged = e, False
                reports.append(rep)
                sols.append(None)
                continue
        reports.append(rep)
        sols.append(u_new)
        u, prev = u_new, e
    return (reports, sols) if return_solutions else reports


# ---------------------------------------------------------------------------
# barrier functions


@dataclass(frozen=True)
class BarrierParams:
    """``alpha = sup|u| + 1``, ``beta = sup|grad u|^2 + 1``, curvature bound ``gamma``."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.alpha >= 1 and self.beta >= 1 and self.gamma >= 0):
            raise ValueError("need alpha >= 1, beta >= 1, gamma >= 0")

    @property
    def delta(self) -> float:
        return 1.0 / (6 * self.alpha * (2 * self.gamma + 1))

    @classmethod
    def from_solution(cls, u, grid: TorusGrid, gamma: float = 0.0) -> "BarrierParams":
        u = np.asarray(u, dtype=float)
        g2 = float(np.max(np.sum(grid.gradient(u) ** 2, axis=-1)))
        return cls(float(np.max(np.abs(u))) + 1.0, g2 + 1.0, gamma)

    # phi(t) = -1/2 log(1 - t/(2 beta)) on [0, beta]
    def phi(self, t):
        return -0.5 * np.log1p(-np.asarray(t, dtype=float) / (2 * self.beta))

    def dphi(self, t):
        return 0.5 / (2 * self.beta - np.asarray(t, dtype=float))

    def d2phi(self, t):
        return 0.5 / (2 * self.beta - np.asarray(t, dtype=float)) ** 2

    # psi(t) = -A log(1 + t/(2 alpha)), A = 3 alpha (2 gamma + 1), on [-(alpha-1), alpha-1]
    @property
    def _A(self) -> float:
        return 3 * self.alpha * (2 * self.gamma + 1)

    def psi(self, t):
        return -self._A * np.log1p(np.asarray(t, dtype=float) / (2 * self.alpha))

    def dpsi(self, t):
        return -self._A / (2 * self.alpha + np.asarray(t, dtype=float))

    def d2psi(self, t):
        return self._A / (2 * self.alpha + np.asarray(t, dtype=float)) ** 2


def barrier_check(params: BarrierParams, m: int = 4001) -> dict:
    """Defects (amount of violation, 0 when satisfied) of the barrier inequalities.

    Keys: ``phi_bound``, ``dphi_bounds``, ``phi_convexity``, ``psi_bound``,
    ``dpsi_bounds``, ``psi_convexity``, ``combined``; plus ``phi_equality`` and
    ``psi_equality`` (relative size of ``phi'' - 2 phi'^2`` and
    ``psi'' - 2 delta psi'^2``, both identically zero) and ``combined_slack``.
    """
    p = params
    tp = np.linspace(0.0, p.beta, m)
    ts = np.linspace(-(p.alpha - 1), p.alpha - 1, m)
    gam = p.gamma
    A = p._A
    phi, d1, d2 = p.phi(tp), p.dphi(tp), p.d2phi(tp)
    psi, s1, s2 = p.psi(ts), p.dpsi(ts), p.d2psi(ts)

    def viol(x, scale=1.0):
        return float(max(0.0, np.max(x)) / scale)

    out = {
        "phi_bound": viol(np.abs(phi) - log(2.0)),
        "dphi_bounds": max(
            viol(1 / (4 * p.beta) - d1, 1 / p.beta), viol(d1 - 1 / (2 * p.beta), 1 / p.beta)
        ),
        "phi_convexity": viol(2 * d1**2 - d2, np.max(d2)),
        "psi_bound": viol(np.abs(psi) - A * log(2.0), A),
        "dpsi_bounds": max(
            viol((2 * gam + 1) - (-s1), 2 * gam + 1), viol(-s1 - 3 * (2 * gam + 1), 2 * gam + 1)
        ),
        "psi_convexity": viol(2 * p.delta * s1**2 - s2, np.max(s2)),
    }
    comb_min = float(np.min(-s1)) + float(np.min(d1)) - 2 * gam
    out["combined"] = max(0.0, 1.0 - comb_min)
    out["combined_slack"] = comb_min - 1.0
    out["phi_equality"] = float(np.max(np.abs(d2 - 2 * d1**2)) / np.max(d2))
    out["psi_equality"] = float(np.max(np.abs(s2 - 2 * p.delta * s1**2)) / np.max(s2))
    return out


INEQUALITY_KEYS = (
    "phi_bound",
    "dphi_bounds",
    "phi_convexity",
    "psi_bound",
    "dpsi_bounds",
    "psi_convexity",
    "combined",
)


# ---------------------------------------------------------------------------
# J probe


def j_lower_bound_probe(
    ftilde: ScalarField,
    k: int,
    params: Optional[BarrierParams] = None,
    u11_values=None,
    *,
    allow_small_k: bool = False,
) -> ProbeResult:
    """Smallest ``K3`` with ``J >= -K3 f^(-1/(k(k-1))) + (psi' - 2 phi' - gamma) f^(1/k)``.

    ``f = ftilde^((2k-2)/3)``.  With ``v = f^(1/k) = ftilde^q``, ``q = (2k-2)/(3k)``:
    ``J - (psi' - 2 phi' - gamma) v = v_{1 1bar} / (1 + u_{1 1bar}) - |grad v|``,
    where ``v_{e ebar} = q ftilde^(q-1) (ftilde_{e ebar} - alpha |ftilde_e|^2 / ftilde)``
    and ``alpha = (k+2)/(3k)``.  The worst unit direction is taken, and without
    ``u11_values`` the worst factor ``1/(1 + u_{1 1bar})`` in ``(0, 1]``: the
    Hessian term is kept in full when negative and dropped when positive.
    ``|grad v|`` uses the Hermitian norm ``(sum_j |v_{z_j}|^2)^(1/2)``.
    """
    if k < 5 and not allow_small_k:
        raise ValueError("the lower bound is stated for k >= 5 (alpha = (k+2)/(3k) < 1/2)")
    if ftilde.domain.kind != "torus":
        raise ValueError("j_lower_bound_probe needs a torus domain")
    g: TorusGrid = ftilde.domain.grid
    ft = ftilde.values
    if not np.all(ft > 0):
        raise ValueError("ftilde must be positive")
    q = (2 * k - 2) / (3.0 * k)
    alpha = (k + 2) / (3.0 * k)
    D = complex_defect_field(ftilde, alpha)  # max_e (alpha|f_e|^2/f - f_{e ebar}) / f^(1/3)
    x_min = -q * ft ** (q - 2.0 / 3.0) * D  # min_e v_{e ebar}
    grad_v = q * ft ** (q - 1.0) * np.sqrt(np.sum(np.abs(g.complex_gradient(ft)) ** 2, axis=-1))
    if u11_values is None:
        hess_term = np.minimum(x_min, 0.0)
    else:
        u11 = np.broadcast_to(np.asarray(u11_values, dtype=float), ft.shape)
        if np.any(u11 <= 0):
            raise ValueError("1 + u_{1 1bar} must be positive")
        hess_term = x_min / u11
    need = np.maximum(0.0, -(hess_term - grad_v)) * ft ** (2.0 / (3 * k))
    idx = np.unravel_index(int(np.argmax(need)), need.shape)
    extras = {"k": k, "alpha": alpha, "q": q}
    if params is not None:
        ps = params.dpsi(np.array([-(params.alpha - 1), params.alpha - 1]))
        ph = params.dphi(np.array([0.0, params.beta]))
        extras.update(
            coef_min=float(ps.min() - 2 * ph.max() - params.gamma),
            coef_max=float(ps.max() - 2 * ph.min() - params.gamma),
        )
    return ProbeResult(
        K_required=max(0.0, float(need[idx])),
        attained_at=g.points()[idx],
        inf_h=float(np.min(ft)),
        raw_max=max(0.0, float(need[idx])),
        method="chain-rule",
        resolution=ftilde.domain.describe(),
        extras=extras,
    )
