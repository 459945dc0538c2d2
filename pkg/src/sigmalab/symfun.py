"""Elementary symmetric functions, Garding cones and vector-level inequality suites.

All functions accept a single eigenvalue vector of shape ``(n,)`` or a batch of
shape ``(..., n)``.  Indices are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import SamplerError

# extended precision accumulator for the one-entry-at-a-time recurrence
_ACC = np.longdouble


def elementary(lam, kmax: Optional[int] = None, *, extended: bool = True) -> np.ndarray:
    """Return ``[sigma_0, ..., sigma_kmax]`` along a new trailing axis.

    Uses the recurrence ``e_j <- e_j + lam_i * e_{j-1}`` adding one entry at a
    time, accumulated in long double unless ``extended`` is False.  Orders above
    ``n`` are zero.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if kmax is None:
        kmax = n
    dtype = _ACC if extended else float
    lam_acc = lam.astype(dtype)
    e = np.zeros(lam.shape[:-1] + (kmax + 1,), dtype=dtype)
    e[..., 0] = 1
    top = min(kmax, n)
    for i in range(n):
        li = lam_acc[..., i : i + 1]
        hi = min(i + 1, top)
        # descending update so e_{j-1} is still the old value
        e[..., 1 : hi + 1] = e[..., 1 : hi + 1] + li * e[..., 0:hi]
    return e


def sigma(lam, j: int, *, extended: bool = True):
    """j-th elementary symmetric polynomial; 1 for j == 0 and 0 outside [0, n]."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if j < 0 or j > n:
        out = np.zeros(lam.shape[:-1])
        return float(out) if out.ndim == 0 else out
    val = elementary(lam, j, extended=extended)[..., j].astype(float)
    return float(val) if val.ndim == 0 else val


def sigma_truncated(lam, j: int, excluded: Iterable[int]):
    """``sigma_j`` of ``lam`` with the entries listed in ``excluded`` set to zero.

    A repeated index in ``excluded`` gives 0 by convention.
    """
    lam = np.array(lam, dtype=float)
    n = lam.shape[-1]
    idx = list(excluded)
    for i in idx:
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for n={n}")
    if len(set(idx)) != len(idx):
        out = np.zeros(lam.shape[:-1])
        return float(out) if out.ndim == 0 else out
    lam[..., idx] = 0.0
    return sigma(lam, j)


def sigma_deleted(lam, j: int, *, extended: bool = True) -> np.ndarray:
    """All ``sigma_{j;i}`` at once, shape ``(..., n)``."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if j < 0 or j > n - 1:
        return np.zeros(lam.shape)
    mask = 1.0 - np.eye(n)
    rows = lam[..., None, :] * mask
    return elementary(rows, j, extended=extended)[..., j].astype(float)


def sigma_deleted2(lam, j: int) -> np.ndarray:
    """All ``sigma_{j;is}``, shape ``(..., n, n)``, zero on the diagonal."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.zeros(lam.shape[:-1] + (n, n))
    if j < 0 or j > n - 2:
        return out
    for i in range(n):
        for s in range(i + 1, n):
            row = lam.copy()
            row[..., [i, s]] = 0.0
            v = elementary(row, j)[..., j].astype(float)
            out[..., i, s] = v
            out[..., s, i] = v
    return out


def sigma_grad(lam, j: int) -> np.ndarray:
    """Gradient of ``sigma_j`` with respect to ``lam``: component i is ``sigma_{j-1;i}``."""
    return sigma_deleted(lam, j - 1)


def sigma_hess(lam, j: int) -> np.ndarray:
    """Hessian of ``sigma_j`` in ``lam``: ``sigma_{j-2;is}`` off the diagonal, 0 on it."""
    return sigma_deleted2(lam, j - 2)


def in_gamma_k(lam, k: int):
    """Strict membership test for the Garding cone: ``sigma_j > 0`` for all ``1 <= j <= k``."""
    e = elementary(lam, k)
    ok = np.all(e[..., 1 : k + 1] > 0, axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok


def cone_margin(lam, k: int):
    """``min_{1<=j<=k} sigma_j(lam) / C(n, j)``; positive iff ``lam`` is in the cone."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = elementary(lam, k).astype(float)
    norm = np.array([comb(n, j) for j in range(1, k + 1)], dtype=float)
    out = np.min(e[..., 1 : k + 1] / norm, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling


def _boundary_shift(lam: np.ndarray, k: int, iters: int = 60) -> np.ndarray:
    """Largest ``t`` with ``lam - t*1`` in the closed cone (bisection, cone is convex)."""
    lo = np.zeros(lam.shape[0])
    hi = lam.max(axis=1) + 1e-12
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = in_gamma_k(lam - mid[:, None], k)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


def sample_gamma_k(
    n: int,
    k: int,
    size: int,
    rng: np.random.Generator,
    *,
    boundary_fraction: float = 0.2,
    max_rounds: int = 200,
) -> np.ndarray:
    """Draw ``size`` points of the open cone Gamma_k in R^n.

    Most points come from rejection sampling of the box ``[-1, 3]^n``.  A
    ``boundary_fraction`` share is pushed towards the cone boundary: the point is
    slid along ``-(1,...,1)`` onto the boundary and a positive perturbation of
    log-uniform size in ``[1e-6, 1]`` (relative) is added back.
    """
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    out = []
    have = 0
    batch = max(1024, 2 * size)
    for _ in range(max_rounds):
        lam = rng.uniform(-1.0, 3.0, size=(batch, n))
        lam = lam[in_gamma_k(lam, k)]
        if lam.shape[0]:
            out.append(lam)
            have += lam.shape[0]
        if have >= size:
            break
    if have < size:
        raise SamplerError(f"could not draw {size} points of Gamma_{k} in R^{n}")
    lam = np.concatenate(out)[:size]
    nb = int(round(boundary_fraction * size))
    if nb:
        base = lam[:nb]
        t = _boundary_shift(base, k)
        mu = base - t[:, None]
        scale = np.abs(base).max(axis=1)
        s = 10.0 ** rng.uniform(-6.0, 0.0, size=nb)
        p = rng.dirichlet(np.ones(n), size=nb) * n
        pushed = mu + (s * scale)[:, None] * p
        good = in_gamma_k(pushed, k)
        lam[:nb] = np.where(good[:, None], pushed, base)
    rng.shuffle(lam, axis=0)
    return lam


# ---------------------------------------------------------------------------
# inequality reports


@dataclass
class IneqReport:
    """Outcome of a sampled inequality check.

    ``worst_residual`` is the minimum over samples of LHS - RHS oriented so the
    inequality holds iff it is >= 0.  ``empirical_constant`` holds the sampled
    extremal ratio standing in for a constant the theory only calls universal.
    """

    name: str
    samples: int
    worst_residual: float
    worst_point: np.ndarray
    empirical_constant: Optional[float] = None
    violations: int = 0
    params: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.worst_residual >= 0 and self.violations == 0

    def row(self) -> dict:
        return {
            "check": self.name,
            "samples": self.samples,
            "worst_residual": self.worst_residual,
            "empirical_constant": "" if self.empirical_constant is None else self.empirical_constant,
            "violations": self.violations,
            "worst_point": " ".join(f"{v:.17g}" for v in np.ravel(self.worst_point)),
            **self.params,
        }


def merge_reports(reports: Sequence[IneqReport]) -> IneqReport:
    """Min-reduce reports of the same check computed on disjoint sample shards."""
    best = min(reports, key=lambda r: r.worst_residual)
    consts = [r.empirical_constant for r in reports if r.empirical_constant is not None]
    return IneqReport(
        name=best.name,
        samples=sum(r.samples for r in reports),
        worst_residual=best.worst_residual,
        worst_point=best.worst_point,
        empirical_constant=min(consts) if consts else None,
        violations=sum(r.violations for r in reports),
        params=dict(best.params),
    )


def _report(name, lam, residual, constant=None, params=None, violated=None) -> IneqReport:
    i = int(np.argmin(residual))
    if violated is None:
        violated = residual < 0
    return IneqReport(
        name=name,
        samples=int(residual.shape[0]),
        worst_residual=float(residual[i]),
        worst_point=np.array(lam[i]),
        empirical_constant=constant,
        violations=int(np.count_nonzero(violated)),
        params=params or {},
    )


def maclaurin_residuals(lam: np.ndarray, k: int):
    """Residual arrays for the three statements checked by :func:`maclaurin_suite`."""
    lam = np.atleast_2d(lam)
    n = lam.shape[-1]
    e = elementary(lam, k)
    sk = e[:, k].astype(float)
    skm1 = e[:, k - 1].astype(float)
    s1 = e[:, 1].astype(float)
    lhs = (sk / comb(n, k)) ** (1.0 / k)
    rhs = (skm1 / comb(n, k - 1)) ** (1.0 / (k - 1))
    res_a = (rhs - lhs) / rhs
    ratio = skm1 / (s1 ** (1.0 / (k - 1)) * sk ** (1.0 - 1.0 / (k - 1)))
    # identity in extended precision
    mask = 1.0 - np.eye(n)
    parts = elementary(lam[:, None, :] * mask, k - 1)[..., k - 1]
    total = parts.sum(axis=-1)
    target = (n - k + 1) * e[:, k - 1]
    rel_c = np.abs((total - target) / target).astype(float)
    return res_a, ratio, rel_c


def maclaurin_suite(n: int, k: int, sample_count: int, seed: int, *, identity_tol: float = 1e-12):
    """Sampled Newton-Maclaurin checks on Gamma_k.

    Returns a dict of three :class:`IneqReport`: ``maclaurin`` (normalized
    comparison of sigma_k and sigma_{k-1}, constant 1), ``ratio`` (lower bound of
    sigma_{k-1} by sigma_1 and sigma_k; the infimum of the ratio is reported as
    the empirical constant) and ``trace_identity`` (sum of sigma_{k-1;i} equals
    (n-k+1) sigma_{k-1}, residual is ``identity_tol`` minus the relative error).
    """
    if not (2 <= k <= n):
        raise ValueError(f"need 2 <= k <= n, got n={n}, k={k}")
    rng = np.random.default_rng(seed)
    lam = sample_gamma_k(n, k, sample_count, rng)
    res_a, ratio, rel_c = maclaurin_residuals(lam, k)
    params = {"n": n, "k": k, "seed": seed}
    return {
        "maclaurin": _report("maclaurin", lam, res_a, params=params),
        "ratio": _report("ratio", lam, ratio, constant=float(ratio.min()), params=params),
        "trace_identity": _report(
            "trace_identity", lam, identity_tol - rel_c, constant=float(rel_c.max()), params=params
        ),
    }


def _sorted_desc(lam):
    return -np.sort(-lam, axis=-1)


def _sample_small_tail(n, k, eps, size, rng, max_rounds=400):
    """Sorted Gamma_k points with ``lam_1 = 1`` and ``lam_k <= eps``."""
    out, have = [], 0
    batch = max(2048, 2 * size)
    for _ in range(max_rounds):
        head = 10.0 ** rng.uniform(np.log10(eps), 0.0, size=(batch, k - 2))
        tail_scale = eps * 10.0 ** rng.uniform(-3.0, 0.0, size=(batch, 1))
        tail = tail_scale * rng.uniform(-1.0, 1.0, size=(batch, n - k + 1))
        lam = np.concatenate([np.ones((batch, 1)), head, tail], axis=1)
        # generic points of the cone that happen to satisfy the constraint
        gen = sample_gamma_k(n, k, batch // 4, rng, boundary_fraction=0.2)
        gen = gen[gen.max(axis=1) > 0]
        gen = gen / gen.max(axis=1, keepdims=True)
        lam = _sorted_desc(np.concatenate([lam, gen]))
        keep = in_gamma_k(lam, k) & (lam[:, k - 1] <= eps * lam[:, 0])
        lam = lam[keep]
        if lam.shape[0]:
            out.append(lam)
            have += lam.shape[0]
        if have >= size:
            return np.concatenate(out)[:size]
    raise SamplerError(f"could not draw {size} points with lam_k <= {eps} lam_1 in Gamma_{k}")


def chou_wang_residual(lam: np.ndarray, k: int, delta: float) -> np.ndarray:
    """``sigma_{k-2;i1} - (1-delta) sigma_{k-1;i} / lam_1`` for i = 2..n (columns).

    ``lam`` must be sorted decreasing.  Shape ``(batch, n-1)``.
    """
    lam = np.atleast_2d(lam)
    s2 = sigma_deleted2(lam, k - 2)[:, 1:, 0]
    s1 = sigma_deleted(lam, k - 1)[:, 1:]
    return s2 - (1.0 - delta) * s1 / lam[:, :1]


@dataclass
class ChouWangResult:
    eps: Optional[float]
    delta: float
    n: int
    k: int
    grid: np.ndarray
    violations: dict
    samples: int
    worst_failing: Optional[np.ndarray] = None
    worst_failing_eps: Optional[float] = None
    restricted_positive: bool = True


def chou_wang_eps(
    delta: float,
    n: int,
    k: int,
    grid: Optional[Sequence[float]] = None,
    *,
    sample_count: int = 20000,
    seed: int = 0,
) -> ChouWangResult:
    """Largest ``eps`` on a log grid for which the small-``lam_k`` inequality held.

    The grid is scanned from the largest value down; at each ``eps`` a fresh
    sample with ``lam_k <= eps*lam_1`` is drawn.  The first value without
    violations is returned, together with the worst violating point seen at the
    next larger grid value.  As a side check, ``sigma_{k-2;i1} > 0`` is
    verified on every sample.
    """
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    if not (2 <= k <= n):
        raise ValueError(f"need 2 <= k <= n, got n={n}, k={k}")
    if grid is None:
        grid = np.logspace(0, -6, 25)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    rng = np.random.default_rng(seed)
    violations = {}
    positive = True
    prev_fail = None
    prev_eps = None
    for eps in grid:
        lam = _sample_small_tail(n, k, eps, sample_count, rng)
        res = chou_wang_residual(lam, k, delta)
        if k >= 3:
            positive &= bool(np.all(sigma_deleted2(lam, k - 2)[:, 1:, 0] > 0))
        worst = res.min(axis=1)
        nviol = int(np.count_nonzero(worst < 0))
        violations[float(eps)] = nviol
        if nviol == 0:
            return ChouWangResult(
                float(eps), delta, n, k, grid, violations, sample_count,
                prev_fail, prev_eps, positive,
            )
        prev_fail = lam[int(np.argmin(worst))]
        prev_eps = float(eps)
    return ChouWangResult(None, delta, n, k, grid, violations, sample_count, prev_fail, prev_eps, positive)


def _sample_large_tail(n, k, eps, size, rng, max_rounds=400):
    """Sorted Gamma_k points with ``lam_1 = 1`` and ``lam_k >= eps`` (closed)."""
    out, have = [], 0
    batch = max(2048, 2 * size)
    for _ in range(max_rounds):
        u = rng.uniform(size=(batch, k - 1))
        head = np.where(rng.uniform(size=(batch, 1)) < 0.5, eps + (1 - eps) * u, eps ** u)
        head = _sorted_desc(head)
        # a share of points sits exactly on lam_k = eps
        on_edge = rng.uniform(size=batch) < 0.1
        head[on_edge, -1] = eps
        lk = head[:, -1:]
        depth = lk + rng.uniform(size=(batch, 1))
        tail = lk - depth * rng.uniform(size=(batch, n - k))
        lam = np.concatenate([np.ones((batch, 1)), head, tail], axis=1)
        lam = _sorted_desc(lam)
        keep = in_gamma_k(lam, k) & (lam[:, k - 1] >= eps * lam[:, 0])
        lam = lam[keep]
        if lam.shape[0]:
            out.append(lam)
            have += lam.shape[0]
        if have >= size:
            return np.concatenate(out)[:size]
    raise SamplerError(f"could not draw {size} points with lam_k >= {eps} lam_1 in Gamma_{k}")


def dominance_ratio(lam: np.ndarray, k: int) -> np.ndarray:
    """``sigma_{k-1;k} / sum_i sigma_{k-1;i}`` for decreasing ``lam`` (k is 1-based)."""
    lam = np.atleast_2d(lam)
    d = sigma_deleted(lam, k - 1)
    return d[:, k - 1] / d.sum(axis=1)


def dominance_suite(eps: float, n: int, k: int, sample_count: int, seed: int) -> IneqReport:
    """Sampled infimum of the k-th diagonal share of the linearized operator when ``lam_k >= eps lam_1``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not (2 <= k <= n):
        raise ValueError(f"need 2 <= k <= n, got n={n}, k={k}")
    rng = np.random.default_rng(seed)
    lam = _sample_large_tail(n, k, eps, sample_count, rng)
    ratio = dominance_ratio(lam, k)
    return _report(
        "dominance", lam, ratio, constant=float(ratio.min()),
        params={"n": n, "k": k, "eps": eps, "seed": seed},
        violated=ratio <= 0,
    )
