"""Probes for inequalities satisfied by nonnegative functions with controlled derivatives.

For ``h > 0`` the probes report the smallest constant ``K`` that makes

* ``|grad h|^2 / h <= K``                                   (:func:`grad_quotient`)
* ``d_ee h - alpha |d_e h|^2 / h >= -K h^(1/3)``             (:func:`c21_defect`)
* the complex analogue with ``d_e d_ebar`` on the flat torus (:func:`complex_direction_defect`)

hold on a grid.  Fields are sampled on a :class:`ProbeDomain`; when an analytic
callable is attached, directional derivatives can be taken along geodesics
with 5-point stencils instead of from grid derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .sphere import SphereGrid
from .torusgrid import TorusGrid

KINDS = ("interval", "torus", "sphere")


# ---------------------------------------------------------------------------
# domains and fields


@dataclass
class ProbeDomain:
    """Sampling domain for the probes.

    ``interval``: ``Omega = [a, b]`` inside ``Omega_0 = (a - margin, b + margin)``;
    ``res`` points on ``Omega`` plus two ghost nodes on each side (so ``margin``
    must exceed two grid steps).  ``torus``: ``[0, 2 pi)^(2 n_c)``.  ``sphere``:
    spectral S^2 grid with ``res`` latitudes.
    """

    kind: str
    res: int
    a: float = 0.0
    b: float = 1.0
    margin: float = 0.1
    n_c: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "interval":
            if not self.b > self.a:
                raise ValueError("interval needs a < b")
            if self.margin <= 0:
                raise ValueError("interval margin must be positive (Omega compactly inside Omega_0)")
            if self.res < 3:
                raise ValueError("interval needs res >= 3")
            if 2 * self.dx >= self.margin:
                raise ValueError(
                    f"margin {self.margin} must exceed two grid steps ({2 * self.dx:.3g}); raise res"
                )
        self._grid = None

    @classmethod
    def interval(cls, a=0.0, b=1.0, margin=0.1, res=201):
        return cls("interval", res, a=a, b=b, margin=margin)

    @classmethod
    def torus(cls, n_c=1, res=32):
        return cls("torus", res, n_c=n_c)

    @classmethod
    def sphere(cls, res=32):
        return cls("sphere", res)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.res - 1)

    @property
    def grid(self):
        if self._grid is None:
            if self.kind == "torus":
                self._grid = TorusGrid(self.n_c, self.res)
            elif self.kind == "sphere":
                self._grid = SphereGrid(self.res)
        return self._grid

    @property
    def dim(self) -> int:
        return {"interval": 1, "torus": 2 * self.n_c, "sphere": 2}[self.kind]

    def nodes(self) -> np.ndarray:
        """Sample points: interval nodes include the ghost ring; others the grid points."""
        if self.kind == "interval":
            return self.a + self.dx * np.arange(-2, self.res + 2)
        return self.grid.points()

    def interior(self, values):
        """Values restricted to Omega (drops interval ghosts)."""
        return values[2:-2] if self.kind == "interval" else values

    def interior_nodes(self):
        return self.interior(self.nodes())

    def describe(self) -> dict:
        d = {"kind": self.kind, "res": self.res}
        if self.kind == "interval":
            d.update(a=self.a, b=self.b, margin=self.margin)
        elif self.kind == "torus":
            d.update(n_c=self.n_c)
        return d


@dataclass
class ScalarField:
    """Grid values of a function on a domain, optionally with the analytic callable.

    ``func`` receives points of shape ``(..., dim_ambient)`` (interval: scalars
    ``(...)``; torus: ``(..., 2 n_c)``; sphere: unit vectors ``(..., 3)``).
    """

    domain: ProbeDomain
    values: np.ndarray
    func: Optional[Callable] = None

    @classmethod
    def from_function(cls, domain: ProbeDomain, func: Callable) -> "ScalarField":
        vals = np.asarray(func(domain.nodes()), dtype=float)
        return cls(domain, np.broadcast_to(vals, _value_shape(domain)).copy(), func)

    def __call__(self, pts):
        if self.func is not None:
            return np.asarray(self.func(pts), dtype=float)
        return _interpolate(self, pts)

    def map(self, fn, func_too: bool = True) -> "ScalarField":
        """Pointwise transform ``fn`` of the field (and its callable)."""
        f = self.func
        newf = (lambda p: fn(f(p))) if (func_too and f is not None) else None
        return ScalarField(self.domain, fn(self.values), newf)


def _value_shape(domain: ProbeDomain):
    if domain.kind == "interval":
        return (domain.res + 4,)
    return domain.grid.shape


def _interpolate(field: ScalarField, pts):
    dom = field.domain
    pts = np.asarray(pts, dtype=float)
    if dom.kind == "interval":
        from scipy.interpolate import CubicSpline

        return CubicSpline(dom.nodes(), field.values)(pts)
    if dom.kind == "torus":
        return dom.grid.evaluate(field.values, pts)
    g = dom.grid
    return g.evaluate(g.analyze(field.values), pts)


@dataclass
class ProbeResult:
    K_required: float
    attained_at: object
    direction: object = None
    inf_h: float = float("nan")
    raw_max: float = float("nan")
    method: str = ""
    n_directions: int = 0
    resolution: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {
            "K_required": self.K_required,
            "raw_max": self.raw_max,
            "inf_h": self.inf_h,
            "method": self.method,
            "n_directions": self.n_directions,
        }
        d.update({f"res_{k}": v for k, v in self.resolution.items()})
        d.update(self.extras)
        return d


def _require_positive(h: ScalarField):
    vals = h.domain.interior(h.values)
    m = float(np.min(vals))
    if not m > 0:
        idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
        raise ValueError(f"h must be positive on the probe domain; min {m:.3e} at node {idx}")
    return m


# ---------------------------------------------------------------------------
# grid derivatives


def _grid_gradient(h: ScalarField):
    """Gradient at interior nodes: ``(..., dim)`` in an orthonormal frame."""
    dom = h.domain
    v = h.values
    if dom.kind == "interval":
        d1 = (v[2:] - v[:-2]) / (2 * dom.dx)
        return d1[1:-1, None]
    if dom.kind == "torus":
        return dom.grid.gradient(v)
    return dom.grid.gradient(v)


def _grid_hessian(h: ScalarField):
    dom = h.domain
    v = h.values
    if dom.kind == "interval":
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dom.dx**2
        return d2[1:-1, None, None]
    if dom.kind == "torus":
        return dom.grid.real_hessian(v)
    return dom.grid.covariant_hessian(v)


def _argmax_point(dom: ProbeDomain, q):
    idx = np.unravel_index(int(np.argmax(q)), q.shape)
    pts = dom.interior_nodes()
    return idx, pts[idx]


def grad_quotient(h: ScalarField) -> ProbeResult:
    """``K = max |grad h|^2 / h`` over the grid (clipped at 0 only trivially)."""
    inf_h = _require_positive(h)
    dom = h.domain
    G = _grid_gradient(h)
    q = np.sum(G**2, axis=-1) / dom.interior(h.values)
    idx, pt = _argmax_point(dom, q)
    K = float(np.max(q))
    return ProbeResult(
        K_required=max(K, 0.0),
        attained_at=pt,
        inf_h=inf_h,
        raw_max=K,
        method="grid",
        resolution=dom.describe(),
    )


# ---------------------------------------------------------------------------
# geodesics and directions


def tangent_directions(dom: ProbeDomain, count: Optional[int] = None) -> np.ndarray:
    """Sampled unit directions (the quadratic forms are even in ``e``).

    Interval: ``[+1]``.  Torus: coordinate axes and normalized pairwise
    diagonals ``(e_a +- e_b)/sqrt 2``.  Sphere: ``count`` (default 64) angles
    evenly spread over a half circle, as coefficients in the local frame.
    """
    if dom.kind == "interval":
        return np.ones((1, 1))
    if dom.kind == "torus":
        d = dom.dim
        out = list(np.eye(d))
        for a in range(d):
            for b in range(a + 1, d):
                for s in (1.0, -1.0):
                    e = np.zeros(d)
                    e[a], e[b] = 1.0, s
                    out.append(e / np.sqrt(2))
        return np.array(out)
    count = 64 if count is None else count
    ang = np.pi * (np.arange(count) + 0.5) / count
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def geodesic_restrict(field: ScalarField, x, e, halfwidth: float, samples: int = 5):
    """Values of ``field`` along the geodesic through ``x`` with unit velocity ``e``.

    Great circle on the sphere, straight line on the torus and interval.
    Returns ``(t, values)`` with ``t`` uniform in ``[-halfwidth, halfwidth]``.
    """
    dom = field.domain
    if samples < 2:
        raise ValueError("need at least two samples")
    if not halfwidth > 0:
        raise ValueError("halfwidth must be positive")
    t = np.linspace(-halfwidth, halfwidth, samples)
    if dom.kind == "sphere":
        if halfwidth > np.pi / 2:
            raise ValueError("halfwidth exceeds the safe chart pi/2 on the sphere")
        x = np.asarray(x, dtype=float)
        e = np.asarray(e, dtype=float)
        if abs(np.linalg.norm(x) - 1) > 1e-10 or abs(np.linalg.norm(e) - 1) > 1e-10 or abs(x @ e) > 1e-10:
            raise ValueError("sphere restriction needs unit x and unit tangent e")
        pts = np.cos(t)[:, None] * x + np.sin(t)[:, None] * e
    elif dom.kind == "torus":
        x = np.asarray(x, dtype=float)
        e = np.asarray(e, dtype=float)
        if abs(np.linalg.norm(e) - 1) > 1e-10:
            raise ValueError("direction must be a unit vector")
        pts = x + t[:, None] * e
    else:
        e = float(np.ravel(e)[0])
        if abs(abs(e) - 1) > 1e-12:
            raise ValueError("interval direction must be +1 or -1")
        pts = float(x) + t * e
        lo, hi = dom.a - dom.margin, dom.b + dom.margin
        if pts.min() <= lo or pts.max() >= hi:
            raise ValueError("geodesic leaves Omega_0")
    return t, field(pts)


def _five_point(fm2, fm1, f0, fp1, fp2, s):
    d1 = (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * s)
    d2 = (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * s * s)
    return d1, d2


def directional_derivatives(h: ScalarField, dirs, *, method: str = "geodesic", step: float = 1e-3):
    """``(d_e h, d_ee h)`` at interior nodes for each direction; arrays ``(ndir,) + shape``."""
    dom = h.domain
    dirs = np.asarray(dirs, dtype=float)
    if method == "grid":
        G = _grid_gradient(h)
        H = _grid_hessian(h)
        d1 = np.einsum("...a,da->d...", G, dirs)
        d2 = np.einsum("...ab,da,db->d...", H, dirs, dirs)
        return d1, d2
    if method != "geodesic":
        raise ValueError(f"unknown method {method!r}")
    x = dom.interior_nodes()
    if dom.kind == "interval":
        xs = [x + j * step * dirs[0, 0] for j in (-2, -1, 0, 1, 2)]
        d1, d2 = _five_point(*[h(p) for p in xs], step)
        return d1[None], d2[None]
    out1, out2 = [], []
    if dom.kind == "sphere":
        F = dom.grid.frame()
    for e in dirs:
        if dom.kind == "sphere":
            ev = np.einsum("a,...ai->...i", e, F)
            vals = [h(np.cos(j * step) * x + np.sin(j * step) * ev) for j in (-2, -1, 0, 1, 2)]
        else:
            vals = [h(x + j * step * e) for j in (-2, -1, 0, 1, 2)]
        d1, d2 = _five_point(*vals, step)
        out1.append(d1)
        out2.append(d2)
    return np.array(out1), np.array(out2)


def c21_defect(
    h: ScalarField,
    alpha: float,
    *,
    method: Optional[str] = None,
    n_directions: Optional[int] = None,
    step: float = 1e-3,
) -> ProbeResult:
    """``K = max_{x,e} (alpha |d_e h|^2 / h - d_ee h) / h^(1/3)``, clipped below at 0.

    ``method``: ``'geodesic'`` (5-point stencils along sampled geodesics; needs
    the analytic callable or falls back to interpolation), ``'grid'`` (grid
    derivatives contracted with sampled directions) or ``'exact'`` (the
    maximum over all unit directions, i.e. the top eigenvalue of
    ``alpha grad h grad h^T / h - Hess h``).  Default: ``'geodesic'`` when a
    callable is attached, else ``'grid'``.
    """
    inf_h = _require_positive(h)
    dom = h.domain
    if method is None:
        method = "geodesic" if h.func is not None else "grid"
    hv = dom.interior(h.values)
    if method == "exact":
        G = _grid_gradient(h)
        H = _grid_hessian(h)
        A = alpha * G[..., :, None] * G[..., None, :] / hv[..., None, None] - H
        lam, vec = np.linalg.eigh(A)
        q = lam[..., -1] / np.cbrt(hv)
        idx, pt = _argmax_point(dom, q)
        direction = vec[idx][:, -1]
        ndir = 0
    else:
        dirs = tangent_directions(dom, n_directions)
        d1, d2 = directional_derivatives(h, dirs, method=method, step=step)
        qd = (alpha * d1**2 / hv - d2) / np.cbrt(hv)
        best = np.argmax(qd, axis=0)
        q = np.take_along_axis(qd, best[None], axis=0)[0]
        idx, pt = _argmax_point(dom, q)
        direction = dirs[best[idx]]
        ndir = len(dirs)
    raw = float(np.max(q))
    return ProbeResult(
        K_required=max(raw, 0.0),
        attained_at=pt,
        direction=direction,
        inf_h=inf_h,
        raw_max=raw,
        method=method,
        n_directions=ndir,
        resolution=dom.describe(),
        extras={"alpha": alpha},
    )


# ---------------------------------------------------------------------------
# complex directions on the flat torus


def complex_directions(n_c: int) -> np.ndarray:
    """Unit vectors of C^n: axes and ``(e_i + c e_j)/sqrt 2`` with ``c in {1, -1, i, -i}``."""
    out = list(np.eye(n_c, dtype=complex))
    for i in range(n_c):
        for j in range(i + 1, n_c):
            for c in (1, -1, 1j, -1j):
                e = np.zeros(n_c, dtype=complex)
                e[i], e[j] = 1, c
                out.append(e / np.sqrt(2))
    return np.array(out)


def _complex_top(fv, a, Hc, alpha):
    A = alpha * a[..., :, None] * np.conj(a[..., None, :]) / fv[..., None, None] - Hc
    lam, vec = np.linalg.eigh(A)
    return lam[..., -1] / np.cbrt(fv), vec[..., :, -1]


def complex_defect_field(f: ScalarField, alpha: float) -> np.ndarray:
    """Per-node ``max_e (alpha |d_e f|^2 / f - d_e d_ebar f) / f^(1/3)`` (unclipped)."""
    _require_positive(f)
    g: TorusGrid = f.domain.grid
    U = g.fft(f.values)
    return _complex_top(f.values, g.complex_gradient(f.values), g.complex_hessian(None, U=U), alpha)[0]


def complex_direction_defect(
    f: ScalarField, alpha: float, *, method: str = "exact", directions=None
) -> ProbeResult:
    """``K = max (alpha |d_e f|^2 / f - d_e d_ebar f) / f^(1/3)`` over unit ``e in C^n``.

    ``d_e = sum e_j d/dz_j``.  ``'exact'`` takes the top eigenvalue of
    ``alpha a a^* / f - (f_{j kbar})`` with ``a_j = df/dz_j``; ``'sampled'``
    uses :func:`complex_directions`.  Both also evaluate ``d_e d_ebar f`` as the
    quarter-sum of real second derivatives along ``X`` and ``JX`` (the real
    vector of ``e`` and its rotation) and report the largest relative mismatch
    with the complex Hessian as ``extras['identity_defect']``.
    """
    dom = f.domain
    if dom.kind != "torus":
        raise ValueError("complex_direction_defect needs a torus domain")
    inf_f = _require_positive(f)
    g: TorusGrid = dom.grid
    n = g.n_c
    fv = f.values
    Hc = g.complex_hessian(fv)
    a = g.complex_gradient(fv)
    Hr = g.real_hessian(fv)
    dirs = complex_directions(n) if directions is None else np.asarray(directions, dtype=complex)
    # identity check: e^T Hc ebar  ==  (Hess(X,X) + Hess(JX,JX)) / 4
    X = np.concatenate([dirs.real, dirs.imag], axis=1)
    JX = np.concatenate([-dirs.imag, dirs.real], axis=1)
    direct = np.einsum("dj,...jk,dk->d...", dirs, Hc, np.conj(dirs)).real
    quarter = 0.25 * (
        np.einsum("da,...ab,db->d...", X, Hr, X) + np.einsum("da,...ab,db->d...", JX, Hr, JX)
    )
    scale = max(1.0, float(np.max(np.abs(Hr))))
    identity_defect = float(np.max(np.abs(direct - quarter)) / scale)
    if method == "exact":
        q, vec = _complex_top(fv, a, Hc, alpha)
        idx = np.unravel_index(int(np.argmax(q)), q.shape)
        direction = np.conj(vec[idx])
        ndir = 0
    elif method == "sampled":
        grad_e = np.einsum("dj,...j->d...", dirs, a)
        qd = (alpha * np.abs(grad_e) ** 2 / fv - quarter) / np.cbrt(fv)
        best = np.argmax(qd, axis=0)
        q = np.take_along_axis(qd, best[None], axis=0)[0]
        idx = np.unravel_index(int(np.argmax(q)), q.shape)
        direction = dirs[best[idx]]
        ndir = len(dirs)
    else:
        raise ValueError(f"unknown method {method!r}")
    raw = float(np.max(q))
    return ProbeResult(
        K_required=max(raw, 0.0),
        attained_at=g.points()[idx],
        direction=direction,
        inf_h=inf_f,
        raw_max=raw,
        method=method,
        n_directions=ndir,
        resolution=dom.describe(),
        extras={"alpha": alpha, "identity_defect": identity_defect},
    )


# ---------------------------------------------------------------------------
# families


def sharpness_profile(beta: float) -> Callable:
    """``h_beta(x) = (x + sqrt(beta))^2``; at ``x = 0`` the C21 quotient is ``(4 alpha - 2) beta^(-1/3)``."""
    r = np.sqrt(beta)
    return lambda x: (np.asarray(x, dtype=float) + r) ** 2


def sharpness_scan(alpha: float, betas: Sequence[float], *, res: int = 201):
    """``c21_defect`` of ``h_beta`` on ``Omega = [0, 1]`` for each ``beta``.

    ``h_beta > 0`` only on ``(-sqrt(beta), inf)``, so the distance from ``Omega``
    to the zero set shrinks with ``beta``; this is what makes the constant blow
    up when ``alpha > 1/2``.  Derivatives come from geodesic stencils with step
    ``sqrt(beta)/4`` so no sample crosses the zero.
    """
    rows = []
    for b in betas:
        dom = ProbeDomain("interval", res, a=0.0, b=1.0, margin=3.0 / (res - 1))
        h = ScalarField.from_function(dom, sharpness_profile(b))
        rows.append((b, c21_defect(h, alpha, method="geodesic", step=0.25 * np.sqrt(b))))
    return rows


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def epsilon_sweep(
    domain: ProbeDomain,
    g: Callable,
    eps_schedule: Sequence[float],
    alphas: Sequence[float] = (1.0 / 3.0,),
    *,
    method: Optional[str] = None,
) -> list:
    """``K_required`` of ``h = g + eps`` for each ``eps``: one dict per ``eps``.

    Keys: ``eps, inf_h, grad_K`` and ``c21_K[alpha]`` per alpha; on the torus also
    ``complex_K[alpha]``.
    """
    rows = []
    for eps in eps_schedule:
        h = ScalarField.from_function(domain, lambda p, e=eps: g(p) + e)
        gq = grad_quotient(h)
        row = {"eps": float(eps), "inf_h": gq.inf_h, "grad_K": gq.K_required}
        for al in alphas:
            row[f"c21_K[{al:.6g}]"] = c21_defect(h, al, method=method).K_required
            if domain.kind == "torus":
                row[f"complex_K[{al:.6g}]"] = complex_direction_defect(h, al).K_required
        rows.append(row)
    return rows


def stability_factor(values) -> float:
    """``max / min`` of a positive series (1 for an all-zero series)."""
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return 1.0
    if np.min(v) <= 0:
        return float("inf")
    return float(np.max(v) / np.min(v))
