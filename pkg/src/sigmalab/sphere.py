"""Grids and differential operators on the round spheres S^2 and S^3.

S^2 is discretized spectrally: Gauss-Legendre nodes in ``cos(theta)`` times a
uniform longitude grid, with a real spherical-harmonic transform truncated at
degree ``res - 1``.  No node sits on a pole.

S^3 uses second-order finite differences on a cell-centred product grid in
hyperspherical angles ``(psi, theta, phi)``.  Neighbours across the coordinate
singularities are resolved by reflection through the pole.
"""
from __future__ import annotations

from functools import cached_property
from math import pi

import numpy as np
import scipy.sparse as sp


def legendre_table(x, L: int, mmax: int | None = None):
    """Orthonormal associated Legendre functions and their theta-derivatives.

    Returns ``P, dP`` of shape ``(mmax+1, len(x), L+1)`` with ``P[m, :, l]`` the
    function ``Pbar_l^m(x)`` normalized so that ``Pbar_l^m(cos t) e^{i m phi}``
    has unit L2 norm on S^2 (zero for ``l < m``).  ``dP`` is ``d/dtheta``;
    ``x = cos(theta)`` must stay away from +-1.
    """
    x = np.asarray(x, dtype=float)
    if mmax is None:
        mmax = L
    s = np.sqrt(1.0 - x**2)
    P = np.zeros((mmax + 1, x.size, L + 1))
    dP = np.zeros_like(P)
    pmm = np.full(x.size, np.sqrt(1.0 / (4 * pi)))
    for m in range(mmax + 1):
        if m > 0:
            pmm = np.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        P[m, :, m] = pmm
        if m + 1 <= L:
            P[m, :, m + 1] = np.sqrt(2 * m + 3.0) * x * pmm
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            P[m, :, l] = a * (x * P[m, :, l - 1] - b * P[m, :, l - 2])
        for l in range(m, L + 1):
            c = np.sqrt((2 * l + 1.0) / (2 * l - 1) * (l * l - m * m)) if l > m else 0.0
            prev = P[m, :, l - 1] if l > m else 0.0
            dP[m, :, l] = (l * x * P[m, :, l] - c * prev) / s
    return P, dP


class SphereGrid:
    """Spectral grid on S^2.

    ``res`` Gauss latitudes, ``2*res`` longitudes, harmonics up to degree
    ``L = res - 1``.  Fields are arrays of shape ``(res, 2*res)``; spectral
    coefficients are complex arrays ``C[m, l]`` with
    ``u = sum_l C[0,l] P_l^0 + sum_{m>0} 2 Re(C[m,l] e^{i m phi}) P_l^m``.
    """

    n = 2
    kind = "sphere"

    def __init__(self, res: int = 48):
        if res < 4:
            raise ValueError("res must be at least 4")
        self.res = res
        self.nlat = res
        self.nlon = 2 * res
        self.L = res - 1
        x, w = np.polynomial.legendre.leggauss(res)
        order = np.argsort(-x)  # north to south
        self.cost = x[order]
        self.gauss_w = w[order]
        self.theta = np.arccos(self.cost)
        self.phi = 2 * pi * np.arange(self.nlon) / self.nlon
        self.sint = np.sqrt(1.0 - self.cost**2)
        self.cott = self.cost / self.sint
        self.P, self.dP = legendre_table(self.cost, self.L)
        self.weights = np.outer(self.gauss_w, np.full(self.nlon, 2 * pi / self.nlon))
        T, Ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.TH, self.PH = T, Ph
        self.coords = np.stack([np.sin(T) * np.cos(Ph), np.sin(T) * np.sin(Ph), np.cos(T)])
        ell = np.arange(self.L + 1)
        m = np.arange(self.L + 1)
        self.valid = ell[None, :] >= m[:, None]
        self.ell = np.broadcast_to(ell[None, :], self.valid.shape)
        self.mm = np.broadcast_to(m[:, None], self.valid.shape)

    @property
    def shape(self):
        return (self.nlat, self.nlon)

    @property
    def npts(self) -> int:
        return self.nlat * self.nlon

    @property
    def area(self) -> float:
        return 4 * pi

    def integrate(self, u) -> float:
        return float(np.sum(self.weights * u))

    # -- transforms ---------------------------------------------------------

    def analyze(self, u) -> np.ndarray:
        """Grid values to coefficients (exact for band-limited input)."""
        c = np.fft.rfft(u, axis=-1)[..., : self.L + 1] / self.nlon
        C = 2 * pi * np.einsum("i,...im,mil->...ml", self.gauss_w, c, self.P)
        return C * self.valid

    def _to_grid(self, fm):
        X = np.zeros(fm.shape[:-1] + (self.nlon // 2 + 1,), dtype=complex)
        X[..., : self.L + 1] = fm * self.nlon
        return np.fft.irfft(X, n=self.nlon, axis=-1)

    def synthesize(self, C) -> np.ndarray:
        return self._to_grid(np.einsum("...ml,mil->...im", C, self.P))

    def derivatives(self, C) -> dict:
        """Grid values of u and its first and second angular derivatives."""
        m = np.arange(self.L + 1)[None, :]
        um = np.einsum("ml,mil->im", C, self.P)
        utm = np.einsum("ml,mil->im", C, self.dP)
        lapm = np.einsum("ml,mil->im", -self.ell * (self.ell + 1) * C, self.P)
        sint = self.sint[:, None]
        cott = self.cott[:, None]
        uttm = -cott * utm + (m**2 / sint**2) * um + lapm
        g = self._to_grid
        return {
            "u": g(um),
            "t": g(utm),
            "p": g(1j * m * um),
            "tt": g(uttm),
            "tp": g(1j * m * utm),
            "pp": g(-(m**2) * um),
        }

    def laplacian_coeffs(self, C):
        return -self.ell * (self.ell + 1) * C

    def laplacian(self, u):
        return self.synthesize(self.laplacian_coeffs(self.analyze(u)))

    # -- packing for Krylov solvers ----------------------------------------

    @cached_property
    def _pack_index(self):
        mm, ll = np.nonzero(self.valid)
        return mm, ll

    @property
    def ncoef(self) -> int:
        return (self.L + 1) ** 2

    def pack(self, C) -> np.ndarray:
        mm, ll = self._pack_index
        v = C[mm, ll]
        pos = mm > 0
        return np.concatenate([v.real, v[pos].imag])

    def unpack(self, v) -> np.ndarray:
        mm, ll = self._pack_index
        nv = mm.size
        vals = v[:nv].astype(complex)
        pos = np.nonzero(mm > 0)[0]
        vals[pos] += 1j * v[nv:]
        C = np.zeros(self.valid.shape, dtype=complex)
        C[mm, ll] = vals
        return C

    @cached_property
    def packed_degree(self) -> np.ndarray:
        mm, ll = self._pack_index
        return np.concatenate([ll, ll[mm > 0]])

    # -- geometry -----------------------------------------------------------

    def covariant_hessian(self, u) -> np.ndarray:
        """Covariant Hessian of ``u`` in the frame (e_theta, e_phi), shape ``(nlat, nlon, 2, 2)``."""
        return self.hessian_from_coeffs(self.analyze(u))

    def hessian_from_coeffs(self, C) -> np.ndarray:
        d = self.derivatives(C)
        s = self.sint[:, None]
        ct = self.cott[:, None]
        H = np.empty(self.shape + (2, 2))
        H[..., 0, 0] = d["tt"]
        H[..., 0, 1] = H[..., 1, 0] = (d["tp"] - ct * d["p"]) / s
        H[..., 1, 1] = d["pp"] / s**2 + ct * d["t"]
        return H

    def gradient(self, u) -> np.ndarray:
        """Frame components ``(u_theta, u_phi / sin theta)``."""
        d = self.derivatives(self.analyze(u))
        return np.stack([d["t"], d["p"] / self.sint[:, None]], axis=-1)

    def frame(self) -> np.ndarray:
        """Orthonormal tangent frame in R^3, shape ``(nlat, nlon, 2, 3)``."""
        T, Ph = self.TH, self.PH
        e_t = np.stack([np.cos(T) * np.cos(Ph), np.cos(T) * np.sin(Ph), -np.sin(T)], axis=-1)
        e_p = np.stack([-np.sin(Ph), np.cos(Ph), np.zeros_like(T)], axis=-1)
        return np.stack([e_t, e_p], axis=-2)

    def points(self) -> np.ndarray:
        return np.moveaxis(self.coords, 0, -1)

    def antipodal(self, u) -> np.ndarray:
        """``u(-x)`` on the grid (the node set is antipodally symmetric)."""
        return np.roll(np.asarray(u)[::-1, :], self.nlon // 2, axis=1)

    def evaluate(self, C, pts) -> np.ndarray:
        """Evaluate the band-limited field with coefficients ``C`` at points of S^2 in R^3."""
        pts = np.asarray(pts, dtype=float)
        shp = pts.shape[:-1]
        p = pts.reshape(-1, 3)
        z = np.clip(p[:, 2] / np.linalg.norm(p, axis=1), -1.0, 1.0)
        z = np.clip(z, -1 + 1e-15, 1 - 1e-15)
        ph = np.arctan2(p[:, 1], p[:, 0])
        P, _ = legendre_table(z, self.L)
        fm = np.einsum("ml,mil->im", C, P)
        m = np.arange(self.L + 1)
        e = np.exp(1j * np.outer(ph, m))
        out = fm[:, 0].real + 2 * np.sum((fm[:, 1:] * e[:, 1:]).real, axis=1)
        return out.reshape(shp)


def make_grid(n: int, res: int):
    """Grid factory: spectral for ``n == 2``, finite differences for ``n == 3``."""
    if n == 2:
        return SphereGrid(res)
    if n == 3:
        return Sphere3Grid(res)
    raise ValueError(f"unsupported sphere dimension {n}; use 2 or 3")


class Sphere3Grid:
    """Cell-centred finite-difference grid on S^3 in hyperspherical angles.

    ``x = (cos psi, sin psi cos theta, sin psi sin theta cos phi,
    sin psi sin theta sin phi)`` with ``res`` cells in psi and theta and
    ``2*res`` in phi.
    """

    n = 3
    kind = "sphere"

    def __init__(self, res: int = 16):
        if res < 4 or res % 2:
            raise ValueError("res must be an even integer >= 4")
        self.res = res
        self.N = (res, res, 2 * res)
        self.h = (pi / res, pi / res, pi / res)
        self.psi = (np.arange(res) + 0.5) * self.h[0]
        self.theta = (np.arange(res) + 0.5) * self.h[1]
        self.phi = (np.arange(2 * res) + 0.5) * self.h[2]
        PS, TH, PH = np.meshgrid(self.psi, self.theta, self.phi, indexing="ij")
        self.PS, self.TH, self.PH = PS, TH, PH
        self.coords = np.stack(
            [
                np.cos(PS),
                np.sin(PS) * np.cos(TH),
                np.sin(PS) * np.sin(TH) * np.cos(PH),
                np.sin(PS) * np.sin(TH) * np.sin(PH),
            ]
        )
        # exact cell volumes
        pe = np.arange(res + 1) * self.h[0]
        te = np.arange(res + 1) * self.h[1]
        vpsi = np.diff(pe / 2 - np.sin(2 * pe) / 4)
        vth = np.diff(-np.cos(te))
        self.weights = vpsi[:, None, None] * vth[None, :, None] * np.full((1, 1, 2 * res), self.h[2])
        self.scale = np.stack([np.ones_like(PS), np.sin(PS), np.sin(PS) * np.sin(TH)])
        # dscale[a][b] = d h_a / d q_b
        z = np.zeros_like(PS)
        self.dscale = np.array(
            [
                [z, z, z],
                [np.cos(PS), z, z],
                [np.cos(PS) * np.sin(TH), np.sin(PS) * np.cos(TH), z],
            ]
        )

    @property
    def shape(self):
        return self.N

    @property
    def npts(self) -> int:
        return int(np.prod(self.N))

    @property
    def area(self) -> float:
        return 2 * pi**2

    def integrate(self, u) -> float:
        return float(np.sum(self.weights * u))

    def _index(self, a, b, c):
        Np, Nt, Nf = self.N
        a = np.asarray(a)
        b = np.asarray(b).copy()
        c = np.asarray(c).copy()
        lo = a < 0
        hi = a >= Np
        flip = lo | hi
        a = np.where(lo, -1 - a, np.where(hi, 2 * Np - 1 - a, a))
        b = np.where(flip, Nt - 1 - b, b)
        c = np.where(flip, c + Nf // 2, c)
        lo = b < 0
        hi = b >= Nt
        flip = lo | hi
        b = np.where(lo, -1 - b, np.where(hi, 2 * Nt - 1 - b, b))
        c = np.where(flip, c + Nf // 2, c)
        c = np.mod(c, Nf)
        return (a * Nt + b) * Nf + c

    def _stencil(self, terms):
        """Sparse matrix from ``[(coef, (da, db, dc)), ...]`` offsets."""
        A, B, Cc = np.meshgrid(*[np.arange(s) for s in self.N], indexing="ij")
        rows = np.arange(self.npts)
        data, ri, ci = [], [], []
        for coef, (da, db, dc) in terms:
            cols = self._index(A + da, B + db, Cc + dc).ravel()
            data.append(np.broadcast_to(coef, self.N).ravel())
            ri.append(rows)
            ci.append(cols)
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
            shape=(self.npts, self.npts),
        )

    @cached_property
    def first(self):
        ops = []
        for a in range(3):
            off = [0, 0, 0]
            off[a] = 1
            plus = tuple(off)
            minus = tuple(-o for o in off)
            d = 2 * np.sin(self.h[a])
            ops.append(self._stencil([(1 / d, plus), (-1 / d, minus)]))
        return ops

    @cached_property
    def second(self):
        ops = [[None] * 3 for _ in range(3)]
        for a in range(3):
            off = [0, 0, 0]
            off[a] = 1
            d2 = 2 - 2 * np.cos(self.h[a])
            ops[a][a] = self._stencil(
                [(1 / d2, tuple(off)), (-2 / d2, (0, 0, 0)), (1 / d2, tuple(-o for o in off))]
            )
            for b in range(a + 1, 3):
                c = 0.25 / (np.sin(self.h[a]) * np.sin(self.h[b]))
                terms = []
                for sa, sb, sgn in [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]:
                    o = [0, 0, 0]
                    o[a], o[b] = sa, sb
                    terms.append((sgn * c, tuple(o)))
                ops[a][b] = ops[b][a] = self._stencil(terms)
        return ops

    def christoffel(self):
        """``G[c, a, b] = Gamma^c_{ab}`` for the diagonal metric ``diag(h_a^2)``."""
        h, dh = self.scale, self.dscale
        G = np.zeros((3, 3, 3) + self.N)
        for a in range(3):
            G[a, a, a] = dh[a][a] / h[a]
            for b in range(3):
                if b == a:
                    continue
                G[a, a, b] = G[a, b, a] = dh[a][b] / h[a]
                G[b, a, a] = -h[a] * dh[a][b] / h[b] ** 2
        return G

    @cached_property
    def hessian_ops(self):
        """Sparse operators for the orthonormal-frame covariant Hessian components."""
        G = self.christoffel()
        h = self.scale
        ops = [[None] * 3 for _ in range(3)]
        for a in range(3):
            for b in range(a, 3):
                op = self.second[a][b]
                for c in range(3):
                    coef = G[c, a, b].ravel()
                    if np.any(coef):
                        op = op - sp.diags(coef) @ self.first[c]
                op = sp.diags((1.0 / (h[a] * h[b])).ravel()) @ op
                ops[a][b] = ops[b][a] = op.tocsr()
        return ops

    def covariant_hessian(self, u) -> np.ndarray:
        v = np.ravel(u)
        H = np.empty(self.N + (3, 3))
        for a in range(3):
            for b in range(a, 3):
                H[..., a, b] = H[..., b, a] = (self.hessian_ops[a][b] @ v).reshape(self.N)
        return H

    def gradient(self, u) -> np.ndarray:
        v = np.ravel(u)
        return np.stack(
            [(self.first[a] @ v).reshape(self.N) / self.scale[a] for a in range(3)], axis=-1
        )

    @cached_property
    def stiffness(self):
        """Symmetric conservative form: ``-(u, Lap v)`` weighted by cell volumes."""
        Np, Nt, Nf = self.N
        hp, ht, hf = self.h
        pe = np.arange(Np + 1) * hp
        te = np.arange(Nt + 1) * ht
        rows, cols, vals = [], [], []
        idx = np.arange(self.npts).reshape(self.N)

        def add_face(i0, i1, coef):
            i0, i1, coef = i0.ravel(), i1.ravel(), coef.ravel()
            rows.extend([i0, i1, i0, i1])
            cols.extend([i0, i1, i1, i0])
            vals.extend([coef, coef, -coef, -coef])

        th_c = self.theta
        # psi faces between cells i and i+1: area element sin^2(psi_f) sin(theta) dtheta dphi
        vth = np.diff(-np.cos(te))
        coef = (np.sin(pe[1:-1]) ** 2)[:, None, None] * vth[None, :, None] * hf / hp
        add_face(idx[:-1], idx[1:], np.broadcast_to(coef, (Np - 1, Nt, Nf)))
        # theta faces: the sin^2(psi) of the area element cancels h_theta^2
        vpsi_plain = np.full(Np, hp)
        coef = vpsi_plain[:, None, None] * np.sin(te[1:-1])[None, :, None] * hf / ht
        add_face(idx[:, :-1], idx[:, 1:], np.broadcast_to(coef, (Np, Nt - 1, Nf)))
        # phi faces (periodic): sqrt(g)/h_phi^2 = 1/sin(theta)
        vth_over = np.diff(te)[None, :, None] / np.sin(th_c)[None, :, None]
        coef = vpsi_plain[:, None, None] * vth_over / hf
        add_face(idx, np.roll(idx, -1, axis=2), np.broadcast_to(coef, (Np, Nt, Nf)))
        K = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.npts, self.npts),
        )
        return K

    @cached_property
    def mass(self):
        return sp.diags(self.weights.ravel())

    def laplacian(self, u) -> np.ndarray:
        v = np.ravel(u)
        return (-(self.stiffness @ v) / self.weights.ravel()).reshape(self.N)

    def laplacian_spectrum(self, count: int = 6, per_level: int = 4):
        """Lowest eigenpairs of ``-Lap`` using the tensor-product structure.

        The stiffness and mass matrices separate into a Fourier problem in phi
        followed by tridiagonal generalized problems in theta and psi, so the
        discrete spectrum is exact (no iterative eigensolver).  Returns
        ``(values, vectors)`` with vectors of shape ``(count,) + shape``,
        orthonormal in the volume-weighted inner product.
        """
        from scipy.linalg import eigh

        Np, Nt, Nf = self.N
        hp, ht, hf = self.h
        pe = np.arange(Np + 1) * hp
        te = np.arange(Nt + 1) * ht
        vpsi = np.diff(pe / 2 - np.sin(2 * pe) / 4)
        vth = np.diff(-np.cos(te))

        def tri(face):
            A = np.zeros((face.size + 1,) * 2)
            i = np.arange(face.size)
            A[i, i] += face
            A[i + 1, i + 1] += face
            A[i, i + 1] -= face
            A[i + 1, i] -= face
            return A

        Kp = tri(np.sin(pe[1:-1]) ** 2 / hp)
        Kt = hf * tri(np.sin(te[1:-1]) / ht)
        Dt = np.diag(ht / np.sin(self.theta))
        modes = []
        for m in range(Nf // 2 + 1):
            mu = (2 - 2 * np.cos(2 * pi * m / Nf)) / hf
            nu, B = eigh(Kt + mu * Dt, np.diag(vth * hf))
            trig = [np.cos(m * self.phi)] if m in (0, Nf // 2) else [np.cos(m * self.phi), np.sin(m * self.phi)]
            for j in range(min(per_level, Nt)):
                lam, A = eigh(Kp + nu[j] * hp * np.eye(Np), np.diag(vpsi))
                for q in range(min(per_level, Np)):
                    for c in trig:
                        modes.append((lam[q], A[:, q], B[:, j], c))
        modes.sort(key=lambda t: t[0])
        modes = modes[:count]
        vals = np.array([t[0] for t in modes])
        vecs = np.array([np.einsum("i,j,k->ijk", a, b, c) for _, a, b, c in modes])
        norms = np.sqrt(np.einsum("aijk,ijk->a", vecs**2, self.weights))
        return vals, vecs / norms[:, None, None, None]

    def points(self) -> np.ndarray:
        return np.moveaxis(self.coords, 0, -1)

    def antipodal(self, u) -> np.ndarray:
        return np.roll(np.asarray(u)[::-1, ::-1, :], self.N[2] // 2, axis=2)
