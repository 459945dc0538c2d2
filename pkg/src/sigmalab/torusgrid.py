"""Flat torus ``[0, 2 pi)^(2n)`` with Fourier differentiation.

Real coordinates are ordered ``(x_1, ..., x_n, y_1, ..., y_n)`` with complex
coordinates ``z_j = x_j + i y_j`` and the flat metric ``g_{j kbar} = delta``.

For even resolutions the Nyquist mode is dropped from odd-order and mixed
derivatives and kept (as ``-(N/2)^2``) in pure second derivatives.
"""
from __future__ import annotations

from functools import cached_property
from math import pi

import numpy as np
import scipy.fft as sfft


class TorusGrid:
    kind = "torus"

    def __init__(self, n_c: int, res: int):
        if n_c < 1:
            raise ValueError("complex dimension must be positive")
        if res < 4:
            raise ValueError("res must be at least 4")
        self.n_c = int(n_c)
        self.n = self.n_c
        self.res = int(res)
        self.d = 2 * self.n_c
        self.h = 2 * pi / self.res
        self.axis = np.arange(self.res) * self.h

    @property
    def shape(self):
        return (self.res,) * self.d

    @property
    def npts(self) -> int:
        return self.res**self.d

    @property
    def volume(self) -> float:
        return (2 * pi) ** self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinate arrays, shape ``(2n,) + shape``."""
        return np.stack(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    def points(self) -> np.ndarray:
        return np.moveaxis(self.coords, 0, -1)

    @cached_property
    def _wave(self):
        k = np.fft.fftfreq(self.res, 1.0 / self.res)
        k1 = k.copy()
        if self.res % 2 == 0:
            k1[self.res // 2] = 0.0
        return k, k1

    def _symbol(self, axis: int, order: int):
        k, k1 = self._wave
        s = (1j * k1) if order == 1 else (-(k**2) if order == 2 else (1j * k1) ** order)
        shape = [1] * self.d
        shape[axis] = self.res
        return s.reshape(shape)

    def fft(self, u):
        return sfft.fftn(u, axes=range(-self.d, 0), workers=-1)

    def ifft(self, U, real: bool = True):
        out = sfft.ifftn(U, axes=range(-self.d, 0), workers=-1)
        return out.real if real else out

    def derivative(self, u, *axes, U=None):
        """Mixed partial derivative over the listed real axes (repeats allowed)."""
        if U is None:
            U = self.fft(u)
        counts = {}
        for a in axes:
            counts[a] = counts.get(a, 0) + 1
        sym = 1.0
        for a, m in counts.items():
            sym = sym * self._symbol(a, m)
        return self.ifft(U * sym)

    def mean(self, u) -> float:
        return float(np.mean(u))

    def integrate(self, u) -> float:
        return float(np.mean(u)) * self.volume

    def gradient(self, u) -> np.ndarray:
        U = self.fft(u)
        return np.stack([self.derivative(None, a, U=U) for a in range(self.d)], axis=-1)

    def laplacian(self, u) -> np.ndarray:
        U = self.fft(u)
        return sum(self.derivative(None, a, a, U=U) for a in range(self.d))

    def real_hessian(self, u) -> np.ndarray:
        U = self.fft(u)
        H = np.empty(self.shape + (self.d, self.d))
        for a in range(self.d):
            for b in range(a, self.d):
                H[..., a, b] = H[..., b, a] = self.derivative(None, a, b, U=U)
        return H

    def complex_gradient(self, u) -> np.ndarray:
        """``d u / d z_j = (u_{x_j} - i u_{y_j}) / 2``, shape ``shape + (n,)``."""
        G = self.gradient(u)
        n = self.n_c
        return 0.5 * (G[..., :n] - 1j * G[..., n:])

    def _pair_symbol(self, a: int, b: int):
        return self._symbol(a, 2) if a == b else self._symbol(a, 1) * self._symbol(b, 1)

    @cached_property
    def complex_symbols(self) -> dict:
        """Fourier symbols of ``d^2 / dz_j dzbar_k`` for ``j <= k``."""
        n = self.n_c
        S = self._pair_symbol
        out = {}
        for j in range(n):
            for k in range(j, n):
                out[j, k] = 0.25 * (S(j, k) + S(n + j, n + k)) + 0.25j * (S(j, n + k) - S(n + j, k))
        return out

    def complex_hessian(self, u, U=None) -> np.ndarray:
        """``u_{j kbar} = d^2 u / dz_j dzbar_k``, Hermitian per node."""
        if U is None:
            U = self.fft(u)
        n = self.n_c
        H = np.empty(self.shape + (n, n), dtype=complex)
        for (j, k), sym in self.complex_symbols.items():
            v = self.ifft(U * sym, real=False)
            if j == k:
                H[..., j, j] = v.real
            else:
                H[..., j, k] = v
                H[..., k, j] = np.conj(v)
        return H

    def evaluate(self, u, pts) -> np.ndarray:
        """Trigonometric interpolant of grid values at arbitrary points ``(..., 2n)``."""
        U = self.fft(u) / self.npts
        k, _ = self._wave
        pts = np.asarray(pts, dtype=float)
        shp = pts.shape[:-1]
        P = pts.reshape(-1, self.d)
        out = np.empty(P.shape[0])
        kk = np.meshgrid(*([k] * self.d), indexing="ij")
        K = np.stack([a.ravel() for a in kk], axis=1)
        nyq = (np.abs(K) == self.res // 2) if self.res % 2 == 0 else np.zeros(K.shape, dtype=bool)
        Kreg = np.where(nyq, 0.0, K)
        Uf = U.ravel()
        for i0 in range(0, P.shape[0], 256):
            Pc = P[i0 : i0 + 256]
            ph = np.exp(1j * (Pc @ Kreg.T))
            # Nyquist factors enter as cosines so the interpolant is real
            for a in np.nonzero(nyq.any(axis=0))[0]:
                ph = ph * np.where(nyq[:, a][None, :], np.cos(np.outer(Pc[:, a], K[:, a])), 1.0)
            out[i0 : i0 + 256] = (ph @ Uf).real
        return out.reshape(shp)
