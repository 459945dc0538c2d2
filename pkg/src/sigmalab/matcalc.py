"""The operator F = sigma_k^(1/k) on symmetric / Hermitian matrices.

Derivatives are evaluated in the eigenbasis.  The off-diagonal second derivative
``-(1/k) sigma_k^(1/k-1) sigma_{k-2;ij}`` is a polynomial in the eigenvalues, so
no divided differences are needed when eigenvalues coalesce.

Conventions: ``F_grad`` returns ``G = Q diag(f_i) Q^*`` so that
``dF = tr(G dA) = sum_ij G_ji dA_ij``; for real symmetric input ``G`` is the
ordinary gradient with respect to the (symmetrized) entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from . import symfun
from .errors import InadmissibleError


def check_hermitian(A, tol: float = 1e-14) -> np.ndarray:
    A = np.asarray(A)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2))), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric/Hermitian")
    return A


def eigh_desc(A):
    """Eigenvalues (decreasing) and matching eigenvectors of a Hermitian batch."""
    lam, Q = np.linalg.eigh(A)
    return lam[..., ::-1], Q[..., ::-1]


def eigenvalues(A) -> np.ndarray:
    """Real eigenvalues in decreasing order."""
    A = check_hermitian(A)
    return np.linalg.eigvalsh(A)[..., ::-1]


def _require_admissible(lam, k):
    ok = symfun.in_gamma_k(lam, k)
    if not np.all(ok):
        bad = np.argwhere(~np.atleast_1d(ok))
        where = tuple(bad[0]) if bad.size else None
        sample = np.atleast_2d(lam)[where[0]] if where else lam
        raise InadmissibleError(
            f"eigenvalues outside Gamma_{k}: {np.round(sample, 6)}", where=where, eigenvalues=sample
        )


def F_value(A, k: int):
    """``sigma_k(lambda(A))^(1/k)``; raises :class:`InadmissibleError` outside Gamma_k."""
    lam = eigenvalues(A)
    _require_admissible(lam, k)
    out = symfun.sigma(lam, k) ** (1.0 / k)
    return out


def spectral_gradient(lam, k: int) -> np.ndarray:
    """``d sigma_k^(1/k) / d lam_i = (1/k) sigma_k^(1/k-1) sigma_{k-1;i}``."""
    sk = symfun.sigma(lam, k)
    d = symfun.sigma_deleted(lam, k - 1)
    return (np.asarray(sk)[..., None] ** (1.0 / k - 1.0) / k) * d


def spectral_hessian(lam, k: int) -> np.ndarray:
    """Scalar Hessian of ``sigma_k^(1/k)`` in the eigenvalues, shape ``(..., n, n)``."""
    sk = np.asarray(symfun.sigma(lam, k))[..., None, None]
    s1 = symfun.sigma_deleted(lam, k - 1)
    s2 = symfun.sigma_deleted2(lam, k - 2)
    outer = s1[..., :, None] * s1[..., None, :]
    return sk ** (1.0 / k - 1.0) / k * (s2 + (1.0 / k - 1.0) * outer / sk)


def F_grad(A, k: int) -> np.ndarray:
    """Derivative matrix ``Q diag((1/k) sigma_k^(1/k-1) sigma_{k-1;i}) Q^*``."""
    A = check_hermitian(A)
    lam, Q = eigh_desc(A)
    _require_admissible(lam, k)
    g = spectral_gradient(lam, k)
    return (Q * g[..., None, :]) @ np.conj(np.swapaxes(Q, -1, -2))


def F_hess_at_diagonal(lam, k: int) -> np.ndarray:
    """Rank-4 tensor ``T[i, j, s, t]`` of second derivatives at ``diag(lam)``.

    Nonzero only for ``i == j, s == t`` (scalar Hessian in the eigenvalues) and for
    ``i != j, s == j, t == i`` where it equals ``-(1/k) sigma_k^(1/k-1) sigma_{k-2;ij}``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1:
        raise ValueError("F_hess_at_diagonal expects a single eigenvalue vector")
    _require_admissible(lam, k)
    n = lam.shape[0]
    T = np.zeros((n, n, n, n))
    H = spectral_hessian(lam, k)
    sk = symfun.sigma(lam, k)
    off = -(sk ** (1.0 / k - 1.0) / k) * symfun.sigma_deleted2(lam, k - 2)
    for i in range(n):
        for s in range(n):
            T[i, i, s, s] = H[i, s]
            if i != s:
                T[i, s, s, i] = off[i, s]
    return T


def _rotate(Q, H):
    return np.conj(np.swapaxes(Q, -1, -2)) @ H @ Q


def F_hess_form(A, k: int, H1, H2=None):
    """Second derivative ``d^2 F(A)[H1, H2]`` for Hermitian directions (batched)."""
    A = check_hermitian(A)
    lam, Q = eigh_desc(A)
    _require_admissible(lam, k)
    a = _rotate(Q, H1)
    b = a if H2 is None else _rotate(Q, H2)
    H = spectral_hessian(lam, k)
    sk = np.asarray(symfun.sigma(lam, k))[..., None, None]
    off = -(sk ** (1.0 / k - 1.0) / k) * symfun.sigma_deleted2(lam, k - 2)
    da = np.diagonal(a, axis1=-2, axis2=-1)
    db = np.diagonal(b, axis1=-2, axis2=-1)
    diag_part = np.einsum("...i,...is,...s->...", da, H, db)
    off_part = np.einsum("...ij,...ij,...ji->...", off, a, b)
    return np.real(diag_part + off_part)


# ---------------------------------------------------------------------------
# concavity


def sigma_derivs(W, A, k: int):
    """``(sigma_k, sigma_k^{ij} A_ij, sigma_k^{ij,st} A_ij A_st)`` at ``W``, batched."""
    lam, Q = eigh_desc(W)
    a = _rotate(Q, A)
    da = np.real(np.diagonal(a, axis1=-2, axis2=-1))
    sk = symfun.sigma(lam, k)
    first = np.einsum("...i,...i->...", symfun.sigma_deleted(lam, k - 1), da)
    s2 = symfun.sigma_deleted2(lam, k - 2)
    second = np.einsum("...i,...is,...s->...", da, s2, da) - np.einsum(
        "...ij,...ij->...", s2, np.abs(a) ** 2
    )
    return lam, sk, first, second


def concavity_gap(W, A, k: int, *, return_scale: bool = False):
    """Right side minus left side of the quadratic-form inequality for sigma_k.

    The inequality follows from concavity of ``(sigma_k / sigma_1)^(1/(k-1))``;
    the result is nonnegative for every symmetric ``A`` and every ``W`` with
    eigenvalues in Gamma_k.
    """
    W = check_hermitian(W, tol=1e-12)
    lam, sk, first, second = sigma_derivs(W, A, k)
    _require_admissible(lam, k)
    s1 = np.real(np.trace(W, axis1=-2, axis2=-1))
    trA = np.real(np.trace(A, axis1=-2, axis2=-1))
    a = first / sk
    b = trA / s1
    lhs = second / sk
    rhs = (k - 2) / (k - 1) * a**2 + 2.0 / (k - 1) * a * b - k / (k - 1) * b**2
    gap = rhs - lhs
    if return_scale:
        scale = np.maximum.reduce([np.ones_like(a), np.abs(lhs), a**2, b**2])
        return gap, scale
    return gap


def ratio_power(W, k: int):
    """``(sigma_k / sigma_1)^(1/(k-1))`` of a Hermitian batch."""
    lam = np.linalg.eigvalsh(W)
    return (symfun.sigma(lam, k) / symfun.sigma(lam, 1)) ** (1.0 / (k - 1))


def concavity_gap_fd(W, A, k: int, h: Optional[float] = None):
    """Finite-difference stand-in for :func:`concavity_gap` along ``t -> W + tA``.

    Uses ``gap = -(k-1) g''(0) / g(0)`` with ``g = (sigma_k/sigma_1)^(1/(k-1))``,
    second differences with one Richardson step.
    """
    if h is None:
        h = 1e-3 * (1.0 + np.max(np.abs(W))) / (1.0 + np.max(np.abs(A)))
    g0 = ratio_power(W, k)

    def d2(step):
        return (ratio_power(W + step * A, k) - 2 * g0 + ratio_power(W - step * A, k)) / step**2

    g2 = (16 * d2(h / 2) - d2(h)) / 15
    return -(k - 1) * g2 / g0


@dataclass
class SegmentResult:
    min_gap_F: float
    min_gap_log: float
    exit_t: Optional[float]
    points: int

    @property
    def admissible(self) -> bool:
        return self.exit_t is None


def segment_concavity_check(W1, W2, k: int, m: int = 101) -> SegmentResult:
    """Chord-minus-function gaps of F and log sigma_k along ``(1-t) W1 + t W2``.

    Gaps are ``F(seg(t)) - [(1-t) F(W1) + t F(W2)]`` and the same for
    ``log sigma_k``; both are nonnegative by concavity.  If the segment leaves
    Gamma_k the first exit parameter is reported and the gaps are computed on the
    admissible prefix only.
    """
    W1 = check_hermitian(W1, tol=1e-12)
    W2 = check_hermitian(W2, tol=1e-12)
    t = np.linspace(0.0, 1.0, m)
    seg = (1 - t)[:, None, None] * W1 + t[:, None, None] * W2
    lam = np.linalg.eigvalsh(seg)
    ok = symfun.in_gamma_k(lam, k)
    if not (ok[0] and ok[-1]):
        raise InadmissibleError("segment endpoints must be admissible")
    exit_t = None
    if not np.all(ok):
        first_bad = int(np.argmin(ok))
        exit_t = float(t[first_bad])
        lam, t = lam[:first_bad], t[:first_bad]
    sk = symfun.sigma(lam, k)
    F = sk ** (1.0 / k)
    F1 = symfun.sigma(np.linalg.eigvalsh(W1), k) ** (1.0 / k)
    F2 = symfun.sigma(np.linalg.eigvalsh(W2), k) ** (1.0 / k)
    gap_F = F - ((1 - t) * F1 + t * F2)
    gap_L = np.log(sk) - ((1 - t) * np.log(F1**k) + t * np.log(F2**k))
    return SegmentResult(float(gap_F.min()), float(gap_L.min()), exit_t, int(t.size))


def binomial_value(n: int, k: int) -> float:
    """``F(I) = C(n,k)^(1/k)`` for the n x n identity."""
    return comb(n, k) ** (1.0 / k)


def random_admissible(n: int, k: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` symmetric matrices ``Q diag(lam) Q^T`` with ``lam`` in Gamma_k and Haar ``Q``."""
    lam = symfun.sample_gamma_k(n, k, size, rng)
    Z = rng.standard_normal((size, n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[:, None, :]
    return np.einsum("bij,bj,bkj->bik", Q, lam, Q)


def concavity_suite(n: int, k: int, sample_count: int, seed: int, *, tol: float = 1e-9) -> symfun.IneqReport:
    """Sampled :func:`concavity_gap` over random admissible ``W`` and symmetric ``A``.

    Residual is ``gap / scale + tol`` so ``>= 0`` means the inequality held to
    ``tol`` relative to the natural scale of the terms.
    """
    if not (2 <= k <= n):
        raise ValueError(f"need 2 <= k <= n, got n={n}, k={k}")
    rng = np.random.default_rng(seed)
    W = random_admissible(n, k, sample_count, rng)
    A = rng.standard_normal((sample_count, n, n))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    gap, scale = concavity_gap(W, A, k, return_scale=True)
    res = gap / scale + tol
    lam = np.linalg.eigvalsh(W)
    return symfun._report("concavity", lam, res, params={"n": n, "k": k, "seed": seed})
