from math import comb, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmalab import matcalc, symfun
from sigmalab.errors import InadmissibleError


def rand_orth(n, rng):
    Q, R = np.linalg.qr(rng.normal(size=(n, n)))
    return Q * np.sign(np.diag(R))


def rand_unitary(n, rng):
    Z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def fd_grad(A, k, h=None):
    """Central differences of F_value over symmetric perturbations, one Richardson step."""
    n = A.shape[0]
    h = h or 1e-5 * (1 + np.abs(A).max())
    G = np.zeros((n, n))

    def d(i, j, s):
        E = np.zeros((n, n))
        E[i, j] += s
        if i != j:
            E[j, i] += s
        return (matcalc.F_value(A + E, k) - matcalc.F_value(A - E, k)) / (2 * s)

    for i in range(n):
        for j in range(i, n):
            v = (4 * d(i, j, h / 2) - d(i, j, h)) / 3
            if i == j:
                G[i, i] = v
            else:
                G[i, j] = G[j, i] = v / 2
    return G


# --- oracle values -------------------------------------------------------------


def test_eigenvalues_examples():
    np.testing.assert_allclose(matcalc.eigenvalues(np.eye(3)), (1, 1, 1))
    np.testing.assert_allclose(matcalc.eigenvalues(np.diag([3.0, 1, -1])), (3, 1, -1))
    rng = np.random.default_rng(0)
    Q = rand_orth(5, rng)
    lam = np.array([4.0, 2.5, 1.0, -0.5, -3.0])
    np.testing.assert_allclose(matcalc.eigenvalues(Q @ np.diag(lam) @ Q.T), lam, atol=1e-10)


def test_eigenvalues_rejects_non_hermitian():
    with pytest.raises(ValueError):
        matcalc.eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_F_value_examples():
    assert matcalc.F_value(np.eye(3), 2) == pytest.approx(sqrt(3))
    assert matcalc.F_value(np.diag([2.0, 1, 1]), 2) == pytest.approx(sqrt(5))
    for t in (0.5, 3.0):
        assert matcalc.F_value(t * np.eye(4), 3) == pytest.approx(t * comb(4, 3) ** (1 / 3))
    assert matcalc.binomial_value(4, 3) == pytest.approx(comb(4, 3) ** (1 / 3))


def test_F_value_inadmissible():
    with pytest.raises(InadmissibleError):
        matcalc.F_value(np.diag([3.0, 1, -1]), 2)


def test_F_grad_examples():
    assert np.trace(matcalc.F_grad(np.eye(4), 2)) == pytest.approx(comb(4, 2) ** 0.5)
    G = matcalc.F_grad(np.diag([2.0, 1, 1]), 2)
    assert np.trace(G) == pytest.approx(4 / sqrt(5))
    np.testing.assert_allclose(np.diag(G), 0.5 / sqrt(5) * np.array([2, 3, 3]))
    np.testing.assert_allclose(G, fd_grad(np.diag([2.0, 1, 1]), 2), rtol=1e-8, atol=1e-10)


def test_F_hess_at_diagonal_example():
    T = matcalc.F_hess_at_diagonal(np.array([2.0, 1, 1]), 2)
    assert T[0, 1, 1, 0] == pytest.approx(-1 / (2 * sqrt(5)))
    # finite-difference oracle: perturb the (1,2) entry symmetrically
    h = 1e-4
    A = np.diag([2.0, 1, 1])
    E = np.zeros((3, 3))
    E[0, 1] = E[1, 0] = 1.0
    d2 = (matcalc.F_value(A + h * E, 2) - 2 * matcalc.F_value(A, 2) + matcalc.F_value(A - h * E, 2)) / h**2
    # d^2/dt^2 F(A + tE) = T[0,1,1,0] + T[1,0,0,1]
    assert d2 == pytest.approx(T[0, 1, 1, 0] + T[1, 0, 0, 1], rel=1e-5)


def test_F_hess_sparsity_and_symmetry():
    T = matcalc.F_hess_at_diagonal(np.array([3.0, 2.0, 1.0, 0.5]), 3)
    n = 4
    for i, j, s, t in np.ndindex(n, n, n, n):
        structural = (i == j and s == t) or (i != j and s == j and t == i)
        if not structural:
            assert T[i, j, s, t] == 0
        assert T[i, j, s, t] == pytest.approx(T[s, t, i, j])
    U = matcalc.F_hess_at_diagonal(np.ones(4), 3)
    for p in ([1, 0, 2, 3], [3, 2, 1, 0]):
        np.testing.assert_allclose(U[np.ix_(p, p, p, p)], U, atol=1e-15)


def test_F_hess_form_matches_second_differences():
    rng = np.random.default_rng(4)
    for n, k in [(3, 2), (4, 3), (5, 5), (6, 4)]:
        A = matcalc.random_admissible(n, k, 1, rng)[0] + 0.5 * np.eye(n)
        H = rng.normal(size=(n, n))
        H = (H + H.T) / 2
        h = 1e-4 * (1 + np.abs(A).max())

        def d2(s):
            return (matcalc.F_value(A + s * H, k) - 2 * matcalc.F_value(A, k) + matcalc.F_value(A - s * H, k)) / s**2

        fd = (4 * d2(h / 2) - d2(h)) / 3
        assert matcalc.F_hess_form(A, k, H) == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_concavity_gap_examples():
    rng = np.random.default_rng(1)
    for n, k in [(3, 2), (4, 3), (6, 6)]:
        W = matcalc.random_admissible(n, k, 5, rng)
        gap, scale = matcalc.concavity_gap(W, W, k, return_scale=True)
        assert np.all(np.abs(gap) <= 1e-9 * scale)
        gap0 = matcalc.concavity_gap(W, np.zeros_like(W), k)
        assert np.all(np.abs(gap0) <= 1e-12)


def test_concavity_gap_matches_second_difference_route():
    rng = np.random.default_rng(2)
    for n, k in [(3, 2), (4, 3), (5, 4)]:
        W = matcalc.random_admissible(n, k, 1, rng)[0] + 0.2 * np.eye(n)
        A = rng.normal(size=(n, n))
        A = (A + A.T) / 2
        # gap = -(k-1) g''/g for g = (sigma_k/sigma_1)^(1/(k-1)) along W + tA
        assert matcalc.concavity_gap(W, A, k) == pytest.approx(matcalc.concavity_gap_fd(W, A, k), rel=1e-4, abs=1e-6)


def test_concavity_gap_inadmissible():
    with pytest.raises(InadmissibleError):
        matcalc.concavity_gap(np.diag([3.0, 1, -1]), np.eye(3), 2)


def test_segment_examples():
    rng = np.random.default_rng(5)
    W = matcalc.random_admissible(4, 3, 1, rng)[0]
    r = matcalc.segment_concavity_check(W, W, 3)
    assert abs(r.min_gap_F) < 1e-12 and abs(r.min_gap_log) < 1e-12
    r = matcalc.segment_concavity_check(W, 2 * W, 3)
    assert abs(r.min_gap_F) < 1e-12 * matcalc.F_value(2 * W, 3)
    W2 = matcalc.random_admissible(4, 3, 1, rng)[0]
    r = matcalc.segment_concavity_check(W, W2, 3, m=101)
    assert r.admissible and r.points == 101
    assert r.min_gap_F >= -1e-9 and r.min_gap_log >= -1e-9


def test_segment_between_admissible_points_stays_admissible():
    # Gamma_k is convex, so no exit is possible between admissible endpoints
    rng = np.random.default_rng(6)
    W = matcalc.random_admissible(5, 3, 20, rng)
    for i in range(0, 20, 2):
        assert matcalc.segment_concavity_check(W[i], W[i + 1], 3, m=51).admissible


def test_segment_rejects_inadmissible_endpoint():
    with pytest.raises(InadmissibleError):
        matcalc.segment_concavity_check(np.eye(3), np.diag([2.0, -0.45, 1.0]), 3)


# --- invariants ----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_unitary_invariance(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    A = matcalc.random_admissible(n, k, 1, rng)[0]
    Q = rand_orth(n, rng)
    U = rand_unitary(n, rng)
    f = matcalc.F_value(A, k)
    assert matcalc.F_value(Q @ A @ Q.T, k) == pytest.approx(f, rel=1e-10)
    AU = U @ A @ U.conj().T
    AU = (AU + AU.conj().T) / 2
    assert matcalc.F_value(AU, k) == pytest.approx(f, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_euler_identities(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    A = matcalc.random_admissible(n, k, 1, rng)[0]
    G = matcalc.F_grad(A, k)
    f = matcalc.F_value(A, k)
    assert np.sum(G * A) == pytest.approx(f, rel=1e-10)
    # second derivative along the ray vanishes (F is 1-homogeneous)
    assert abs(matcalc.F_hess_form(A, k, A)) <= 1e-8 * f


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_grad_positive_definite(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    A = matcalc.random_admissible(n, k, 1, rng)[0]
    assert np.linalg.eigvalsh(matcalc.F_grad(A, k)).min() > 0


def test_grad_hermitian_input():
    rng = np.random.default_rng(9)
    U = rand_unitary(4, rng)
    A = U @ np.diag([3.0, 2.0, 1.0, 0.5]) @ U.conj().T
    A = (A + A.conj().T) / 2
    G = matcalc.F_grad(A, 3)
    np.testing.assert_allclose(G, G.conj().T, atol=1e-13)
    assert np.real(np.sum(G.T * A)) == pytest.approx(matcalc.F_value(A, 3), rel=1e-12)


def test_near_degenerate_spectrum_derivatives():
    rng = np.random.default_rng(8)
    Q = rand_orth(4, rng)
    lam = np.array([2.0, 1.0 + 1e-8, 1.0, 0.7])
    A = Q @ np.diag(lam) @ Q.T
    A = (A + A.T) / 2
    G = matcalc.F_grad(A, 3)
    np.testing.assert_allclose(G, fd_grad(A, 3), rtol=1e-6, atol=1e-9)
    T = matcalc.F_hess_at_diagonal(lam, 3)
    assert np.all(np.isfinite(T))


def test_random_admissible_and_suite():
    W = matcalc.random_admissible(5, 4, 50, np.random.default_rng(0))
    assert W.shape == (50, 5, 5)
    np.testing.assert_allclose(W, np.swapaxes(W, -1, -2), atol=1e-14)
    assert np.all(symfun.in_gamma_k(np.linalg.eigvalsh(W), 4))
    r = matcalc.concavity_suite(4, 3, 5000, seed=1)
    assert r.holds and r.samples == 5000
