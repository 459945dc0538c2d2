from math import comb, pi

import numpy as np
import pytest

from sigmalab import cm_solver as cm
from sigmalab.errors import CompatibilityError, ConvergenceError, InadmissibleError
from sigmalab.sphere import Sphere3Grid, SphereGrid


@pytest.fixture(scope="module")
def g():
    return SphereGrid(24)


@pytest.fixture(scope="module")
def g48():
    return SphereGrid(48)


def harmonic2(X):
    return 3 * X[2] ** 2 - 1 + X[0] * X[1]


# --- covariant Hessian / residual ----------------------------------------------


def test_W_of_constant_and_linear(g):
    X = g.coords
    ident = np.broadcast_to(np.eye(2), g.shape + (2, 2))
    np.testing.assert_allclose(cm.covariant_hessian(np.ones(g.shape), g), ident, atol=1e-13)
    for i in range(3):
        np.testing.assert_allclose(cm.covariant_hessian(1 + 0.7 * X[i], g), ident, atol=1e-12)
    sk = cm.sigma_k_field(cm.covariant_hessian(np.ones(g.shape), g), 2)
    np.testing.assert_allclose(sk, comb(2, 2), atol=1e-13)


def test_trace_matches_spectral_laplacian(g):
    u = 1 + 0.1 * harmonic2(g.coords)
    W = cm.covariant_hessian(u, g)
    tr = W[..., 0, 0] + W[..., 1, 1]
    np.testing.assert_allclose(tr, g.laplacian(u) + 2 * u, atol=1e-8)


def test_residual_examples(g):
    one = np.ones(g.shape)
    np.testing.assert_allclose(cm.residual(one, np.full(g.shape, 1.0), 2, g), 0, atol=1e-10)
    np.testing.assert_allclose(cm.residual(one, np.full(g.shape, 1.1), 2, g), -0.1, atol=1e-10)
    u = 1 + 0.1 * harmonic2(g.coords)
    f = cm.sigma_k_field(cm.covariant_hessian(u, g), 2)
    np.testing.assert_allclose(cm.residual(u, f, 2, g), 0, atol=1e-14)


def test_residual_inadmissible_reports_node(g):
    u = 1 + 2.0 * harmonic2(g.coords)
    with pytest.raises(InadmissibleError) as exc:
        cm.residual(u, np.ones(g.shape), 2, g)
    assert exc.value.eigenvalues is not None


def test_residual_invariant_under_linear_addition(g):
    u = 1 + 0.1 * harmonic2(g.coords)
    f = np.ones(g.shape)
    r0 = cm.residual(u, f, 2, g)
    r1 = cm.residual(u + 0.3 * g.coords[1] - 0.2 * g.coords[2], f, 2, g)
    np.testing.assert_allclose(r0, r1, atol=1e-12)


# --- gauge / compatibility -------------------------------------------------------


def test_project_orthogonal_examples(g):
    X = g.coords
    np.testing.assert_allclose(cm.project_orthogonal(X[0], g), 0, atol=1e-14)
    np.testing.assert_allclose(cm.project_orthogonal(np.ones(g.shape), g), 1, atol=1e-14)
    np.testing.assert_allclose(cm.project_orthogonal(1 + 0.3 * X[1], g), 1, atol=1e-13)
    u = 1 + X[2] ** 3 + X[0]
    p = cm.project_orthogonal(u, g)
    np.testing.assert_allclose(cm.project_orthogonal(p, g), p, atol=1e-13)
    np.testing.assert_allclose(cm.moments(p, g), 0, atol=1e-13)


def test_compatibility_examples(g):
    X = g.coords
    _, m = cm.compatibility_check(1 + X[2] ** 2 + X[0] * X[1], g)
    assert m < 1e-13
    mom, m = cm.compatibility_check(1 + X[2], g)
    np.testing.assert_allclose(mom, [0, 0, 4 * pi / 3], atol=1e-13)
    _, m = cm.compatibility_check(np.full(g.shape, 3.0), g)
    assert m < 1e-13


def test_coordinate_functions_s3():
    g3 = Sphere3Grid(8)
    X = cm.coordinate_functions(g3)
    assert X.shape == (4,) + g3.shape
    G = np.array([[g3.integrate(a * b) for b in X] for a in X])
    # second-order quadrature at res 8
    np.testing.assert_allclose(np.diag(G), np.full(4, pi**2 / 2), rtol=3e-2)
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-12


# --- Newton ----------------------------------------------------------------------


def test_newton_constant(g48):
    f = cm.constant_rhs(g48, 2)
    u, rep = cm.newton_solve(f, 2, np.full(g48.shape, 1.2), g48)
    assert rep.converged and rep.iterations <= 8
    assert rep.residual <= 1e-9
    np.testing.assert_allclose(u, 1, atol=1e-12)
    assert rep.min_margin > 0


def test_newton_manufactured_k2(g48):
    X = g48.coords
    ustar = 1 + 0.1 * harmonic2(X) + 0.05 * X[0] ** 3 * X[2]
    f = cm.sigma_k_field(cm.covariant_hessian(ustar, g48), 2)
    u, rep = cm.newton_solve(f, 2, np.ones(g48.shape), g48)
    assert rep.converged
    assert np.max(np.abs(u - cm.project_orthogonal(ustar, g48))) < 1e-7


def test_newton_manufactured_k1(g):
    X = g.coords
    ustar = 1 + 0.2 * harmonic2(X)
    f = cm.sigma_k_field(cm.covariant_hessian(ustar, g), 1)
    u, rep = cm.newton_solve(f, 1, np.ones(g.shape), g)
    assert np.max(np.abs(u - ustar)) < 1e-10


def test_newton_translation_gauge(g):
    X = g.coords
    f = cm.sigma_k_field(cm.covariant_hessian(1 + 0.1 * harmonic2(X), g), 2)
    u1, _ = cm.newton_solve(f, 2, np.ones(g.shape), g)
    u2, _ = cm.newton_solve(f, 2, 1 + 0.2 * X[0] - 0.1 * X[2], g)
    np.testing.assert_allclose(u1, u2, atol=1e-9)


def test_newton_incompatible_rejected(g):
    f = 1 + 0.5 * g.coords[2]
    with pytest.raises(CompatibilityError):
        cm.newton_solve(f, 2, np.ones(g.shape), g)


def test_newton_incompatible_stalls_with_moment(g):
    f = 1 + 0.5 * g.coords[2]
    with pytest.raises(ConvergenceError) as exc:
        cm.newton_solve(f, 2, np.ones(g.shape), g, check_compatibility=False, max_iter=10)
    rep = exc.value.report
    assert not rep.converged
    assert rep.moment_norm == pytest.approx(0.5 * 4 * pi / 3, rel=1e-10)
    assert rep.residual > 1e-3


def test_newton_inadmissible_start(g):
    with pytest.raises(InadmissibleError):
        cm.newton_solve(np.ones(g.shape), 2, -np.ones(g.shape), g)


def test_newton_requires_positive_f(g):
    f = np.ones(g.shape)
    f[0, 0] = 0
    with pytest.raises(ValueError):
        cm.newton_solve(f, 2, np.ones(g.shape), g)


def test_newton_no_raise_returns_report(g):
    f = 1 + 0.5 * g.coords[2]
    u, rep = cm.newton_solve(f, 2, np.ones(g.shape), g, check_compatibility=False, max_iter=3, raise_on_failure=False)
    assert not rep.converged and rep.message


def test_newton_s3_manufactured():
    g3 = Sphere3Grid(8)
    X = g3.coords
    ustar = 1 + 0.05 * (X[0] ** 2 - X[1] ** 2) + 0.03 * X[2] * X[3]
    f = cm.sigma_k_field(cm.covariant_hessian(ustar, g3), 2)
    u, rep = cm.newton_solve(f, 2, np.ones(g3.shape), g3)
    assert rep.converged
    assert np.max(np.abs(u - cm.project_orthogonal(ustar, g3))) < 1e-8


def test_roundoff_floor_scales(g, g48):
    one = np.ones(g.shape)
    assert cm.roundoff_floor(g48, np.ones(g48.shape), 1.0) > cm.roundoff_floor(g, one, 1.0)
    assert cm.roundoff_floor(g48, np.ones(g48.shape), 1.0) < 1e-8


# --- continuation ------------------------------------------------------------------


def test_exponent_rules():
    assert cm.exponent_p(2, "C21") == pytest.approx(1.5)
    assert cm.exponent_p(5, "C21") == pytest.approx(3 / 8)
    assert cm.exponent_p(3, "C11") == pytest.approx(0.5)
    g = np.array([0.0, 1.0])
    np.testing.assert_allclose(cm.regularized_rhs(g, 0.1, 2, "C21") ** 1.5, g + 0.1)
    with pytest.raises(ValueError):
        cm.exponent_p(2, "C99")


def test_sweep_constant_family(g):
    reps = cm.degenerate_sweep(np.full(g.shape, 1.0), 2, [1e-1, 1e-2, 1e-3], g)
    assert all(r.converged for r in reps)
    s = [r.sup_sigma1 for r in reps]
    # f = (1 + eps)^(2/3): u = sqrt(f), sigma_1 = 2 sqrt(f)
    np.testing.assert_allclose(s, [2 * (1 + e) ** (1 / 3) for e in (1e-1, 1e-2, 1e-3)], rtol=1e-9)


def test_sweep_degenerate_family_is_stable():
    g = SphereGrid(24)
    X = g.coords
    gg = 4 * (X[2] ** 2 - 0.5) ** 2
    reps = cm.degenerate_sweep(gg, 2, [1e-1, 1e-2, 1e-3, 1e-4], g)
    assert all(r.converged for r in reps)
    s = [r.sup_sigma1 for r in reps]
    assert max(s) / min(s) < 2
    assert reps[-1].inf_f < reps[0].inf_f


def test_sweep_contrast_rule_runs(g):
    X = g.coords
    reps = cm.degenerate_sweep(4 * (X[2] ** 2 - 0.5) ** 2, 2, [1e-1, 1e-2], g, rule="C11")
    assert len(reps) == 2 and all(np.isfinite(r.sup_sigma1) for r in reps)


def test_sweep_rejects_odd_profile(g):
    with pytest.raises(CompatibilityError):
        cm.degenerate_sweep(1 + g.coords[2], 2, [1e-1, 1e-2], g)


def test_sweep_rejects_increasing_schedule(g):
    with pytest.raises(ValueError):
        cm.degenerate_sweep(np.ones(g.shape), 2, [1e-3, 1e-1], g)


def test_sweep_rejects_negative_profile(g):
    with pytest.raises(ValueError):
        cm.degenerate_sweep(g.coords[2] ** 2 - 0.5, 2, [1e-1], g)


# --- spectrum / trace ---------------------------------------------------------------


def test_spectrum_s2():
    rep = cm.spectrum_check(SphereGrid(16))
    assert rep.passed and rep.multiplicity == 3 and rep.kernel_dim == 1
    assert rep.subspace_angle <= 1e-6
    assert rep.eigenvalues[0] == pytest.approx(0, abs=1e-10)


def test_spectrum_s3():
    rep = cm.spectrum_check(Sphere3Grid(32))
    assert rep.passed and rep.multiplicity == 4
    assert rep.max_deviation <= 1e-2


def test_spectrum_s3_coarse_flags_deviation():
    rep = cm.spectrum_check(Sphere3Grid(16))
    assert 1e-2 < rep.max_deviation < 5e-2 and not rep.passed
    assert rep.subspace_angle < 1e-2


def test_trace_identity(g):
    assert cm.trace_identity_check(np.ones(g.shape), g) < 1e-12
    X = g.coords
    assert cm.trace_identity_check(harmonic2(X), g) < 1e-8
    rng = np.random.default_rng(3)
    v = rng.normal(size=g.ncoef) * np.exp(-0.3 * g.packed_degree)
    u = g.synthesize(g.unpack(v))
    assert cm.trace_identity_check(u, g) < 1e-8
