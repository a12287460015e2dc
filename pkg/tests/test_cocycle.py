import numpy as np
import pytest

from domlab import dynamics, properties
from domlab.cocycle import (SplittingField, domination_fit, lyapunov_spectrum,
                            oseledets_splitting, psi, psi_n, subspace_angle)
from domlab.dynamics import CAT_CHI, CAT_LAMBDA_S, CAT_LAMBDA_U
from domlab.errors import NumericalError, ResolutionError

TWO_LOG_LS = 2.0 * np.log(CAT_LAMBDA_S)


def test_cat_spectrum(cat):
    rep = lyapunov_spectrum(cat, [0.37, 0.81], 2000)
    assert np.abs(rep.exponents - [CAT_CHI, -CAT_CHI]).max() < 1e-6
    assert abs(rep.exponents.sum()) < 1e-6


def test_identity_spectrum(identity):
    rep = lyapunov_spectrum(identity, [0.2, 0.9], 500)
    assert np.array_equal(rep.exponents, [0.0, 0.0])


def test_perturbed_spectrum_long_run(perturbed):
    # Long-run value with a doubled-n stability check.
    r1 = lyapunov_spectrum(perturbed, [0.11, 0.23], 100_000, reorth_every=4)
    r2 = lyapunov_spectrum(perturbed, [0.11, 0.23], 200_000, reorth_every=4)
    assert np.abs(r1.exponents - [CAT_CHI, -CAT_CHI]).max() < 0.05
    assert np.abs(r1.exponents - r2.exponents).max() < 0.01


def test_exponents_sorted_and_deterministic(cat3d):
    r1 = lyapunov_spectrum(cat3d, [0.3, 0.4, 0.1], 500)
    r2 = lyapunov_spectrum(cat3d, [0.3, 0.4, 0.1], 500)
    assert np.array_equal(r1.exponents, r2.exponents)
    assert np.all(np.diff(r1.exponents) <= 0)


def test_oseledets_cat_eigendirection(cat, cat_splitting, cat_eigvecs):
    u, s = cat_eigvecs
    for i in range(len(cat_splitting.points)):
        assert subspace_angle(cat_splitting.basis_F[i], u[:, None]) < 1e-8
        assert subspace_angle(cat_splitting.basis_E[i], s[:, None]) < 1e-8
    assert cat_splitting.equivariance_residual < 1e-6


def test_oseledets_cat3d_block(cat3d, cat_eigvecs):
    # dim_F = 2: F spans the in-plane unstable direction plus the z fiber.
    u, _ = cat_eigvecs
    sp = oseledets_splitting(cat3d, np.array([[0.2, 0.3, 0.05]]), dim_F=2)
    analytic = np.zeros((3, 2))
    analytic[:2, 0] = u
    analytic[2, 1] = 1.0
    assert subspace_angle(sp.basis_F[0], analytic) < 1e-8


def test_oseledets_identity_unresolvable(identity):
    with pytest.raises(ResolutionError, match="not resolvable"):
        oseledets_splitting(identity, np.array([[0.1, 0.9]]), dim_F=1)


def test_domination_fit_cat(cat, cat_splitting):
    fit = domination_fit(cat, cat_splitting, n_max=30)
    assert fit.dominated
    assert abs(fit.slope - TWO_LOG_LS) < 1e-3
    assert 0.9 <= fit.C <= 1.1


def test_domination_fit_identity_flagged(identity):
    sp = SplittingField.constant(np.array([[1.0], [0.3]]),
                                 np.array([[0.2], [1.0]]))
    fit = domination_fit(identity, sp, n_max=20)
    assert not fit.dominated
    assert fit.message == "no domination detected"


def test_domination_fit_perturbed(perturbed, perturbed_splitting):
    fit = domination_fit(perturbed, perturbed_splitting, n_max=25)
    assert fit.dominated and fit.lam < 1.0
    assert abs(fit.slope - TWO_LOG_LS) < 0.1


def test_domination_fit_cat3d_both_configurations(cat3d):
    pts = np.random.default_rng(5).random((50, 3))
    for dim_F in (1, 2):
        sp = oseledets_splitting(cat3d, pts, dim_F=dim_F)
        fit = domination_fit(cat3d, sp, n_max=20)
        assert fit.dominated, f"dim_F={dim_F}"
        assert fit.lam < 1.0


def test_psi_cat_constant(cat, cat_splitting):
    for x in ([0.3, 0.4], [0.9, 0.1], [0.0, 0.0]):
        assert abs(psi(cat, cat_splitting, x) + CAT_CHI) < 1e-12


def test_psi_identity_zero(identity):
    sp = SplittingField.constant(np.array([[1.0], [0.0]]),
                                 np.array([[0.3], [1.0]]))
    assert abs(psi(identity, sp, [0.5, 0.5])) < 1e-14


def test_psi_cat3d_block_determinant():
    # c = 0: block construction, det df|_F = lambda_u * h'(z); at the invariant
    # circle z = 0, h'(0) = 1 - a.
    m = dynamics.make_map("cat3d", {"a": 0.5, "c": 0.0})
    sp = oseledets_splitting(m, np.array([[0.2, 0.3, 0.0]]), dim_F=2)
    expected = -(np.log(CAT_LAMBDA_U) + np.log(0.5))
    assert abs(psi(m, sp, [0.2, 0.3, 0.0]) - expected) < 1e-10


def test_psi_n_examples(cat, cat_splitting):
    assert abs(psi_n(cat, cat_splitting, [0.21, 0.34], 10) + 10 * CAT_CHI) < 1e-10
    assert psi_n(cat, cat_splitting, [0.21, 0.34], 0) == 0.0


def test_psi_n_matches_direct_determinant(perturbed, perturbed_splitting):
    x = np.array([0.42, 0.17])
    n = 12
    _, F = perturbed_splitting.frames_at(x)
    M = F.copy()
    p = x
    for _ in range(n):
        M = perturbed.jacobian(p) @ M
        p = perturbed.apply(p)
    direct = -0.5 * np.log(np.linalg.det(M.T @ M))
    assert abs(psi_n(perturbed, perturbed_splitting, x, n) - direct) < 1e-8


def test_psi_cocycle_identity_property():
    assert properties.check_psi_cocycle_identity() == []


def test_qr_determinant_consistency_property():
    assert properties.check_qr_determinant_consistency() == []


def test_domination_monotone_decay_property():
    assert properties.check_domination_monotone_cat() == []


def test_oseledets_vs_singular_subspace_property():
    assert properties.check_oseledets_vs_singular_cat() == []


def test_degenerate_constant_splitting_rejected():
    with pytest.raises(NumericalError):
        SplittingField.constant(np.array([[1.0], [0.5]]),
                                np.array([[1.0], [0.5 + 1e-12]]))
