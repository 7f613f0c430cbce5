import math

import numpy as np
import pytest
from scipy import integrate

from chaosbound.covariance import (CovarianceModel, GaussianVector, NotPSDError, default_probes,
                                   explicit_covariance, fractional_covariance, gram_matrix,
                                   kernel_covariance, limit_kernel_error, mollified_covariance,
                                   riesz_constant, sandwich_check)
from chaosbound.scaling import Scaling, bump


def test_gaussian_vector_validation():
    with pytest.raises(ValueError):
        GaussianVector(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(NotPSDError):
        GaussianVector(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    g = GaussianVector(np.zeros(2), np.ones((2, 2)))  # rank one is fine
    assert g.K == 2


def test_fractional_kappa_matches_closed_form():
    # kappa = convolution square of the Riesz kernel; closed form by the semigroup property
    for alpha in (0.3, 0.5, 0.8):
        G = fractional_covariance(alpha).G
        assert float(G(1.0)) == pytest.approx(riesz_constant(1 - alpha, 1), rel=1e-8)


def test_fractional_kappa_half_value():
    # [DERIVED] closed-form Riesz composition constant at alpha = 1/2, d = 1
    assert float(fractional_covariance(0.5).G(1.0)) == pytest.approx(0.3989422804, rel=1e-8)


def test_fractional_rejects_bad_alpha_and_anisotropy():
    with pytest.raises(ValueError):
        fractional_covariance(1.0)
    with pytest.raises(ValueError):
        fractional_covariance(0.5, Scaling((2.0, 1.0)))


def test_fractional_2d_homogeneity():
    m = fractional_covariance(0.7, Scaling.euclidean(2))
    x = np.array([0.3, 0.4])
    assert float(m(2 * x)) == pytest.approx(2**-0.7 * float(m(x)))


def test_mollified_homogeneity(frac_half):
    # for a homogeneous kernel C_eps(h) = C_1(h / eps)
    a = mollified_covariance(frac_half, bump(), 0.125)
    b = mollified_covariance(frac_half, bump(), 1 / 32)
    for u in (0.0, 0.5, 3.0, 40.0):
        assert float(a(0.125 * u)) == pytest.approx(float(b(u / 32)), rel=1e-8)


def test_mollified_against_independent_quadrature(moll_eighth):
    # nested adaptive quadrature of kappa |h - s|^-a (rho * rho)(s) without the spline
    from chaosbound.scaling import _bump_mass
    Z = _bump_mass(1)
    rho = lambda t: math.exp(-1 / (1 - t * t)) / Z if abs(t) < 1 else 0.0
    A = lambda s: integrate.quad(lambda u: rho(u) * rho(u - s), max(-1, s - 1), min(1, s + 1),
                                 epsabs=1e-13)[0]
    kappa = riesz_constant(0.5, 1)
    for u in (1.0, 10.0):
        f = lambda s: kappa * abs(u - s) ** -0.5 * A(s)
        pts = sorted({-2.0, 2.0, max(-2.0, min(2.0, u))})
        val = sum(integrate.quad(f, a, b, limit=200, epsabs=1e-12)[0] for a, b in zip(pts[:-1], pts[1:]))
        assert float(moll_eighth(0.125 * u)) == pytest.approx(val, rel=1e-6)


def test_mollified_sandwich_constant(moll_eighth):
    assert 2.3 < moll_eighth.lam < 2.7
    rep = sandwich_check(moll_eighth, default_probes())
    assert rep.passed
    assert rep.lam_fit == pytest.approx(moll_eighth.lam)


def test_sandwich_rejects_negative_covariance():
    m = kernel_covariance(lambda x: np.cos(np.asarray(x, float)), 0.5, singular=False)
    rep = sandwich_check(m, np.linspace(0, 4, 9))
    assert not rep.passed and "nonpositive" in rep.message


def test_sandwich_exact_power_profile():
    eps = 0.1
    m = CovarianceModel("test", 0.5, Scaling.euclidean(1),
                        lambda r: 1.7 * eps**0.5 / (np.abs(r) + eps) ** 0.5, eps=eps, lam=1.7)
    rep = sandwich_check(m, default_probes())
    assert rep.lam_fit == pytest.approx(1.7)
    assert not sandwich_check(m, default_probes(), lam=1.5).passed


def test_gram_matrix_is_psd_and_symmetric(moll_eighth, rng):
    pts = rng.uniform(-1, 1, size=6)
    g = gram_matrix(moll_eighth, pts)
    assert np.allclose(g.cov, g.cov.T)
    assert np.linalg.eigvalsh(g.cov).min() > -1e-10


def test_gram_rejects_unmollified(frac_half):
    with pytest.raises(ValueError):
        gram_matrix(frac_half, [0.0, 0.0])


def test_explicit_model():
    m = explicit_covariance([[1.0, 0.2], [0.2, 1.0]])
    g = gram_matrix(m, None)
    assert g.cov[0, 1] == 0.2
    with pytest.raises(NotPSDError):
        explicit_covariance([[1.0, 3.0], [3.0, 1.0]])


def test_limit_kernel_for_homogeneous_model(frac_half):
    assert limit_kernel_error(frac_half, 0.01) < 1e-12


def test_stanza_roundtrip(moll_eighth):
    m2 = CovarianceModel.from_stanza(moll_eighth.to_stanza())
    assert m2.eps == moll_eighth.eps
    assert float(m2(0.3)) == pytest.approx(float(moll_eighth(0.3)), rel=1e-12)
