import math

import numpy as np
import pytest
from scipy import integrate

from chaosbound.convergence import (ConfigError, ConvergenceConfig, NonlinearityF, a_m_coefficient,
                                    a_operator, a_operator_second_moment, absolute, convergence_error,
                                    fit_slope, hermite_nonlinearity, higher_chaos_scaling,
                                    named_nonlinearity, polynomial, power, renormalized_functional,
                                    sigma2_eps, sigma2_limit)
from chaosbound.covariance import fractional_covariance, kernel_covariance, mollified_covariance
from chaosbound.fields import Grid, LatticeField, sample_fields
from chaosbound.gaussian import hermite
from chaosbound.scaling import bump


def gaussian_moment(k, var):
    return 0.0 if k % 2 else var ** (k // 2) * math.prod(range(k - 1, 0, -2))


def a_m_by_parts(coeffs, var, m):
    # Gaussian integration by parts: E[F He_m] = var^m E[F^(m)]
    d = np.polynomial.polynomial.polyder(coeffs, m) if m else np.asarray(coeffs, float)
    return sum(c * gaussian_moment(k, var) for k, c in enumerate(d)) / math.factorial(m)


@pytest.mark.parametrize("coeffs", [(0, 0, 1), (0, 0, 0, 0, 1), (1, -2, 0.5, 3), (0, 1, 0, 0, 0, 0, 2)])
@pytest.mark.parametrize("var", [0.5, 1.0, 2.3])
def test_a_m_polynomials(coeffs, var):
    F = polynomial(coeffs)
    for m in range(len(coeffs) + 1):
        assert a_m_coefficient(F, var, m) == pytest.approx(a_m_by_parts(coeffs, var, m), abs=1e-10)


def test_a_m_absolute_value():
    for var in (0.4, 1.0, 3.0):
        assert a_m_coefficient(absolute(), var, 0) == pytest.approx(math.sqrt(2 * var / math.pi), rel=1e-10)
        assert a_m_coefficient(absolute(), var, 1) == pytest.approx(0.0, abs=1e-12)
        # E|X| He_2 = E|X|^3 - var E|X|
        want = math.sqrt(2 / math.pi) / (2 * math.sqrt(var))
        assert a_m_coefficient(absolute(), var, 2) == pytest.approx(want, rel=1e-9)
    assert a_m_coefficient(absolute(), 1.0, 2) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-9)


def test_a_m_hermite_is_delta():
    F = hermite_nonlinearity(3, 1.7)
    vals = [a_m_coefficient(F, 1.7, m) for m in range(6)]
    assert vals[3] == pytest.approx(1.0)
    assert np.allclose(np.delete(vals, 3), 0, atol=1e-10)


def test_nonlinearity_growth_check():
    with pytest.raises(ValueError):
        NonlinearityF(lambda x: np.exp(np.abs(x) / 4), "exp", growth=2.0)
    assert named_nonlinearity("|x|").kinks == (0.0,)
    with pytest.raises(ConfigError):
        named_nonlinearity("sin")


def test_sigma2_limit_examples():
    assert sigma2_limit(lambda u: 1.0) == pytest.approx(1.0, rel=1e-8)
    rho = bump()
    r = lambda t: float(rho(t))
    ref = integrate.dblquad(lambda y, x: abs(x - y) * r(x) * r(y), -1, 1, -1, 1, epsabs=1e-10)[0]
    assert sigma2_limit(np.abs) == pytest.approx(ref, rel=1e-5)


def test_sigma2_eps_homogeneous_and_not():
    m = fractional_covariance(0.4)
    lim = sigma2_limit(m.g)
    for eps in (0.5, 0.01):
        assert sigma2_eps(m.G, 0.4, eps) == pytest.approx(lim, rel=1e-8)
    G = lambda x: m.G(x) + np.exp(-np.abs(x))
    eps = (0.5, 0.1, 0.02, 0.004)
    vals = [sigma2_eps(G, 0.4, e) for e in eps]
    assert all(a > b for a, b in zip(vals[:-1], vals[1:]))
    # the smooth part adds eps^alpha * (1 + O(eps)) on top of the limit
    assert (vals[-1] - lim) / eps[-1] ** 0.4 == pytest.approx(1.0, rel=0.01)


def test_renormalized_functional_identities():
    x = np.linspace(-3, 3, 13)
    var, eps, alpha = 1.3, 0.1, 0.4
    # F = He_2 is already a pure second chaos
    out = renormalized_functional(x, hermite_nonlinearity(2, var), 2, eps, var, alpha)
    assert np.allclose(out, eps ** -alpha * hermite(2, x, var))
    out = renormalized_functional(x, power(2), 1, eps, var, alpha)
    assert np.allclose(out, eps ** (-alpha / 2) * (x**2 - var))
    f = LatticeField(Grid.interval(0, 1, 13), x)
    assert np.allclose(renormalized_functional(f, power(2), 0, eps, var, alpha).values, x**2)


def test_config_validation():
    with pytest.raises(ConfigError):
        ConvergenceConfig(m=3, alpha=0.4)
    with pytest.raises(ConfigError):
        ConvergenceConfig(kappa=0.3)
    with pytest.raises(ConfigError):
        ConvergenceConfig(eps_list=(2.0**-12, 0.1))
    c = ConvergenceConfig()
    assert c.centers().tolist() == [1, 2, 3, 4, 5, 6, 7]


def test_fit_slope():
    x = np.log([0.1, 0.2, 0.4, 0.8])
    s, se = fit_slope(x, 0.3 * x + 2)
    assert s == pytest.approx(0.3) and se == pytest.approx(0.0, abs=1e-12)


@pytest.fixture(scope="module")
def small_run():
    cfg = ConvergenceConfig(F=(power(2), absolute()), h=2.0**-9, length=4.0,
                            eps_list=(2.0**-3, 2.0**-4, 2.0**-5), lam_list=(0.5, 0.25),
                            samples=50, bootstrap=100)
    return cfg, convergence_error(cfg)


def test_small_convergence_run(small_run):
    cfg, rep = small_run
    assert len(rep.rows) == 2 * 3 * 2
    assert set(rep.slopes) == {"x^2", "|x|"}
    for s in rep.slopes.values():
        assert s["ci_low"] <= s["slope"] <= s["ci_high"]
    # for F = x^2 the renormalized functional is exactly the Wick square
    assert all(v == pytest.approx(1.0) for v in rep.regression["x^2"].values())
    assert all(abs(r["coef_part"]) < 1e-10 for r in rep.rows if r["F"] == "x^2")
    header = rep.to_csv().splitlines()[0]
    assert header == "F,m,alpha,eps,lambda,n,error_moment,stderr,coef_part,wick_part,chaos_part"


def test_convergence_is_independent_of_jobs(small_run):
    cfg, rep = small_run
    rep2 = convergence_error(cfg, jobs=2)
    assert rep.to_csv() == rep2.to_csv()


def test_higher_chaos_first_order_against_double_sum():
    model = fractional_covariance(0.3)
    rep = higher_chaos_scaling(0, 1, [0.05], [0.5], model=model)
    C = mollified_covariance(model, bump(), 0.05)
    # midpoint double sum; the integrand is smooth so the error is spectrally small
    n = 1500
    x = -0.5 + (np.arange(n) + 0.5) / n
    w = 2 * bump()(2 * x) / n
    lags = np.arange(n) / n
    row = np.asarray(C(lags), dtype=float)
    K = row[np.abs(np.subtract.outer(np.arange(n), np.arange(n)))]
    assert rep.moments[0, 0] == pytest.approx(w @ K @ w, rel=1e-5)


def test_higher_chaos_second_order_against_monte_carlo():
    # E <He_2(Psi), phi^lam>^2 = 2 int int C^2 phi phi, checked on sampled smooth fields
    model = kernel_covariance(lambda x: np.exp(-np.asarray(x, float) ** 2), 0.3, singular=False)
    grid = Grid.interval(-1.0, 1.0, 200)
    X = sample_fields(model, grid, seed=2, count=4000)
    w = 2 * bump()(2 * grid.coordinates()) * grid.cell_volume
    vals = hermite(2, X, 1.0) @ w
    phi = lambda x: 2 * float(bump()(2 * x))
    exact = 2 * integrate.dblquad(lambda y, x: math.exp(-2 * (x - y) ** 2) * phi(x) * phi(y),
                                  -0.5, 0.5, -0.5, 0.5, epsabs=1e-10)[0]
    se = np.std(vals**2) / np.sqrt(len(vals))
    assert abs(np.mean(vals**2) - exact) < 5 * se


def test_higher_chaos_rejects_supercritical():
    with pytest.raises(ConfigError):
        higher_chaos_scaling(4, 1, [0.1, 0.05], [0.5], alpha=0.3)


def test_a_operator_second_moment_against_samples():
    c = lambda w: math.exp(-float(w) ** 2)
    model = kernel_covariance(lambda x: np.exp(-np.asarray(x, float) ** 2), 0.3, singular=False)
    grid = Grid.interval(-1.0, 1.0, 200)
    X = sample_fields(model, grid, seed=6, count=3000)
    m, r, theta, lam = 1, 1, 0.8, 0.5
    A = np.array([a_operator(LatticeField(grid, x), m, r, [theta], bump(), (0.0,), lam, 1.0)[0]
                  for x in X])
    exact = a_operator_second_moment(c, 1.0, m, r, theta, bump(), lam)
    se = np.std(np.abs(A) ** 2) / np.sqrt(len(A))
    assert abs(np.mean(np.abs(A) ** 2) - exact) < 5 * se


def test_fourth_moment_run():
    # n = 2: the fourth root of the fourth moment dominates the second-moment version
    base = dict(F=(absolute(),), h=2.0**-9, length=4.0, eps_list=(2.0**-3, 2.0**-4, 2.0**-5),
                lam_list=(0.5,), samples=50, bootstrap=50)
    r1 = convergence_error(ConvergenceConfig(n=1, **base))
    r2 = convergence_error(ConvergenceConfig(n=2, **base))
    for a, b in zip(r1.rows, r2.rows):
        assert b["n"] == 2 and b["error_moment"] >= a["error_moment"] * (1 - 1e-12)
    with pytest.raises(ConfigError):
        ConvergenceConfig(n=0)
