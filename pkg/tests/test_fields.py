import numpy as np
import pytest
from scipy import integrate

from chaosbound import fields
from chaosbound.covariance import fractional_covariance, kernel_covariance
from chaosbound.fields import (EmbeddingError, Grid, LatticeField, UnderResolvedError,
                               lattice_covariance, mollified_lattice_covariance,
                               mollified_lattice_variance, mollify_field, mollifier_weights,
                               pair_with_test, sample_field, sample_fields, wick_power_field)
from chaosbound.scaling import Scaling, bump


@pytest.fixture(scope="module")
def smooth():
    return kernel_covariance(lambda x: np.exp(-np.abs(np.asarray(x, float))), 0.5, singular=False)


def test_grid_interval_and_validation():
    g = Grid.interval(0.0, 1.0, 4)
    assert np.allclose(g.coordinates(), [0.125, 0.375, 0.625, 0.875])
    assert g.cell_volume == 0.25
    with pytest.raises(ValueError):
        Grid((0.0,), (0.0,), (4,))
    with pytest.raises(ValueError):
        Grid((0.0, 0.0), (1.0,), (4,))


def test_lattice_covariance_is_cell_average(frac_half):
    # for G = kappa |x|^(-1/2), Phi'' = G with Phi = (4/3) kappa |x|^(3/2), and the
    # average over two cells at lag k is the second difference of Phi divided by h^2
    h = 1 / 64
    kappa = float(frac_half.G(1.0))
    Phi = lambda t: 4 / 3 * kappa * abs(t) ** 1.5
    lags = [0, 1, 5, 40, 200]
    c = lattice_covariance(frac_half, (h,), lags)
    for k, v in zip(lags, c):
        ref = (Phi((k + 1) * h) - 2 * Phi(k * h) + Phi((k - 1) * h)) / h**2
        assert v == pytest.approx(ref, rel=1e-6 if k <= fields.NEAR_LAGS else 1e-4)


def test_far_lag_correction_is_continuous(frac_half):
    h = 1 / 64
    near = lattice_covariance(frac_half, (h,), [fields.NEAR_LAGS])[0]
    exact = fields._cell_average_1d(frac_half.G, h, fields.NEAR_LAGS)
    far_formula_at_edge = (lambda x: frac_half.G(x) + (frac_half.G(x + h) - 2 * frac_half.G(x)
                                                      + frac_half.G(x - h)) / 12)(fields.NEAR_LAGS * h)
    assert near == exact
    assert float(far_formula_at_edge) == pytest.approx(exact, rel=1e-6)


@pytest.mark.parametrize("which", ["smooth", "frac"])
def test_sample_covariance_matches_lattice(which, smooth, frac_half):
    model = smooth if which == "smooth" else frac_half
    grid = Grid.interval(0.0, 1.0, 32)
    X = sample_fields(model, grid, seed=3, count=4000)
    lags = [0, 1, 4, 16]
    target = lattice_covariance(model, grid.spacing, lags)
    for k, t in zip(lags, target):
        prod = X[:, : 32 - k] * X[:, k:]
        per = prod.mean(axis=1)
        est, se = per.mean(), per.std(ddof=1) / np.sqrt(len(per))
        assert abs(est - t) < 5 * se, (k, est, t, se)


def test_sampling_is_seeded(smooth):
    grid = Grid.interval(0.0, 1.0, 16)
    a = sample_field(smooth, grid, 1).values
    b = sample_field(smooth, grid, 1).values
    c = sample_field(smooth, grid, 2).values
    assert np.array_equal(a, b) and not np.allclose(a, c)


def test_dense_fallback(smooth, monkeypatch):
    grid = Grid.interval(0.0, 1.0, 12)
    monkeypatch.setattr(fields, "_embedding_spectrum", lambda model, grid: (None, None, -1.0))
    fields._SPECTRA.clear()
    fields._DENSE.clear()
    X = sample_fields(smooth, grid, seed=0, count=20000)
    emp = np.cov(X.T)
    lags = np.subtract.outer(np.arange(12), np.arange(12))
    assert np.allclose(emp, lattice_covariance(smooth, grid.spacing, lags), atol=0.05)
    monkeypatch.setattr(fields, "DENSE_LIMIT", 4)
    fields._SPECTRA.clear()
    with pytest.raises(EmbeddingError):
        sample_fields(smooth, grid, seed=0, count=1)
    fields._SPECTRA.clear()
    fields._DENSE.clear()


def test_mollifier_weights():
    w = mollifier_weights(bump(), 0.1, (0.01,))
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(w, w[::-1])
    with pytest.raises(UnderResolvedError):
        mollifier_weights(bump(), 0.01, (0.01,))


def test_mollify_constant_and_linear():
    grid = Grid.interval(0.0, 1.0, 200)
    x = grid.coordinates()
    const = mollify_field(LatticeField(grid, np.full(200, 3.0)), bump(), 0.05)
    assert np.allclose(const.values, 3.0)
    lin = mollify_field(LatticeField(grid, 2 * x + 1), bump(), 0.05)
    assert np.allclose(lin.values, 2 * lin.grid.coordinates() + 1)
    assert lin.grid.shape[0] == 200 - 2 * (len(mollifier_weights(bump(), 0.05, grid.spacing)) // 2)


def test_mollified_variance_matches_samples_and_decreases(frac_half):
    grid = Grid.interval(0.0, 2.0, 256)
    eps = 0.05
    X = sample_fields(frac_half, grid, seed=9, count=2000)
    w = mollifier_weights(bump(), eps, grid.spacing)
    vals = np.array([mollify_field(LatticeField(grid, x), bump(), eps).values[0] for x in X])
    v = mollified_lattice_variance(frac_half, grid.spacing, bump(), eps)
    se = vals.var() * np.sqrt(2 / len(vals))
    assert abs(vals.var() - v) < 5 * se
    assert v < lattice_covariance(frac_half, grid.spacing, [0])[0]
    assert mollified_lattice_variance(frac_half, grid.spacing, bump(), 2 * eps) < v
    c = mollified_lattice_covariance(frac_half, grid.spacing, bump(), eps, [0, 3, -3])
    assert c[1] == pytest.approx(c[2]) and c[1] < c[0]


def test_wick_powers():
    grid = Grid.interval(0.0, 1.0, 5)
    f = LatticeField(grid, np.linspace(-1, 1, 5))
    assert np.allclose(wick_power_field(f, 0, 2.0).values, 1)
    assert np.allclose(wick_power_field(f, 1, 2.0).values, f.values)
    assert np.allclose(wick_power_field(f, 2, 2.0).values, f.values**2 - 2.0)
    with pytest.raises(ValueError):
        wick_power_field(f, 2, 0.0)


def test_wick_orthogonality(smooth):
    grid = Grid.interval(0.0, 1.0, 8)
    X = sample_fields(smooth, grid, seed=4, count=20000)[:, 3]
    var = float(smooth(0.0))
    h1 = wick_power_field(LatticeField(Grid.interval(0, 1, X.size), X), 1, var).values
    h2 = wick_power_field(LatticeField(Grid.interval(0, 1, X.size), X), 2, var).values
    assert abs(np.mean(h1 * h2)) < 5 * np.std(h1 * h2) / np.sqrt(X.size)
    assert np.mean(h2**2) == pytest.approx(2 * var**2, rel=0.05)


def test_pairing_normalization_and_second_moment(smooth):
    grid = Grid.interval(-2.0, 2.0, 800)
    one = LatticeField(grid, np.ones(800))
    assert pair_with_test(one, bump(), (0.0,), 0.5) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(UnderResolvedError):
        pair_with_test(one, bump(), (1.9,), 0.5)
    # E <Phi, phi>^2 against the continuum double integral
    w = fields.pairing_weights(grid, bump(), (0.0,), 0.5)
    idx = np.arange(800)
    C = lattice_covariance(smooth, grid.spacing, np.subtract.outer(idx, idx))
    exact = w @ C @ w
    phi = lambda x: 2 * float(bump()(2 * x))
    ref = integrate.dblquad(lambda y, x: phi(x) * phi(y) * np.exp(-abs(x - y)),
                            -0.5, 0.5, -0.5, 0.5, epsabs=1e-10)[0]
    assert exact == pytest.approx(ref, rel=1e-4)


def test_bytes_and_csv_roundtrip(smooth):
    f = sample_field(smooth, Grid.interval(0.0, 1.0, 10), 5)
    g = LatticeField.from_bytes(f.to_bytes())
    assert np.array_equal(f.values, g.values) and g.grid == f.grid and g.seed == 5
    lines = f.to_csv().splitlines()
    assert lines[0] == "x0,value" and len(lines) == 11
    assert float(lines[1].split(",")[1]) == f.values[0]
    with pytest.raises(ValueError):
        LatticeField.from_bytes(b"garbage!" + bytes(40))


def test_two_dimensional_sampling():
    model = kernel_covariance(lambda x: np.exp(-np.linalg.norm(np.asarray(x, float), axis=-1)), 0.5,
                              Scaling.euclidean(2), singular=False)
    grid = Grid((0.0, 0.0), (0.1, 0.1), (8, 8))
    X = sample_fields(model, grid, seed=1, count=4000)
    assert X.shape == (4000, 8, 8)
    assert np.var(X[:, 3, 3]) == pytest.approx(1.0, rel=0.1)
    assert np.mean(X[:, 3, 3] * X[:, 3, 4]) == pytest.approx(np.exp(-0.1), rel=0.1)
