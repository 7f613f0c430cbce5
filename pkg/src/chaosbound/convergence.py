"""Convergence of renormalized nonlinear functionals of a mollified field.

With ``Phi_eps = eps**(alpha/2) rho_eps * Psi`` and ``sigma_eps^2`` its
variance, ``eps**(-m alpha/2) Hhat_m(F(Phi_eps))`` (F with its first ``m``
Hermite projections removed) should approach ``a_m Psi^{<>m}`` where
``a_m`` is the ``m``-th chaos coefficient of ``F`` at the limiting variance.
This module measures that error by Monte-Carlo on lattice fields, split into

* the coefficient mismatch ``(a_m^eps - a_m) Psi_eps^{<>m}``,
* the Wick-power discretization ``a_m (Psi_eps^{<>m} - Psi_ref^{<>m})``,
* the higher-chaos remainder ``eps**(-m alpha/2) Hhat_{m+1}(F(Phi_eps))``,

and checks the exact second-moment scaling of pure higher chaoses.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve
from scipy.special import roots_hermitenorm

from .bounds import _removed_derivative
from .covariance import (CovarianceModel, fractional_covariance, mollified_covariance,
                         mollifier_autocorrelation)
from .fields import (Grid, LatticeField, lattice_covariance, mollified_lattice_variance,
                     mollifier_weights, sample_fields, pairing_weights)
from .gaussian import hermite, subtracted_product_expr
from .scaling import TestFunction, bump

__all__ = [
    "NonlinearityF",
    "ConvergenceConfig",
    "ConvergenceReport",
    "ConfigError",
    "sigma2_limit",
    "sigma2_eps",
    "a_m_coefficient",
    "renormalized_functional",
    "convergence_error",
    "higher_chaos_scaling",
    "ScalingReport",
    "fit_slope",
    "a_operator",
    "a_operator_second_moment",
    "power",
    "absolute",
    "hermite_nonlinearity",
    "polynomial",
]

GH_NODES = 512
_GH = roots_hermitenorm(GH_NODES)


class ConfigError(ValueError):
    """Invalid convergence configuration."""


@dataclass(frozen=True)
class NonlinearityF:
    """Scalar nonlinearity with a polynomial growth bound.

    ``kinks`` lists points where ``F`` is not smooth; quadratures split there.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str
    growth: float = 0.0
    smoothness: str = "smooth"
    kinks: tuple[float, ...] = ()

    def __post_init__(self):
        x = np.linspace(-50, 50, 2001)
        y = np.asarray(self.fn(x), dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name} is not finite on the probe grid")
        ratio = np.abs(y) / (1 + np.abs(x)) ** self.growth
        inner = ratio[np.abs(x) <= 25].max()
        if ratio[np.abs(x) > 25].max() > 10 * inner + 1e-12:
            raise ValueError(f"{self.name} grows faster than (1+|x|)^{self.growth}")

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


# module-level callables keep nonlinearities picklable for worker processes
@dataclass(frozen=True)
class _Poly:
    coeffs: tuple[float, ...]

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)


@dataclass(frozen=True)
class _Hermite:
    m: int
    var: float

    def __call__(self, x):
        return hermite(self.m, x, self.var)


def power(k: int) -> NonlinearityF:
    return NonlinearityF(_Poly((0.0,) * k + (1.0,)), f"x^{k}", float(k))


def polynomial(coeffs, name: str | None = None) -> NonlinearityF:
    """``sum_k coeffs[k] x**k``."""
    c = tuple(float(v) for v in coeffs)
    return NonlinearityF(_Poly(c), name or f"poly{list(c)}", float(len(c) - 1))


def absolute() -> NonlinearityF:
    return NonlinearityF(np.abs, "|x|", 1.0, "lipschitz-kink", (0.0,))


def hermite_nonlinearity(m: int, var: float) -> NonlinearityF:
    return NonlinearityF(_Hermite(m, var), f"He{m}", float(m))


NAMED_F = {"x^2": lambda: power(2), "x^4": lambda: power(4), "|x|": absolute,
           "x2": lambda: power(2), "x4": lambda: power(4), "abs": absolute}


def named_nonlinearity(name: str) -> NonlinearityF:
    key = name.strip()
    if key in NAMED_F:
        return NAMED_F[key]()
    raise ConfigError(f"unknown nonlinearity {name!r}; known: {sorted(NAMED_F)}")


# ---------------------------------------------------------------------------
# Variances and coefficients
# ---------------------------------------------------------------------------

def sigma2_limit(g: Callable, rho: TestFunction | None = None, resolution: int = 4096) -> float:
    """``int int g(x - y) rho(x) rho(y) dx dy = int g(u) (rho * rho~)(u) du`` (d = 1)."""
    rho = bump() if rho is None else rho
    if rho.dim != 1:
        raise NotImplementedError("one-dimensional mollifiers only")
    A = mollifier_autocorrelation(rho, resolution)
    half = 2 * rho.support_radius
    f = lambda u: float(g(u)) * float(A(u))
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for a, b in ((-half, 0.0), (0.0, half)):
                total += integrate.quad(f, a, b, limit=400, epsabs=1e-13, epsrel=1e-10)[0]
        except integrate.IntegrationWarning as exc:
            raise ValueError(f"g is not integrable on the mollifier window: {exc}") from exc
    return total


def sigma2_eps(G: Callable, alpha: float, eps: float, rho: TestFunction | None = None) -> float:
    """``eps**alpha int int G(x - y) rho_eps(x) rho_eps(y)``, i.e. ``sigma2_limit`` of ``eps**alpha G(eps .)``."""
    return sigma2_limit(lambda u: eps ** alpha * G(eps * u), rho)


def a_m_coefficient(F: NonlinearityF | Callable, var: float, m: int) -> float:
    """Chaos coefficient ``E[F(X) He_m(X; var)] / (m! var**m)``, ``X ~ N(0, var)``.

    Smooth ``F`` uses 512-node Gauss-Hermite; ``F`` with declared kinks uses
    adaptive quadrature split at the kinks (Gauss-Hermite converges only
    algebraically across a kink).
    """
    if not var > 0:
        raise ValueError("variance must be positive")
    if m < 0:
        raise ValueError("m must be nonnegative")
    sd = math.sqrt(var)
    kinks = getattr(F, "kinks", ())
    norm = math.factorial(m) * var ** m
    if not kinks:
        x, w = _GH
        vals = np.asarray(F(sd * x), dtype=float) * hermite(m, sd * x, var)
        return float(np.dot(w, vals) / math.sqrt(2 * math.pi) / norm)
    dens = lambda t: math.exp(-0.5 * t * t / var) / math.sqrt(2 * math.pi * var)
    f = lambda t: float(F(t)) * float(hermite(m, t, var)) * dens(t)
    R = 12 * sd + max(abs(k) for k in kinks)
    cuts = [-R] + sorted(k for k in kinks if -R < k < R) + [R]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += integrate.quad(f, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)[0]
    return total / norm


def renormalized_functional(phi_eps: LatticeField | np.ndarray, F: NonlinearityF, m: int,
                            eps: float, var: float, alpha: float):
    """``eps**(-m alpha/2) [F(Phi) - sum_{n<m} a_n He_n(Phi; var)]`` pointwise."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    vals = phi_eps.values if isinstance(phi_eps, LatticeField) else np.asarray(phi_eps, float)
    out = np.asarray(F(vals), dtype=float).copy()
    for n in range(m):
        out -= a_m_coefficient(F, var, n) * hermite(n, vals, var)
    out *= eps ** (-m * alpha / 2)
    return phi_eps.with_values(out) if isinstance(phi_eps, LatticeField) else out


# ---------------------------------------------------------------------------
# Monte-Carlo convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceConfig:
    """Parameters of the Monte-Carlo convergence experiment (d = 1)."""

    F: tuple[NonlinearityF, ...] = field(default_factory=lambda: (power(2), power(4), absolute()))
    m: int = 2
    alpha: float = 0.4
    kappa: float = 0.1
    eps_list: tuple[float, ...] = tuple(2.0 ** -k for k in range(3, 8))
    lam_list: tuple[float, ...] = (0.5, 0.25, 0.125)
    n: int = 1
    samples: int = 400
    seed: int = 0
    h: float = 2.0 ** -11
    length: float = 8.0
    asymptotic_ratio: float = 0.25
    bootstrap: int = 1000
    chunk: int = 25
    dim_s: float = 1.0

    def __post_init__(self):
        if self.m < 0:
            raise ConfigError("m must be nonnegative")
        if not 0 < self.alpha < self.dim_s:
            raise ConfigError(f"alpha must lie in (0, |s|={self.dim_s})")
        if self.m * self.alpha >= self.dim_s:
            raise ConfigError(f"m={self.m} violates m < |s|/alpha = {self.dim_s / self.alpha:.4g}")
        if not (self.kappa > 0 and self.m * self.alpha + self.kappa < self.dim_s):
            raise ConfigError("kappa must be positive with m*alpha + kappa < |s|")
        if self.n < 1:
            raise ConfigError("n must be a positive integer")
        if self.samples < 2:
            raise ConfigError("samples must be at least 2")
        if len(self.eps_list) < 2 or len(self.lam_list) < 1:
            raise ConfigError("need at least two eps values and one lambda")
        if any(e < 2 * 2 * self.h for e in self.eps_list):
            raise ConfigError("eps values must resolve the reference scale (eps >= 4h)")
        if not self.F:
            raise ConfigError("at least one nonlinearity is required")

    @property
    def eps_ref(self) -> float:
        return 2 * self.h

    def centers(self) -> np.ndarray:
        """Test-function centers one unit apart, clear of the trimmed edges."""
        margin = max(self.lam_list) + max(self.eps_list) + self.h
        return np.arange(math.ceil(margin), math.floor(self.length - margin) + 1, 1.0)


@dataclass
class ConvergenceReport:
    """Error moments per (F, eps, lambda) with fitted slopes."""

    config: ConvergenceConfig
    sigma2: float
    sigma2_eps: dict
    a_m: dict
    a_m_eps: dict
    rows: list[dict]
    slopes: dict
    regression: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        """Every F has a fitted eps-slope whose 95% interval lies above ``kappa/2``."""
        return all(s["ci_low"] >= self.config.kappa / 2 for s in self.slopes.values())

    @property
    def positive(self) -> bool:
        """Every F has a fitted eps-slope whose 95% interval lies above zero."""
        return all(s["ci_low"] > 0 for s in self.slopes.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["F", "m", "alpha", "eps", "lambda", "n", "error_moment", "stderr",
                    "coef_part", "wick_part", "chaos_part"])
        for r in self.rows:
            w.writerow([r["F"], r["m"], repr(r["alpha"]), repr(r["eps"]), repr(r["lambda"]), r["n"],
                        repr(r["error_moment"]), repr(r["stderr"]), repr(r["coef_part"]),
                        repr(r["wick_part"]), repr(r["chaos_part"])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"sigma2": self.sigma2, "sigma2_eps": self.sigma2_eps, "a_m": self.a_m,
                           "a_m_eps": self.a_m_eps, "slopes": self.slopes,
                           "regression": self.regression, "passed": self.passed,
                           "positive": self.positive}, indent=2, sort_keys=True)


def _chunk_moments(job):
    """Per-replicate, per-center pairings for one block of replicates."""
    (cfg_fields, seed_state, count, F_list, var_ref, vars_eps, a_lim, a_eps, a_low) = job
    alpha, m, eps_list, lam_list, h, length, centers, eps_ref = cfg_fields
    model = fractional_covariance(alpha)
    rho = phi = bump()
    grid = Grid((h / 2,), (h,), (int(round(length / h)),))
    seed = np.random.SeedSequence(seed_state).generate_state(1)[0]
    psi = sample_fields(model, grid, int(seed), count)
    scales = list(eps_list) + [eps_ref]
    # one weight vector per (eps, lambda, center) on each trimmed grid
    out = {}
    for eps in scales:
        w = mollifier_weights(rho, eps, (h,))
        half = (len(w) - 1) // 2
        vals = fftconvolve(psi, w[None, :], mode="valid", axes=1)
        sub = Grid((grid.origin[0] + half * h,), (h,), (vals.shape[1],))
        out[eps] = (vals, sub)
    ref_vals, ref_grid = out[eps_ref]
    ref_wick = hermite(m, ref_vals, var_ref)
    res = {}
    for lam in lam_list:
        tw_ref = np.stack([pairing_weights(ref_grid, phi, (c,), lam) for c in centers])
        P_ref = ref_wick @ tw_ref.T  # (count, centers)
        for eps in eps_list:
            vals, sub = out[eps]
            var_psi = vars_eps[eps] / eps ** alpha
            tw = np.stack([pairing_weights(sub, phi, (c,), lam) for c in centers])
            wick_eps = hermite(m, vals, var_psi) @ tw.T
            phi_vals = eps ** (alpha / 2) * vals
            for fi, F in enumerate(F_list):
                hat_m = np.asarray(F(phi_vals), dtype=float)
                for n_, a in enumerate(a_low[(fi, eps)]):
                    hat_m = hat_m - a * hermite(n_, phi_vals, vars_eps[eps])
                hat_m *= eps ** (-m * alpha / 2)
                P_hat = hat_m @ tw.T
                total = P_hat - a_lim[fi] * P_ref
                coef = (a_eps[(fi, eps)] - a_lim[fi]) * wick_eps
                wick = a_lim[fi] * (wick_eps - P_ref)
                chaos = P_hat - a_eps[(fi, eps)] * wick_eps
                res[(fi, eps, lam)] = np.stack([total, coef, wick, chaos, P_hat, wick_eps])
    return res


def fit_slope(x, y) -> tuple[float, float]:
    """OLS slope of ``y`` on ``x`` with its standard error."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    if len(x) <= 2:
        return float(coef[0]), float("nan")
    resid = y - A @ coef
    s2 = resid @ resid / (len(x) - 2)
    se = math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    return float(coef[0]), se


def _pooled_slope(logs: dict, cells: list) -> float:
    """Common eps-slope with one intercept per lambda."""
    lams = sorted({lam for _, lam in cells})
    X = np.zeros((len(cells), 1 + len(lams)))
    y = np.zeros(len(cells))
    for i, (eps, lam) in enumerate(cells):
        X[i, 0] = math.log(eps)
        X[i, 1 + lams.index(lam)] = 1.0
        y[i] = logs[(eps, lam)]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[0])


def convergence_error(config: ConvergenceConfig, jobs: int = 1) -> ConvergenceReport:
    """Monte-Carlo error moments with bootstrap confidence intervals for the eps-slope.

    Slopes are fitted on cells with ``eps <= asymptotic_ratio * lambda`` where
    the small-scale asymptotics apply; each replicate contributes the mean of
    ``|pairing|^(2n)`` over several disjoint test-function centers.
    """
    cfg = config
    model = fractional_covariance(cfg.alpha)
    rho = bump()
    sigma2 = sigma2_limit(model.g, rho)
    h = cfg.h
    var_ref = mollified_lattice_variance(model, (h,), rho, cfg.eps_ref)
    vars_eps = {eps: eps ** cfg.alpha * mollified_lattice_variance(model, (h,), rho, eps)
                for eps in cfg.eps_list}
    a_lim = [a_m_coefficient(F, sigma2, cfg.m) for F in cfg.F]
    a_eps = {(fi, eps): a_m_coefficient(F, vars_eps[eps], cfg.m)
             for fi, F in enumerate(cfg.F) for eps in cfg.eps_list}
    a_low = {(fi, eps): [a_m_coefficient(F, vars_eps[eps], n) for n in range(cfg.m)]
             for fi, F in enumerate(cfg.F) for eps in cfg.eps_list}
    centers = cfg.centers()
    fields_ = (cfg.alpha, cfg.m, tuple(cfg.eps_list), tuple(cfg.lam_list), h, cfg.length,
               tuple(centers), cfg.eps_ref)
    # chunk seeds depend on (seed, chunk index) only, so results do not depend on jobs
    nchunks = math.ceil(cfg.samples / cfg.chunk)
    jobs_list = [(fields_, (cfg.seed, i), min(cfg.chunk, cfg.samples - i * cfg.chunk), tuple(cfg.F),
                  var_ref, vars_eps, a_lim, a_eps, a_low) for i in range(nchunks)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_chunk_moments, jobs_list))
    else:
        parts = [_chunk_moments(j) for j in jobs_list]
    data = {k: np.concatenate([p[k] for p in parts], axis=1) for k in parts[0]}

    two_n = 2 * cfg.n
    rows = []
    # per-replicate |.|^(2n) averaged over centers: shape (samples,)
    per_rep = {k: np.mean(np.abs(v[:4]) ** two_n, axis=2) for k, v in data.items()}
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7919)).generate_state(1)[0])
    boot_idx = rng.integers(0, cfg.samples, size=(cfg.bootstrap, cfg.samples))
    slopes = {}
    regression = {}
    for fi, F in enumerate(cfg.F):
        logs = {}
        boots = {}
        for lam in cfg.lam_list:
            pref = lam ** (cfg.m * cfg.alpha / 2 + cfg.kappa)
            for eps in cfg.eps_list:
                mom = per_rep[(fi, eps, lam)]  # (4, samples)
                est = mom.mean(axis=1) ** (1 / two_n) * pref
                # delta-method stderr of the root of a mean
                se_mean = mom[0].std(ddof=1) / math.sqrt(cfg.samples)
                se = pref * se_mean / (two_n * max(mom[0].mean(), 1e-300) ** (1 - 1 / two_n))
                rows.append({"F": F.name, "m": cfg.m, "alpha": cfg.alpha, "eps": eps, "lambda": lam,
                             "n": cfg.n, "error_moment": float(est[0]), "stderr": float(se),
                             "coef_part": float(est[1]), "wick_part": float(est[2]),
                             "chaos_part": float(est[3])})
                logs[(eps, lam)] = math.log(est[0])
                boots[(eps, lam)] = np.log(mom[0][boot_idx].mean(axis=1) ** (1 / two_n) * pref)
        cells = [(e, l) for l in cfg.lam_list for e in cfg.eps_list if e <= cfg.asymptotic_ratio * l]
        if len({e for e, _ in cells}) < 2:
            cells = [(e, l) for l in cfg.lam_list for e in cfg.eps_list]
        slope = _pooled_slope(logs, cells)
        bs = np.array([_pooled_slope({c: boots[c][b] for c in cells}, cells)
                       for b in range(cfg.bootstrap)])
        per_lam = {}
        for lam in cfg.lam_list:
            es = [e for e in cfg.eps_list if (e, lam) in cells]
            if len(es) >= 2:
                per_lam[repr(lam)] = fit_slope(np.log(es), [logs[(e, lam)] for e in es])[0]
        lam_slope = {}
        for eps in cfg.eps_list:
            ls = [l for l in cfg.lam_list if (eps, l) in cells]
            if len(ls) >= 2:
                lam_slope[repr(eps)] = fit_slope(np.log(ls), [logs[(eps, l)] for l in ls])[0]
        slopes[F.name] = {"slope": slope, "stderr": float(bs.std(ddof=1)),
                          "ci_low": float(np.quantile(bs, 0.025)),
                          "ci_high": float(np.quantile(bs, 0.975)),
                          "per_lambda": per_lam, "lambda_slope": lam_slope,
                          "cells": [[e, l] for e, l in cells]}
        # regression of the renormalized pairing on the Wick-power pairing
        reg = {}
        for lam in cfg.lam_list:
            for eps in cfg.eps_list:
                P_hat, W = data[(fi, eps, lam)][4].ravel(), data[(fi, eps, lam)][5].ravel()
                reg[f"{eps!r},{lam!r}"] = float(np.dot(P_hat, W) / np.dot(W, W))
        regression[F.name] = reg
    return ConvergenceReport(cfg, sigma2, {repr(e): v for e, v in vars_eps.items()},
                             {F.name: a for F, a in zip(cfg.F, a_lim)},
                             {f"{cfg.F[fi].name}@{eps!r}": v for (fi, eps), v in a_eps.items()},
                             rows, slopes, regression)


# ---------------------------------------------------------------------------
# Exact scaling of pure higher chaoses
# ---------------------------------------------------------------------------

@dataclass
class ScalingReport:
    """Exact second moments ``(m+l)! int C_eps^(m+l) (phi^lam * phi^lam)``."""

    m: int
    ell: int
    alpha: float
    eps_list: tuple[float, ...]
    lam_list: tuple[float, ...]
    moments: np.ndarray  # (len(eps_list), len(lam_list))
    eps_slopes: list[tuple[float, float]]
    lam_slopes: list[tuple[float, float]]
    lam_eps: tuple[float, ...] = ()


def _test_autocorrelation(phi: TestFunction):
    return mollifier_autocorrelation(phi, 4096), 2 * phi.support_radius


def _chaos_moment(c, n: int, eps: float, lam: float, psi, half: float) -> float:
    """``n! int c(w/eps)^n lam^-1 psi(w/lam) dw`` with ``c`` the unit-scale kernel."""
    f = lambda u: float(c(u * lam / eps)) ** n * float(psi(u))
    pts = sorted({0.0, min(half, eps / lam), half})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, limit=200, epsabs=0, epsrel=1e-9)[0]
    return math.factorial(n) * 2 * total


def higher_chaos_scaling(m: int, ell: int, eps_list, lam_list, model: CovarianceModel | None = None,
                         phi: TestFunction | None = None, rho: TestFunction | None = None,
                         alpha: float = 0.3, lam_eps=()) -> ScalingReport:
    """Exact second moment of ``<Phi_eps^{<>(m+l)}, phi^lam>`` by quadrature (d = 1).

    Uses ``C_eps(w) = c(w / eps)`` for a homogeneous base kernel, with ``c``
    the covariance mollified at unit scale.  Returns log-log slopes in ``eps``
    (per lambda) and in ``lambda`` at each ``eps`` of ``lam_eps``.
    """
    model = fractional_covariance(alpha) if model is None else model
    if m * model.alpha >= model.scaling.total:
        raise ConfigError(f"m*alpha = {m * model.alpha} must be below |s| = {model.scaling.total}")
    phi = bump() if phi is None else phi
    rho = bump() if rho is None else rho
    n = m + ell
    psi, half = _test_autocorrelation(phi)
    c = mollified_covariance(model, rho, 1.0)
    eps_list = tuple(float(e) for e in eps_list)
    lam_list = tuple(float(l) for l in lam_list)
    mom = np.array([[_chaos_moment(c, n, e, l, psi, half) for l in lam_list] for e in eps_list])
    eps_slopes = [fit_slope(np.log(eps_list), np.log(mom[:, j])) for j in range(len(lam_list))]
    lam_slopes = []
    for e in lam_eps:
        vals = [_chaos_moment(c, n, e, l, psi, half) for l in lam_list]
        lam_slopes.append(fit_slope(np.log(lam_list), np.log(vals)))
    return ScalingReport(m, ell, model.alpha, eps_list, lam_list, mom, eps_slopes, lam_slopes,
                         tuple(lam_eps))


# ---------------------------------------------------------------------------
# Diagnostic: the operator theta -> <Hhat_{m+1}(exp(i theta Phi)), phi^lam>
# ---------------------------------------------------------------------------

def a_operator(phi_eps: LatticeField, m: int, r: int, thetas, phi: TestFunction, x, lam: float,
               var: float) -> np.ndarray:
    """``d^r/dtheta^r int Hhat_{m+1}(exp(i theta Phi(y))) phi_x^lam(y) dy`` on a theta grid."""
    w = pairing_weights(phi_eps.grid, phi, x, lam)
    mask = w != 0
    X = phi_eps.values[mask]
    wt = w[mask]
    he = [hermite(k, X, var) for k in range(m + 1)]
    out = []
    for th in np.atleast_1d(thetas):
        val = (1j * X) ** r * np.exp(1j * th * X)
        for k in range(m + 1):
            val = val - _removed_derivative(float(th), var, k, r) * he[k]
        out.append(np.dot(wt, val))
    return np.array(out)


def a_operator_second_moment(c: Callable, var: float, m: int, r: int, theta: float,
                             phi: TestFunction, lam: float) -> float:
    """``E |A^(r)(theta)|^2`` from two-point exact expectations.

    ``E[f(X) conj f(Y)]`` equals the subtracted product of ``(X, -Y)`` because
    conjugation flips the frequency; the two-point value depends on the
    covariance ``c(w)`` only and is integrated against ``phi^lam * phi^lam``.
    """
    psi, half = _test_autocorrelation(phi)

    def two_point(w):
        cw = float(c(w))
        expr = subtracted_product_expr(np.array([[var, -cw], [-cw, var]]), m + 1, r)
        return float(np.real(expr(theta)))

    f = lambda u: two_point(u * lam) * float(psi(u))
    val = integrate.quad(f, 0, half, limit=100, epsabs=1e-13, epsrel=1e-7)[0]
    return 2 * val
