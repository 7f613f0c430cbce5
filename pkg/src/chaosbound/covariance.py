"""Stationary covariance models and Gram matrices.

Three kinds of model are provided:

``fractional-kernel``
    The covariance ``G(x) = kappa |x|**(-alpha)`` of the fractional Gaussian
    field ``(-Laplace)**(-beta/2) xi`` with ``beta = (d - alpha)/2``.  In one
    dimension ``kappa`` is obtained by numerically integrating the
    convolution square of the Riesz kernel.
``mollified-of-G``
    The covariance of ``Phi_eps = eps**(alpha/2) rho_eps * Psi``, i.e.
    ``eps**alpha (rho_eps * rho_eps~ * G)(h)``, by one-dimensional quadrature
    against a tabulated autocorrelation of the mollifier.
``explicit-gram``
    A user supplied positive semidefinite matrix.

The raw sandwich profile ``eps**alpha / (r + eps)**alpha`` is never used as a
covariance; only the models above produce Gram matrices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import gamma

from .scaling import Scaling, TestFunction, aniso_norm, bump, integrate_test

__all__ = [
    "CovarianceModel",
    "GaussianVector",
    "SandwichReport",
    "NotPSDError",
    "QuadratureError",
    "fractional_covariance",
    "kernel_covariance",
    "explicit_covariance",
    "mollified_covariance",
    "sandwich_check",
    "default_probes",
    "gram_matrix",
    "limit_kernel_error",
    "mollifier_autocorrelation",
    "riesz_constant",
]

PSD_TOL = 1e-9


class NotPSDError(ValueError):
    """Raised when a Gram matrix has a negative eigenvalue beyond tolerance."""


class QuadratureError(RuntimeError):
    """Raised when a covariance quadrature does not reach its tolerance."""


@dataclass(frozen=True)
class GaussianVector:
    """Centered Gaussian vector ``X_j = Phi(x_j)`` described by its covariance."""

    points: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        check_psd(cov)
        cov.setflags(write=False)
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "points", pts)

    @property
    def K(self) -> int:
        return self.cov.shape[0]

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov)

    def subset(self, idx) -> "GaussianVector":
        idx = list(idx)
        return GaussianVector(self.points[idx], self.cov[np.ix_(idx, idx)])


def check_psd(cov: np.ndarray) -> float:
    """Return the minimum eigenvalue, raising if it is below ``-1e-9 trace``."""
    if cov.size == 0:
        return 0.0
    w = np.linalg.eigvalsh(cov)
    tol = PSD_TOL * max(np.trace(cov), 1e-300)
    if w[0] < -tol:
        raise NotPSDError(f"Gram matrix not PSD: minimum eigenvalue {w[0]:.3e} < -{tol:.3e}")
    return float(w[0])


def riesz_constant(order: float, d: int) -> float:
    """Constant ``c`` of the Riesz kernel ``c |x|**(order - d)`` of ``(-Laplace)**(-order/2)``."""
    return gamma((d - order) / 2) / (2.0 ** order * math.pi ** (d / 2) * gamma(order / 2))


def _convolution_square_1d(alpha: float, x: float) -> float:
    """``int K(x + y) K(y) dy`` with ``K`` the Riesz kernel of order ``(1 - alpha)/2``."""
    beta = (1.0 - alpha) / 2.0
    cb = riesz_constant(beta, 1)

    def f(y):
        return cb * abs(x + y) ** (beta - 1.0) * cb * abs(y) ** (beta - 1.0)

    a = abs(x)
    lo, mid = -a if x >= 0 else 0.0, 0.0 if x >= 0 else a
    pieces = [(-np.inf, min(lo, mid)), (min(lo, mid), max(lo, mid)), (max(lo, mid), np.inf)]
    total = 0.0
    for p, q in pieces:
        with warnings.catch_warnings():
            # roundoff in the extrapolation table near the endpoint singularities
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, p, q, limit=200, epsabs=0, epsrel=1e-10)
        total += val
    return total


@dataclass(frozen=True)
class CovarianceModel:
    """Stationary covariance ``E Phi(x) Phi(y) = kernel(x - y)``.

    ``kernel`` takes displacements (last axis = coordinates, bare in d = 1).
    ``lam`` is the sandwich constant (measured for mollified models, None
    when not applicable); ``g`` is the limiting kernel of
    ``eps**alpha G(eps x)`` when known.
    """

    kind: str
    alpha: float
    scaling: Scaling
    kernel: Callable[[np.ndarray], np.ndarray]
    eps: float = 1.0
    lam: float | None = None
    G: Callable | None = None
    g: Callable | None = None
    mollifier: str | None = None
    resolution: int | None = None
    singular: bool = False
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.alpha < self.scaling.total:
            raise ValueError(f"alpha={self.alpha} outside (0, |s|={self.scaling.total})")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if self.lam is not None and not self.lam >= 1:
            raise ValueError("Lambda must be at least 1")

    @property
    def dim(self) -> int:
        return self.scaling.dim

    def __call__(self, displacement) -> np.ndarray | float:
        return self.kernel(displacement)

    def covariance(self, x, y) -> float:
        return float(self.kernel(np.asarray(x, float) - np.asarray(y, float)))

    def sandwich_profile(self, r) -> np.ndarray:
        """Middle function ``eps**alpha / (r + eps)**alpha`` of the sandwich bound."""
        r = np.asarray(r, dtype=float)
        return self.eps ** self.alpha / (r + self.eps) ** self.alpha

    def to_stanza(self) -> str:
        """Serialize as a ``key = value`` stanza."""
        lines = ["[covariance]", f"kind = {self.kind}", f"alpha = {self.alpha!r}",
                 f"eps = {self.eps!r}",
                 f"Lambda = {self.lam!r}" if self.lam is not None else "Lambda = none",
                 f"mollifier = {self.mollifier or 'none'}",
                 f"resolution = {self.resolution or 'none'}",
                 "scaling = " + " ".join(repr(s) for s in self.scaling.exponents)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_stanza(cls, text: str) -> "CovarianceModel":
        """Rebuild a fractional or mollified-fractional model from :meth:`to_stanza` output."""
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith(("[", "#")):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        s = Scaling(tuple(float(v) for v in kv.get("scaling", "1.0").split()))
        base = fractional_covariance(float(kv["alpha"]), s)
        if kv["kind"] == "fractional-kernel":
            return base
        if kv["kind"] == "mollified-of-G":
            if kv.get("mollifier", "bump") != "bump":
                raise ValueError(f"unknown mollifier {kv['mollifier']!r}")
            res = kv.get("resolution", "none")
            return mollified_covariance(base, bump(s), float(kv["eps"]),
                                        resolution=None if res == "none" else int(res))
        raise ValueError(f"cannot rebuild a model of kind {kv['kind']!r} from text")


def fractional_covariance(alpha: float, s: Scaling | None = None) -> CovarianceModel:
    """Covariance of the fractional Gaussian field with ``G(x) = kappa |x|**(-alpha)``.

    Only Euclidean scalings are supported.  In ``d = 1`` ``kappa`` comes from
    quadrature of the convolution square of the Riesz kernel; for ``d >= 2``
    the closed Riesz composition constant is used with the Euclidean norm.
    """
    s = Scaling.euclidean(1) if s is None else s
    if not 0 < alpha < s.total:
        raise ValueError(f"alpha={alpha} outside (0, |s|={s.total})")
    if not s.is_euclidean:
        raise ValueError("fractional kernels are implemented for Euclidean scalings only")
    d = s.dim
    if d == 1:
        kappa = _convolution_square_1d(alpha, 1.0)
    else:
        kappa = riesz_constant(d - alpha, d)

    def G(x, _k=kappa, _a=alpha, _d=d):
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if _d == 1 else np.linalg.norm(x, axis=-1)
        with np.errstate(divide="ignore"):
            return _k * r ** (-_a)

    return CovarianceModel("fractional-kernel", alpha, s, G, eps=1.0, lam=None,
                           G=G, g=G, singular=True)


def kernel_covariance(G: Callable, alpha: float, s: Scaling | None = None,
                      g: Callable | None = None, singular: bool = True) -> CovarianceModel:
    """Wrap an arbitrary stationary kernel ``G`` (e.g. power law plus smooth remainder)."""
    s = Scaling.euclidean(1) if s is None else s
    return CovarianceModel("fractional-kernel", alpha, s, G, eps=1.0, G=G, g=g, singular=singular)


def explicit_covariance(matrix, alpha: float = 0.5, s: Scaling | None = None) -> CovarianceModel:
    """Model backed by an explicit PSD Gram matrix (points are indices)."""
    mat = np.array(matrix, dtype=float)
    check_psd(mat)
    s = Scaling.euclidean(1) if s is None else s

    def kernel(_):
        raise TypeError("explicit-gram models have no stationary kernel")

    return CovarianceModel("explicit-gram", alpha, s, kernel, matrix=mat)


def mollifier_autocorrelation(rho: TestFunction, resolution: int = 4096) -> CubicSpline:
    """Spline of ``A(u) = int rho(u + v) rho(v) dv`` (d = 1), zero outside its support."""
    if rho.dim != 1:
        raise NotImplementedError("autocorrelation tabulated in one dimension only")
    pts, h = rho.grid(resolution)
    vals = rho(pts)
    acf = np.correlate(vals, vals, mode="full") * h
    lags = h * np.arange(-(resolution - 1), resolution)
    # pad with explicit zeros so the spline vanishes at the support edge
    edge = lags[-1] + h
    lags = np.concatenate([[-edge], lags, [edge]])
    acf = np.concatenate([[0.0], acf, [0.0]])
    return CubicSpline(lags, acf, extrapolate=False)


def _mollified_value(G: Callable, alpha: float, eps: float, A: CubicSpline, half: float,
                     h: float, tol: float) -> float:
    """``eps**alpha int G(h - eps u) A(u) du`` over ``|u| <= half``, split at the singularity."""

    def f(u):
        a = A(u)
        if not a or np.isnan(a):
            return 0.0
        return float(G(h - eps * u)) * a

    cut = h / eps
    breaks = [-half] + ([cut] if -half < cut < half else []) + [half]
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, lo, hi, limit=400, epsabs=1e-13, epsrel=tol)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"covariance quadrature failed at h={h}: {exc}") from exc
        total += val
    return eps ** alpha * total


def mollified_covariance(model: CovarianceModel, rho: TestFunction | None, eps: float,
                         resolution: int | None = None, probes=None,
                         tol: float = 1e-10) -> CovarianceModel:
    """Covariance of ``Phi_eps = eps**(alpha/2) rho_eps * Psi`` in one dimension.

    ``C_eps(h) = eps**alpha int G(h - eps u) (rho * rho~)(u) du``.  Values are
    cached per separation.  The returned model carries the sandwich constant
    measured on ``probes`` (default: :func:`default_probes`).
    """
    if model.dim != 1:
        raise NotImplementedError("mollified covariances are computed in one dimension")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    rho = bump(model.scaling) if rho is None else rho
    mass = integrate_test(rho)
    if abs(mass - 1) > 1e-6:
        raise ValueError(f"mollifier integrates to {mass}, not 1")
    res = resolution or 4096
    A = mollifier_autocorrelation(rho, res)
    half = 2.0 * rho.support_radius
    G = model.G if model.G is not None else model.kernel
    cache: dict[float, float] = {}

    def kernel(x, _G=G, _a=model.alpha, _e=eps, _A=A, _half=half, _cache=cache):
        x = np.abs(np.asarray(x, dtype=float))
        if x.ndim and x.shape[-1:] == (1,):
            x = x[..., 0]
        flat = x.ravel()
        out = np.empty_like(flat)
        for i, v in enumerate(flat):
            key = round(float(v), 14)
            if key not in _cache:
                _cache[key] = _mollified_value(_G, _a, _e, _A, _half, key, tol)
            out[i] = _cache[key]
        out = out.reshape(x.shape)
        return float(out) if out.ndim == 0 else out

    name = rho.name
    draft = CovarianceModel("mollified-of-G", model.alpha, model.scaling, kernel, eps=eps,
                            lam=None, G=G, g=model.g, mollifier=name, resolution=res)
    report = sandwich_check(draft, default_probes() if probes is None else probes)
    if not np.isfinite(report.lam_fit):
        raise QuadratureError(f"mollified covariance violates positivity: {report.message}")
    return CovarianceModel("mollified-of-G", model.alpha, model.scaling, kernel, eps=eps,
                           lam=report.lam_fit, G=G, g=model.g, mollifier=name, resolution=res)


def default_probes(n: int = 64, r_max: float = 10.0) -> np.ndarray:
    """Zero plus ``n - 1`` logarithmically spaced separations up to ``r_max``."""
    return np.concatenate([[0.0], np.logspace(-4, np.log10(r_max), n - 1)])


@dataclass
class SandwichReport:
    lam_fit: float
    passed: bool
    probes: np.ndarray
    values: np.ndarray
    ratios: np.ndarray
    message: str = ""


def sandwich_check(model: CovarianceModel, probes, lam: float | None = None) -> SandwichReport:
    """Fit the smallest ``Lambda`` with ``Lambda**-1 <= C(r) (r+eps)**alpha / eps**alpha <= Lambda``.

    Passes iff the fit does not exceed ``lam`` (default: the model's own
    constant; without one, any finite fit passes).
    """
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    if probes.size == 0:
        raise ValueError("probes must be nonempty")
    if model.dim == 1:
        disp = probes
    else:
        disp = np.zeros((probes.size, model.dim))
        disp[:, 0] = probes
    vals = np.atleast_1d(np.asarray(model(disp), dtype=float))
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        bad = probes[~(np.isfinite(vals) & (vals > 0))]
        return SandwichReport(math.inf, False, probes, vals, np.full_like(vals, np.nan),
                              f"nonpositive or non-finite covariance at separations {bad[:5].tolist()}")
    ratio = vals / model.sandwich_profile(probes)
    lam_fit = float(max(ratio.max(), (1.0 / ratio).max()))
    limit = model.lam if lam is None else lam
    passed = True if limit is None else lam_fit <= limit * (1 + 1e-12)
    return SandwichReport(lam_fit, passed, probes, vals, ratio)


def gram_matrix(model: CovarianceModel, points) -> GaussianVector:
    """Gram matrix ``C(x_i - x_j)`` with a PSD check."""
    if model.kind == "explicit-gram":
        pts = np.arange(model.matrix.shape[0]) if points is None else np.asarray(points)
        if len(pts) != model.matrix.shape[0]:
            raise ValueError("explicit Gram size does not match the number of points")
        return GaussianVector(pts, model.matrix)
    pts = np.asarray(points, dtype=float)
    if model.dim == 1:
        pts = pts.reshape(-1)
        disp = pts[:, None] - pts[None, :]
    else:
        pts = pts.reshape(-1, model.dim)
        disp = pts[:, None, :] - pts[None, :, :]
    cov = np.asarray(model(disp), dtype=float)
    if not np.all(np.isfinite(cov)):
        raise ValueError("model covariance is infinite at some separation (unmollified kernel?)")
    return GaussianVector(pts, cov)


def limit_kernel_error(model: CovarianceModel, eps: float, window: float = 4.0,
                       n: int = 4096) -> float:
    """Relative ``L1([-window, window])`` distance of ``eps**alpha G(eps x)`` from ``g``.

    Midpoint rule on a grid that avoids the origin (d = 1).
    """
    if model.g is None or model.G is None:
        raise ValueError("model carries no limiting kernel")
    if model.dim != 1:
        raise NotImplementedError("limit check is one-dimensional")
    h = 2 * window / n
    x = -window + h * (np.arange(n) + 0.5)
    lhs = eps ** model.alpha * np.asarray(model.G(eps ** model.scaling.exponents[0] * x))
    rhs = np.asarray(model.g(x))
    return float(np.sum(np.abs(lhs - rhs)) / np.sum(np.abs(rhs)))


def pairwise_separations(points, s: Scaling) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if s.dim == 1:
        pts = pts.reshape(-1)
        return np.asarray(aniso_norm(pts[:, None] - pts[None, :], s))
    pts = pts.reshape(-1, s.dim)
    return np.asarray(aniso_norm(pts[:, None, :] - pts[None, :, :], s))
