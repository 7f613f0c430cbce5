"""Anisotropic scalings, the induced metric, and rescaled test functions.

A scaling ``s = (s_1, ..., s_d)`` defines the quasi-metric
``|x|_s = sum_j |x_j|**(1/s_j)`` and the dilations
``x -> (lam**s_1 x_1, ..., lam**s_d x_d)`` under which it is 1-homogeneous.
Test functions are closures carrying a support radius (in metric units)
so that quadrature can be restricted to a bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "Scaling",
    "TestFunction",
    "aniso_norm",
    "quasi_triangle_constant",
    "rescale_test",
    "rescale_mollifier",
    "integrate_test",
    "bump",
    "triangle",
    "MollifierError",
]

DEFAULT_RESOLUTION = {1: 2**10, 2: 2**7}


class MollifierError(ValueError):
    """Raised when a mollifier does not integrate to one."""


@dataclass(frozen=True)
class Scaling:
    """Per-axis scaling exponents.

    Parameters
    ----------
    exponents : tuple of float
        Positive exponents ``s_1, ..., s_d``.
    """

    exponents: tuple[float, ...]
    total: float = field(init=False)

    def __post_init__(self):
        exps = tuple(float(s) for s in np.atleast_1d(self.exponents))
        if len(exps) < 1:
            raise ValueError("a scaling needs at least one axis")
        if any(not np.isfinite(s) or s <= 0 for s in exps):
            raise ValueError(f"scaling exponents must be positive, got {exps}")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "total", float(sum(exps)))

    @classmethod
    def euclidean(cls, d: int = 1) -> "Scaling":
        return cls((1.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def is_euclidean(self) -> bool:
        return all(s == 1.0 for s in self.exponents)

    def dilate(self, x, lam: float) -> np.ndarray:
        """Apply ``x_j -> lam**s_j * x_j`` along the last axis."""
        x = _as_points(x, self.dim)
        return x * np.power(lam, np.asarray(self.exponents))


def _as_points(x, d: int) -> np.ndarray:
    """Coerce to an array whose last axis has length ``d``.

    In ``d = 1`` a bare scalar or 1-D array of positions is accepted.
    """
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected last axis {d}, got shape {x.shape}")
    return x


def aniso_norm(x, s: Scaling) -> np.ndarray | float:
    """Return ``sum_j |x_j|**(1/s_j)``.

    ``x`` may hold many points; the last axis is the coordinate axis (in
    ``d = 1`` plain arrays of positions are accepted).
    """
    x = np.asarray(x, dtype=float)
    if s.dim > 1 and (x.ndim == 0 or x.shape[-1] != s.dim):
        raise ValueError(f"dimension mismatch: expected {s.dim} coordinates, got shape {x.shape}")
    if s.dim == 1 and x.ndim >= 1 and x.shape[-1] == 1:
        x = x[..., 0]
    if s.dim == 1:
        out = np.abs(x) ** (1.0 / s.exponents[0])
    else:
        inv = 1.0 / np.asarray(s.exponents)
        out = np.sum(np.abs(x) ** inv, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def quasi_triangle_constant(s: Scaling) -> float:
    """Constant ``c`` with ``|x - z| <= c (|x - y| + |y - z|)``.

    Exponents ``1/s_j <= 1`` are subadditive, so ``c = 1`` unless some
    ``s_j < 1``, in which case convexity gives ``2**(1/s_j - 1)``.
    """
    p = max(1.0 / e for e in s.exponents)
    return float(2.0 ** (max(p, 1.0) - 1.0))


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported function on R^d.

    ``fn`` maps an array of points (last axis = coordinates; bare positions
    in d = 1) to values.  The support is contained in the metric ball of
    radius ``support_radius`` around ``center``.
    """

    __test__ = False  # keep pytest from collecting this class

    fn: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    scaling: Scaling
    smoothness: str = "smooth"
    center: tuple[float, ...] | None = None
    name: str = "test"

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError("support radius must be positive")
        c = (0.0,) * self.scaling.dim if self.center is None else tuple(
            float(v) for v in np.atleast_1d(self.center))
        if len(c) != self.scaling.dim:
            raise ValueError("center dimension mismatch")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.scaling.dim

    def __call__(self, y) -> np.ndarray:
        pts = _as_points(y, self.dim)
        return np.asarray(self.fn(pts), dtype=float)

    def bounds(self) -> list[tuple[float, float]]:
        """Per-axis bounding box of the support."""
        out = []
        for c, s in zip(self.center, self.scaling.exponents):
            half = self.support_radius ** s
            out.append((c - half, c + half))
        return out

    def grid(self, resolution: int | None = None):
        """Midpoint grid on the bounding box: (points, cell volume)."""
        n = resolution or DEFAULT_RESOLUTION.get(self.dim, 2**5)
        axes = []
        vol = 1.0
        for lo, hi in self.bounds():
            h = (hi - lo) / n
            axes.append(lo + h * (np.arange(n) + 0.5))
            vol *= h
        if self.dim == 1:
            return axes[0], vol
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1), vol


def integrate_test(phi: TestFunction, resolution: int | None = None) -> float:
    """Tensor-product midpoint rule over the declared support."""
    pts, vol = phi.grid(resolution)
    return float(np.sum(phi(pts)) * vol)


def rescale_test(phi: TestFunction, x, lam: float, s: Scaling | None = None) -> TestFunction:
    """Return ``y -> lam**(-|s|) phi((y_j - x_j) / lam**s_j)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    s = phi.scaling if s is None else s
    if s.dim != phi.dim:
        raise ValueError("dimension mismatch between scaling and test function")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (s.dim,):
        raise ValueError(f"dimension mismatch: expected {s.dim} coordinates")
    scale = np.power(lam, np.asarray(s.exponents))
    amp = lam ** (-s.total)
    base = phi.fn

    def fn(y, _x=x, _scale=scale, _amp=amp):
        return _amp * base((y - _x) / _scale)

    old_center = np.asarray(phi.center)
    new_center = x + scale * old_center
    return TestFunction(fn, phi.support_radius * lam, s, phi.smoothness,
                        tuple(new_center), phi.name)


def rescale_mollifier(rho: TestFunction, eps: float, s: Scaling | None = None,
                      tol: float = 1e-6) -> TestFunction:
    """Return ``rho_eps`` after checking that ``rho`` has unit mass."""
    mass = integrate_test(rho)
    if abs(mass - 1.0) > tol:
        raise MollifierError(f"mollifier integrates to {mass!r}, not 1")
    return rescale_test(rho, np.zeros(rho.dim), eps, s)


def _bump_profile(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


_BUMP_MASS: dict[int, float] = {}


def _bump_mass(d: int) -> float:
    if d not in _BUMP_MASS:
        if d == 1:
            val = integrate.quad(lambda t: np.exp(-1.0 / (1.0 - t * t)), -1, 1,
                                 epsabs=0, epsrel=1e-13)[0]
        else:
            # radial integral times the surface area of the unit sphere
            from scipy.special import gamma
            area = 2 * np.pi ** (d / 2) / gamma(d / 2)
            val = area * integrate.quad(
                lambda t: np.exp(-1.0 / (1.0 - t * t)) * t ** (d - 1), 0, 1,
                epsabs=0, epsrel=1e-13)[0]
        _BUMP_MASS[d] = val
    return _BUMP_MASS[d]


def bump(s: Scaling | None = None) -> TestFunction:
    """Unit-mass ``c exp(-1/(1 - |x|^2))`` supported in the unit ball."""
    s = Scaling.euclidean(1) if s is None else s
    c = 1.0 / _bump_mass(s.dim)

    def fn(y):
        return c * _bump_profile(np.sum(y * y, axis=-1))

    return TestFunction(fn, 1.0, s, "smooth", name="bump")


def triangle(s: Scaling | None = None) -> TestFunction:
    """Unit-mass tent ``max(0, 1 - |x|)`` in one dimension."""
    s = Scaling.euclidean(1) if s is None else s
    if s.dim != 1:
        raise ValueError("triangle is one-dimensional")

    def fn(y):
        return np.maximum(0.0, 1.0 - np.abs(y[..., 0]))

    return TestFunction(fn, 1.0, s, "lipschitz", name="triangle")
