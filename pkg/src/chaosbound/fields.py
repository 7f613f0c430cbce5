"""Lattice samples of stationary Gaussian fields.

A field lives on a regular grid; each site value stands for the average of
the continuum field over its cell, so singular kernels such as
``|x|**-alpha`` give finite lattice covariances.  Samples are drawn by
circulant embedding (exact in law when the embedding is PSD) with a dense
eigen-factorization fallback for small grids.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve

from .covariance import CovarianceModel
from .gaussian import hermite
from .scaling import TestFunction, rescale_test

__all__ = [
    "Grid",
    "LatticeField",
    "EmbeddingError",
    "UnderResolvedError",
    "lattice_covariance",
    "mollifier_weights",
    "mollified_lattice_variance",
    "mollified_lattice_covariance",
    "sample_field",
    "sample_fields",
    "mollify_field",
    "wick_power_field",
    "pair_with_test",
    "pairing_weights",
]

DENSE_LIMIT = 4096
MAX_DOUBLINGS = 3
NEAR_LAGS = 64
MAGIC = b"CBFIELD1"


class EmbeddingError(RuntimeError):
    """Circulant embedding is not PSD and the grid is too large to factor densely."""


class UnderResolvedError(ValueError):
    """The mollifier or test function is not resolved by the grid."""


@dataclass(frozen=True)
class Grid:
    """Regular grid: ``origin + spacing * index`` along each axis."""

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        o = tuple(float(v) for v in np.atleast_1d(self.origin))
        h = tuple(float(v) for v in np.atleast_1d(self.spacing))
        n = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(o) == len(h) == len(n)):
            raise ValueError("origin, spacing and shape must have the same length")
        if any(v <= 0 for v in h):
            raise ValueError("grid spacing must be positive")
        if any(v < 1 for v in n):
            raise ValueError("grid shape must be positive")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "spacing", h)
        object.__setattr__(self, "shape", n)

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> "Grid":
        """``n`` cell centers covering ``[a, b]``."""
        h = (b - a) / n
        return cls((a + h / 2,), (h,), (n,))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def coordinates(self) -> np.ndarray:
        """Site positions; a flat array in d = 1, last axis = coordinates otherwise."""
        ax = self.axes()
        if self.dim == 1:
            return ax[0]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)


@dataclass
class LatticeField:
    """Real values on a :class:`Grid`, tagged with their generating model and seed."""

    grid: Grid
    values: np.ndarray
    model: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def with_values(self, values) -> "LatticeField":
        return LatticeField(self.grid, values, self.model, self.seed)

    def to_bytes(self) -> bytes:
        """Header (magic, dims, shape, spacing, origin, seed) then little-endian float64 values."""
        g = self.grid
        head = MAGIC + struct.pack("<i", g.dim)
        head += struct.pack(f"<{g.dim}q", *g.shape)
        head += struct.pack(f"<{g.dim}d", *g.spacing)
        head += struct.pack(f"<{g.dim}d", *g.origin)
        head += struct.pack("<q", -1 if self.seed is None else self.seed)
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "LatticeField":
        if data[:8] != MAGIC:
            raise ValueError("not a field file")
        off = 8
        (d,) = struct.unpack_from("<i", data, off)
        off += 4
        shape = struct.unpack_from(f"<{d}q", data, off)
        off += 8 * d
        spacing = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
        origin = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
        (seed,) = struct.unpack_from("<q", data, off)
        off += 8
        vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape)
        return cls(Grid(origin, spacing, shape), vals.astype(float), seed=None if seed < 0 else seed)

    def to_csv(self, max_sites: int = 100_000) -> str:
        if self.values.size > max_sites:
            raise ValueError("grid too large for CSV export")
        buf = io.StringIO()
        coords = self.grid.coordinates().reshape(self.values.size, -1)
        names = ",".join(f"x{j}" for j in range(self.grid.dim))
        buf.write(f"{names},value\n")
        for c, v in zip(coords, self.values.ravel()):
            buf.write(",".join(repr(float(x)) for x in c) + f",{float(v)!r}\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Lattice covariance
# ---------------------------------------------------------------------------

def _cell_average_1d(G, h: float, k: int) -> float:
    """``int_{-1}^{1} (1 - |w|) G(h (k + w)) dw``: covariance of two cell averages at lag ``k``."""
    f = lambda w: (1 - abs(w)) * float(G(h * (k + w)))
    pts = [-1.0, 0.0, 1.0]
    if k != 0 and abs(k) <= 1:
        pts = sorted(set(pts + [-float(k)]))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, a, b, limit=200, epsabs=0, epsrel=1e-10)[0]
    return total


def _cell_average_nd(G, h, lag) -> float:
    """Tensor Gauss-Legendre version of the cell average (d >= 2, reduced accuracy)."""
    x, w = np.polynomial.legendre.leggauss(16)
    # nodes on [0, 1] and [-1, 0] keep the kink of (1 - |w|) at a panel edge
    nodes = np.concatenate([(x - 1) / 2, (x + 1) / 2])
    wts = np.concatenate([w / 2, w / 2]) * (1 - np.abs(nodes))
    d = len(lag)
    mesh = np.meshgrid(*([nodes] * d), indexing="ij")
    wmesh = np.prod(np.meshgrid(*([wts] * d), indexing="ij"), axis=0)
    disp = np.stack([np.asarray(h[j]) * (lag[j] + mesh[j]) for j in range(d)], axis=-1)
    return float(np.sum(wmesh * np.asarray(G(disp))))


def lattice_covariance(model: CovarianceModel, spacing, lags) -> np.ndarray:
    """Covariance between site values at integer ``lags`` (shape ``(..., d)`` or flat in d = 1).

    Singular kernels are cell-averaged; smooth ones are sampled pointwise.
    Beyond ``NEAR_LAGS`` the 1-d cell average uses a second-difference correction.
    """
    h = tuple(float(v) for v in np.atleast_1d(spacing))
    d = len(h)
    G = model.G if model.G is not None else model.kernel
    lags = np.asarray(lags, dtype=int)
    if d == 1:
        flat = np.abs(lags.reshape(-1))
        if not model.singular:
            return np.asarray(G(h[0] * flat), dtype=float).reshape(lags.shape)
        out = np.empty(flat.size)
        near = flat <= NEAR_LAGS
        cache: dict[int, float] = {}
        for i in np.flatnonzero(near):
            k = int(flat[i])
            if k not in cache:
                cache[k] = _cell_average_1d(G, h[0], k)
            out[i] = cache[k]
        far = ~near
        if far.any():
            x = h[0] * flat[far].astype(float)
            g0 = np.asarray(G(x))
            out[far] = g0 + (np.asarray(G(x + h[0])) - 2 * g0 + np.asarray(G(x - h[0]))) / 12
        return out.reshape(lags.shape)
    lags = lags.reshape(-1, d)
    if not model.singular:
        return np.asarray(G(lags * np.asarray(h)), dtype=float)
    out = np.empty(len(lags))
    cache = {}
    for i, lag in enumerate(lags):
        key = tuple(sorted(abs(int(v)) for v in lag)) if len(set(h)) == 1 else tuple(abs(int(v)) for v in lag)
        if key not in cache:
            cache[key] = _cell_average_nd(G, h, key)
        out[i] = cache[key]
    return out


def _embedding_lags(M: tuple[int, ...]) -> np.ndarray:
    """Minimum-image lags on the periodic box of size ``M``."""
    axes = [np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m) for m in M]
    if len(M) == 1:
        return axes[0]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _embedding_spectrum(model, grid: Grid):
    M = tuple(2 * n for n in grid.shape)
    for _ in range(MAX_DOUBLINGS + 1):
        lags = _embedding_lags(M)
        c = lattice_covariance(model, grid.spacing, lags).reshape(M)
        lam = np.real(np.fft.fftn(c))
        tol = 1e-9 * c.flat[0] * c.size
        if lam.min() >= -tol:
            return M, np.clip(lam, 0.0, None), float(lam.min())
        M = tuple(2 * m for m in M)
    return None, None, float(lam.min())


_SPECTRA: dict = {}
_DENSE: dict = {}


def _dense_factor(model, grid: Grid) -> np.ndarray:
    coords = np.indices(grid.shape).reshape(grid.dim, -1).T
    lags = coords[:, None, :] - coords[None, :, :]
    if grid.dim == 1:
        lags = lags[..., 0]
    C = lattice_covariance(model, grid.spacing, lags).reshape(coords.shape[0], coords.shape[0])
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-9 * np.trace(C):
        raise EmbeddingError(f"lattice covariance is not PSD (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_fields(model: CovarianceModel, grid: Grid, seed: int, count: int) -> np.ndarray:
    """``count`` independent samples, shape ``(count, *grid.shape)``.

    Deterministic in ``(model, grid, seed, count)``; each complex draw of the
    circulant sampler yields two independent real fields.
    """
    key = (id(model), grid)
    if key not in _SPECTRA:
        # the model is stored alongside so its id cannot be recycled while cached
        _SPECTRA[key] = (model, *_embedding_spectrum(model, grid))
    _, M, lam, _ = _SPECTRA[key]
    rng = np.random.default_rng(seed)
    n = int(np.prod(grid.shape))
    if M is None:
        if n > DENSE_LIMIT:
            raise EmbeddingError(f"circulant embedding not PSD after {MAX_DOUBLINGS} doublings and "
                                 f"{n} sites exceed the dense limit {DENSE_LIMIT}")
        if key not in _DENSE:
            _DENSE[key] = (model, _dense_factor(model, grid))
        F = _DENSE[key][1]
        z = rng.standard_normal((count, n))
        return (z @ F.T).reshape((count,) + grid.shape)
    size = int(np.prod(M))
    amp = np.sqrt(lam / size)
    out = np.empty((count,) + grid.shape)
    sl = (Ellipsis,) + tuple(slice(0, s) for s in grid.shape)
    axes = tuple(range(1, len(M) + 1))
    for start in range(0, count, 2):
        z = rng.standard_normal((2,) + M)
        y = np.fft.fftn(amp * (z[0] + 1j * z[1]), axes=tuple(range(len(M))))
        out[start] = y.real[sl[1:]]
        if start + 1 < count:
            out[start + 1] = y.imag[sl[1:]]
    return out


def sample_field(model: CovarianceModel, grid: Grid, seed: int) -> LatticeField:
    """One sample with covariance ``lattice_covariance(model, grid.spacing, .)``."""
    vals = sample_fields(model, grid, seed, 1)[0]
    return LatticeField(grid, vals, model.kind, seed)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def mollifier_weights(rho: TestFunction, eps: float, spacing) -> np.ndarray:
    """Samples of ``rho_eps`` at lattice offsets, renormalized to sum one."""
    h = np.atleast_1d(np.asarray(spacing, dtype=float))
    if rho.dim != len(h):
        raise ValueError("mollifier dimension does not match the grid")
    half = [eps ** s * rho.support_radius ** s for s in rho.scaling.exponents]
    if any(hw < 2 * hj for hw, hj in zip(half, h)):
        raise UnderResolvedError(f"mollifier of scale {eps} is not resolved by spacing {h.tolist()}")
    ks = [np.arange(-int(np.floor(hw / hj)), int(np.floor(hw / hj)) + 1) for hw, hj in zip(half, h)]
    if len(ks) == 1:
        y = ks[0] * h[0] / eps ** rho.scaling.exponents[0]
    else:
        mesh = np.meshgrid(*ks, indexing="ij")
        y = np.stack([m * hj / eps ** s for m, hj, s in zip(mesh, h, rho.scaling.exponents)], axis=-1)
    w = np.asarray(rho(y), dtype=float)
    return w / w.sum()


def mollify_field(field: LatticeField, rho: TestFunction, eps: float) -> LatticeField:
    """Discrete convolution with ``rho_eps``; only fully covered sites are kept."""
    w = mollifier_weights(rho, eps, field.grid.spacing)
    if any(a > b for a, b in zip(w.shape, field.grid.shape)):
        raise UnderResolvedError("mollifier support exceeds the grid")
    vals = fftconvolve(field.values, w[::-1] if w.ndim == 1 else w[::-1, ::-1], mode="valid")
    off = [(k - 1) // 2 for k in w.shape]
    g = field.grid
    origin = tuple(o + h * k for o, h, k in zip(g.origin, g.spacing, off))
    return LatticeField(Grid(origin, g.spacing, vals.shape), vals, field.model, field.seed)


def mollified_lattice_covariance(model: CovarianceModel, spacing, rho: TestFunction, eps: float,
                                 lags) -> np.ndarray:
    """Exact covariance of the discretely mollified lattice field at integer ``lags`` (d = 1)."""
    h = float(np.atleast_1d(spacing)[0])
    w = mollifier_weights(rho, eps, (h,))
    ww = np.correlate(w, w, mode="full")
    half = len(w) - 1
    offsets = np.arange(-half, half + 1)
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    need = np.unique(np.abs((lags[:, None] + offsets[None, :]).ravel()))
    table = dict(zip(need.tolist(), lattice_covariance(model, (h,), need).tolist()))
    out = np.array([sum(ww[i] * table[abs(int(L + o))] for i, o in enumerate(offsets)) for L in lags])
    return out


def mollified_lattice_variance(model: CovarianceModel, spacing, rho: TestFunction, eps: float) -> float:
    """``w^T C_lattice w`` for the mollifier weights ``w``."""
    return float(mollified_lattice_covariance(model, spacing, rho, eps, [0])[0])


def wick_power_field(field: LatticeField, m: int, var: float) -> LatticeField:
    """Pointwise ``He_m(value; var)`` with ``var`` taken from the model."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if not var > 0:
        raise ValueError("variance must be positive")
    return field.with_values(hermite(m, field.values, var))


def pairing_weights(grid: Grid, phi: TestFunction, x, lam: float) -> np.ndarray:
    """Grid values of ``phi_x^lam`` times the cell volume; raises if the support leaves the grid."""
    phil = rescale_test(phi, x, lam)
    for (lo, hi), ax, h in zip(phil.bounds(), grid.axes(), grid.spacing):
        if lo < ax[0] - h / 2 - 1e-12 or hi > ax[-1] + h / 2 + 1e-12:
            raise UnderResolvedError("test function support exceeds the grid extent")
    return phil(grid.coordinates()) * grid.cell_volume


def pair_with_test(field: LatticeField, phi: TestFunction, x, lam: float) -> float:
    """Riemann sum of ``field * phi_x^lam`` over the grid."""
    return float(np.sum(field.values * pairing_weights(field.grid, phi, x, lam)))
