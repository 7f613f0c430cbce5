"""Exact Gaussian moment calculus.

Everything here is exact up to floating point: Wick products are evaluated
by pairing recursions, and expectations involving ``exp(i theta X_j)`` are
reduced to Wick moments through the Cameron-Martin shift

    E[exp(i theta S) f(X)] = exp(-theta**2 Var(S) / 2) E[f(X + i theta Cov(X, S))],

combined with the Appell identity for Hermite polynomials.  Results that
depend on ``theta`` are returned as :class:`ThetaExpr` objects, i.e. finite
sums ``sum_q p_q(theta) exp(-q theta**2 / 2)`` that can be differentiated
and evaluated on whole grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "LegCapError",
    "ThetaExpr",
    "ChaosQuery",
    "DEFAULT_LEG_CAP",
    "DEFAULT_POINT_CAP",
    "hermite",
    "hermite_coefficients",
    "monomial_in_hermite",
    "wick_moment",
    "isserlis_moment",
    "all_pairings",
    "exp_wick_expr",
    "exp_wick_expectation",
    "subtracted_product_expr",
    "subtracted_product",
    "chaos_coefficient_expr",
    "chaos_coefficient",
    "fit_coefficient_constant",
    "rhs_moment",
]

DEFAULT_LEG_CAP = 16
DEFAULT_POINT_CAP = 8
MAX_THETA_DEGREE = 64
_RATE_DIGITS = 12


class LegCapError(ValueError):
    """Raised when a moment would involve more legs (or points) than allowed."""


def _matrix(cov) -> np.ndarray:
    c = getattr(cov, "cov", cov)
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        c = c.reshape(1, 1)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"covariance must be square, got shape {c.shape}")
    return c


def _index(n, K: int) -> tuple[int, ...]:
    n = tuple(int(v) for v in n)
    if len(n) != K:
        raise ValueError(f"multi-index has length {len(n)}, expected {K}")
    if any(v < 0 for v in n):
        raise ValueError("multi-index entries must be nonnegative")
    return n


# ---------------------------------------------------------------------------
# Hermite polynomials
# ---------------------------------------------------------------------------

def hermite(n: int, x, var: float = 1.0):
    """Hermite polynomial ``He_n(x; var)``, the Wick power of a N(0, var) variable.

    Uses ``He_n = x He_{n-1} - (n-1) var He_{n-2}``.
    """
    if n < 0:
        raise ValueError("order must be nonnegative")
    x = np.asarray(x, dtype=float) if not np.iscomplexobj(x) else np.asarray(x)
    h0 = np.ones_like(x)
    if n == 0:
        return h0
    h1 = x.copy()
    for k in range(2, n + 1):
        h0, h1 = h1, x * h1 - (k - 1) * var * h0
    return h1


def hermite_coefficients(n: int, var: float = 1.0) -> np.ndarray:
    """Ascending monomial coefficients of ``He_n(x; var)``."""
    c = np.zeros(n + 1)
    for k in range(n // 2 + 1):
        c[n - 2 * k] = (math.factorial(n) / (math.factorial(k) * math.factorial(n - 2 * k))
                        * (-var / 2.0) ** k)
    return c


def monomial_in_hermite(r: int, var: float = 1.0) -> list[tuple[int, float]]:
    """Expand ``x**r`` as ``sum_k c_k He_{r-2k}(x; var)``; returns ``[(order, c_k)]``."""
    return [(r - 2 * k,
             math.factorial(r) / (math.factorial(k) * math.factorial(r - 2 * k))
             * (var / 2.0) ** k)
            for k in range(r // 2 + 1)]


# ---------------------------------------------------------------------------
# Expressions in theta
# ---------------------------------------------------------------------------

def _trim(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1]


class ThetaExpr:
    """Finite sum ``sum_q p_q(theta) exp(-q theta**2 / 2)`` with ``q >= 0``.

    Polynomials are stored as ascending complex coefficient arrays keyed by
    their Gaussian rate ``q``; rates equal to 12 decimals are merged.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: dict[float, np.ndarray] | None = None):
        self.terms: dict[float, np.ndarray] = {}
        for q, c in (terms or {}).items():
            self._accumulate(q, c)

    @classmethod
    def gaussian(cls, rate: float, coeffs) -> "ThetaExpr":
        return cls({rate: np.atleast_1d(np.asarray(coeffs, dtype=complex))})

    @classmethod
    def constant(cls, value: complex) -> "ThetaExpr":
        return cls({0.0: np.array([value], dtype=complex)})

    def _accumulate(self, q: float, c) -> None:
        if q < -1e-14:
            raise ValueError(f"Gaussian rate must be nonnegative, got {q}")
        key = round(max(float(q), 0.0), _RATE_DIGITS)
        c = np.asarray(c, dtype=complex)
        if key in self.terms:
            c = P.polyadd(self.terms[key], c)
        c = _trim(c)
        if c.size - 1 > MAX_THETA_DEGREE:
            raise OverflowError(f"polynomial degree {c.size - 1} exceeds cap {MAX_THETA_DEGREE}")
        if not np.any(c):
            self.terms.pop(key, None)
        else:
            self.terms[key] = c

    def copy(self) -> "ThetaExpr":
        return ThetaExpr({q: c.copy() for q, c in self.terms.items()})

    def __add__(self, other) -> "ThetaExpr":
        if not isinstance(other, ThetaExpr):
            other = ThetaExpr.constant(other)
        out = self.copy()
        for q, c in other.terms.items():
            out._accumulate(q, c)
        return out

    __radd__ = __add__

    def __neg__(self) -> "ThetaExpr":
        return ThetaExpr({q: -c for q, c in self.terms.items()})

    def __sub__(self, other) -> "ThetaExpr":
        return self + (-other if isinstance(other, ThetaExpr) else -complex(other))

    def __mul__(self, other) -> "ThetaExpr":
        if not isinstance(other, ThetaExpr):
            return ThetaExpr({q: c * other for q, c in self.terms.items()})
        out = ThetaExpr()
        for q1, c1 in self.terms.items():
            for q2, c2 in other.terms.items():
                out._accumulate(q1 + q2, P.polymul(c1, c2))
        return out

    __rmul__ = __mul__

    def diff(self, k: int = 1) -> "ThetaExpr":
        """``k``-th derivative in theta: ``(p' - q theta p) exp(-q theta^2/2)``."""
        out = self
        for _ in range(k):
            nxt = ThetaExpr()
            for q, c in out.terms.items():
                dc = P.polyder(c) if c.size > 1 else np.zeros(1, dtype=complex)
                nxt._accumulate(q, P.polysub(dc, q * P.polymulx(c)))
            out = nxt
        return out

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=complex)
        t2 = theta * theta
        for q, c in self.terms.items():
            out = out + P.polyval(theta, c) * np.exp(-0.5 * q * t2)
        return out if out.ndim else complex(out)

    def rates(self) -> list[float]:
        return sorted(self.terms)

    def __repr__(self) -> str:
        parts = [f"({np.round(c, 6).tolist()})*exp(-{q}θ²/2)" for q, c in sorted(self.terms.items())]
        return "ThetaExpr(" + " + ".join(parts or ["0"]) + ")"


# ---------------------------------------------------------------------------
# Pairing moments
# ---------------------------------------------------------------------------

def _check_legs(n: Sequence[int], leg_cap: int) -> None:
    if sum(n) > leg_cap:
        raise LegCapError(f"{sum(n)} legs exceed the cap of {leg_cap}")


def _pair_recursion(C: np.ndarray, n: tuple[int, ...], memo: dict, self_pairs: bool) -> float:
    """Sum over pairings of the legs ``n`` of products of ``C`` entries.

    The first unpaired leg is matched with every remaining leg, which
    enumerates all pairings exactly once; states are memoized on ``n``.
    """
    if n in memo:
        return memo[n]
    j = next((i for i, v in enumerate(n) if v), None)
    if j is None:
        return 1.0
    rest = list(n)
    rest[j] -= 1
    total = 0.0
    for k, cnt in enumerate(rest):
        if cnt == 0 or (k == j and not self_pairs):
            continue
        c = C[j, k]
        if c == 0.0:
            continue
        rest[k] -= 1
        total += cnt * c * _pair_recursion(C, tuple(rest), memo, self_pairs)
        rest[k] += 1
    memo[n] = total
    return total


def wick_moment(cov, n, leg_cap: int = DEFAULT_LEG_CAP, _memo: dict | None = None) -> float:
    """``E prod_j X_j^{<>n_j}`` for a centered Gaussian vector.

    Sum over perfect matchings of the legs in which no two legs at the same
    point are paired.  Zero for an odd number of legs.
    """
    C = _matrix(cov)
    n = _index(n, C.shape[0])
    _check_legs(n, leg_cap)
    if sum(n) % 2:
        return 0.0
    memo = {} if _memo is None else _memo
    return float(_pair_recursion(C, n, memo, self_pairs=False))


def all_pairings(items: Sequence) -> Iterable[list[tuple]]:
    """Yield every perfect matching of ``items`` as a list of pairs."""
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        pair = (first, items[i])
        for rest in all_pairings(items[1:i] + items[i + 1:]):
            yield [pair] + rest


def isserlis_moment(cov, n, leg_cap: int = DEFAULT_LEG_CAP) -> float:
    """Plain moment ``E prod_j X_j^{n_j}`` by brute-force matching enumeration."""
    C = _matrix(cov)
    n = _index(n, C.shape[0])
    _check_legs(n, leg_cap)
    if sum(n) % 2:
        return 0.0
    legs = [j for j, v in enumerate(n) for _ in range(v)]
    total = 0.0
    for pairing in all_pairings(legs):
        prod = 1.0
        for a, b in pairing:
            prod *= C[a, b]
        total += prod
    return float(total)


# ---------------------------------------------------------------------------
# Mixed exponential / Wick expectations
# ---------------------------------------------------------------------------

def _shift_poly(C: np.ndarray, shifts: np.ndarray, n: tuple[int, ...], memo: dict,
                leg_cap: int) -> np.ndarray:
    """Polynomial in theta of ``E prod_j He_{n_j}(X_j + i theta shifts_j)``."""
    deg = sum(n)
    poly = np.zeros(deg + 1, dtype=complex)
    for k in itertools.product(*(range(v + 1) for v in n)):
        rem = tuple(a - b for a, b in zip(n, k))
        if sum(rem) % 2:
            continue
        coef = 1.0 + 0j
        for kj, nj, cj in zip(k, n, shifts):
            if kj:
                coef *= math.comb(nj, kj) * (1j * cj) ** kj
        if coef == 0:
            continue
        w = wick_moment(C, rem, leg_cap=leg_cap, _memo=memo)
        if w:
            poly[sum(k)] += coef * w
    return poly


def _subset_stats(C: np.ndarray, A: Sequence[int]) -> tuple[np.ndarray, float]:
    A = list(A)
    shifts = C[:, A].sum(axis=1) if A else np.zeros(C.shape[0])
    var = float(C[np.ix_(A, A)].sum()) if A else 0.0
    return shifts, var


def exp_wick_expr(cov, A: Iterable[int], n, leg_cap: int = DEFAULT_LEG_CAP) -> ThetaExpr:
    """``theta -> E[prod_{j in A} exp(i theta X_j) prod_j X_j^{<>n_j}]`` as a ThetaExpr.

    ``n`` is a full-length multi-index; points may carry both an exponential
    and a Wick power.
    """
    C = _matrix(cov)
    K = C.shape[0]
    A = sorted(set(int(a) for a in A))
    if any(a < 0 or a >= K for a in A):
        raise IndexError("subset index out of range")
    n = _index(n, K)
    _check_legs(n, leg_cap)
    shifts, var = _subset_stats(C, A)
    poly = _shift_poly(C, shifts, n, {}, leg_cap)
    return ThetaExpr.gaussian(var, poly)


def exp_wick_expectation(cov, A: Iterable[int], n, theta, leg_cap: int = DEFAULT_LEG_CAP):
    """Evaluate :func:`exp_wick_expr` at ``theta`` (scalar or array)."""
    return exp_wick_expr(cov, A, n, leg_cap)(theta)


@dataclass(frozen=True)
class ChaosQuery:
    """Inputs of the subtracted product ``E prod_j d^r_theta H_m(exp(i theta X_j))``."""

    gaussian: object
    m: int
    r: int
    theta: float = 0.0

    def __post_init__(self):
        if self.m < 0 or self.r < 0:
            raise ValueError("m and r must be nonnegative")


def _removed_coefficient(var: float, n: int, r: int) -> ThetaExpr:
    """``d^r/dtheta^r [(i theta)^n / n! exp(-var theta^2 / 2)]``."""
    c = np.zeros(n + 1, dtype=complex)
    c[n] = (1j) ** n / math.factorial(n)
    return ThetaExpr.gaussian(var, c).diff(r)


def subtracted_product_expr(cov, m: int, r: int, leg_cap: int = DEFAULT_LEG_CAP,
                            point_cap: int = DEFAULT_POINT_CAP) -> ThetaExpr:
    """``theta -> E prod_j d^r_theta H_m(exp(i theta X_j))`` as an exact ThetaExpr.

    Each factor is ``(i X_j)^r exp(i theta X_j) - sum_{n<m} c_{j,n}(theta) X_j^{<>n}``
    with ``c_{j,n} = d^r[(i theta)^n/n! exp(-theta^2 Var X_j / 2)]``.  The
    product is multiplied out over the subset ``A`` of points taking the
    exponential branch; ``X_j^r`` is rewritten in Wick powers and every cross
    term reduces to a shifted Wick moment.  All terms sharing ``A`` have the
    Gaussian rate ``Var(sum_A X) + sum_{j not in A} Var X_j``.
    """
    if m < 0 or r < 0:
        raise ValueError("m and r must be nonnegative")
    C = _matrix(cov)
    K = C.shape[0]
    if K > point_cap:
        raise LegCapError(f"{K} points exceed the cap of {point_cap}")
    variances = np.diag(C).copy()
    max_legs = K * max(m - 1, r, 0)
    if max_legs > leg_cap:
        raise LegCapError(f"up to {max_legs} legs exceed the cap of {leg_cap}")

    removed = []
    for j in range(K):
        opts = []
        for n in range(m):
            ex = _removed_coefficient(variances[j], n, r)
            c = next(iter(ex.terms.values()), np.zeros(1, dtype=complex))
            opts.append((n, -c))
        removed.append(opts)
    expo = [[(a, (1j) ** r * c) for a, c in monomial_in_hermite(r, variances[j])]
            for j in range(K)]

    memo: dict = {}
    total = ThetaExpr()
    for mask in range(1 << K):
        A = [j for j in range(K) if mask >> j & 1]
        outside = [j for j in range(K) if not mask >> j & 1]
        if outside and m == 0:
            continue
        shifts, varA = _subset_stats(C, A)
        rate = varA + float(variances[outside].sum()) if outside else varA
        choices = [expo[j] if mask >> j & 1 else removed[j] for j in range(K)]
        acc = np.zeros(1, dtype=complex)
        for combo in itertools.product(*choices):
            n = tuple(c[0] for c in combo)
            coef = np.ones(1, dtype=complex)
            for _, c in combo:
                coef = P.polymul(coef, np.atleast_1d(c))
            if not np.any(coef):
                continue
            shift = _shift_poly(C, shifts, n, memo, leg_cap)
            acc = P.polyadd(acc, P.polymul(coef, shift))
        total._accumulate(rate, acc)
    return total


def subtracted_product(query: ChaosQuery | None = None, *, cov=None, m: int | None = None,
                       r: int | None = None, theta=None, **caps):
    """Evaluate ``E prod_j d^r_theta H_m(exp(i theta X_j))`` at ``theta``.

    Accepts either a :class:`ChaosQuery` or keyword arguments.
    """
    if query is not None:
        cov, m, r, theta = query.gaussian, query.m, query.r, query.theta
    return subtracted_product_expr(cov, m, r, **caps)(theta)


# ---------------------------------------------------------------------------
# Single-point chaos coefficients and the right-hand side
# ---------------------------------------------------------------------------

def chaos_coefficient_expr(var: float, n: int, r: int, m: int) -> ThetaExpr:
    """Coefficient of ``X^{<>n}`` in ``d^r_theta H_m(exp(i theta X))``, as a ThetaExpr."""
    if n < m:
        return ThetaExpr()
    c = np.zeros(n + 1, dtype=complex)
    c[n] = (1j) ** n / math.factorial(n)
    return ThetaExpr.gaussian(var, c).diff(r)


def chaos_coefficient(theta, var: float, n: int, r: int, m: int):
    """``(i^n/n!) d^r_theta (theta^n exp(-theta^2 var/2))`` for ``n >= m``, else 0."""
    return chaos_coefficient_expr(var, n, r, m)(theta)


def fit_coefficient_constant(var: float, lam: float, m: int, r: int, thetas,
                             n_max: int = 12) -> float:
    """Smallest ``C`` with ``|C_n(theta)| <= exp(-theta^2/(2 lam)) (C <theta>)^n / n!``.

    The supremum runs over the supplied theta grid and ``max(m, 1) <= n <= n_max``;
    ``<theta> = 1 + |theta|``.
    """
    thetas = np.asarray(thetas, dtype=float)
    bracket = 1.0 + np.abs(thetas)
    best = 0.0
    for n in range(max(m, 1), n_max + 1):
        vals = np.abs(chaos_coefficient(thetas, var, n, r, m))
        with np.errstate(divide="ignore"):
            logs = (np.log(vals) + math.lgamma(n + 1) + thetas ** 2 / (2 * lam)) / n - np.log(bracket)
        logs = logs[np.isfinite(logs)]
        if logs.size:
            best = max(best, float(np.exp(logs.max())))
    return best


def rhs_moment(cov, m: int, leg_cap: int = DEFAULT_LEG_CAP) -> float:
    """``E prod_j (X_j^{<>m} + X_j^{<>(m+1)})`` expanded into ``2^K`` Wick moments."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    C = _matrix(cov)
    K = C.shape[0]
    _check_legs((m + 1,) * K, leg_cap)
    memo: dict = {}
    total = 0.0
    for bits in itertools.product((0, 1), repeat=K):
        n = tuple(m + b for b in bits)
        if sum(n) % 2:
            continue
        total += wick_moment(C, n, leg_cap=leg_cap, _memo=memo)
    return total
