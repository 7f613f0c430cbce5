"""Clustering, pairing multigraphs and certified rewrite systems.

Vertices are the points ``x_1..x_K``; an edge multiplicity matrix ``E``
encodes a Wick pairing and the value of a graph is
``prod_{i<j} R_ij**E_ij`` with ``R`` the covariance matrix.  Two rewrite
systems act on such graphs:

* reduction lowers the total degree until the graph is *minimal*
  (singleton degrees in ``{m, m+1}``, representatives of degree at most
  ``m+1`` all attached to one singleton);
* enhancement raises every vertex to degree ``m`` or ``m+1`` so that the graph
  becomes a pairing of ``E prod_j (X_j^{<>m} + X_j^{<>(m+1)})``.

Every rewrite emits a :class:`RewriteCertificate` whose claimed factor is
derived from the sandwich bound at the actual point separations, and which
is checked numerically against the graph values when it is created.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .covariance import GaussianVector, pairwise_separations
from .gaussian import chaos_coefficient, fit_coefficient_constant, rhs_moment
from .scaling import Scaling, quasi_triangle_constant

__all__ = [
    "Clustering",
    "ClusterGraph",
    "RewriteCertificate",
    "CertificateError",
    "PreconditionError",
    "build_clusters",
    "choose_L",
    "calibrate_C0",
    "effective_lambda",
    "graph_value",
    "omega_star_member",
    "reduce_graph",
    "enhance_graph",
    "no_singleton_bound",
    "random_admissible_graph",
    "write_edge_list",
    "read_edge_list",
    "GraphFileError",
]

REL_TOL = 1e-12


class CertificateError(AssertionError):
    """A rewrite certificate failed its numeric check."""


class PreconditionError(ValueError):
    """A graph does not satisfy the precondition of a rewrite system."""


class GraphFileError(ValueError):
    """Malformed edge-list file."""


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Clustering:
    """Partition of ``range(K)`` into connected components at scale ``L eps``."""

    labels: tuple[int, ...]
    L: float
    eps: float

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def blocks(self) -> list[tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for j, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(j)
        return [tuple(b) for _, b in sorted(out.items())]

    @property
    def singletons(self) -> list[int]:
        return [b[0] for b in self.blocks if len(b) == 1]

    @property
    def clusters(self) -> list[tuple[int, ...]]:
        """Blocks with at least two points."""
        return [b for b in self.blocks if len(b) >= 2]

    def representative(self, block) -> int:
        return min(block)

    @property
    def representatives(self) -> list[int]:
        return [self.representative(b) for b in self.clusters]

    def block_of(self, j: int) -> tuple[int, ...]:
        lab = self.labels[j]
        return tuple(i for i, l in enumerate(self.labels) if l == lab)


def build_clusters(points, L: float, eps: float, s: Scaling | None = None) -> Clustering:
    """Connected components of the graph joining points within ``L eps``."""
    if not L > 0:
        raise ValueError("L must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    s = Scaling.euclidean(1) if s is None else s
    dist = pairwise_separations(points, s)
    adj = csr_matrix(dist <= L * eps)
    _, raw = connected_components(adj, directed=False)
    # relabel blocks in order of their lowest member
    relabel: dict[int, int] = {}
    labels = []
    for lab in raw:
        relabel.setdefault(int(lab), len(relabel))
        labels.append(relabel[int(lab)])
    return Clustering(tuple(labels), float(L), float(eps))


def choose_L(lam: float, C0: float, alpha: float) -> float:
    """Smallest power of two with ``L**alpha > 4 C0 Lambda``."""
    if not C0 > 0:
        raise ValueError("C0 must be positive")
    target = 4.0 * C0 * lam
    L = 1.0
    while L ** alpha <= target:
        L *= 2.0
    return L


def calibrate_C0(var: float, lam: float, alpha: float, m: int, r: int, thetas,
                 s: Scaling | None = None, n_max: int = 12) -> tuple[float, float]:
    """Fit the exponent constant ``C0`` and return ``(C0, C_coef)``.

    Summing ``(C_coef <theta>)^N / N!`` times the ``(N-1)!!`` pairings and the
    reduction gain ``(C_red L^-alpha)^(N/2)`` over even ``N`` gives
    ``exp(C_coef^2 C_red <theta>^2 / (2 L^alpha))``, so
    ``C0 = C_coef^2 C_red / 2`` with ``C_red = (2c)^alpha Lambda^3``.
    """
    s = Scaling.euclidean(1) if s is None else s
    c_coef = fit_coefficient_constant(var, lam, m, r, thetas, n_max=n_max)
    c_red = (2 * quasi_triangle_constant(s)) ** alpha * lam ** 3
    return 0.5 * c_coef ** 2 * c_red, c_coef


def effective_lambda(gaussian: GaussianVector, eps: float, alpha: float,
                     s: Scaling | None = None) -> float:
    """Smallest ``Lambda`` for which every pair of the vector obeys the sandwich bound."""
    s = Scaling.euclidean(1) if s is None else s
    d = pairwise_separations(gaussian.points, s)
    prof = eps ** alpha / (d + eps) ** alpha
    C = gaussian.cov
    if np.any(C <= 0):
        raise ValueError("sandwich bound needs strictly positive correlations")
    ratio = C / prof
    return float(max(ratio.max(), (1 / ratio).max()))


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------

@dataclass
class ClusterGraph:
    """Multigraph on the points of a Gaussian vector, without self-loops."""

    gaussian: GaussianVector
    E: np.ndarray

    def __post_init__(self):
        E = np.array(self.E, dtype=np.int64)
        K = self.gaussian.K
        if E.shape != (K, K):
            raise ValueError(f"edge matrix must be {K}x{K}")
        if np.any(E != E.T):
            raise ValueError("edge matrix must be symmetric")
        if np.any(np.diag(E) != 0):
            raise ValueError("self-loops are not allowed")
        if np.any(E < 0):
            raise ValueError("multiplicities must be nonnegative")
        self.E = E

    @classmethod
    def empty(cls, gaussian: GaussianVector) -> "ClusterGraph":
        return cls(gaussian, np.zeros((gaussian.K, gaussian.K), dtype=np.int64))

    @classmethod
    def from_edges(cls, gaussian: GaussianVector, edges) -> "ClusterGraph":
        E = np.zeros((gaussian.K, gaussian.K), dtype=np.int64)
        for i, j, k in edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            E[i, j] += k
            E[j, i] += k
        return cls(gaussian, E)

    @property
    def K(self) -> int:
        return self.gaussian.K

    @property
    def R(self) -> np.ndarray:
        return self.gaussian.cov

    def copy(self) -> "ClusterGraph":
        return ClusterGraph(self.gaussian, self.E.copy())

    def degrees(self) -> np.ndarray:
        return self.E.sum(axis=1)

    def degree(self, x: int) -> int:
        return int(self.E[x].sum())

    @property
    def total_degree(self) -> int:
        return int(self.E.sum())

    def neighbors(self, x: int) -> list[int]:
        return [int(y) for y in np.flatnonzero(self.E[x])]

    def edges(self) -> list[tuple[int, int, int]]:
        iu = np.triu_indices(self.K, 1)
        return [(int(i), int(j), int(self.E[i, j])) for i, j in zip(*iu) if self.E[i, j]]

    def add(self, i: int, j: int, k: int = 1) -> None:
        if i == j:
            raise ValueError("self-loops are not allowed")
        if self.E[i, j] + k < 0:
            raise ValueError("multiplicity would become negative")
        self.E[i, j] += k
        self.E[j, i] += k

    def value(self) -> float:
        return graph_value(self)


def graph_value(graph: ClusterGraph) -> float:
    """``prod_{i<j} R_ij**E_ij`` (empty product is 1)."""
    val = 1.0
    for i, j, k in graph.edges():
        val *= graph.R[i, j] ** k
    return float(val)


@dataclass
class RewriteCertificate:
    """Numeric record of one rewrite ``|before| <= factor |after|``."""

    kind: str
    factor: float
    worst_factor: float
    before: float
    after: float
    degrees_before: tuple[int, ...]
    degrees_after: tuple[int, ...]
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.before <= self.factor * self.after * (1 + REL_TOL)

    def check(self) -> "RewriteCertificate":
        if not self.holds:
            raise CertificateError(
                f"{self.kind}: |before|={self.before:.6e} > {self.factor:.6e} * {self.after:.6e}")
        return self

    def line(self) -> str:
        return (f"{self.kind:14s} factor={self.factor:.4e} worst={self.worst_factor:.4e} "
                f"|before|={self.before:.4e} |after|={self.after:.4e} "
                f"deg {list(self.degrees_before)} -> {list(self.degrees_after)} {self.detail}")


@dataclass
class _Sandwich:
    lam: float
    alpha: float
    eps: float
    dist: np.ndarray
    c: float

    def upper(self, i: int, j: int) -> float:
        return self.lam * self.eps ** self.alpha / (self.dist[i, j] + self.eps) ** self.alpha

    def inv_lower(self, i: int, j: int) -> float:
        """``1 / lower(d_ij)``; bounds ``1 <= inv_lower * R_ij``."""
        return self.lam * (self.dist[i, j] + self.eps) ** self.alpha / self.eps ** self.alpha

    def replace(self, x: int, y: int, xp: int, yp: int) -> float:
        """Factor ``C(x,y) <= gamma**alpha Lambda**2 C(x',y')`` with ``gamma`` from the geometry."""
        gamma = max(1.0, self.dist[xp, yp] / self.dist[x, y]) if self.dist[x, y] > 0 else math.inf
        return gamma ** self.alpha * self.lam ** 2


def _sandwich(graph: ClusterGraph, clustering: Clustering, alpha: float, lam: float | None,
              s: Scaling | None) -> _Sandwich:
    s = Scaling.euclidean(1) if s is None else s
    eps = clustering.eps
    lam_pairs = effective_lambda(graph.gaussian, eps, alpha, s)
    lam = lam_pairs if lam is None else max(lam, lam_pairs)
    dist = pairwise_separations(graph.gaussian.points, s)
    return _Sandwich(lam, alpha, eps, dist, quasi_triangle_constant(s))


def omega_star_member(graph: ClusterGraph, clustering: Clustering, m: int) -> tuple[bool, list[str]]:
    """Membership in the class of minimal graphs, with a list of violations."""
    deg = graph.degrees()
    singles = set(clustering.singletons)
    reps = set(clustering.representatives)
    bad: list[str] = []
    for j in range(graph.K):
        if j not in singles and j not in reps and deg[j]:
            bad.append(f"support: vertex {j} is neither singleton nor representative but has degree {deg[j]}")
    for sgl in sorted(singles):
        if deg[sgl] not in (m, m + 1):
            bad.append(f"condition 1: singleton {sgl} has degree {deg[sgl]} not in {{{m},{m + 1}}}")
    for u in sorted(reps):
        if deg[u] > m + 1:
            bad.append(f"condition 1: representative {u} has degree {deg[u]} > {m + 1}")
        if deg[u] >= 1:
            nb = graph.neighbors(u)
            if len(nb) != 1 or nb[0] not in singles:
                bad.append(f"condition 2: representative {u} is attached to {nb}, not to a single singleton")
    return (not bad), bad


def _check_support(graph: ClusterGraph, clustering: Clustering, m: int) -> None:
    deg = graph.degrees()
    active = set(clustering.singletons) | set(clustering.representatives)
    for j in range(graph.K):
        if j not in active and deg[j]:
            raise PreconditionError(f"vertex {j} is a non-representative cluster point with degree {deg[j]}")
    for sgl in clustering.singletons:
        if deg[sgl] < m:
            raise PreconditionError(f"singleton {sgl} has degree {deg[sgl]} < m = {m}")
    for u in clustering.representatives:
        if any(clustering.labels[v] == clustering.labels[u] for v in graph.neighbors(u)):
            raise PreconditionError(f"representative {u} has an edge inside its own cluster")


def _emit(kind, factor, worst, g_before, g_after, detail="") -> RewriteCertificate:
    cert = RewriteCertificate(kind, float(factor), float(worst), g_before.value(), g_after.value(),
                              tuple(int(v) for v in g_before.degrees()),
                              tuple(int(v) for v in g_after.degrees()), detail)
    return cert.check()


def reduce_graph(graph: ClusterGraph, clustering: Clustering, m: int, alpha: float,
                 lam: float | None = None, s: Scaling | None = None,
                 max_steps: int | None = None) -> tuple[ClusterGraph, list[RewriteCertificate]]:
    """Rewrite ``graph`` into a minimal graph, strictly lowering the total degree each step.

    Vertex choice: lowest index among violators; in the pair-merging move
    the neighbor pair with the largest covariance is chosen.
    """
    _check_support(graph, clustering, m)
    sw = _sandwich(graph, clustering, alpha, lam, s)
    L = clustering.L
    singles = set(clustering.singletons)
    active = sorted(singles | set(clustering.representatives))
    g = graph.copy()
    certs: list[RewriteCertificate] = []
    limit = graph.total_degree if max_steps is None else max_steps
    worst_merge = (2 * sw.c) ** alpha * sw.lam ** 3 / (L + 1) ** alpha

    def merge(j: int, kind: str) -> None:
        nb = g.neighbors(j)
        best = None
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                i, ip = nb[a], nb[b]
                if best is None or g.R[i, ip] > g.R[best[0], best[1]]:
                    best = (i, ip)
        i, ip = best
        before = g.copy()
        g.add(j, i, -1)
        g.add(j, ip, -1)
        g.add(i, ip, 1)
        dmin = min(sw.dist[j, i], sw.dist[j, ip])
        factor = (2 * sw.c) ** alpha * sw.lam ** 3 * sw.eps ** alpha / (dmin + sw.eps) ** alpha
        certs.append(_emit(kind, factor, worst_merge, before, g, f"j={j} (i,i')=({i},{ip})"))

    while True:
        if len(certs) > limit:
            raise RuntimeError("reduction failed to terminate within the degree bound")
        deg = g.degrees()
        j = next((v for v in active if deg[v] >= m + 2), None)
        if j is not None:
            nb = g.neighbors(j)
            if len(nb) >= 2:
                merge(j, "reduce-case-1")
            else:
                i = nb[0]
                before = g.copy()
                g.add(j, i, -2)
                certs.append(_emit("reduce-case-2", sw.upper(j, i) ** 2,
                                   sw.lam ** 2 / (L + 1) ** (2 * alpha), before, g, f"j={j} i={i}"))
            continue
        u = next((v for v in clustering.representatives
                  if deg[v] >= 1 and (len(g.neighbors(v)) >= 2 or g.neighbors(v)[0] not in singles)),
                 None)
        if u is None:
            break
        nb = g.neighbors(u)
        if len(nb) >= 2:
            merge(u, "reduce-a")
        else:
            v = nb[0]
            before = g.copy()
            g.add(u, v, -1)
            certs.append(_emit("reduce-b", sw.upper(u, v), sw.lam / (L + 1) ** alpha,
                               before, g, f"u*={u} u*'={v}"))
    ok, why = omega_star_member(g, clustering, m)
    if not ok:
        raise RuntimeError(f"reduction ended outside the minimal class: {why}")
    return g, certs


def enhance_graph(graph: ClusterGraph, clustering: Clustering, m: int, alpha: float,
                  lam: float | None = None, s: Scaling | None = None
                  ) -> tuple[ClusterGraph, list[RewriteCertificate]]:
    """Raise every vertex degree into ``{m, m+1}`` cluster by cluster.

    Singleton degrees are untouched.  For a two-point cluster
    ``floor((l+1)/2)`` of the ``l`` edges from the attached singleton move to
    the partner and ``m - floor(l/2)`` edges join the pair; three-point
    clusters get a triangle; larger clusters get a cycle of multiplicity
    ``floor((m+1)/2)`` plus the two-point move for the representative.
    """
    ok, why = omega_star_member(graph, clustering, m)
    if not ok:
        raise PreconditionError(f"graph is not minimal: {why}")
    singles = clustering.singletons
    if not singles:
        raise PreconditionError("enhancement needs at least one singleton")
    sw = _sandwich(graph, clustering, alpha, lam, s)
    L = clustering.L
    g = graph.copy()
    certs: list[RewriteCertificate] = []

    for block in clustering.clusters:
        u = clustering.representative(block)
        ell = g.degree(u)
        nb = g.neighbors(u)
        sgl = nb[0] if nb else singles[0]
        others = sorted((v for v in block if v != u), key=lambda v: (sw.dist[u, v], v))
        size = len(block)
        diam = (size - 1) * L + 1
        before = g.copy()
        factor = 1.0
        worst = 1.0

        def pair_move(j: int) -> None:
            nonlocal factor, worst
            moved = (ell + 1) // 2
            if moved:
                g.add(sgl, u, -moved)
                g.add(sgl, j, moved)
                factor *= sw.replace(sgl, u, sgl, j) ** moved
                worst *= ((sw.c * size) ** alpha * sw.lam ** 2) ** moved
            added = m - ell // 2
            if added:
                g.add(u, j, added)
                factor *= sw.inv_lower(u, j) ** added
                worst *= (sw.lam * diam ** alpha) ** added

        def add_inner(a: int, b: int, k: int) -> None:
            nonlocal factor, worst
            if k:
                g.add(a, b, k)
                factor *= sw.inv_lower(a, b) ** k
                worst *= (sw.lam * diam ** alpha) ** k

        if size == 2:
            kind = "enhance-case-1"
            pair_move(others[0])
        elif size == 3:
            kind = "enhance-case-2"
            i, j = sorted(others)
            add_inner(u, i, (m + 1 - ell) // 2)
            add_inner(u, j, (m + 1 - ell) // 2)
            add_inner(i, j, (m + ell) // 2)
        else:
            kind = "enhance-case-3"
            last = others[0]
            cyc = sorted(others[1:])
            mult = (m + 1) // 2
            for t in range(len(cyc)):
                add_inner(cyc[t], cyc[(t + 1) % len(cyc)], mult)
            pair_move(last)
        certs.append(_emit(kind, factor, worst, before, g, f"cluster={list(block)} u*={u} l={ell}"))

    deg = g.degrees()
    if any(d not in (m, m + 1) for d in deg):
        raise RuntimeError(f"enhancement left degrees {deg.tolist()} outside {{{m},{m + 1}}}")
    return g, certs


def no_singleton_bound(gaussian: GaussianVector, clustering: Clustering, m: int, alpha: float,
                       lam: float | None = None, s: Scaling | None = None) -> float:
    """Lower bound ``(Lambda (K L + 1)**alpha)**(-floor((m+1)/2) K)`` on the right-hand side.

    Also checks the chain ``bound <= cyclic pairing value <= rhs_moment``.
    """
    if clustering.singletons:
        raise PreconditionError("clustering contains singletons")
    K = gaussian.K
    eps = clustering.eps
    s = Scaling.euclidean(1) if s is None else s
    lam_pairs = effective_lambda(gaussian, eps, alpha, s)
    lam = lam_pairs if lam is None else max(lam, lam_pairs)
    half = (m + 1) // 2
    bound = (lam * (K * clustering.L + 1) ** alpha) ** (-half * K)
    cyc = 1.0
    for block in clustering.blocks:
        for t in range(len(block)):
            cyc *= gaussian.cov[block[t], block[(t + 1) % len(block)]] ** half
    rhs = rhs_moment(gaussian, m, leg_cap=max(16, K * (m + 1)))
    if not (bound <= cyc * (1 + REL_TOL) and cyc <= rhs * (1 + REL_TOL)):
        raise CertificateError(f"no-singleton chain failed: bound={bound}, cyclic={cyc}, rhs={rhs}")
    return bound


# ---------------------------------------------------------------------------
# Random admissible graphs and the edge-list format
# ---------------------------------------------------------------------------

def random_admissible_graph(rng: np.random.Generator, gaussian: GaussianVector,
                            clustering: Clustering, m: int, extra: int = 3,
                            tries: int = 200) -> ClusterGraph:
    """Random multigraph supported on singletons and representatives.

    Singletons get degree ``m + k`` and representatives ``l`` with ``k, l``
    uniform in ``0..extra`` (``l`` up to ``m + extra``); legs are paired at
    random, rejecting self-pairs.
    """
    singles = clustering.singletons
    reps = clustering.representatives
    for _ in range(tries):
        deg = np.zeros(gaussian.K, dtype=int)
        for v in singles:
            deg[v] = m + rng.integers(0, extra + 1)
        for v in reps:
            deg[v] = rng.integers(0, m + extra + 1)
        if deg.sum() % 2:
            deg[singles[0] if singles else reps[0]] += 1
        legs = np.repeat(np.arange(gaussian.K), deg)
        for _ in range(50):
            rng.shuffle(legs)
            pairs = legs.reshape(-1, 2)
            if np.all(pairs[:, 0] != pairs[:, 1]):
                E = np.zeros((gaussian.K, gaussian.K), dtype=np.int64)
                for a, b in pairs:
                    E[a, b] += 1
                    E[b, a] += 1
                return ClusterGraph(gaussian, E)
    raise RuntimeError("could not draw a loop-free pairing")


def write_edge_list(graph: ClusterGraph, clustering: Clustering, m: int) -> str:
    """Serialize as a header (K, m, clusters, points, eps, L) plus ``i j multiplicity`` lines."""
    pts = np.asarray(graph.gaussian.points).reshape(graph.K, -1)
    lines = [f"K = {graph.K}", f"m = {m}",
             "clusters = " + " ".join(str(l) for l in clustering.labels),
             "points = " + " ".join(";".join(repr(float(c)) for c in p) for p in pts),
             f"eps = {clustering.eps!r}", f"L = {clustering.L!r}"]
    lines += [f"{i} {j} {k}" for i, j, k in graph.edges()]
    return "\n".join(lines) + "\n"


def read_edge_list(text: str) -> dict:
    """Parse the edge-list format; returns a dict of header fields and ``edges``."""
    header: dict = {}
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = line.partition("=")
            header[key.strip()] = val.strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphFileError(f"line {lineno}: expected 'i j multiplicity', got {raw!r}")
        try:
            i, j, k = (int(p) for p in parts)
        except ValueError as exc:
            raise GraphFileError(f"line {lineno}: non-integer field in {raw!r}") from exc
        if k < 0 or i == j:
            raise GraphFileError(f"line {lineno}: invalid edge {raw!r}")
        edges.append((i, j, k))
    for key in ("K", "m", "clusters"):
        if key not in header:
            raise GraphFileError(f"missing header field {key!r}")
    try:
        K = int(header["K"])
        m = int(header["m"])
        labels = tuple(int(v) for v in header["clusters"].split())
        points = None
        if "points" in header:
            points = np.array([[float(c) for c in p.split(";")] for p in header["points"].split()])
            if points.shape[1] == 1:
                points = points[:, 0]
        eps = float(header["eps"]) if "eps" in header else None
        L = float(header["L"]) if "L" in header else None
    except ValueError as exc:
        raise GraphFileError(f"bad header value: {exc}") from exc
    if len(labels) != K or (points is not None and len(points) != K):
        raise GraphFileError("header sizes do not match K")
    if m < 0:
        raise GraphFileError("m must be nonnegative")
    if any(not (0 <= i < K and 0 <= j < K) for i, j, _ in edges):
        raise GraphFileError("edge endpoint out of range")
    return {"K": K, "m": m, "labels": labels, "points": points, "eps": eps, "L": L, "edges": edges}
