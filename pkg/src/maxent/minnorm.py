"""Min-norm points and the flat-simplex lower bound on dual solution length.

If the convex hull of ``v_1..v_N`` sits at distance ``delta > 0`` from the
origin, the shortest ``y`` with ``<y, v_i> <= -1`` for all ``i`` has norm
exactly ``1/delta`` and equals ``-v/delta^2`` for the min-norm point ``v``.
Flat integer simplices turn this into families whose near-optimal dual
vectors are forced to be long.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from maxent.errors import BudgetError, CounterexampleError, DomainError
from maxent.support import pairwise_diameter


@dataclass(frozen=True)
class MinNormResult:
    v: np.ndarray
    delta: float
    mu: np.ndarray  # convex coefficients over the input vectors
    iterations: int
    norm_history: tuple = field(default=(), repr=False)
    separator: np.ndarray | None = None

    @property
    def tau(self):
        return 1.0 / self.delta

    @property
    def y_star(self):
        if self.separator is not None:
            return self.separator
        return -self.v / self.delta ** 2


def _affine_minimizer(S):
    """Coefficients ``a`` (summing to 1) of the min-norm point of ``aff(S)``."""
    k = S.shape[0]
    G = S @ S.T
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=1e-13)
    a = sol[:k]
    return a / a.sum()


def wolfe_min_norm(vectors, tol=1e-10, max_iter=10_000):
    """Wolfe's algorithm for the point of ``conv(vectors)`` closest to the origin."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V.reshape(1, -1)
    if V.shape[0] == 0 or not np.all(np.isfinite(V)):
        raise DomainError("need at least one finite vector")
    scale = max(1.0, float(np.max(np.einsum("ij,ij->i", V, V))))
    start = int(np.argmin(np.einsum("ij,ij->i", V, V)))
    S = [start]
    lam = np.array([1.0])
    x = V[start].copy()
    history = [float(np.linalg.norm(x))]
    it = 0
    while it < max_iter:
        it += 1
        scores = V @ x
        j = int(np.argmin(scores))
        if x @ x - scores[j] <= max(tol * (x @ x), 1e-15 * scale) or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:  # minor cycle
            a = _affine_minimizer(V[S])
            if np.all(a > 1e-15):
                lam = a
                break
            neg = a <= 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg & (lam - a > 0), lam / (lam - a), np.inf)
            t = float(min(ratios.min(), 1.0))
            lam = lam + t * (a - lam)
            keep = lam > 1e-15
            if not keep.any():
                keep[int(np.argmax(lam))] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ V[S]
        history.append(float(np.linalg.norm(x)))
    mu = np.zeros(V.shape[0])
    mu[S] = lam
    x = mu @ V
    return MinNormResult(x, float(np.linalg.norm(x)), mu, it, tuple(history))


def min_norm_point(vectors, tol=1e-10):
    """Min-norm point of the hull; rejects hulls that (numerically) contain the origin.

    The separating vector is recomputed on the active set as the least-norm
    solution of ``<y, v_i> = -1``. That equals ``-v/delta^2`` in exact
    arithmetic but avoids the cancellation in ``v`` when ``delta`` is tiny
    relative to the vectors.
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V.reshape(1, -1)
    res = wolfe_min_norm(V, tol=tol)
    if res.delta <= 1e-12:
        raise DomainError("origin lies in the convex hull; tau is undefined")
    act = res.mu > 0
    y, *_ = np.linalg.lstsq(V[act], -np.ones(int(act.sum())), rcond=None)
    ny = float(np.linalg.norm(y))
    if ny > 0 and np.max(V @ y) <= -1.0 + 1e-9 and abs(ny * res.delta - 1.0) <= 1e-6:
        v = -y / (ny * ny)
        return MinNormResult(v, 1.0 / ny, res.mu, res.iterations, res.norm_history, y)
    return res


def shortest_separating_y(vectors):
    """Shortest ``y`` with ``<y, v_i> <= -1`` for all ``i``: returns ``(y*, tau)``."""
    res = min_norm_point(vectors)
    return res.y_star, res.tau


def separation_dual_objective(lam, vectors):
    """Lagrange dual of ``min |y|^2 s.t. <y, v_i> <= -1``: ``sum lam - |sum lam_i v_i|^2 / 4``."""
    lam = np.asarray(lam, dtype=float)
    w = lam @ np.asarray(vectors, dtype=float)
    return float(lam.sum() - 0.25 * (w @ w))


# -- flat simplices ---------------------------------------------------------

# alpha_0 = 0, alpha_1 = e_1, alpha_i = (1 + K_i) e_1 + e_i; the hyperplane
# through alpha_1..alpha_m has unit normal proportional to (1, -K_2, ..., -K_m)
# and sits at distance 1/sqrt(1 + sum K_i^2) from the origin.
_CATALOGUE_K = {
    2: (1000,),
    3: (800, 600),
    4: (600, 640, 480),
}


def flat_simplex(m):
    """Bundled flat integer simplex in ``R^m`` with ``delta`` close to ``1e-3``."""
    if m not in _CATALOGUE_K:
        raise DomainError(f"no bundled flat simplex for m={m}; choose from {sorted(_CATALOGUE_K)}")
    pts = [np.zeros(m, dtype=np.int64)]
    e1 = np.zeros(m, dtype=np.int64)
    e1[0] = 1
    pts.append(e1)
    for i, K in enumerate(_CATALOGUE_K[m], start=1):
        a = (1 + K) * e1.copy()
        a[i] = 1
        pts.append(a)
    return np.array(pts)


def flat_catalogue():
    return {m: flat_simplex(m) for m in sorted(_CATALOGUE_K)}


@dataclass(frozen=True)
class FlatInstance:
    generators: np.ndarray  # alpha_1..alpha_m as rows
    translate: np.ndarray  # gamma
    cell_vertices: np.ndarray  # F'
    family: np.ndarray  # F' plus the origin (last row)
    normal: np.ndarray  # unit normal a of H
    delta: float
    projection: np.ndarray  # closest point of H to the origin
    eps: float
    diameter: float

    @property
    def theta(self):
        return np.zeros(self.family.shape[1])

    @property
    def smoothness(self):
        return 2.0 * self.diameter ** 2


def _snap_floor(c, snap=1e-12):
    r = np.round(c)
    c = np.where(np.abs(c - r) <= snap, r, c)
    return np.floor(c).astype(np.int64)


def build_flat_instance(points, max_vertices=2 ** 20):
    """Lattice-cell family ``F = (gamma + cell) + {0}`` over the hyperplane through ``alpha_1..alpha_m``.

    ``points`` lists ``alpha_0 = 0, alpha_1, ..., alpha_m`` in ``Z^m``.
    """
    P = np.asarray(points)
    if P.ndim != 2 or P.shape[0] != P.shape[1] + 1:
        raise DomainError("need m + 1 points in Z^m")
    if np.any(P[0] != 0):
        raise DomainError("alpha_0 must be the origin")
    if not np.all(np.equal(np.mod(P, 1), 0)):
        raise DomainError("points must be integer")
    G = P[1:].astype(np.int64)
    m = G.shape[1]
    Gf = G.astype(float)
    if np.linalg.matrix_rank(Gf) < m:
        raise DomainError("points are affinely dependent")
    w = np.linalg.solve(Gf, np.ones(m))  # <w, alpha_i> = 1 on H
    delta = 1.0 / float(np.linalg.norm(w))
    a = w * delta
    proj = delta * a
    D = (G[1:] - G[0]).astype(np.int64)  # lattice directions
    if m > 1:
        coef, *_ = np.linalg.lstsq(D.T.astype(float), proj - Gf[0], rcond=None)
        cell = _snap_floor(coef)
        gamma = G[0] + cell @ D
    else:
        gamma = G[0].copy()
    k = m - 1
    if 2 ** k > max_vertices:
        raise BudgetError(f"cell has 2^{k} vertices, above the budget {max_vertices}")
    verts = []
    for bits in itertools.product((0, 1), repeat=k):
        verts.append(gamma + np.array(bits, dtype=np.int64) @ D if k else gamma)
    verts = np.unique(np.array(verts, dtype=np.int64).reshape(-1, m), axis=0)
    family = np.vstack([verts, np.zeros((1, m), dtype=np.int64)])
    d = pairwise_diameter(family)
    eps = delta ** 2 / (math.exp(4.0) * 2.0 * d * d)
    return FlatInstance(G, gamma, verts, family, a, delta, proj, eps, d)


@dataclass(frozen=True)
class LowerBoundCertificate:
    delta: float
    tau: float
    y_star: np.ndarray
    eps: float
    probe_radius: float
    probe_norms: np.ndarray = field(repr=False)
    probe_gaps: np.ndarray = field(repr=False)

    @property
    def min_gap(self):
        return float(self.probe_gaps.min()) if self.probe_gaps.size else math.inf

    def rows(self):
        return [(i, float(n), float(g)) for i, (n, g) in
                enumerate(zip(self.probe_norms, self.probe_gaps))]


def flat_gap(instance, y):
    """``h_0(y) - g(0)`` for uniform weights; ``g(0) = 0`` because the origin is a vertex."""
    vals = instance.cell_vertices.astype(float) @ np.asarray(y, dtype=float)
    return float(np.logaddexp(0.0, logsumexp(vals)))


def certify_lower_bound(instance, probes=1000, seed=0, radius_fraction=0.5):
    """Separate ``F'`` with the shortest ``y*`` and confirm short probes all have gap above ``eps``.

    Probes mix uniformly random directions with directions concentrated
    around ``-a`` (the direction in which dual values improve fastest).
    """
    y_star, tau = shortest_separating_y(instance.cell_vertices.astype(float))
    margin = float(np.max(instance.cell_vertices @ y_star))
    if margin > -1.0 + 1e-8:
        raise CounterexampleError("shortest separating vector is infeasible",
                                  {"margin": margin, "y_star": y_star.tolist()})
    rng = np.random.default_rng(seed)
    m = instance.family.shape[1]
    rmax = radius_fraction * tau
    norms = np.empty(probes)
    gaps = np.empty(probes)
    for k in range(probes):
        u = rng.standard_normal(m)
        if k % 2:
            u = -instance.normal + 0.05 * u / max(np.linalg.norm(u), 1e-300)
        u /= np.linalg.norm(u)
        r = rmax * rng.uniform() ** (1.0 / m)
        y = r * u
        norms[k] = r
        gaps[k] = flat_gap(instance, y)
    bad = np.nonzero(gaps <= instance.eps)[0]
    if bad.size:
        k = int(bad[0])
        raise CounterexampleError(
            f"probe with |y| = {norms[k]:.4g} reached gap {gaps[k]:.3g} <= eps",
            {"family": instance.family.tolist(), "eps": instance.eps})
    return LowerBoundCertificate(instance.delta, tau, y_star, instance.eps, rmax, norms, gaps)
