"""Supports, log-domain weights, facet systems, distributions and the information primitives."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from maxent import lp
from maxent.errors import DomainError, IntegrityError, ValidationError

FEAS_TOL = 1e-9


def pairwise_diameter(points, chunk=2048):
    """Euclidean diameter of a point set, in memory-bounded chunks."""
    P = np.asarray(points, dtype=float)
    if P.shape[0] < 2:
        return 0.0
    best = 0.0
    sq = np.einsum("ij,ij->i", P, P)
    for start in range(0, P.shape[0], chunk):
        blk = P[start:start + chunk]
        d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * blk @ P.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))


@dataclass(frozen=True, eq=False)
class SupportFamily:
    """A finite set of integer points, either listed (explicit) or described by an oracle."""

    dimension: int
    cardinality_bound: int
    diameter: float
    points: np.ndarray | None = None
    descriptor: object = None

    @classmethod
    def explicit(cls, points):
        P = np.asarray(points)
        if P.ndim == 1:
            P = P.reshape(-1, 1)
        if P.ndim != 2 or P.shape[0] == 0:
            raise ValidationError("support must be a non-empty list of equal-length vectors")
        if not np.all(np.equal(np.mod(P, 1), 0)):
            raise ValidationError("support points must be integer vectors")
        P = P.astype(np.int64)
        if np.unique(P, axis=0).shape[0] != P.shape[0]:
            raise ValidationError("support points must be pairwise distinct (use merge_duplicates)")
        P.setflags(write=False)
        return cls(P.shape[1], P.shape[0], pairwise_diameter(P), P, None)

    @classmethod
    def implicit(cls, dimension, cardinality_bound, diameter, descriptor=None):
        if cardinality_bound < 1:
            raise ValidationError("cardinality_bound must be >= 1")
        if diameter is None or diameter < 0:
            raise ValidationError("implicit supports need a diameter upper bound")
        return cls(int(dimension), int(cardinality_bound), float(diameter), None, descriptor)

    @property
    def is_explicit(self):
        return self.points is not None

    @property
    def size(self):
        return self.points.shape[0] if self.is_explicit else self.cardinality_bound

    def log_cardinality(self):
        return math.log(self.cardinality_bound)

    def index_of(self, alpha):
        hits = np.nonzero(np.all(self.points == np.asarray(alpha), axis=1))[0]
        return int(hits[0]) if hits.size else None


@dataclass(frozen=True, eq=False)
class LogWeightFunction:
    """Prior ``p`` stored as ``log p`` parallel to an explicit support's rows."""

    log_weights: np.ndarray
    bit_complexity: float

    @classmethod
    def from_log_weights(cls, log_weights, declared_bit_complexity=None):
        w = np.asarray(log_weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValidationError("every weight must be strictly positive and finite")
        lp_ = float(np.abs(w).max(initial=0.0))
        if declared_bit_complexity is not None and declared_bit_complexity + 1e-12 < lp_:
            raise ValidationError(
                f"declared L_p={declared_bit_complexity} is below the recomputed {lp_}")
        w.setflags(write=False)
        return cls(w, lp_)

    @classmethod
    def uniform(cls, n):
        return cls.from_log_weights(np.zeros(n))


def merge_duplicates(points, log_weights=None):
    """Collapse repeated points, combining their weights by log-sum-exp."""
    P = np.asarray(points)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    w = np.zeros(P.shape[0]) if log_weights is None else np.asarray(log_weights, dtype=float)
    uniq, inverse = np.unique(P, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if uniq.shape[0] == P.shape[0]:
        return P, w
    merged = np.full(uniq.shape[0], -np.inf)
    for k in range(uniq.shape[0]):
        merged[k] = logsumexp(w[inverse == k])
    return uniq, merged


def affine_hull(points, tol=1e-9):
    """Return ``(origin, basis)``: a point of the set and an orthonormal basis (m x k) of its direction space."""
    P = np.asarray(points, dtype=float)
    origin = P[0].copy()
    D = P - origin
    if P.shape[0] == 1:
        return origin, np.zeros((P.shape[1], 0))
    _, s, vt = np.linalg.svd(D, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s[0])))
    basis = vt[:k].T
    # second orthogonalisation pass keeps drift below reconstruction tolerances
    basis, _ = np.linalg.qr(basis)
    return origin, basis


@dataclass(frozen=True, eq=False)
class FacetSystem:
    """Inequalities ``A x <= b`` (integer rows), optionally intersected with an affine hull."""

    A: np.ndarray
    b: np.ndarray
    unary_complexity: int
    origin: np.ndarray | None = None
    subspace_basis: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, A, b, declared_M=None, origin=None, subspace_basis=None):
        A = np.asarray(A, dtype=float)
        if A.size == 0:
            m = 0 if origin is None else len(origin)
            A = A.reshape(0, m)
        if A.ndim != 2:
            raise ValidationError("facet matrix must be 2-D")
        if not np.all(np.equal(np.mod(A, 1), 0)):
            raise ValidationError("facet normals must be integer vectors")
        A = A.astype(np.int64)
        b = np.asarray(b, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise ValidationError("facet offsets do not match the number of rows")
        M = int(np.abs(A).max(initial=0))
        M = max(M, 1)
        if declared_M is not None and declared_M < M:
            raise ValidationError(f"declared M={declared_M} is below the recomputed {M}")
        A.setflags(write=False)
        b.setflags(write=False)
        return cls(A, b, M, origin, subspace_basis)

    @property
    def dimension(self):
        return self.A.shape[1]

    def slacks(self, x):
        return self.b - self.A @ np.asarray(x, dtype=float)

    def off_hull_distance(self, x):
        if self.origin is None or self.subspace_basis is None:
            return 0.0
        d = np.asarray(x, dtype=float) - self.origin
        return float(np.linalg.norm(d - self.subspace_basis @ (self.subspace_basis.T @ d)))

    def contains(self, x, tol=FEAS_TOL):
        return bool(np.all(self.slacks(x) >= -tol) and self.off_hull_distance(x) <= tol * 10)

    def check_support(self, points, tol=FEAS_TOL):
        """Every support point must satisfy every inequality."""
        P = np.asarray(points, dtype=float)
        viol = (P @ self.A.T - self.b).max(initial=-np.inf)
        if viol > tol:
            raise IntegrityError(f"support violates the facet system by {viol:g}")


def _primitive_integer(v, max_den=10_000):
    v = np.asarray(v, dtype=float)
    nz = np.abs(v) > 1e-9 * np.abs(v).max()
    v = v / np.abs(v[nz]).min()
    fracs = [Fraction(float(x)).limit_denominator(max_den) if keep else Fraction(0)
             for x, keep in zip(v, nz)]
    den = 1
    for f in fracs:
        den = den * f.denominator // math.gcd(den, f.denominator)
    ints = [int(f * den) for f in fracs]
    g = 0
    for x in ints:
        g = math.gcd(g, abs(x))
    return np.array([x // g for x in ints], dtype=np.int64)


def facets_from_support(points, tol=1e-9):
    """Integer facet description of ``conv(points)`` inside its affine hull (desk scale, via qhull)."""
    from scipy.spatial import ConvexHull

    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    origin, basis = affine_hull(P, tol)
    k = basis.shape[1]
    rows = []
    if k == 1:
        u = basis[:, 0]
        t = (P - origin) @ u
        w = _primitive_integer(P[int(np.argmax(t))] - P[int(np.argmin(t))])
        rows = [w, -w]
    elif k >= 2:
        X = (P - origin) @ basis
        hull = ConvexHull(X)
        seen = set()
        for eq in hull.equations:
            normal = basis @ eq[:-1]
            a = _primitive_integer(normal)
            key = tuple(a)
            if key in seen:
                continue
            vals = P @ a
            bmax = vals.max()
            tight_hull = np.abs(X @ eq[:-1] + eq[-1]) <= 1e-7 * max(1.0, np.abs(X).max())
            tight_int = np.abs(vals - bmax) <= 1e-9
            if not np.array_equal(tight_hull, tight_int):
                raise IntegrityError("could not recover an integer facet normal")
            seen.add(key)
            rows.append(a)
    m = P.shape[1]
    A = np.array(rows, dtype=np.int64).reshape(-1, m)
    b = (A @ P.T).max(axis=1) if A.shape[0] else np.zeros(0)
    return FacetSystem.from_arrays(A, b, origin=origin, subspace_basis=basis)


@dataclass(frozen=True, eq=False)
class PrimalDistribution:
    support: SupportFamily
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        q = np.asarray(self.probs, dtype=float)
        if q.shape != (self.support.size,):
            raise DomainError("probability vector does not match the support")
        if np.any(q < -1e-15) or abs(q.sum() - 1.0) > 1e-12:
            raise DomainError("probabilities must be nonnegative and sum to 1")

    @classmethod
    def from_log_masses(cls, support, log_masses):
        lm = np.asarray(log_masses, dtype=float)
        return cls(support, np.exp(lm - logsumexp(lm)))


def _probs(q):
    return np.asarray(q.probs if isinstance(q, PrimalDistribution) else q, dtype=float)


def _same_support(a, b):
    if isinstance(a, PrimalDistribution) and isinstance(b, PrimalDistribution):
        if a.support is not b.support and not np.array_equal(a.support.points, b.support.points):
            raise DomainError("distributions live on different supports")


def entropy_objective(q, log_p):
    """``sum_a q_a (log p_a - log q_a)`` with ``0 log 0 = 0``."""
    qv = _probs(q)
    lw = np.asarray(log_p.log_weights if isinstance(log_p, LogWeightFunction) else log_p,
                    dtype=float)
    if qv.shape != lw.shape:
        raise DomainError("distribution and weights have different supports")
    pos = qv > 0
    return float(np.sum(qv[pos] * (lw[pos] - np.log(qv[pos]))))


def kl_divergence(q1, q2):
    """KL(q1 || q2). Returns ``math.inf`` (the sentinel) when q1 is not absolutely continuous."""
    _same_support(q1, q2)
    a, b = _probs(q1), _probs(q2)
    if a.shape != b.shape:
        raise DomainError("distributions have different supports")
    pos = a > 0
    if np.any(b[pos] <= 0):
        return math.inf
    return float(max(np.sum(a[pos] * (np.log(a[pos]) - np.log(b[pos]))), 0.0))


def tv_distance(q1, q2):
    """l1 distance ``sum |q1 - q2|`` (twice the usual total variation)."""
    _same_support(q1, q2)
    return float(np.abs(_probs(q1) - _probs(q2)).sum())


def marginal_of(q, points=None):
    if isinstance(q, PrimalDistribution):
        points = q.support.points
    return _probs(q) @ np.asarray(points, dtype=float)


def tight_facets(theta, facets, tol=FEAS_TOL):
    s = facets.slacks(theta)
    if np.any(s < -tol):
        raise DomainError(f"marginal violates facets by {-s.min():g}")
    return np.nonzero(s <= tol)[0]


def in_hull(points, theta, facets=None, tol=FEAS_TOL):
    """Membership of ``theta`` in ``conv(points)``; uses facets when supplied, else an LP."""
    if facets is not None:
        return facets.contains(theta, tol)
    return lp.in_convex_hull(points, theta, tol)
