"""Short dual witnesses: express ``y`` over tight facet normals at a maximizing vertex, then cap.

Given ``y`` in the direction space ``H`` of the support, a vertex ``alpha*``
maximizing ``<alpha, y>`` has ``y`` in its normal cone, so ``y`` is a
nonnegative combination of (projected) normals of facets tight at
``alpha*``. Capping every coefficient at ``Delta`` gives a vector of norm at
most ``m^{3/2} M Delta`` whose dual value is within ``eps/2`` of the original.
"""

from dataclasses import dataclass

import numpy as np

from maxent import lp
from maxent.dual import h_value
from maxent.errors import CounterexampleError, IntegrityError
from maxent.support import affine_hull


@dataclass(frozen=True)
class ConicBasis:
    vertex: np.ndarray
    indices: np.ndarray  # I_0, facet row indices
    coefficients: np.ndarray  # beta >= 0, parallel to indices
    projected_rows: np.ndarray  # a'_i as rows, parallel to indices
    tight: np.ndarray  # I*, all facets tight at the vertex
    target: np.ndarray  # the projected input y

    def reconstruction(self):
        if self.indices.size == 0:
            return np.zeros_like(self.target)
        return self.coefficients @ self.projected_rows

    def residual(self):
        return float(np.linalg.norm(self.reconstruction() - self.target))


def _subspace(facets, points):
    if facets.subspace_basis is not None:
        return np.asarray(facets.subspace_basis, dtype=float)
    return affine_hull(points)[1]


def caratheodory_reduce(vectors, beta, tol=1e-12):
    """Drop vectors from a conic combination until the used ones are independent.

    Each pivot moves ``beta`` along a null-space direction of the active
    vectors, which leaves ``sum beta_i v_i`` unchanged, until some
    coefficient reaches zero.
    """
    V = np.asarray(vectors, dtype=float)
    b = np.array(beta, dtype=float)
    b[b < tol] = 0.0
    while True:
        act = np.nonzero(b > 0)[0]
        if act.size == 0:
            return b
        Va = V[act]
        _, s, vt = np.linalg.svd(Va.T, full_matrices=True)
        rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if s.size else 0.0)))
        if rank == act.size:
            return b
        z = vt[-1]  # Va.T @ z ~ 0
        if not np.any(z > 1e-14):
            z = -z
        pos = z > 1e-14
        ratios = b[act][pos] / z[pos]
        j = int(np.argmin(ratios))
        hit = act[pos][j]
        b[act] = b[act] - ratios[j] * z
        b[hit] = 0.0
        b[np.abs(b) < tol] = 0.0
        b = np.maximum(b, 0.0)


def maximizing_vertex(points, y, rtol=1e-12):
    """``argmax <alpha, y>`` over the rows of ``points``; ties go to the lexicographically smallest."""
    P = np.asarray(points)
    vals = P.astype(float) @ np.asarray(y, dtype=float)
    top = vals.max()
    scale = max(1.0, float(np.abs(vals).max()))
    cand = np.nonzero(vals >= top - rtol * scale)[0]
    order = np.lexsort(P[cand].T[::-1])
    return P[cand[order[0]]]


def good_basis(y, facets, points, tol=1e-9):
    """Vertex maximizing ``<alpha, y>`` plus an independent conic basis of tight projected normals."""
    P = np.asarray(points)
    U = _subspace(facets, P)
    yv = np.asarray(y, dtype=float)
    y_h = U @ (U.T @ yv)
    alpha = maximizing_vertex(P, y_h)
    A = np.asarray(facets.A)
    b = np.asarray(facets.b, dtype=float)
    tight = np.nonzero(np.abs(A @ alpha - b) <= tol)[0]
    rows = np.array([U @ (U.T @ A[i].astype(float)) for i in tight]).reshape(-1, yv.size)
    norm = float(np.linalg.norm(y_h))
    empty = np.zeros(0, dtype=np.int64)
    if norm == 0.0:
        return ConicBasis(alpha, empty, np.zeros(0), np.zeros((0, yv.size)), tight, y_h)
    # solve in H-coordinates on the unit-norm target, rescale afterwards
    coords = rows @ U
    beta = lp.conic_combination(coords, U.T @ (y_h / norm), tol=tol)
    if beta is None:
        raise IntegrityError("no conic combination of tight normals reproduces y; "
                             "facet system inconsistent with the support")
    beta = caratheodory_reduce(coords, beta) * norm
    keep = beta > 0
    basis = ConicBasis(alpha, tight[keep], beta[keep], rows[keep], tight, y_h)
    if basis.residual() > 1e-8 * max(1.0, norm):
        raise IntegrityError(f"conic reconstruction residual {basis.residual():.3g} too large")
    return basis


def truncate_dual(basis, delta):
    """``sum_i min(delta, beta_i) a'_i``."""
    if basis.indices.size == 0:
        return np.zeros_like(basis.target)
    return np.minimum(basis.coefficients, delta) @ basis.projected_rows


@dataclass(frozen=True)
class TruncationReport:
    h_star: float
    h_truncated: float
    margin: float  # h_star + eps/2 - h_truncated, nonnegative on success
    norm_star: float
    norm_truncated: float
    passed: bool


def verify_truncation(oracle, theta, y_star, y_trunc, eps):
    """Check ``h(y_trunc) <= h(y_star) + eps/2``; raise with an instance dump otherwise."""
    hs = h_value(oracle, theta, y_star)
    ht = h_value(oracle, theta, y_trunc)
    margin = hs + eps / 2.0 - ht
    rep = TruncationReport(hs, ht, margin, float(np.linalg.norm(y_star)),
                           float(np.linalg.norm(y_trunc)), margin >= -1e-12 * max(1.0, abs(hs)))
    if not rep.passed:
        dump = {
            "theta": np.asarray(theta).tolist(),
            "y_star": np.asarray(y_star).tolist(),
            "y_truncated": np.asarray(y_trunc).tolist(),
            "eps": eps,
            "h_star": hs,
            "h_truncated": ht,
        }
        points = getattr(oracle, "points", None)
        if points is not None:
            dump["support"] = np.asarray(points).tolist()
            dump["log_weights"] = np.asarray(oracle.log_weights).tolist()
        raise CounterexampleError(f"truncation raised h by {ht - hs:.3g} > eps/2", dump)
    return rep


def norm_bound(m, M, delta):
    return m ** 1.5 * M * delta


def witness(oracle, facets, theta, y_star, delta, eps):
    """Full pipeline: basis at ``y_star``, truncation, verification. Returns (y_trunc, basis, report)."""
    basis = good_basis(y_star, facets, oracle.points)
    y_t = truncate_dual(basis, delta)
    rep = verify_truncation(oracle, theta, y_star, y_t, eps)
    bound = norm_bound(oracle.dimension, facets.unary_complexity, delta)
    if rep.norm_truncated > bound * (1 + 1e-12):
        raise CounterexampleError(f"|y_trunc| = {rep.norm_truncated:.6g} exceeds {bound:.6g}",
                                  {"y_truncated": y_t.tolist()})
    return y_t, basis, rep


__all__ = ["ConicBasis", "TruncationReport", "caratheodory_reduce", "good_basis",
           "maximizing_vertex", "norm_bound", "truncate_dual", "verify_truncation", "witness"]
