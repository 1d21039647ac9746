"""Dense two-phase simplex with Bland's rule, plus the small LP helpers built on it.

Everything here works on standard form::

    min c @ x   s.t.   A @ x = b,  x >= 0

The instances that reach this code (tight-facet cones, convex-hull membership
on desk-scale supports) are tiny but heavily degenerate, so termination under
degeneracy matters more than speed.
"""

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LPResult:
    status: str
    x: np.ndarray | None
    fun: float
    basis: tuple
    iterations: int

    @property
    def success(self):
        return self.status == OPTIMAL


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _run_bland(T, basis, ncols, tol, max_iter):
    """Optimize the tableau ``T`` in place. The objective row is the last row.

    Only columns ``< ncols`` may enter. Returns (status, iterations).
    """
    nrows = T.shape[0] - 1
    it = 0
    while it < max_iter:
        obj = T[-1, :ncols]
        entering = -1
        for j in range(ncols):
            if obj[j] < -tol:
                entering = j
                break
        if entering < 0:
            return OPTIMAL, it
        col = T[:nrows, entering]
        rhs = T[:nrows, -1]
        best_row = -1
        best_ratio = np.inf
        for r in range(nrows):
            if col[r] > tol:
                ratio = rhs[r] / col[r]
                if ratio < best_ratio - tol or (
                    abs(ratio - best_ratio) <= tol and basis[r] < basis[best_row]
                ):
                    best_ratio = ratio
                    best_row = r
        if best_row < 0:
            return UNBOUNDED, it
        _pivot(T, basis, best_row, entering)
        it += 1
    return ITERATION_LIMIT, it


def simplex(c, A_eq, b_eq, tol=1e-9, max_iter=10_000):
    """Solve ``min c@x s.t. A_eq@x = b_eq, x >= 0`` by two-phase simplex (Bland's rule)."""
    A = np.array(A_eq, dtype=float, ndmin=2)
    b = np.array(b_eq, dtype=float).reshape(-1)
    c = np.array(c, dtype=float).reshape(-1)
    m, n = A.shape
    if b.shape[0] != m or c.shape[0] != n:
        raise ValueError("shape mismatch in simplex inputs")
    if m == 0:
        if np.any(c < -tol):
            return LPResult(UNBOUNDED, None, -np.inf, (), 0)
        return LPResult(OPTIMAL, np.zeros(n), 0.0, (), 0)

    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificials n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    status, it1 = _run_bland(T, basis, n + m, tol, max_iter)
    if status != OPTIMAL:
        return LPResult(status, None, np.nan, tuple(basis), it1)
    scale = max(1.0, float(np.abs(b).max()))
    if -T[-1, -1] > tol * scale * 10:
        return LPResult(INFEASIBLE, None, np.nan, tuple(basis), it1)

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cand = np.nonzero(np.abs(T[r, :n]) > tol)[0]
            if cand.size:
                _pivot(T, basis, r, int(cand[0]))
                keep.append(r)
        else:
            keep.append(r)
    rows = [r for r in keep if basis[r] < n]
    T2 = np.zeros((len(rows) + 1, n + 1))
    T2[:-1, :n] = T[rows, :n]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[r] for r in rows]

    # phase 2
    T2[-1, :n] = c
    for r, j in enumerate(basis2):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[r]
    status, it2 = _run_bland(T2, basis2, n, tol, max_iter - it1)
    x = np.zeros(n)
    for r, j in enumerate(basis2):
        x[j] = max(T2[r, -1], 0.0)
    if status != OPTIMAL:
        return LPResult(status, x, np.nan, tuple(basis2), it1 + it2)
    return LPResult(OPTIMAL, x, float(c @ x), tuple(basis2), it1 + it2)


def feasible_point(A_eq, b_eq, tol=1e-9):
    """Return a basic feasible solution of ``A x = b, x >= 0`` or ``None``."""
    A = np.array(A_eq, dtype=float, ndmin=2)
    res = simplex(np.zeros(A.shape[1]), A, b_eq, tol=tol)
    return res.x if res.success else None


def convex_weights(points, target, tol=1e-9):
    """Convex coefficients ``lam`` with ``lam @ points = target`` or ``None`` if outside the hull."""
    P = np.asarray(points, dtype=float)
    t = np.asarray(target, dtype=float).reshape(-1)
    A = np.vstack([P.T, np.ones(P.shape[0])])
    b = np.concatenate([t, [1.0]])
    lam = feasible_point(A, b, tol=tol)
    if lam is None:
        return None
    if np.abs(lam @ P - t).max(initial=0.0) > 1e3 * tol * max(1.0, np.abs(P).max()):
        return None
    return lam


def in_convex_hull(points, target, tol=1e-9):
    return convex_weights(points, target, tol=tol) is not None


def conic_combination(vectors, target, tol=1e-9):
    """Nonnegative ``beta`` with ``beta @ vectors = target`` (a basic solution), or ``None``."""
    V = np.asarray(vectors, dtype=float).reshape(-1, np.size(target))
    t = np.asarray(target, dtype=float).reshape(-1)
    if V.shape[0] == 0:
        return np.zeros(0) if np.abs(t).max(initial=0.0) <= tol else None
    return feasible_point(V.T, t, tol=tol)


def _face_lp(D, caps, cost):
    from scipy.optimize import linprog

    m, N = D.shape
    A_eq = np.hstack([D, np.zeros((m, N))])
    A_ub = np.hstack([-np.eye(N), np.eye(N)])  # t - lam <= 0
    bounds = [(0, None)] * N + [(0, c) for c in caps]
    res = linprog(np.concatenate([np.zeros(N), -cost]), A_ub=A_ub, b_ub=np.zeros(N),
                  A_eq=A_eq, b_eq=np.zeros(m), bounds=bounds, method="highs")
    return res.x[N:] if res.status == 0 else None


def minimal_face_mask(points, target, tol=1e-9):
    """Boolean mask of the points spanning the minimal face of ``conv(points)`` holding ``target``.

    Solves the cone LP ``max sum(t)`` s.t. ``sum lam_a (a - target) = 0``,
    ``0 <= t_a <= lam_a``, ``t_a <= 1``. A point gets ``t_a = 1`` iff some
    feasible mixture puts positive mass on it. Returns ``None`` when
    ``target`` is outside the hull.

    The LP goes to HiGHS, since it is degenerate enough that the dense
    tableau above loses feasibility on some boundary-adjacent targets.
    Targets within about 1e-7 of a smaller face are still ill-conditioned,
    so every answer is checked (``target`` must be a mixture of the kept
    points). A second, column-scaled LP is tried if the first answer
    fails, and the whole hull is returned if both do. That is always a
    face containing ``target``, just not necessarily the smallest one.
    """
    P = np.asarray(points, dtype=float)
    t = np.asarray(target, dtype=float).reshape(-1)
    if convex_weights(P, t, tol=tol) is None:
        return None
    N = P.shape[0]
    D = (P - t).T
    w = np.linalg.norm(D, axis=0)
    at_target = w <= 1e-12 * max(1.0, float(np.abs(P).max()))
    w = np.where(at_target, 1.0, w)
    attempts = (
        (D, np.ones(N), np.ones(N), 0.5 * np.ones(N)),
        # unit-norm columns (lam'_a = lam_a |a - target|) with caps t'_a <= |a - target|
        (D / w, w, 1.0 / w, 0.5 * w),
    )
    for mat, caps, cost, cut in attempts:
        x = _face_lp(mat, caps, cost)
        if x is None:
            continue
        mask = (x > cut) | at_target
        if mask.any() and convex_weights(P[mask], t, tol=tol) is not None:
            return mask
    return np.ones(N, dtype=bool)
