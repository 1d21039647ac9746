"""Matrix scaling, polynomial capacity and rank-1 Brascamp-Lieb constants via the dual solver."""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from maxent import lp
from maxent.dual import SolveOptions, minimize_on_ball, radius_bound, solve_dual
from maxent.errors import (BudgetError, ConvergenceError, DomainError, IntegrityError,
                           ValidationError)
from maxent.minnorm import wolfe_min_norm
from maxent.oracles import ExplicitOracle, ProductFormOracle
from maxent.support import FacetSystem, facets_from_support, pairwise_diameter

log = logging.getLogger(__name__)


# -- (r, c) matrix scaling -------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalingInstance:
    A: np.ndarray
    r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        r = np.asarray(self.r)
        c = np.asarray(self.c)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("A must be a square matrix")
        n = A.shape[0]
        if r.shape != (n,) or c.shape != (n,):
            raise ValidationError("r and c must have one entry per row/column")
        for name, v in (("r", r), ("c", c)):
            if np.any(v <= 0) or not np.all(np.equal(np.mod(v, 1), 0)):
                raise ValidationError(f"{name} must be a positive integer vector")
        if r.sum() != c.sum():
            raise ValidationError("r and c must have the same total")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise ValidationError("A must be nonnegative and finite")
        if np.any(A.max(axis=1) <= 0) or np.any(A.max(axis=0) <= 0):
            raise DomainError("A has an all-zero row or column")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "r", r.astype(np.int64))
        object.__setattr__(self, "c", c.astype(np.int64))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def h(self):
        return int(self.r.sum())

    @property
    def bit_complexity(self):
        return float(np.abs(np.log(self.A[self.A > 0])).max())


@dataclass
class ScalingResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    log_x: np.ndarray
    log_y: np.ndarray
    scaled: np.ndarray
    row_residual: float
    col_residual: float
    bit_budget: float
    report: object = field(repr=False, default=None)

    @property
    def log_size(self):
        return float(max(np.abs(self.log_x).max(), np.abs(self.log_y).max()))

    def to_dict(self):
        return {
            "x": self.x.tolist(), "y": self.y.tolist(), "z": self.z.tolist(),
            "scaled": self.scaled.tolist(), "row_residual": self.row_residual,
            "col_residual": self.col_residual, "bit_budget": self.bit_budget,
            "log_size": self.log_size,
            "solve": None if self.report is None else self.report.to_dict(),
        }


def scaling_bit_budget(instance, radius):
    """Bound on ``max(|log x_i|, |log y_j|)`` for any dual point of norm at most ``radius``."""
    return radius + instance.bit_complexity + math.log(instance.n) + math.log(instance.h)


def matrix_scale(instance, eps, options=None):
    """Diagonal ``x, y`` with ``X A Y`` having row sums ``r`` exactly and column sums within ``eps`` of ``c``."""
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    oracle = ProductFormOracle(instance.A, instance.r)
    c = instance.c.astype(float)
    if not oracle.contains_marginal(c):
        raise ConvergenceError("instance is not asymptotically (r, c)-scalable: "
                               "no flow on supp(A) has the required margins")
    base = options or SolveOptions()
    opts = SolveOptions(method=base.method, accelerate=base.accelerate,
                        max_iters=base.max_iters, radius=base.radius,
                        grad_tol=eps, feas_tol=base.feas_tol)
    try:
        report = solve_dual(oracle, c, eps, options=opts)
    except ConvergenceError as exc:
        best = exc.best
        resid = None if best is None else float(np.abs(best.theta_y - c).max())
        raise ConvergenceError(f"scaling did not converge (column residual {resid})",
                               best=best) from exc
    z = report.y
    logA = oracle.logA
    log_x = np.log(instance.r.astype(float)) - logsumexp(logA + z[None, :], axis=1)
    log_y = z
    scaled = np.exp(log_x[:, None] + logA + log_y[None, :])
    rows = scaled.sum(axis=1)
    cols = scaled.sum(axis=0)
    return ScalingResult(
        x=np.exp(log_x), y=np.exp(log_y), z=z, log_x=log_x, log_y=log_y, scaled=scaled,
        row_residual=float(np.abs(rows - instance.r).max()),
        col_residual=float(np.abs(cols - c).max()),
        bit_budget=scaling_bit_budget(instance, report.radius_used),
        report=report,
    )


# -- shared outer ascent ----------------------------------------------------

@dataclass
class AscentResult:
    value: float  # log of the returned estimate
    lower: float
    upper: float
    point: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    certified: bool = True  # upper - lower <= eps/2

    @property
    def estimate(self):
        return math.exp(self.value)

    def to_dict(self):
        return {"value": self.estimate, "log_value": self.value, "log_lower": self.lower,
                "log_upper": self.upper, "point": self.point.tolist(),
                "iterations": self.iterations, "certified": self.certified,
                "history": list(self.history)}


def hull_projection(V):
    """Euclidean projection onto ``conv(V)`` (rows), as an exact convex combination."""
    V = np.asarray(V, dtype=float)

    def proj(z):
        res = wolfe_min_norm(V - z, tol=1e-14)
        return res.mu @ V

    return proj


def _ascent(value_and_step, upper_of, project, start, eps, max_outer, step0, retract=None,
            strict=True):
    """Monotone projected ascent with adaptive steps and an explicit bound interval.

    ``value_and_step(x)`` returns ``(upper_val, lower_val, direction, payload)``
    where ``upper_val`` is the monotone objective estimate used for
    acceptance. ``upper_of(x, payload)`` returns a valid global upper bound
    together with the feasible point maximizing the linearization at ``x``.
    When a projected step is rejected, a backtracking Frank-Wolfe step
    toward that point is tried; its directional derivative equals the
    current bound gap, so it makes progress wherever the bound is loose.
    ``retract`` (identity by default) maps those steps back to the points
    the caller is willing to evaluate.
    """
    retract = retract or (lambda v: v)
    x = start
    val, low, d, pay = value_and_step(x)
    up, vertex = upper_of(x, pay)
    best_low, best_up = low, up
    hist = [val]
    eta = step0
    gamma = 1.0
    it = 0

    def accept(cand, cval, clow, cd, cpay):
        nonlocal x, val, low, d, pay, vertex, best_up, best_low
        cup, cvert = upper_of(cand, cpay)
        best_up = min(best_up, cup)
        best_low = max(best_low, clow)
        if cval >= val:
            x, val, d, pay, vertex = cand, cval, cd, cpay, cvert
            hist.append(val)
            return True
        return False

    while it < max_outer and best_up - best_low > eps / 2:
        it += 1
        nd = float(np.linalg.norm(d))
        moved = False
        if nd > 0.0 and eta >= 1e-14:
            cand = project(x + (eta / nd) * d)
            moved = accept(cand, *value_and_step(cand))
            eta = eta * 1.5 if moved else eta * 0.5
        direction = vertex - x
        if float(np.linalg.norm(direction)) > 0.0 and best_up - best_low > eps / 2:
            # full step first (optimum at a vertex is common), then backtrack
            # from twice the last accepted step length
            g = 1.0
            while g >= 1e-12:
                cand = retract(vertex.copy() if g == 1.0 else x + g * direction)
                if accept(cand, *value_and_step(cand)):
                    gamma = g
                    moved = True
                    break
                g = min(0.5 * g, 2.0 * gamma) if g == 1.0 else 0.5 * g
            else:
                gamma = 1e-12
        if not moved and (nd == 0.0 or eta < 1e-14):
            break
    value = min(max(val, best_low), best_up)
    certified = best_up - best_low <= eps / 2
    res = AscentResult(value, best_low, best_up, x, it, hist, certified)
    if not certified and not strict:
        log.warning("ascent interval [%g, %g] not closed to eps/2", best_low, best_up)
    elif not certified:
        raise BudgetError(
            f"outer ascent stopped with interval [{best_low:.6g}, {best_up:.6g}] "
            f"wider than eps/2", best=res)
    return res


# -- capacity ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CapacityInstance:
    oracle: object
    B_vertices: np.ndarray | None = None
    B_facets: FacetSystem | None = None

    def __post_init__(self):
        if (self.B_vertices is None) == (self.B_facets is None):
            raise ValidationError("give the constraint polytope as vertices or as facets")
        if self.B_vertices is not None:
            object.__setattr__(self, "B_vertices", np.atleast_2d(np.asarray(self.B_vertices)))


def _explicit(oracle):
    return oracle if isinstance(oracle, ExplicitOracle) else oracle.to_explicit()


def _independent_rows(A, b, tol=1e-10):
    """Equivalent equality system with full row rank (the system must be consistent)."""
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return U[:, :k].T @ A, U[:, :k].T @ b


class _Intersection:
    """``conv(B) ∩ conv(F)`` (or ``{Ax <= b} ∩ conv(F)``): linear minimization and projection."""

    def __init__(self, F, instance):
        self.F = np.asarray(F, dtype=float)
        self.inst = instance
        self.B = None if instance.B_vertices is None else instance.B_vertices.astype(float)
        self._residual = {}

    def linear_min(self, y):
        F = self.F
        nF, m = F.shape
        if self.B is not None:
            nB = self.B.shape[0]
            c = np.concatenate([self.B @ y, np.zeros(nF)])
            A_eq = np.zeros((m + 2, nB + nF))
            A_eq[:m, :nB] = self.B.T
            A_eq[:m, nB:] = -F.T
            A_eq[m, :nB] = 1.0
            A_eq[m + 1, nB:] = 1.0
            b_eq = np.zeros(m + 2)
            b_eq[m] = b_eq[m + 1] = 1.0
            res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
            if res.status != 0:
                raise DomainError("constraint polytope does not meet conv(supp p)")
            return float(res.fun), self.B.T @ res.x[:nB]
        fac = self.inst.B_facets
        A_ub = fac.A @ F.T
        res = linprog(F @ y, A_ub=A_ub, b_ub=fac.b, A_eq=np.ones((1, nF)), b_eq=[1.0],
                      bounds=(0, None), method="highs")
        if res.status != 0:
            raise DomainError("constraint polytope does not meet conv(supp p)")
        return float(res.fun), F.T @ res.x

    def _qp_system(self):
        """Variables ``(lam, mu)`` (or ``mu``): equality and inequality blocks for cvxopt."""
        F = self.F
        nF, m = F.shape
        if self.B is not None:
            nB = self.B.shape[0]
            n = nB + nF
            A = np.zeros((m + 2, n))
            A[:m, :nB] = self.B.T
            A[:m, nB:] = -F.T
            A[m, :nB] = 1.0
            A[m + 1, nB:] = 1.0
            b = np.zeros(m + 2)
            b[m] = b[m + 1] = 1.0
            G, h = -np.eye(n), np.zeros(n)
            return nB, A, b, G, h
        fac = self.inst.B_facets
        A = np.ones((1, nF))
        b = np.ones(1)
        G = np.vstack([fac.A @ F.T, -np.eye(nF)])
        h = np.concatenate([fac.b, np.zeros(nF)])
        return 0, A, b, G, h

    def _polish(self, x, P, q, A, b, G, h, tol=1e-9):
        """Re-solve the QP's KKT system on the active set; interior points leave a residual near 1e-8."""
        n = x.size
        free = x > tol * max(1.0, float(np.abs(x).max()))
        rows = [A]
        rhs = [b]
        slack = h - G @ x
        # nonnegativity rows are handled by fixing inactive variables at zero
        bound_rows = (np.count_nonzero(G, axis=1) == 1) & (G.sum(axis=1) == -1)
        act = (slack <= tol) & ~bound_rows
        rows.append(G[act])
        rhs.append(h[act])
        E = np.vstack(rows)[:, free]
        e = np.concatenate(rhs)
        k = int(free.sum())
        K = np.zeros((k + E.shape[0], k + E.shape[0]))
        K[:k, :k] = P[np.ix_(free, free)]
        K[:k, k:] = E.T
        K[k:, :k] = E
        sol, *_ = np.linalg.lstsq(K, np.concatenate([-q[free], e]), rcond=1e-13)
        out = np.zeros(n)
        out[free] = sol[:k]
        feasible = (np.all(out >= -1e-12) and np.all(G @ out <= h + 1e-12)
                    and np.abs(A @ out - b).max(initial=0.0) <= 1e-12)
        obj = lambda v: 0.5 * v @ P @ v + q @ v
        if feasible and obj(out) <= obj(x) + 1e-12 * max(1.0, abs(obj(x))):
            return np.maximum(out, 0.0)
        return x

    def project(self, z):
        """Euclidean projection onto the intersection (a QP); returns a point of ``conv(F)``.

        The interior-point solution is polished on its active set, and the
        remaining gap between the two hull representations is kept for
        :meth:`distance`.
        """
        from cvxopt import matrix, solvers

        F = self.F
        off, A0, b0, G, h = self._qp_system()
        A, b = _independent_rows(A0, b0)
        n = A.shape[1]
        P = np.zeros((n, n))
        P[off:, off:] = F @ F.T
        q = np.zeros(n)
        q[off:] = -F @ np.asarray(z, dtype=float)
        opts = {"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12,
                "maxiters": 200}
        sol = solvers.qp(matrix(P + 1e-12 * np.eye(n)), matrix(q), matrix(G), matrix(h),
                         matrix(A), matrix(b), options=opts)
        if sol["x"] is None:
            raise ConvergenceError("projection QP failed")
        x = self._polish(np.array(sol["x"]).ravel(), P, q, A, b, G, h)
        mu = np.maximum(x[off:], 0.0)
        theta = mu @ F / mu.sum()
        if self.B is not None:
            lam = np.maximum(x[:off], 0.0)
            self._residual[theta.tobytes()] = float(np.linalg.norm(lam @ self.B / lam.sum() - theta))
        return theta

    def distance(self, theta):
        """Distance from a point of ``conv(F)`` to the constraint polytope."""
        theta = np.asarray(theta, dtype=float)
        if self.B is not None:
            known = self._residual.get(theta.tobytes())
            if known is not None:
                return known
            return wolfe_min_norm(self.B - theta, tol=1e-14).delta
        fac = self.inst.B_facets
        over = np.maximum(fac.A @ theta - fac.b, 0.0)
        norms = np.linalg.norm(fac.A, axis=1)
        return float(np.max(over / np.where(norms > 0, norms, 1.0), initial=0.0))


def _start_vertex(F, log_w, instance):
    if instance.B_vertices is not None:
        keys = {tuple(b) for b in instance.B_vertices.astype(np.int64)}
        mask = np.array([tuple(a) in keys for a in F])
    else:
        fac = instance.B_facets
        mask = np.all(F @ fac.A.T <= fac.b + 1e-9, axis=1)
    if not mask.any():
        return None, -math.inf
    idx = np.nonzero(mask)[0]
    k = idx[int(np.argmax(log_w[idx]))]
    return F[k].astype(float), float(log_w[k])


def max_coefficient(instance):
    """``max p_alpha`` over ``alpha`` in ``B ∩ supp(p)`` (``-inf`` log if empty)."""
    ex = _explicit(instance.oracle)
    _, lw = _start_vertex(ex.points, ex.log_weights, instance)
    return math.exp(lw) if lw > -math.inf else 0.0


def capacity(instance, eps=1e-3, max_outer=2000, options=None):
    """``Cap_B(p) = sup_{theta in P(B) ∩ P} inf_{x > 0} p(x) / x^theta``.

    Runs ascent on the Lipschitz proxy ``g~(theta) = inf_{|y| <= R} h_theta(y)``.
    Its supergradient at ``theta`` is ``-y`` for the inner minimizer ``y``.
    The returned value lies in the certified interval
    ``[exp(lower), exp(upper)]``, whose log-width is at most ``eps/2``.
    """
    oracle = instance.oracle
    ex = _explicit(oracle)
    F = ex.points
    m = ex.dimension
    Q = _Intersection(F, instance)
    Q.linear_min(np.zeros(m))  # raises on an empty intersection
    try:
        M = facets_from_support(F).unary_complexity
    except (IntegrityError, ValueError):
        M = getattr(oracle, "unary_complexity", 1)
    inner_eps = eps / 4.0
    R = radius_bound(m, M, ex.bit_complexity(), ex.log_cardinality(), inner_eps).radius
    opts = options or SolveOptions()
    start, _ = _start_vertex(F, ex.log_weights, instance)
    if start is None:
        start = Q.project(Q.linear_min(np.zeros(m))[1])
    warm = {"y": None}

    def evaluate(theta):
        try:
            sol = minimize_on_ball(ex, theta, R, inner_eps, opts, y0=warm["y"])
        except ConvergenceError as exc:
            if exc.best is None:
                raise
            sol = exc.best
        warm["y"] = sol.y
        # g <= g~ <= g + inner_eps on conv(F), lower_bound <= g~, and g~ is
        # R-Lipschitz, which pays for the projection's residual distance to Q
        low = sol.lower_bound - inner_eps - R * Q.distance(theta)
        return sol.h_value, low, -sol.y, sol.y

    def upper(theta, y):
        val, vertex = Q.linear_min(y)
        return ex.log_eval(y) - val, vertex

    d = max(pairwise_diameter(F), 1.0)
    res = _ascent(evaluate, upper, Q.project, start, eps, max_outer, d)
    log.debug("capacity: %d outer steps, interval [%g, %g]", res.iterations, res.lower, res.upper)
    return res


# -- rank-1 Brascamp-Lieb -----------------------------------------------------

@dataclass(frozen=True)
class BasisSet:
    subsets: np.ndarray  # 0/1 indicator rows, one per basis S
    log_det2: np.ndarray  # log det(V_S)^2


def bl_bases(V, max_subsets=10 ** 6, rtol=1e-10):
    """All ``S`` with ``|S| = n`` and ``det V_S != 0``, with ``log det(V_S)^2``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise DomainError("V must be an m x n matrix")
    m, n = V.shape
    if n == 0 or np.linalg.matrix_rank(V) < n:
        raise DomainError("V must have rank n")
    if math.comb(m, n) > max_subsets:
        raise BudgetError(f"C({m},{n}) subsets exceed the enumeration budget")
    scale = float(np.abs(V).max())
    rows, logs = [], []
    for S in itertools.combinations(range(m), n):
        sub = V[list(S)]
        s = np.linalg.svd(sub, compute_uv=False)
        if s[-1] <= rtol * max(scale, 1e-300) * max(1.0, s[0] / max(scale, 1e-300)):
            continue
        _, logabs = np.linalg.slogdet(sub)
        ind = np.zeros(m, dtype=np.int64)
        ind[list(S)] = 1
        rows.append(ind)
        logs.append(2.0 * logabs)
    return BasisSet(np.array(rows, dtype=np.int64).reshape(-1, m), np.array(logs))


def in_bl_polytope(bases, p, tol=1e-9):
    p = np.asarray(p, dtype=float)
    n = int(bases.subsets[0].sum())
    if np.any(p < -tol) or abs(p.sum() - n) > tol * max(1.0, n):
        return False
    return lp.in_convex_hull(bases.subsets, p, tol)


def _bl_oracle(bases, p):
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(p, 0.0))
    lw = bases.subsets @ np.where(p > 0, logp, 0.0) + bases.log_det2
    keep = np.all((bases.subsets == 0) | (p[None, :] > 0), axis=1)
    return ExplicitOracle(bases.subsets[keep], lw[keep]), keep


def bl_log_constant(V, p, eps=1e-6, bases=None, options=None):
    """``log BL(V, p)``; ``math.inf`` when ``p`` lies outside the base polytope."""
    V = np.asarray(V, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != V.shape[0]:
        raise DomainError("p needs one entry per vector")
    bases = bases or bl_bases(V)
    if not in_bl_polytope(bases, p):
        return math.inf
    oracle, _ = _bl_oracle(bases, p)
    report = solve_dual(oracle, p, eps / 2.0, options=options)
    return float(report.h_value)


def bl_constant(V, p, eps=1e-6, bases=None, options=None):
    """``inf_{x > 0} det(sum_j p_j x_j v_j v_j^T) / prod_j x_j^{p_j}``, or ``math.inf`` off the polytope."""
    val = bl_log_constant(V, p, eps, bases, options)
    return math.inf if val == math.inf else math.exp(val)


def _bl_value_and_grad(bases, p, eps, options):
    """``h`` at the inner solution, a certified lower value and a supergradient in ``p``."""
    oracle, _ = _bl_oracle(bases, p)
    rep = solve_dual(oracle, p, eps, options=options)
    y = rep.y
    S = bases.subsets.astype(float)
    # d/dp_j log sum_S p^S d_S e^{<1_S - p, y>}, using p^{S \ j} so it stays finite at p_j = 0
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(p, 0.0))
    base = S @ y - p @ y + bases.log_det2 - rep.h_value
    grad = np.empty(p.shape[0])
    for j in range(p.shape[0]):
        inj = S[:, j] > 0
        others = S[inj].copy()
        others[:, j] = 0.0
        use = np.all((others == 0) | (p[None, :] > 0), axis=1)
        lp_ = others[use] @ np.where(p > 0, logp, 0.0)
        grad[j] = math.exp(logsumexp(lp_ + base[inj][use])) if use.any() else 0.0
    grad -= y
    return rep.h_value, rep.h_value - rep.gap_certificate - eps, grad


def bl_worst_case(V, eps=1e-3, max_outer=2000, options=None, bases=None, interior=1e-6,
                  strict=False):
    """``sup_{p in conv(B(V))} BL(V, p)`` by monotone projected ascent from the barycenter.

    The objective is concave in ``p``; linearizing at each iterate and
    maximizing the linearization over the bases gives the upper bound that
    certifies the returned interval.

    Iterates are pulled a fraction ``interior`` toward the barycenter. On
    the boundary some dual coordinates are undetermined and the
    supergradient built from them is unreliable. By concavity the pull
    costs at most ``interior * (max - min)`` in log value.

    When the supremum sits at a vertex of the base polytope the
    linearized bound usually cannot close, because every supergradient
    there points out of the polytope. In that case the result carries
    ``certified=False`` (or ``BudgetError`` is raised if ``strict``), and
    ``value`` is still the value at the best point found.
    """
    bases = bases or bl_bases(V)
    S = bases.subsets.astype(float)
    hull = hull_projection(S)
    center = S.mean(axis=0)
    inner = min(eps / 4.0, 1e-8)  # tight inner solves keep the supergradient accurate

    def shrink(p):
        return (1.0 - interior) * np.asarray(p, dtype=float) + interior * center

    def evaluate(p):
        val, low, grad = _bl_value_and_grad(bases, p, inner, options)
        return val, low, grad, (val, grad)

    def upper(p, payload):
        val, grad = payload
        k = int(np.argmax(S @ grad))
        return val + float(S[k] @ grad - grad @ p), S[k]

    d = max(pairwise_diameter(bases.subsets), 1.0)
    return _ascent(evaluate, upper, lambda z: shrink(hull(z)), center, eps, max_outer, d,
                   retract=shrink, strict=strict)
