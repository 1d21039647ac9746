"""Ball-constrained solver for the max-entropy dual ``h_theta(y) = log g_p(e^y) - <theta, y>``.

The radius of the ball comes from :func:`radius_bound`; inside it an
``eps``-optimal dual point is guaranteed to exist for every feasible marginal,
including marginals on the boundary of the polytope where the unconstrained
infimum is not attained.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from maxent import lp
from maxent.errors import ConvergenceError, DomainError, ValidationError
from maxent.oracles import ExplicitOracle
from maxent.support import (FEAS_TOL, FacetSystem, PrimalDistribution, affine_hull,
                            entropy_objective, facets_from_support, kl_divergence,
                            tight_facets)


@dataclass(frozen=True)
class RadiusBound:
    delta: float
    radius: float
    m: int
    M: int
    L_p: float
    log_cardinality: float
    eps: float


def radius_bound(m, M, L_p, log_cardinality, eps):
    """Truncation level ``Delta`` and ball radius ``R = m^{3/2} M Delta``."""
    if m < 1 or M < 1:
        raise DomainError("m and M must be positive")
    if L_p < 0 or log_cardinality < 0:
        raise DomainError("L_p and log|F| must be nonnegative")
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    delta = log_cardinality + 2.0 * L_p + math.log(2 * m) + math.log(1.0 / eps)
    return RadiusBound(delta, m ** 1.5 * M * delta, int(m), int(M), float(L_p),
                       float(log_cardinality), float(eps))


def h_value(oracle, theta, y):
    y = np.asarray(y, dtype=float)
    return oracle.log_eval(y) - float(np.dot(theta, y))


def h_gradient(oracle, theta, y):
    return oracle.log_gradient(np.asarray(y, dtype=float)) - np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class SolveOptions:
    method: str = "newton"  # "newton" or "gradient"
    accelerate: bool = True
    max_iters: int | None = None
    radius: float | None = None
    grad_tol: float | None = None
    feas_tol: float = FEAS_TOL
    face_restriction: bool = True
    unary_complexity: int | None = None


@dataclass
class SolveReport:
    y: np.ndarray
    h_value: float
    gradient_norm: float
    gap_certificate: float
    theta_y: np.ndarray
    iterations: int
    radius_used: float
    solver: str
    radius: RadiusBound | None = None
    q: PrimalDistribution | None = None
    q_face: PrimalDistribution | None = None
    face_size: int | None = None
    lower_bound: float = -math.inf
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        out = {
            "y": [float(v) for v in self.y],
            "h_value": self.h_value,
            "gradient_norm": self.gradient_norm,
            "gap_certificate": self.gap_certificate,
            "lower_bound": self.lower_bound,
            "theta_y": [float(v) for v in self.theta_y],
            "iterations": self.iterations,
            "radius_used": self.radius_used,
            "solver": self.solver,
        }
        if self.radius is not None:
            out["delta"] = self.radius.delta
        if self.q is not None:
            out["q"] = [float(v) for v in self.q.probs]
        if self.q_face is not None:
            out["q_face"] = [float(v) for v in self.q_face.probs]
            out["face_size"] = self.face_size
        return out


@dataclass(frozen=True)
class FaceRestriction:
    mask: np.ndarray
    tight: np.ndarray
    origin: np.ndarray
    basis: np.ndarray

    @property
    def is_vertex(self):
        return int(self.mask.sum()) == 1

    @property
    def is_identity(self):
        return bool(self.mask.all())


def face_restrict(theta, facets, points, tol=FEAS_TOL):
    """Points of the minimal face of ``conv(points)`` containing ``theta``.

    Tight facets give a first cut; an LP then discards any point that no
    feasible mixture can reach, so ``theta`` ends in the relative interior.
    """
    P = np.asarray(points)
    theta = np.asarray(theta, dtype=float)
    mask = np.ones(P.shape[0], dtype=bool)
    tight = np.zeros(0, dtype=np.int64)
    if facets is not None:
        tight = tight_facets(theta, facets, tol)
        if facets.off_hull_distance(theta) > 10 * tol:
            raise DomainError("marginal lies outside the affine hull of the support")
        if tight.size:
            resid = np.abs(P @ facets.A[tight].T - facets.b[tight])
            mask = np.all(resid <= tol, axis=1)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise DomainError("marginal lies outside the polytope")
    sub = lp.minimal_face_mask(P[idx], theta, tol)
    if sub is None:
        raise DomainError("marginal lies outside the polytope")
    final = np.zeros(P.shape[0], dtype=bool)
    final[idx[sub]] = True
    origin, basis = affine_hull(P[final])
    return FaceRestriction(final, tight, origin, basis)


def primal_from_dual(oracle, y):
    """``q^y_a ∝ p_a e^{<a,y>}`` on an explicit support."""
    if not isinstance(oracle, ExplicitOracle):
        oracle = oracle.to_explicit()
    return PrimalDistribution(oracle.support, oracle.probs(y))


def kl_identity_check(q, log_p, theta, y):
    """Residual of ``KL(q, q^y) = h_theta(y) - sum q log(p/q)`` for a feasible ``q``."""
    oracle = ExplicitOracle(q.support.points, log_p.log_weights)
    qy = PrimalDistribution(q.support, oracle.probs(y))
    lhs = kl_divergence(q, qy)
    rhs = h_value(oracle, theta, y) - entropy_objective(q, log_p)
    return abs(lhs - rhs)


class _BallProblem:
    """``h_theta`` restricted to ``y = U c`` (U orthonormal), so ``|y| = |c|``."""

    def __init__(self, oracle, theta, basis):
        self.oracle = oracle
        self.theta = np.asarray(theta, dtype=float)
        self.U = basis

    def y(self, c):
        return self.U @ c

    def value(self, c):
        y = self.U @ c
        return self.oracle.log_eval(y) - float(self.theta @ y)

    def grad(self, c):
        return self.U.T @ (self.oracle.log_gradient(self.U @ c) - self.theta)

    def hess(self, c):
        return self.U.T @ self.oracle.log_hessian(self.U @ c) @ self.U


def _project_ball(c, R):
    n = np.linalg.norm(c)
    return c if n <= R else c * (R / n)


def _fw_lower(f, g, c, R):
    # min over the ball of the linearization at c
    return f - float(g @ c) - R * float(np.linalg.norm(g))


def _ball_newton_target(c, g, H, R):
    """Minimizer of the quadratic model ``g.s + s.H.s/2`` subject to ``|c + s| <= R``."""
    lam, Q = np.linalg.eigh(0.5 * (H + H.T))
    lam = np.maximum(lam, 0.0)
    lam = lam + 1e-14 * max(1.0, float(lam.max(initial=0.0)))
    b = lam * (Q.T @ c) - Q.T @ g
    w = b / lam
    if np.linalg.norm(w) <= R:
        return Q @ w
    nb = float(np.linalg.norm(b))

    def excess(nu):
        return float(np.linalg.norm(b / (lam + nu))) - R

    hi = nb / R
    while excess(hi) > 0:
        hi *= 2.0
    nu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-13, maxiter=500)
    return _project_ball(Q @ (b / (lam + nu)), R)


@dataclass
class _State:
    c: np.ndarray
    f: float
    g: np.ndarray
    lower: float
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def cert(self):
        return max(self.f - self.lower, 0.0)


def _done(state, eps, grad_tol):
    if state.cert > eps:
        return False
    return grad_tol is None or float(np.linalg.norm(state.g)) <= grad_tol


def _newton_loop(prob, state, R, L, eps, grad_tol, max_iters):
    stalled = 0
    while state.iterations < max_iters and not _done(state, eps, grad_tol):
        c, f, g = state.c, state.f, state.g
        target = _ball_newton_target(c, g, prob.hess(c), R)
        s = target - c
        slope = float(g @ s)
        accepted = None
        if slope < 0:
            t = 1.0
            for _ in range(60):
                cand = c + t * s
                fc = prob.value(cand)
                if fc <= f + 1e-4 * t * slope:
                    accepted = (cand, fc, None)
                    break
                if t == 1.0 and fc <= f + 1e-14 * max(1.0, abs(f)):
                    # change below the resolution of f: judge the full step by
                    # its gradient instead
                    # (values may then rise by rounding noise only)
                    gc = prob.grad(cand)
                    if np.linalg.norm(gc) <= 0.5 * np.linalg.norm(g):
                        accepted = (cand, fc, gc)
                        break
                t *= 0.5
        if accepted is None and _done(state, eps, grad_tol):
            break
        if accepted is None and L > 0:
            cand = _project_ball(c - g / (2.0 * L), R)
            fc = prob.value(cand)
            if fc <= f:
                accepted = (cand, fc, None)
        if accepted is None or accepted[1] > f + 1e-14 * max(1.0, abs(f)):
            break  # stagnated at floating-point resolution
        prev_cert = state.cert
        state.c, state.f = accepted[0], accepted[1]
        state.g = prob.grad(state.c) if accepted[2] is None else accepted[2]
        state.lower = max(state.lower, _fw_lower(state.f, state.g, state.c, R))
        state.iterations += 1
        state.history.append(state.f)
        stalled = stalled + 1 if state.f == f and state.cert >= prev_cert else 0
        if stalled >= 20:
            break
    return state


def _gradient_loop(prob, state, R, L, eps, grad_tol, max_iters, accelerate):
    step = 1.0 / (2.0 * L) if L > 0 else 0.0
    x_prev = state.c.copy()
    z = state.c.copy()
    gz = state.g
    fz = state.f
    t = 1.0
    while state.iterations < max_iters and not _done(state, eps, grad_tol):
        v = _project_ball(z - step * gz, R)
        fv = prob.value(v)
        if accelerate:
            x = state.c
            if fv <= state.f:
                new_c, new_f = v, fv
            else:
                new_c, new_f = x, state.f
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            z = new_c + (t / t_new) * (v - new_c) + ((t - 1.0) / t_new) * (new_c - x)
            z = _project_ball(z, R)
            t = t_new
            x_prev = x
        else:
            if fv > state.f:
                break
            new_c, new_f = v, fv
            z = v
        moved = new_c is not state.c
        state.c, state.f = new_c, new_f
        if moved:
            state.g = prob.grad(state.c)
            state.lower = max(state.lower, _fw_lower(state.f, state.g, state.c, R))
        if accelerate:
            fz = prob.value(z)
            gz = prob.grad(z)
            state.lower = max(state.lower, _fw_lower(fz, gz, z, R))
        else:
            gz = state.g
        state.iterations += 1
        state.history.append(state.f)
    del x_prev
    return state


def _minimize(prob, c0, R, L, eps, options, max_iters):
    c0 = _project_ball(np.asarray(c0, dtype=float), R)
    f0 = prob.value(c0)
    g0 = prob.grad(c0)
    state = _State(c0, f0, g0, _fw_lower(f0, g0, c0, R), history=[f0])
    if options.method == "newton":
        return _newton_loop(prob, state, R, L, eps, options.grad_tol, max_iters)
    if options.method == "gradient":
        return _gradient_loop(prob, state, R, L, eps, options.grad_tol, max_iters,
                              options.accelerate)
    raise ValidationError(f"unknown method {options.method!r}")


def _iteration_cap(L, R, eps, options):
    cap = math.ceil(8.0 * max(L, 1e-300) * R * R / eps) + 10
    if options.max_iters is not None:
        return int(options.max_iters)
    if options.method == "newton":
        return min(cap, 500)
    return min(cap, 2_000_000)


def _facets_for(oracle, facets, options):
    if facets is not None or not isinstance(oracle, ExplicitOracle):
        return facets
    if options.unary_complexity is not None:
        return None
    return facets_from_support(oracle.points)


def _unary_complexity(oracle, facets, options):
    if options.unary_complexity is not None:
        return int(options.unary_complexity)
    if facets is not None:
        return facets.unary_complexity
    return int(oracle.unary_complexity)


def _boundary_lift(oracle, theta, face, facets, y_face, delta):
    """Push off-face terms down by ``e^{-delta}`` along the sum of tight facet normals."""
    if facets is None or face.tight.size == 0:
        return y_face
    u = facets.A[face.tight].sum(axis=0).astype(float)
    P = oracle._fpoints
    off = ~face.mask
    if not off.any():
        return y_face
    D = P - theta
    base = oracle.log_weights + D @ y_face
    ref = float(np.max(base[face.mask]))
    slope = -(D[off] @ u)
    if np.any(slope <= 0.5):
        return y_face
    need = (base[off] - ref + delta) / slope
    return y_face + max(0.0, float(need.max())) * u


def solve_dual(oracle, theta, eps, facets: FacetSystem | None = None, options=None):
    """Minimize ``h_theta`` over ``B(0, R(eps))`` and certify the gap.

    ``gap_certificate`` bounds ``h_theta(y) - min_{|y'| <= R} h_theta(y')`` using
    the best Frank-Wolfe lower bound seen along the run (never worse than
    ``2R |grad h(y)|``). For explicit supports, marginals on the boundary are
    first solved on their minimal face (``q_face``) and the face solution is
    lifted to warm-start the full problem.
    """
    options = options or SolveOptions()
    theta = np.asarray(theta, dtype=float).reshape(-1)
    m = oracle.dimension
    if theta.shape[0] != m:
        raise DomainError(f"marginal must have length {m}")
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    tol = options.feas_tol
    explicit = isinstance(oracle, ExplicitOracle)
    facets = _facets_for(oracle, facets, options)

    face = None
    if explicit:
        if facets is not None:
            facets.check_support(oracle.points)
        face = face_restrict(theta, facets, oracle.points, tol)
    else:
        inside = oracle.contains_marginal(theta, tol)
        if inside is False:
            raise DomainError("marginal lies outside the polytope")

    basis = oracle.direction_basis()
    theta0 = oracle.log_gradient(np.zeros(m))
    d = theta - theta0
    if np.linalg.norm(d - basis @ (basis.T @ d)) > 1e-7 * max(1.0, np.linalg.norm(theta)):
        raise DomainError("marginal lies outside the affine hull of the support")

    M = _unary_complexity(oracle, facets, options)
    rb = radius_bound(m, M, oracle.bit_complexity(), oracle.log_cardinality(), eps)
    R = rb.radius if options.radius is None else float(options.radius)
    diam = oracle.diameter
    L = 2.0 * diam * diam
    cap = _iteration_cap(L, R, eps, options)
    label = "projected_newton" if options.method == "newton" else "projected_gradient"

    y0 = np.zeros(m)
    q_face = None
    iters_face = 0
    if face is not None and options.face_restriction and not face.is_identity:
        P = oracle.points
        sub = ExplicitOracle(P[face.mask], oracle.log_weights[face.mask])
        if face.is_vertex:
            y_face = np.zeros(m)
            qf = face.mask.astype(float)
        else:
            sprob = _BallProblem(sub, theta, face.basis)
            sub_L = 2.0 * sub.diameter ** 2
            st = _minimize(sprob, np.zeros(face.basis.shape[1]), R, sub_L, eps / 4.0,
                           options, cap)
            iters_face = st.iterations
            y_face = sprob.y(st.c)
            qf = np.zeros(P.shape[0])
            qf[face.mask] = sub.probs(y_face)
        q_face = PrimalDistribution(oracle.support, qf)
        y0 = _boundary_lift(oracle, theta, face, facets, y_face,
                            rb.delta + math.log(max(P.shape[0], 2)))

    prob = _BallProblem(oracle, theta, basis)
    state = _minimize(prob, basis.T @ y0, R, L, eps, options, cap)
    y = prob.y(state.c)
    grad = h_gradient(oracle, theta, y)
    report = SolveReport(
        y=y,
        h_value=state.f,
        gradient_norm=float(np.linalg.norm(grad)),
        gap_certificate=state.cert,
        theta_y=grad + theta,
        iterations=state.iterations + iters_face,
        radius_used=R,
        solver=label,
        radius=rb,
        q=primal_from_dual(oracle, y) if explicit else None,
        q_face=q_face,
        face_size=None if face is None else int(face.mask.sum()),
        lower_bound=state.lower,
        history=state.history,
    )
    if not _done(state, eps, options.grad_tol):
        raise ConvergenceError(
            f"no certificate after {state.iterations} iterations "
            f"(gap {state.cert:.3g} > {eps:.3g})", best=report)
    return report


@dataclass(frozen=True)
class BallSolution:
    y: np.ndarray
    h_value: float
    lower_bound: float
    iterations: int

    @property
    def gap_certificate(self):
        return max(self.h_value - self.lower_bound, 0.0)


def minimize_on_ball(oracle, theta, radius, eps, options=None, y0=None):
    """``inf_{|y| <= radius} h_theta(y)`` without any feasibility check on ``theta``.

    The ball-constrained infimum is finite for every ``theta``; callers that
    optimize over ``theta`` (capacity, worst-case constants) use it as a
    Lipschitz proxy for the dual value.
    """
    options = options or SolveOptions()
    theta = np.asarray(theta, dtype=float).reshape(-1)
    m = oracle.dimension
    basis = np.eye(m)
    prob = _BallProblem(oracle, theta, basis)
    L = 2.0 * oracle.diameter ** 2
    cap = _iteration_cap(L, radius, eps, options)
    c0 = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float)
    state = _minimize(prob, c0, float(radius), L, eps, options, cap)
    sol = BallSolution(prob.y(state.c), state.f, state.lower, state.iterations)
    if not _done(state, eps, options.grad_tol):
        raise ConvergenceError(
            f"ball solve stalled with gap {state.cert:.3g} > {eps:.3g}", best=sol)
    return sol
