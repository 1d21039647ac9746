"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the "acceptance criteria" section at the end of
the pytest run (see ``conftest.py``).
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar
from scipy.special import logsumexp

from maxent import applications, minnorm, witness
from maxent.dual import SolveOptions, h_value, minimize_on_ball, radius_bound, solve_dual
from maxent.experiments import boundary_closed_form, boundary_demo, stability_experiment
from maxent.oracles import (EvaluationOracle, ExplicitOracle, ProductFormOracle,
                            SpanningTreeOracle)
from maxent.support import facets_from_support

from conftest import random_01_polytope


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_closed_form(criterion):
    F = ExplicitOracle(np.array([[0], [1]]))
    worst_g = worst_tv = worst_t = 0.0
    for th in (0.5, 0.25, 1e-3, 1e-6):
        t0 = time.perf_counter()
        rep = solve_dual(F, np.array([th]), 1e-10)
        worst_t = max(worst_t, time.perf_counter() - t0)
        g = -th * math.log(th) - (1 - th) * math.log1p(-th)
        # uniform weights: the optimal dual value is the entropy of Bernoulli(theta)
        worst_g = max(worst_g, abs(rep.h_value - g))
        q = rep.q.probs
        worst_tv = max(worst_tv, 0.5 * (abs(q[0] - (1 - th)) + abs(q[1] - th)))
    ok = worst_g <= 1e-8 and worst_tv <= 1e-6 and worst_t < 1.0
    criterion(1, ok, f"max |g err| {worst_g:.2e}, max tv {worst_tv:.2e}, max time {worst_t:.3f}s")
    assert ok


# -- 2 ------------------------------------------------------------------------

def _random_connected_graph(rng):
    n = int(rng.integers(2, 9))
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[i]), int(perm[rng.integers(0, i)])))) for i in range(1, n)}
    all_pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    extra = int(rng.integers(0, min(len(all_pairs), n + 5) - len(edges) + 1))
    rest = [e for e in all_pairs if e not in edges]
    for k in rng.permutation(len(rest))[:extra]:
        edges.add(rest[k])
    return n, sorted(edges)


def _trees_by_enumeration(n, edges):
    """Indicator rows of all spanning trees, found by brute force over edge subsets."""
    rows = []
    for sub in itertools.combinations(range(len(edges)), n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for e in sub:
            a, b = find(edges[e][0]), find(edges[e][1])
            if a == b:
                ok = False
                break
            parent[a] = b
        if ok:
            row = np.zeros(len(edges))
            row[list(sub)] = 1.0
            rows.append(row)
    return np.array(rows)


def test_criterion_2_spanning_tree_oracle(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng([2, k])
        n, edges = _random_connected_graph(rng)
        w = rng.uniform(-1.0, 1.0, size=len(edges))
        oracle = SpanningTreeOracle(n, edges, w)
        T = _trees_by_enumeration(n, edges)
        for _ in range(20):
            y = rng.normal(scale=2.0, size=len(edges))
            s = T @ (w + y)
            ref_val = logsumexp(s)
            ref_grad = np.exp(s - ref_val) @ T
            worst = max(worst, abs(oracle.log_eval(y) - ref_val),
                        float(np.abs(oracle.log_gradient(y) - ref_grad).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 30
    criterion(2, ok, f"max deviation {worst:.2e} over 50 graphs x 20 points, {elapsed:.1f}s")
    assert ok


# -- 3 and 4 ------------------------------------------------------------------

def test_criterion_3_radius_bound(corpus, corpus_g, criterion):
    eps = 1e-6
    t0 = time.perf_counter()
    failures = []
    for k, ((oracle, facets, theta, face), g) in enumerate(zip(corpus, corpus_g)):
        rb = radius_bound(oracle.dimension, facets.unary_complexity, oracle.bit_complexity(),
                          oracle.log_cardinality(), eps)
        # the plain ball problem, no face restriction
        ball = minimize_on_ball(oracle, theta, rb.radius, eps)
        # the full solver (face restriction plus lift)
        rep = solve_dual(oracle, theta, eps, facets=facets)
        for y, cert in ((ball.y, ball.gap_certificate), (rep.y, rep.gap_certificate)):
            if not (cert <= eps and np.linalg.norm(y) <= rb.radius * (1 + 1e-12)
                    and h_value(oracle, theta, y) - g <= eps):
                failures.append(k)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    criterion(3, ok, f"{len(failures)} failures on {len(corpus)} boundary marginals, {elapsed:.1f}s")
    assert ok, failures


def test_criterion_4_truncation_witness(corpus, corpus_g, criterion):
    eps = 1e-6
    failures = []
    worst_ratio = 0.0
    for k, ((oracle, facets, theta, face), g) in enumerate(zip(corpus, corpus_g)):
        rb = radius_bound(oracle.dimension, facets.unary_complexity, oracle.bit_complexity(),
                          oracle.log_cardinality(), eps)
        # reference optimum from a much larger ball, then basis + truncation
        y_star = solve_dual(oracle, theta, eps / 4, facets=facets,
                            options=SolveOptions(radius=1e3 * rb.radius)).y
        basis = witness.good_basis(y_star, facets, oracle.points)
        y_t = witness.truncate_dual(basis, rb.delta)
        bound = witness.norm_bound(oracle.dimension, facets.unary_complexity, rb.delta)
        worst_ratio = max(worst_ratio, float(np.linalg.norm(y_t)) / bound)
        if not (h_value(oracle, theta, y_t) - g <= eps and np.linalg.norm(y_t) <= bound):
            failures.append(k)
    ok = not failures
    criterion(4, ok, f"{len(failures)} failures on {len(corpus)}; max |y_t| / bound {worst_ratio:.3f}")
    assert ok, failures


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_stability(criterion):
    instances = [("F01", ExplicitOracle(np.array([[0], [1]])))]
    for k in range(3):
        rng = np.random.default_rng([5, k])
        m = int(rng.integers(2, 7))
        pts = random_01_polytope(rng, m)
        instances.append((f"rand{k}_m{m}", ExplicitOracle(pts, rng.uniform(-1, 1, pts.shape[0]))))
    violations = failures = rows = 0
    one_d_err = 0.0
    for name, oracle in instances:
        run = stability_experiment(oracle, num_pairs=200, eps_grid=(1e-2, 1e-4, 1e-6), seed=0,
                                   instance_id=name)
        rows += len(run.rows)
        violations += len(run.violations)
        failures += len(run.failures)
        if name == "F01":
            one_d_err = max(abs(r.tv - 2 * r.eps) for r in run.rows)
    ok = violations == 0 and failures == 0 and one_d_err <= 1e-8
    criterion(5, ok, f"{rows} pairs, {violations} violations, {failures} failed solves, "
                     f"1-D max |tv - 2 eps| {one_d_err:.2e}")
    assert ok


# -- 6 ------------------------------------------------------------------------

def _separated_vectors(rng):
    m = int(rng.integers(1, 9))
    N = int(rng.integers(1, 51))
    c = rng.normal(size=m)
    c /= np.linalg.norm(c)
    V = rng.normal(size=(N, m)) * rng.uniform(0.1, 3.0)
    V += (rng.uniform(0.01, 2.0) - (V @ c).min()) * c
    return V


def _active_set_qp_delta(V):
    """``1/|y|`` for ``min |y|^2 s.t. V y <= -1`` by SLSQP (an active-set SQP method)."""
    c = V.mean(axis=0)
    y0 = -c / min(float((V @ c).min()), -1e-12) if (V @ c).min() < 0 else -c / (V @ c).min()
    res = minimize(lambda y: y @ y, y0, jac=lambda y: 2 * y, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda y: -1.0 - V @ y,
                                 "jac": lambda y: -V}],
                   options={"ftol": 1e-15, "maxiter": 1000})
    return 1.0 / float(np.linalg.norm(res.x))


def _cvxopt_delta(V):
    from cvxopt import matrix, solvers

    N = V.shape[0]
    G = V @ V.T
    sol = solvers.qp(matrix(G + 1e-14 * np.eye(N)), matrix(np.zeros(N)), matrix(-np.eye(N)),
                     matrix(np.zeros(N)), matrix(np.ones((1, N))), matrix(1.0),
                     options={"show_progress": False, "abstol": 1e-14, "reltol": 1e-14,
                              "feastol": 1e-14})
    lam = np.array(sol["x"]).ravel()
    return float(np.linalg.norm(lam @ V))


def test_criterion_6_min_norm(criterion):
    worst_td = worst_qp = worst_cvx = 0.0
    for k in range(100):
        V = _separated_vectors(np.random.default_rng([6, k]))
        res = minnorm.min_norm_point(V)
        worst_td = max(worst_td, abs(res.tau * res.delta - 1.0))
        worst_qp = max(worst_qp, abs(_active_set_qp_delta(V) / res.delta - 1.0))
        worst_cvx = max(worst_cvx, abs(_cvxopt_delta(V) / res.delta - 1.0))
    min_gap = math.inf
    for m, pts in minnorm.flat_catalogue().items():
        inst = minnorm.build_flat_instance(pts)
        cert = minnorm.certify_lower_bound(inst, probes=1000, seed=m)
        assert abs(inst.delta - 1e-3) / 1e-3 < 0.01
        assert cert.probe_radius >= 500.0
        min_gap = min(min_gap, cert.min_gap / inst.eps)
    ok = worst_td <= 1e-6 and worst_qp <= 1e-6 and worst_cvx <= 1e-6 and min_gap > 1.0
    criterion(6, ok, f"|tau delta - 1| {worst_td:.1e}, vs active-set QP {worst_qp:.1e}, "
                     f"vs cvxopt {worst_cvx:.1e}; flat probes min gap / eps {min_gap:.2e}")
    assert ok


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_matrix_scaling(criterion):
    t0 = time.perf_counter()
    worst_row = worst_col = 0.0
    budget_ok = True
    for k in range(50):
        rng = np.random.default_rng([7, k])
        n = int(rng.integers(2, 11))
        A = rng.uniform(0.05, 5.0, size=(n, n))
        h = int(rng.integers(n, 21))
        r = 1 + rng.multinomial(h - n, np.ones(n) / n)
        c = 1 + rng.multinomial(h - n, np.ones(n) / n)
        res = applications.matrix_scale(applications.ScalingInstance(A, r, c), 1e-6)
        worst_row = max(worst_row, res.row_residual)
        worst_col = max(worst_col, res.col_residual)
        budget_ok &= res.log_size <= res.bit_budget
    elapsed = time.perf_counter() - t0
    ok = worst_row <= 1e-12 and worst_col <= 1e-6 and budget_ok and elapsed < 120
    criterion(7, ok, f"row residual {worst_row:.1e}, column residual {worst_col:.1e}, "
                     f"bit budget respected: {budget_ok}, {elapsed:.1f}s")
    assert ok


# -- 8 ------------------------------------------------------------------------

def _bl_by_coordinate_descent(V, p, sweeps=5000):
    """``inf_x det(sum p_j x_j v_j v_j^T) / prod x_j^{p_j}`` by exact line searches per coordinate."""

    def f(t):
        M = ((p * np.exp(t))[:, None] * V).T @ V
        sign, ld = np.linalg.slogdet(M)
        return ld - p @ t if sign > 0 else math.inf

    t = np.zeros(V.shape[0])
    prev = f(t)
    for _ in range(sweeps):
        for j in range(V.shape[0]):
            def fj(x, j=j):
                tt = t.copy()
                tt[j] = x
                return f(tt)

            t[j] = minimize_scalar(fj, bounds=(t[j] - 5, t[j] + 5), method="bounded",
                                   options={"xatol": 1e-12}).x
        t -= t.mean()  # the ratio is invariant under a common rescaling of x
        cur = f(t)
        if prev - cur < 1e-14:
            break
        prev = cur
    return math.exp(f(t))


def _capacity_instance(rng):
    m = int(rng.integers(1, 9))
    N = int(rng.integers(m + 1, 3 * m + 3))
    F = np.unique(rng.integers(0, 3, size=(N, m)), axis=0)
    oracle = ExplicitOracle(F, rng.uniform(-2, 2, size=F.shape[0]))
    k = int(rng.integers(1, min(F.shape[0], 3) + 1))
    B = F[rng.choice(F.shape[0], size=k, replace=False)]
    return applications.CapacityInstance(oracle, B_vertices=B)


def test_criterion_8_capacity_and_bl(criterion):
    cap_fail = 0
    for k in range(20):
        inst = _capacity_instance(np.random.default_rng([8, k]))
        res = applications.capacity(inst, 1e-3)
        mc = applications.max_coefficient(inst)
        # certified interval, and the estimate dominates every coefficient on B
        if not (res.upper >= math.log(mc) and res.value >= math.log(mc) - 1e-9):
            cap_fail += 1
    worst_rel = 0.0
    for k in range(30):
        rng = np.random.default_rng([88, k])
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n, 7))
        V = rng.normal(size=(m, n))
        bases = applications.bl_bases(V)
        p = rng.dirichlet(np.ones(len(bases.subsets))) @ bases.subsets
        ours = applications.bl_constant(V, p, 1e-8)
        ref = _bl_by_coordinate_descent(V, p)
        worst_rel = max(worst_rel, abs(ours - ref) / ref)
    worst_id = 0.0
    for n in range(1, 6):
        worst_id = max(worst_id, abs(applications.bl_constant(np.eye(n), np.ones(n)) - 1.0))
    ok = cap_fail == 0 and worst_rel <= 1e-4 and worst_id <= 1e-9
    criterion(8, ok, f"capacity dominance failures {cap_fail}/20, BL vs coordinate descent "
                     f"max rel {worst_rel:.1e}, identity |BL - 1| {worst_id:.1e}")
    assert ok


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_boundary_demo(criterion):
    run = boundary_demo(10, 8, 100_000, seed=0)
    p = boundary_closed_form(10, 8)
    ok = run.within(3.0, p)
    criterion(9, ok, f"fraction {run.fraction:.5f} vs closed form {p:.5f} "
                     f"(z = {run.z_score(p):+.2f}); exact probability {run.exact:.5f} "
                     f"(z = {run.z_score(run.exact):+.2f})")
    assert ok


# -- 10 -----------------------------------------------------------------------

def _backends(rng, spread=1.0):
    pts = random_01_polytope(rng, 4)
    ex = ExplicitOracle(pts, rng.uniform(-spread, spread, pts.shape[0]))
    A = np.exp(rng.uniform(-spread, spread, size=(3, 3)))
    pf = ProductFormOracle(A, np.array([2, 1, 3]))
    st = SpanningTreeOracle(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)],
                            rng.uniform(-spread, spread, 5))
    ev = EvaluationOracle(ex.log_eval, 4, degree_bounds=[1, 1, 1, 1],
                          log_cardinality=ex.log_cardinality(), bit_complexity=spread)
    return {"explicit": ex, "product_form": pf, "spanning_tree": st, "evaluation": ev}


def test_criterion_10_numerical_hygiene(criterion):
    worst_grad = 0.0
    worst_hess = -math.inf
    for k in range(10):
        rng = np.random.default_rng([10, k])
        for name, oracle in _backends(rng).items():
            y = rng.normal(size=oracle.dimension)
            g = oracle.log_gradient(y)
            h = 1e-6
            fd = np.array([(oracle.log_eval(y + h * e) - oracle.log_eval(y - h * e)) / (2 * h)
                           for e in np.eye(oracle.dimension)])
            worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g)))))
            hs = 1e-4
            H = np.array([(oracle.log_gradient(y + hs * e) - oracle.log_gradient(y - hs * e))
                          / (2 * hs) for e in np.eye(oracle.dimension)])
            bound = 2.0 * oracle.diameter ** 2
            worst_hess = max(worst_hess, float(np.abs(H).max()) - bound)
    finite = True
    for k in range(5):
        rng = np.random.default_rng([100, k])
        for name, oracle in _backends(rng, spread=500.0).items():
            y = rng.normal(scale=50.0, size=oracle.dimension)
            vals = [oracle.log_eval(y), *oracle.log_gradient(y)]
            finite &= bool(np.all(np.isfinite(vals)))
        ex = _backends(np.random.default_rng([100, k]), spread=500.0)["explicit"]
        theta = ex.points.mean(axis=0)
        rep = solve_dual(ex, theta, 1e-6)
        finite &= bool(np.isfinite(rep.h_value) and np.all(np.isfinite(rep.y))
                       and np.all(np.isfinite(rep.q.probs)))
    ok = worst_grad <= 1e-6 and worst_hess <= 1e-4 and finite
    criterion(10, ok, f"gradient vs finite differences {worst_grad:.1e} (rel), "
                      f"max Hessian entry - 2d^2 {worst_hess:+.2e}, finite at +-500: {finite}")
    assert ok
