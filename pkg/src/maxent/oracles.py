"""Counting oracles ``g_p(x) = sum_a p_a x^a`` evaluated in log domain at ``x = e^y``.

Three structured backends are provided (explicit support, product of linear
forms, weighted spanning trees) plus :class:`EvaluationOracle`, which wraps a
bare ``log g_p`` evaluator and recovers gradients by polynomial interpolation.
"""

import math

import numpy as np
import scipy.linalg
from scipy.special import gammaln, logsumexp, softmax

from maxent import lp
from maxent.errors import BudgetError, DomainError, NumericalError, ValidationError
from maxent.support import LogWeightFunction, SupportFamily, affine_hull, merge_duplicates

PIVOT_TOL = 1e-13


class CountingOracle:
    """Common interface. Subclasses override ``log_eval`` and usually ``log_gradient``."""

    dimension: int
    degree_bounds: np.ndarray
    degree_offsets: np.ndarray  # smallest exponent per coordinate
    diameter: float
    unary_complexity: int = 1

    def log_eval(self, y):
        raise NotImplementedError

    def log_gradient(self, y):
        y = np.asarray(y, dtype=float)
        return np.array([normalized_interpolated_derivative(self, y, i)
                         for i in range(self.dimension)])

    def log_hessian(self, y, step=1e-5):
        y = np.asarray(y, dtype=float)
        m = self.dimension
        H = np.empty((m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = step
            H[:, i] = (self.log_gradient(y + e) - self.log_gradient(y - e)) / (2 * step)
        return 0.5 * (H + H.T)

    def log_cardinality(self):
        raise NotImplementedError

    def bit_complexity(self):
        """Upper bound on ``max |log p_a|``."""
        raise NotImplementedError

    def direction_basis(self):
        """Orthonormal basis (m x k) of the direction space of the support's affine hull."""
        return np.eye(self.dimension)

    def contains_marginal(self, theta, tol=1e-9):
        """Membership of ``theta`` in ``conv(support)``; ``None`` when it cannot be decided."""
        return None

    def enumerate_support(self, budget=200_000):
        """Explicit ``(points, log_weights)``; raises :class:`BudgetError` when too large."""
        raise NotImplementedError

    def to_explicit(self, budget=200_000):
        pts, lw = self.enumerate_support(budget)
        return ExplicitOracle(pts, lw)

    def _check_y(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.dimension:
            raise DomainError(f"expected a vector of length {self.dimension}")
        if not np.all(np.isfinite(y)):
            raise DomainError("y must be finite")
        return y


class ExplicitOracle(CountingOracle):
    def __init__(self, points, log_weights=None, declared_bit_complexity=None):
        P, w = merge_duplicates(points, log_weights)
        self.support = SupportFamily.explicit(P)
        self.weights = LogWeightFunction.from_log_weights(w, declared_bit_complexity)
        self.points = self.support.points
        self._fpoints = self.points.astype(float)
        self.dimension = self.support.dimension
        self.degree_offsets = self.points.min(axis=0)
        self.degree_bounds = self.points.max(axis=0) - self.degree_offsets
        self.diameter = self.support.diameter

    @property
    def log_weights(self):
        return self.weights.log_weights

    def log_masses(self, y):
        return self.log_weights + self._fpoints @ self._check_y(y)

    def log_probs(self, y):
        lm = self.log_masses(y)
        return lm - logsumexp(lm)

    def probs(self, y):
        return softmax(self.log_masses(y))

    def log_eval(self, y):
        return float(logsumexp(self.log_masses(y)))

    def log_gradient(self, y):
        return self.probs(y) @ self._fpoints

    def log_hessian(self, y, step=None):
        q = self.probs(y)
        C = self._fpoints - q @ self._fpoints
        return (C * q[:, None]).T @ C

    def log_cardinality(self):
        return math.log(self.points.shape[0])

    def bit_complexity(self):
        return self.weights.bit_complexity

    def enumerate_support(self, budget=200_000):
        return self.points, self.log_weights

    def direction_basis(self):
        return affine_hull(self.points)[1]

    def contains_marginal(self, theta, tol=1e-9):
        return lp.in_convex_hull(self.points, theta, tol)

    def to_explicit(self, budget=200_000):
        return self


class ProductFormOracle(CountingOracle):
    """``g(x) = prod_i (sum_j A_ij x_j)^{r_i}``, the matrix-scaling polynomial."""

    def __init__(self, A, r):
        A = np.asarray(A, dtype=float)
        r = np.asarray(r)
        if A.ndim != 2 or A.shape[0] != r.shape[0]:
            raise ValidationError("A must be n x n with one exponent per row")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise ValidationError("A must be nonnegative and finite")
        if np.any(r <= 0) or not np.all(np.equal(np.mod(r, 1), 0)):
            raise ValidationError("row exponents must be positive integers")
        if np.any(A.max(axis=1) <= 0):
            raise DomainError("A has an all-zero row")
        self.A = A
        self.r = r.astype(np.int64)
        self.h = int(self.r.sum())
        with np.errstate(divide="ignore"):
            self.logA = np.log(A)
        self.dimension = A.shape[1]
        self.degree_offsets = np.zeros(self.dimension, dtype=np.int64)
        self.degree_bounds = np.full(self.dimension, self.h, dtype=np.int64)
        self.diameter = math.sqrt(2.0) * self.h if self.dimension > 1 else 0.0

    def _row_log(self, z):
        return logsumexp(self.logA + z[None, :], axis=1)

    def log_eval(self, y):
        z = self._check_y(y)
        return float(self.r @ self._row_log(z))

    def row_softmax(self, y):
        z = self._check_y(y)
        L = self.logA + z[None, :]
        return np.exp(L - logsumexp(L, axis=1)[:, None])

    def log_gradient(self, y):
        return self.r @ self.row_softmax(y)

    def log_hessian(self, y, step=None):
        Pi = self.row_softmax(y)
        H = np.diag(self.r @ Pi)
        H -= (Pi * self.r[:, None]).T @ Pi
        return H

    def log_cardinality(self):
        n, h = self.dimension, self.h
        return float(gammaln(h + n) - gammaln(h + 1) - gammaln(n))

    def bit_complexity(self):
        nz = self.A[self.A > 0]
        upper = float(self.r @ np.log(self.A.sum(axis=1)))
        lower = self.h * float(np.log(nz.min()))
        return max(abs(upper), abs(lower))

    def direction_basis(self):
        vecs = []
        for i in range(self.A.shape[0]):
            cols = np.nonzero(self.A[i] > 0)[0]
            for j in cols[1:]:
                v = np.zeros(self.dimension)
                v[cols[0]] = 1.0
                v[j] = -1.0
                vecs.append(v)
        return _orthonormal_span(vecs, self.dimension)

    def contains_marginal(self, theta, tol=1e-9):
        """Transportation feasibility: a flow on supp(A) with row sums r and column sums theta."""
        theta = np.asarray(theta, dtype=float)
        n, m = self.A.shape
        cells = [(i, j) for i in range(n) for j in range(m) if self.A[i, j] > 0]
        E = np.zeros((n + m, len(cells)))
        for k, (i, j) in enumerate(cells):
            E[i, k] = 1.0
            E[n + j, k] = 1.0
        rhs = np.concatenate([self.r.astype(float), theta])
        return lp.feasible_point(E, rhs, tol) is not None

    def enumerate_support(self, budget=200_000):
        if math.exp(self.log_cardinality()) > budget:
            raise BudgetError("product-form support too large to expand")
        poly = {(0,) * self.dimension: 0.0}
        for i, ri in enumerate(self.r):
            for _ in range(int(ri)):
                nxt = {}
                for mono, lw in poly.items():
                    for j in range(self.dimension):
                        if self.A[i, j] <= 0:
                            continue
                        key = mono[:j] + (mono[j] + 1,) + mono[j + 1:]
                        val = lw + self.logA[i, j]
                        nxt[key] = np.logaddexp(nxt[key], val) if key in nxt else val
                poly = nxt
        pts = np.array(sorted(poly), dtype=np.int64)
        return pts, np.array([poly[tuple(p)] for p in pts])


def _components(num_vertices, edges):
    parent = list(range(num_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    return len({find(a) for a in range(num_vertices)})


def reduced_laplacian(num_vertices, edges, conductances):
    L = np.zeros((num_vertices, num_vertices))
    for (u, v), c in zip(edges, conductances):
        if u == v:
            continue
        L[u, u] += c
        L[v, v] += c
        L[u, v] -= c
        L[v, u] -= c
    return L[1:, 1:]


def log_tree_sum_by_elimination(num_vertices, edges, log_weights):
    """``log sum_T prod_{e in T} e^{w_e}`` by Schur-complement elimination in log space.

    Eliminating a vertex of a Laplacian leaves a Laplacian: the pivot is the
    total conductance at the vertex and each neighbour pair gains
    ``c_u c_w / pivot``. Only sums of positive terms occur, so the result
    keeps full relative accuracy however widely the weights are spread.
    """
    n = int(num_vertices)
    W = np.full((n, n), -np.inf)
    for (u, v), w in zip(edges, log_weights):
        if u != v:
            W[u, v] = W[v, u] = np.logaddexp(W[u, v], w)
    alive = list(range(n))
    total = 0.0
    # vertex 0 is the ground; eliminate the others, lowest degree first
    for _ in range(n - 1):
        rest = [a for a in alive if a != 0]
        v = min(rest, key=lambda a: int(np.isfinite(W[a, alive]).sum()))
        alive.remove(v)
        row = W[v, alive]
        piv = logsumexp(row)
        if not np.isfinite(piv):
            return -np.inf
        total += piv
        nb = [a for a, r in zip(alive, row) if np.isfinite(r)]
        for i, a in enumerate(nb):
            for b in nb[i + 1:]:
                W[a, b] = W[b, a] = np.logaddexp(W[a, b], W[v, a] + W[v, b] - piv)
    return float(total)


def _contract(num_vertices, edges, e):
    """Edges of the graph with edge ``e`` contracted (its endpoints merged)."""
    u, v = edges[e]
    lo, hi = min(u, v), max(u, v)

    def relabel(a):
        a = lo if a == hi else a
        return a - 1 if a > hi else a

    return num_vertices - 1, [(relabel(a), relabel(b)) for k, (a, b) in enumerate(edges) if k != e]


def matrix_tree_log_det(num_vertices, edges, log_weights=None):
    """``log sum_T prod_{e in T} e^{w_e}`` via a pivoted LU of the scaled reduced Laplacian."""
    edges = [tuple(map(int, e)) for e in edges]
    if num_vertices < 2:
        raise DomainError("need at least two vertices")
    if _components(num_vertices, edges) != 1:
        raise DomainError("graph is disconnected: no spanning trees")
    w = np.zeros(len(edges)) if log_weights is None else np.asarray(log_weights, dtype=float)
    shift = float(w.max())
    Lr = reduced_laplacian(num_vertices, edges, np.exp(w - shift))
    lu, piv = scipy.linalg.lu_factor(Lr, check_finite=False)
    d = np.diag(lu)
    sign = np.prod(np.sign(d)) * (-1) ** int(np.sum(piv != np.arange(piv.size)))
    scale = np.abs(Lr).max()
    if sign <= 0 or np.abs(d).min() <= PIVOT_TOL * scale:
        raise NumericalError("reduced Laplacian is not numerically positive definite",
                             {"min_pivot": float(np.abs(d).min()), "scale": float(scale)})
    return float(np.sum(np.log(np.abs(d))) + (num_vertices - 1) * shift)


class SpanningTreeOracle(CountingOracle):
    """Generating polynomial of the spanning trees of a multigraph, one variable per edge."""

    def __init__(self, num_vertices, edges, edge_log_weights=None):
        self.num_vertices = int(num_vertices)
        self.edges = [tuple(map(int, e)) for e in edges]
        for u, v in self.edges:
            if not (0 <= u < self.num_vertices and 0 <= v < self.num_vertices):
                raise ValidationError(f"edge ({u},{v}) references a missing vertex")
        if self.num_vertices < 2 or _components(self.num_vertices, self.edges) != 1:
            raise DomainError("graph must be connected with at least two vertices")
        self.dimension = len(self.edges)
        self.edge_log_weights = (np.zeros(self.dimension) if edge_log_weights is None
                                 else np.asarray(edge_log_weights, dtype=float))
        self.degree_offsets = np.zeros(self.dimension, dtype=np.int64)
        self.degree_bounds = np.array([0 if u == v else 1 for u, v in self.edges], dtype=np.int64)
        k = self.num_vertices - 1
        self.diameter = math.sqrt(min(self.dimension, 2 * k))
        self._B = np.zeros((self.dimension, self.num_vertices - 1))
        for e, (u, v) in enumerate(self.edges):
            if u == v:
                continue
            if u > 0:
                self._B[e, u - 1] += 1.0
            if v > 0:
                self._B[e, v - 1] -= 1.0

    def _weights(self, y):
        return self.edge_log_weights + self._check_y(y)

    # beyond this log-weight spread the Laplacian is too ill-conditioned for LU / Cholesky
    WIDE_SPREAD = 30.0

    def _wide(self, w):
        return float(w.max() - w.min()) > self.WIDE_SPREAD

    def log_eval(self, y):
        w = self._weights(y)
        if self._wide(w):
            return log_tree_sum_by_elimination(self.num_vertices, self.edges, w)
        return matrix_tree_log_det(self.num_vertices, self.edges, w)

    def _gradient_by_contraction(self, w):
        # P(e in T) = x_e T(G/e) / T(G)
        total = log_tree_sum_by_elimination(self.num_vertices, self.edges, w)
        g = np.zeros(self.dimension)
        for e, (u, v) in enumerate(self.edges):
            if u == v:
                continue
            if self.num_vertices == 2:
                g[e] = math.exp(w[e] - total)
                continue
            n2, edges2 = _contract(self.num_vertices, self.edges, e)
            rest = log_tree_sum_by_elimination(n2, edges2, np.delete(w, e))
            g[e] = math.exp(w[e] + rest - total)
        return g

    def _solve(self, y):
        w = self._weights(y)
        x = np.exp(w - w.max())
        Lr = reduced_laplacian(self.num_vertices, self.edges, x)
        cho = scipy.linalg.cho_factor(Lr, check_finite=False)
        Z = scipy.linalg.cho_solve(cho, self._B.T, check_finite=False)
        return x, self._B @ Z  # x_e (scaled) and b_e^T L^-1 b_f (scaled inverse)

    def log_gradient(self, y):
        w = self._weights(y)
        if self._wide(w):
            return self._gradient_by_contraction(w)
        x, K = self._solve(y)
        return x * np.diag(K)

    def log_hessian(self, y, step=None):
        if self._wide(self._weights(y)):
            return super().log_hessian(y, step)
        x, K = self._solve(y)
        g = x * np.diag(K)
        return np.diag(g) - np.outer(x, x) * K ** 2

    def log_cardinality(self):
        return matrix_tree_log_det(self.num_vertices, self.edges)

    def bit_complexity(self):
        k = self.num_vertices - 1
        return float(np.sort(np.abs(self.edge_log_weights))[::-1][:k].sum())

    def blocks(self):
        """Edge-index sets of the biconnected blocks (bridges come out as singletons)."""
        adj = [[] for _ in range(self.num_vertices)]
        for e, (u, v) in enumerate(self.edges):
            if u != v:
                adj[u].append((v, e))
                adj[v].append((u, e))
        disc = [-1] * self.num_vertices
        low = [0] * self.num_vertices
        stack, out, clock = [], [], [0]

        def dfs(u, parent_edge):
            disc[u] = low[u] = clock[0]
            clock[0] += 1
            for v, e in adj[u]:
                if e == parent_edge:
                    continue
                if disc[v] < 0:
                    stack.append(e)
                    dfs(v, e)
                    low[u] = min(low[u], low[v])
                    if low[v] >= disc[u]:
                        comp = []
                        while True:
                            f = stack.pop()
                            comp.append(f)
                            if f == e:
                                break
                        out.append(sorted(comp))
                elif disc[v] < disc[u]:
                    stack.append(e)
                    low[u] = min(low[u], disc[v])

        import sys
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 10 * self.num_vertices + 100))
        try:
            dfs(0, -1)
        finally:
            sys.setrecursionlimit(old)
        return out

    def direction_basis(self):
        vecs = []
        for comp in self.blocks():
            for f in comp[1:]:
                v = np.zeros(self.dimension)
                v[comp[0]] = 1.0
                v[f] = -1.0
                vecs.append(v)
        return _orthonormal_span(vecs, self.dimension)

    def contains_marginal(self, theta, tol=1e-9, budget=20_000):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < -tol) or np.any(theta > 1 + tol):
            return False
        if abs(theta.sum() - (self.num_vertices - 1)) > tol * self.dimension:
            return False
        try:
            pts, _ = self.enumerate_support(budget)
        except BudgetError:
            return None
        return lp.in_convex_hull(pts, theta, tol)

    def spanning_trees(self, budget=200_000):
        """Yield the edge-index tuples of all spanning trees (include/exclude backtracking)."""
        n, m = self.num_vertices, self.dimension
        need = n - 1
        out = []

        def rec(idx, chosen, parent):
            if len(chosen) == need:
                out.append(tuple(chosen))
                if len(out) > budget:
                    raise BudgetError("too many spanning trees to enumerate")
                return
            if m - idx < need - len(chosen):
                return
            u, v = self.edges[idx]

            def find(a, par):
                while par[a] != a:
                    a = par[a]
                return a

            ru, rv = find(u, parent), find(v, parent)
            if ru != rv:
                par2 = list(parent)
                par2[ru] = rv
                chosen.append(idx)
                rec(idx + 1, chosen, par2)
                chosen.pop()
            rec(idx + 1, chosen, parent)

        rec(0, [], list(range(n)))
        return out

    def enumerate_support(self, budget=200_000):
        trees = self.spanning_trees(budget)
        pts = np.zeros((len(trees), self.dimension), dtype=np.int64)
        for k, t in enumerate(trees):
            pts[k, list(t)] = 1
        return pts, pts @ self.edge_log_weights


class EvaluationOracle(CountingOracle):
    """A bare ``y -> log g_p(e^y)`` evaluator; gradients come from interpolation."""

    def __init__(self, log_eval_fn, dimension, degree_bounds, degree_offsets=None,
                 diameter=None, log_cardinality=None, bit_complexity=None, unary_complexity=1):
        self._fn = log_eval_fn
        self.dimension = int(dimension)
        self.degree_bounds = np.asarray(degree_bounds, dtype=np.int64)
        self.degree_offsets = (np.zeros(self.dimension, dtype=np.int64) if degree_offsets is None
                               else np.asarray(degree_offsets, dtype=np.int64))
        self.diameter = (float(np.linalg.norm(self.degree_bounds)) if diameter is None
                         else float(diameter))
        self._logcard = log_cardinality
        self._lp = bit_complexity
        self.unary_complexity = unary_complexity

    def log_eval(self, y):
        return float(self._fn(self._check_y(y)))

    def log_cardinality(self):
        if self._logcard is None:
            return float(np.sum(np.log(self.degree_bounds + 1.0)))
        return self._logcard

    def bit_complexity(self):
        if self._lp is None:
            raise ValidationError("bit complexity must be supplied for a bare evaluation oracle")
        return self._lp


def _orthonormal_span(vecs, m):
    if not vecs:
        return np.zeros((m, 0))
    M = np.array(vecs).T
    u, sv, _ = np.linalg.svd(M, full_matrices=False)
    k = int(np.sum(sv > 1e-10 * sv[0]))
    return u[:, :k]


def _chebyshev_nodes(k):
    j = np.arange(k)
    return np.cos((2 * j + 1) * np.pi / (2 * k))


def normalized_interpolated_derivative(oracle, y, i):
    """``sum_a a_i q^y_a`` from evaluations of ``t -> g(.., e^{y_i} + t, ..)`` only.

    Evaluations are taken as ratios ``g(...)/g(e^y)`` so nothing overflows; the
    polynomial in ``s = t e^{-y_i}`` is fitted in a Chebyshev basis on ``s in [0, 1]``.
    """
    y = np.asarray(y, dtype=float)
    lo = int(oracle.degree_offsets[i])
    D = int(oracle.degree_bounds[i])
    if D == 0:
        return float(lo)
    base = oracle.log_eval(y)
    u = _chebyshev_nodes(D + 1)
    s = 0.5 * (u + 1.0)
    vals = np.empty(D + 1)
    for k, sk in enumerate(s):
        yk = y.copy()
        yk[i] += math.log1p(sk)
        vals[k] = math.exp(oracle.log_eval(yk) - base) * (1.0 + sk) ** (-lo)
    V = np.polynomial.chebyshev.chebvander(u, D)
    lu, piv = scipy.linalg.lu_factor(V, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() < PIVOT_TOL * pivots.max():
        raise NumericalError("interpolation system is ill-conditioned",
                             {"coordinate": i, "degree": D, "min_pivot": float(pivots.min()),
                              "max_pivot": float(pivots.max())})
    coef = scipy.linalg.lu_solve((lu, piv), vals, check_finite=False)
    # d/ds = 2 d/du, evaluated at s = 0 <=> u = -1
    dP = 2.0 * np.polynomial.chebyshev.chebval(-1.0, np.polynomial.chebyshev.chebder(coef))
    P0 = np.polynomial.chebyshev.chebval(-1.0, coef)
    return float(lo * P0 + dP)


def gradient_by_interpolation(oracle, y, i):
    """Coordinate ``i`` of the unnormalized gradient ``sum_a a_i p_a e^{<a,y>}``."""
    y = oracle._check_y(y)
    return math.exp(oracle.log_eval(y)) * normalized_interpolated_derivative(oracle, y, i)
