"""Stability of max-entropy distributions under marginal perturbation, and the boundary-sampling demo."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binom

from maxent.dual import SolveOptions, radius_bound, solve_dual
from maxent.errors import DomainError, MaxEntError
from maxent.oracles import ExplicitOracle
from maxent.support import facets_from_support, tv_distance

STABILITY_COLUMNS = ("instance_id", "eps", "theta_dist", "tv", "bound", "margin",
                     "iters1", "iters2")


@dataclass(frozen=True)
class StabilityRow:
    instance_id: str
    eps: float
    theta_dist: float  # l1
    theta_dist_l2: float
    tv: float
    bound: float
    iters1: int
    iters2: int
    status: str = "ok"

    @property
    def margin(self):
        return self.bound - self.tv

    @property
    def violated(self):
        return self.status == "ok" and self.tv > self.bound

    def as_tuple(self):
        return (self.instance_id, self.eps, self.theta_dist, self.tv, self.bound,
                self.margin, self.iters1, self.iters2)


@dataclass
class StabilityRun:
    instance_id: str
    seed: int
    rows: list = field(default_factory=list)
    counterexamples: list = field(default_factory=list)

    @property
    def violations(self):
        return [r for r in self.rows if r.violated]

    @property
    def failures(self):
        return [r for r in self.rows if r.status != "ok"]

    def table(self):
        return [STABILITY_COLUMNS] + [r.as_tuple() for r in self.rows]


def max_entropy_primal(report):
    """Best available primal: the face solution on boundary marginals, otherwise ``q^y``."""
    return report.q_face if report.q_face is not None else report.q


def stability_bound(oracle, facets, eps):
    rb = radius_bound(oracle.dimension, facets.unary_complexity, oracle.bit_complexity(),
                      oracle.log_cardinality(), eps)
    return math.sqrt(rb.radius * eps)


def solve_tolerance(eps):
    return min(1e-2 * eps, 1e-8)


def stability_pair(oracle, facets, theta1, theta2, eps, instance_id="instance", options=None):
    """Solve both marginals and compare ``|q1 - q2|_1`` with ``sqrt(R(eps) eps)``."""
    tol = solve_tolerance(eps)
    # the gap alone leaves the marginal of q^y about sqrt(tol) off; ask for a small gradient too
    base = options or SolveOptions()
    options = replace(base, grad_tol=base.grad_tol if base.grad_tol is not None else 1e-2 * tol)
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    r1 = solve_dual(oracle, t1, tol, facets=facets, options=options)
    r2 = solve_dual(oracle, t2, tol, facets=facets, options=options)
    tv = tv_distance(max_entropy_primal(r1), max_entropy_primal(r2))
    return StabilityRow(instance_id, eps, float(np.abs(t1 - t2).sum()),
                        float(np.linalg.norm(t1 - t2)), tv, stability_bound(oracle, facets, eps),
                        r1.iterations, r2.iterations)


def sample_marginal(points, rng):
    """Dirichlet(1) mixture over up to ``m + 1`` random support points."""
    P = np.asarray(points, dtype=float)
    k = min(P.shape[0], P.shape[1] + 1)
    idx = rng.choice(P.shape[0], size=k, replace=False)
    w = rng.dirichlet(np.ones(k))
    return w @ P[idx]


def perturbed_pair(points, eps, rng, tries=50):
    """``theta1`` plus ``theta2`` at exact l1 distance ``eps``, both inside the hull.

    ``theta2`` moves from ``theta1`` toward a second sampled point, so convexity
    keeps it feasible.
    """
    for _ in range(tries):
        t1 = sample_marginal(points, rng)
        z = sample_marginal(points, rng)
        d = float(np.abs(z - t1).sum())
        if d >= eps:
            return t1, t1 + (eps / d) * (z - t1)
    return None


def stability_experiment(oracle, num_pairs=200, eps_grid=(1e-2, 1e-4, 1e-6), seed=0,
                         facets=None, instance_id="instance", options=None):
    """Measured ``|q^{theta1} - q^{theta2}|_1`` against ``sqrt(R eps)`` over random pairs.

    Each pair draws from its own generator keyed by ``(seed, eps index, pair
    index)``, so any subset of rows can be recomputed independently.
    """
    if not isinstance(oracle, ExplicitOracle):
        raise DomainError("stability experiments need an explicit support")
    facets = facets if facets is not None else facets_from_support(oracle.points)
    run = StabilityRun(instance_id, seed)
    for ei, eps in enumerate(eps_grid):
        for k in range(num_pairs):
            rng = np.random.default_rng([seed, ei, k])
            pair = perturbed_pair(oracle.points, eps, rng)
            if pair is None:
                run.rows.append(StabilityRow(instance_id, eps, math.nan, math.nan, math.nan,
                                             math.nan, 0, 0, "no_pair"))
                continue
            try:
                row = stability_pair(oracle, facets, *pair, eps, instance_id, options)
            except MaxEntError as exc:
                run.rows.append(StabilityRow(instance_id, eps, eps, math.nan, math.nan,
                                             math.nan, 0, 0, type(exc).__name__))
                continue
            run.rows.append(row)
            if row.violated:
                run.counterexamples.append({
                    "instance_id": instance_id, "eps": eps,
                    "theta1": pair[0].tolist(), "theta2": pair[1].tolist(),
                    "support": oracle.points.tolist(),
                    "log_weights": oracle.log_weights.tolist(),
                    "tv": row.tv, "bound": row.bound,
                })
    return run


def loglog_slope(eps, tv):
    """Least-squares slope of ``log tv`` against ``log eps``."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(tv, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# -- boundary demo ---------------------------------------------------------

@dataclass(frozen=True)
class BoundaryRun:
    m: int
    n_samples: int
    trials: int
    seed: int
    off_boundary: int
    closed_form: float  # 1 - (1 - 1/(2^{m-1}+1))^N
    exact: float  # exact probability for this family and facet description

    @property
    def fraction(self):
        return self.off_boundary / self.trials

    def standard_error(self, p=None):
        p = self.closed_form if p is None else p
        return math.sqrt(p * (1.0 - p) / self.trials)

    def z_score(self, p=None):
        p = self.closed_form if p is None else p
        se = self.standard_error(p)
        return (self.fraction - p) / se if se > 0 else (0.0 if self.fraction == p else math.inf)

    def within(self, k=3.0, p=None):
        return abs(self.z_score(p)) <= k

    def to_dict(self):
        return {
            "m": self.m, "N": self.n_samples, "trials": self.trials, "seed": self.seed,
            "off_boundary": self.off_boundary, "fraction": self.fraction,
            "closed_form": self.closed_form, "z_closed_form": self.z_score(),
            "exact": self.exact, "z_exact": self.z_score(self.exact),
        }


def boundary_family(m):
    """``({0} x {0,1}^{m-1}) ∪ {e_1}`` as integer rows, ``e_1`` last."""
    k = m - 1
    grid = (np.arange(2 ** k)[:, None] >> np.arange(k - 1, -1, -1)[None, :]) & 1
    rows = np.hstack([np.zeros((2 ** k, 1), dtype=np.int64), grid.astype(np.int64)])
    e1 = np.zeros((1, m), dtype=np.int64)
    e1[0, 0] = 1
    return np.vstack([rows, e1])


def boundary_closed_form(m, n):
    return 1.0 - (1.0 - 1.0 / (2 ** (m - 1) + 1)) ** n


def boundary_exact(m, n):
    """Probability the mean avoids every facet of ``{0 <= x_1 <= 1, 0 <= x_i <= 1 - x_1}``.

    With ``k`` draws of ``e_1`` (``0 < k < N``), each other coordinate sums
    ``N - k`` fair bits and is off both of its facets unless all bits agree.
    """
    p = 1.0 / (2 ** (m - 1) + 1)
    total = 0.0
    for k in range(1, n):
        free = n - k
        total += binom.pmf(k, n, p) * (1.0 - 2.0 ** (1 - free)) ** (m - 1)
    return float(total)


def _off_boundary(sums, n):
    s1 = sums[:, :1]
    rest = sums[:, 1:]
    on = (s1[:, 0] == 0) | (s1[:, 0] == n)
    on |= np.any((rest == 0) | (rest == n - s1), axis=1)
    return ~on


def boundary_demo(m, n, trials, seed=0, chunk=10_000):
    """Fraction of trials whose empirical mean of ``n`` uniform draws is off the boundary.

    Facet tests are done on integer coordinate sums, so they are exact.
    """
    if m < 2:
        raise DomainError("m must be at least 2")
    if not 1 <= n <= 2 ** m:
        raise DomainError("need 1 <= N <= 2^m")
    if trials < 1:
        raise DomainError("trials must be positive")
    k = m - 1
    size = 2 ** k + 1
    shifts = np.arange(k - 1, -1, -1)
    off = 0
    for ci, start in enumerate(range(0, trials, chunk)):
        t = min(chunk, trials - start)
        rng = np.random.default_rng([seed, ci])
        idx = rng.integers(0, size, size=(t, n))
        is_e1 = idx == size - 1
        bits = (idx[..., None] >> shifts) & 1
        bits[is_e1] = 0
        sums = np.empty((t, m), dtype=np.int64)
        sums[:, 0] = is_e1.sum(axis=1)
        sums[:, 1:] = bits.sum(axis=1)
        off += int(_off_boundary(sums, n).sum())
    return BoundaryRun(m, n, trials, seed, off, boundary_closed_form(m, n), boundary_exact(m, n))
