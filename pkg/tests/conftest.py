import itertools

import mpmath
import numpy as np
import pytest

from maxent.oracles import ExplicitOracle
from maxent.support import affine_hull, facets_from_support


def cube_points(m):
    return np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.int64)


def random_01_polytope(rng, m):
    """Random full-dimensional subset of {0,1}^m with at least m+1 points."""
    cube = cube_points(m)
    while True:
        k = int(rng.integers(m + 1, 2 ** m + 1))
        pts = cube[np.sort(rng.choice(2 ** m, size=k, replace=False))]
        if np.linalg.matrix_rank((pts[1:] - pts[0]).astype(float)) == m:
            return pts


def theta_on_random_face(rng, pts, log_weights=None):
    """Strictly positive mixture of every point of a random face (maximizers of <c, x>)."""
    m = pts.shape[1]
    c = rng.integers(-1, 2, size=m)
    vals = pts @ c
    face = np.nonzero(vals == vals.max())[0]
    w = rng.dirichlet(np.ones(face.size))
    return w @ pts[face].astype(float), face


def brute_force_g(points, log_weights, theta, face, dps=40):
    """High-precision ``inf_y log sum p e^{<a - theta, y>}`` computed on the face only.

    On the face ``theta`` is relative-interior, so the infimum is attained and
    Newton's method in affine-hull coordinates converges quadratically.
    """
    P = np.asarray(points)[face]
    lw = np.asarray(log_weights, dtype=float)[face]
    with mpmath.workdps(dps):
        if P.shape[0] == 1:
            return float(mpmath.mpf(lw[0]))
        _, U = affine_hull(P)
        D = [[mpmath.mpf(float(v)) for v in row] for row in (P - theta) @ U]
        k = U.shape[1]
        w = [mpmath.mpf(float(v)) for v in lw]
        c = mpmath.matrix(k, 1)

        def parts(c):
            e = [w[i] + mpmath.fsum(D[i][j] * c[j] for j in range(k)) for i in range(len(D))]
            top = max(e)
            ex = [mpmath.exp(v - top) for v in e]
            Z = mpmath.fsum(ex)
            q = [v / Z for v in ex]
            f = top + mpmath.log(Z)
            g = mpmath.matrix([mpmath.fsum(q[i] * D[i][j] for i in range(len(D)))
                               for j in range(k)])
            H = mpmath.matrix(k, k)
            for a in range(k):
                for b in range(k):
                    H[a, b] = mpmath.fsum(q[i] * D[i][a] * D[i][b] for i in range(len(D))) - g[a] * g[b]
            return f, g, H

        f, g, H = parts(c)
        for _ in range(200):
            step = mpmath.lu_solve(H, -g)
            t = mpmath.mpf(1)
            while True:
                fn, gn, Hn = parts(c + t * step)
                if fn <= f or t < mpmath.mpf(10) ** (-20):
                    break
                t /= 2
            c = c + t * step
            f, g, H = fn, gn, Hn
            if mpmath.norm(g) < mpmath.mpf(10) ** (-(dps - 10)):
                break
        return float(f)


def polytope_corpus(n=100, seed=2024, max_m=5):
    """Deterministic corpus of (oracle, facets, theta, face) for the radius and witness checks."""
    out = []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        m = int(rng.integers(1, max_m + 1))
        pts = random_01_polytope(rng, m)
        lw = np.round(rng.uniform(-1.0, 1.0, size=pts.shape[0]), 3)
        oracle = ExplicitOracle(pts, lw)
        facets = facets_from_support(pts)
        theta, face = theta_on_random_face(rng, pts)
        out.append((oracle, facets, theta, face))
    return out


@pytest.fixture(scope="session")
def corpus():
    return polytope_corpus()


@pytest.fixture(scope="session")
def corpus_g(corpus):
    return [brute_force_g(o.points, o.log_weights, t, f) for o, _, t, f in corpus]


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one acceptance line, printed at session end."""

    def record(n, passed, detail):
        ACCEPTANCE[n] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
