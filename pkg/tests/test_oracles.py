import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from maxent.errors import BudgetError, DomainError, ValidationError
from maxent.oracles import (EvaluationOracle, ExplicitOracle, ProductFormOracle,
                            SpanningTreeOracle, gradient_by_interpolation,
                            log_tree_sum_by_elimination, matrix_tree_log_det)

from conftest import random_01_polytope


def _expand_product(A, r):
    """Monomials of prod_i (sum_j A_ij x_j)^{r_i} by brute force over every choice sequence."""
    rows = [i for i, ri in enumerate(r) for _ in range(int(ri))]
    coeffs = {}
    for choice in itertools.product(range(A.shape[1]), repeat=len(rows)):
        c = np.prod([A[i, j] for i, j in zip(rows, choice)])
        if c == 0:
            continue
        key = tuple(np.bincount(choice, minlength=A.shape[1]))
        coeffs[key] = coeffs.get(key, 0.0) + c
    pts = np.array(sorted(coeffs))
    return pts, np.log([coeffs[tuple(p)] for p in pts])


def test_explicit_oracle_against_direct_sums():
    rng = np.random.default_rng(1)
    P = random_01_polytope(rng, 4)
    w = rng.normal(size=P.shape[0])
    o = ExplicitOracle(P, w)
    y = rng.normal(size=4)
    s = w + P @ y
    assert o.log_eval(y) == pytest.approx(logsumexp(s), abs=1e-12)
    q = np.exp(s - logsumexp(s))
    assert o.log_gradient(y) == pytest.approx(q @ P, abs=1e-12)
    cov = (P * q[:, None]).T @ P - np.outer(q @ P, q @ P)
    assert o.log_hessian(y) == pytest.approx(cov, abs=1e-12)
    assert o.probs(y).sum() == pytest.approx(1.0)


def test_product_form_matches_expansion():
    rng = np.random.default_rng(2)
    A = rng.uniform(0.1, 2.0, size=(3, 3))
    A[0, 2] = 0.0
    r = np.array([2, 1, 2])
    o = ProductFormOracle(A, r)
    pts, lw = _expand_product(A, r)
    ours_pts, ours_lw = o.enumerate_support()
    assert np.array_equal(ours_pts, pts)
    assert ours_lw == pytest.approx(lw, abs=1e-12)
    ex = ExplicitOracle(pts, lw)
    for _ in range(5):
        y = rng.normal(size=3)
        assert o.log_eval(y) == pytest.approx(ex.log_eval(y), abs=1e-12)
        assert o.log_gradient(y) == pytest.approx(ex.log_gradient(y), abs=1e-12)
        assert o.log_hessian(y) == pytest.approx(ex.log_hessian(y), abs=1e-10)
    assert o.contains_marginal(ex.log_gradient(np.zeros(3)))
    assert o.contains_marginal(np.array([5.0, 0.0, 0.0]))
    assert not o.contains_marginal(np.array([0.0, 0.0, 5.0]))  # row 0 cannot reach column 2


def test_spanning_tree_counts():
    # K4 has 4^2 = 16 spanning trees (Cayley)
    edges = list(itertools.combinations(range(4), 2))
    o = SpanningTreeOracle(4, edges)
    assert math.exp(o.log_cardinality()) == pytest.approx(16.0)
    assert len(o.spanning_trees()) == 16
    # by symmetry each of the 6 edges carries 3/6 of a 3-edge tree
    assert o.log_gradient(np.zeros(6)) == pytest.approx(np.full(6, 0.5))
    with pytest.raises(DomainError):
        SpanningTreeOracle(4, [(0, 1), (2, 3)])
    with pytest.raises(ValidationError):
        SpanningTreeOracle(3, [(0, 1), (1, 5)])


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_tree_elimination_agrees_with_lu(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    edges = [(i, int(rng.integers(0, i))) for i in range(1, n)]
    edges += [tuple(map(int, rng.integers(0, n, 2))) for _ in range(int(rng.integers(0, 6)))]
    w = rng.uniform(-4, 4, len(edges))
    assert log_tree_sum_by_elimination(n, edges, w) == pytest.approx(
        matrix_tree_log_det(n, edges, w), abs=1e-10)


def test_spanning_tree_wide_weights_stay_accurate():
    # path 0-1-2 plus a parallel edge: trees are {a, c}, {b, c}
    edges = [(0, 1), (0, 1), (1, 2)]
    w = np.array([400.0, -400.0, 10.0])
    o = SpanningTreeOracle(3, edges, w)
    y = np.zeros(3)
    assert o.log_eval(y) == pytest.approx(np.logaddexp(410.0, -390.0), abs=1e-12)
    assert o.log_gradient(y) == pytest.approx([1.0, math.exp(-800.0), 1.0], abs=1e-15)


def test_evaluation_oracle_interpolated_gradient():
    rng = np.random.default_rng(3)
    P = rng.integers(0, 4, size=(12, 3))
    P = np.unique(P, axis=0)
    ex = ExplicitOracle(P, rng.normal(size=P.shape[0]))
    ev = EvaluationOracle(ex.log_eval, 3, degree_bounds=P.max(0) - P.min(0),
                          degree_offsets=P.min(0), bit_complexity=ex.bit_complexity())
    for _ in range(5):
        y = rng.normal(size=3)
        assert ev.log_gradient(y) == pytest.approx(ex.log_gradient(y), abs=1e-9)
        raw = gradient_by_interpolation(ev, y, 1)
        assert raw == pytest.approx(math.exp(ex.log_eval(y)) * ex.log_gradient(y)[1], rel=1e-9)
    with pytest.raises(ValidationError):
        EvaluationOracle(ex.log_eval, 3, degree_bounds=[3, 3, 3]).bit_complexity()


def test_input_checks_and_budgets():
    o = ExplicitOracle(np.array([[0], [1]]))
    with pytest.raises(DomainError):
        o.log_eval([0.0, 1.0])
    with pytest.raises(DomainError):
        o.log_eval([np.nan])
    big = ProductFormOracle(np.ones((30, 6)), np.full(30, 3))
    with pytest.raises(BudgetError):
        big.enumerate_support(budget=1000)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_gradient_is_a_marginal_and_hessian_is_psd(seed):
    rng = np.random.default_rng(seed)
    P = random_01_polytope(rng, int(rng.integers(1, 5)))
    o = ExplicitOracle(P, rng.uniform(-3, 3, P.shape[0]))
    y = rng.normal(scale=3.0, size=P.shape[1])
    g = o.log_gradient(y)
    assert np.all(g >= -1e-12) and np.all(g <= 1 + 1e-12)
    H = o.log_hessian(y)
    assert np.linalg.eigvalsh(H).min() >= -1e-12
    assert np.abs(H).max() <= 2 * o.diameter ** 2 + 1e-12
