import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowquad import quadrature as quad
from flowquad.errors import EvaluationError, InvalidArgumentError, InvalidWeightError

SQ2 = math.sqrt(2.0) / 2.0


# ---------------------------------------------------------------------------
# univariate nodes and weights
# ---------------------------------------------------------------------------


def test_cc_nodes_m3_reference():
    np.testing.assert_allclose(quad.cc_nodes(3), [-1.0, 0.0, 1.0], atol=0)


def test_cc_nodes_single_point_is_midpoint():
    np.testing.assert_allclose(quad.cc_nodes(1, (0.0, 1.0)), [0.5])


def test_cc_nodes_m5_chebyshev_extrema():
    # cos(k*pi/4) for k = 4..0
    np.testing.assert_allclose(
        quad.cc_nodes(5), [-1.0, -SQ2, 0.0, SQ2, 1.0], atol=1e-15
    )


def test_cc_nodes_symmetric_and_sorted():
    for m in (3, 5, 9, 17, 33):
        x = quad.cc_nodes(m)
        assert np.all(np.diff(x) > 0)
        np.testing.assert_array_equal(x, -x[::-1])


def test_cc_nodes_invalid_count():
    with pytest.raises(InvalidArgumentError):
        quad.cc_nodes(0)


def test_cc_weights_m3_uniform_closed_form():
    # 3x3 Vandermonde moment system on [-1,1]: w = (1/3, 4/3, 1/3)
    np.testing.assert_allclose(quad.cc_weights(3), [1 / 3, 4 / 3, 1 / 3], atol=1e-14)


def test_cc_weights_m1_probability_density():
    w = quad.cc_weights(1, (0.0, 1.0), weight=lambda x: 2.0 * x)
    np.testing.assert_allclose(w, [1.0], atol=1e-12)


def test_cc_weights_m5_uniform_moments():
    x = quad.cc_nodes(5)
    w = quad.cc_weights(5)
    assert abs(w.sum() - 2.0) < 1e-13
    assert abs(np.dot(w, x**2) - 2.0 / 3.0) < 1e-13
    assert abs(np.dot(w, x**4) - 2.0 / 5.0) < 1e-13


def test_cc_weights_negative_weight_rejected():
    with pytest.raises(InvalidWeightError):
        quad.cc_weights(5, (0.0, 1.0), weight=lambda x: np.cos(3 * np.pi * x))


@pytest.mark.parametrize("m", [1, 3, 5, 9, 17, 33])
def test_uniform_exactness_all_degrees(m):
    # m-point rule integrates x^p, p < m, on [0,1] exactly
    x = quad.cc_nodes(m, (0.0, 1.0))
    w = quad.cc_weights(m, (0.0, 1.0))
    for p in range(m):
        exact = 1.0 / (p + 1)
        err = abs(np.dot(w, x**p) - exact)
        assert err <= 1e-11 * abs(exact), f"m={m} p={p} err={err}"


@pytest.mark.parametrize("m", [1, 3, 5, 9, 17])
def test_weighted_exactness_linear_tilt(m):
    # density 2x on [0,1]: integral of x^p * 2x dx = 2/(p+2)
    x = quad.cc_nodes(m, (0.0, 1.0))
    w = quad.cc_weights(m, (0.0, 1.0), weight=lambda t: 2.0 * t)
    for p in range(m):
        exact = 2.0 / (p + 2)
        assert abs(np.dot(w, x**p) - exact) <= 1e-11 * abs(exact)


def test_weighted_exactness_cosine_density():
    dens = lambda t: 1.0 + 0.5 * np.cos(np.pi * t)

    def exact_moment(p):
        # int_0^1 x^p (1 + 0.5 cos(pi x)) dx by 10_000-panel Simpson (oracle)
        xs = np.linspace(0.0, 1.0, 20001)
        ys = xs**p * dens(xs)
        from scipy.integrate import simpson

        return simpson(ys, x=xs)

    m = 9
    x = quad.cc_nodes(m, (0.0, 1.0))
    w = quad.cc_weights(m, (0.0, 1.0), weight=dens)
    for p in range(m):
        exact = exact_moment(p)
        assert abs(np.dot(w, x**p) - exact) <= 1e-10 * max(1.0, abs(exact))


def test_growth_sequence():
    assert [quad.growth(i) for i in range(1, 7)] == [1, 3, 5, 9, 17, 33]
    with pytest.raises(InvalidArgumentError):
        quad.growth(0)


# ---------------------------------------------------------------------------
# tensorized rules
# ---------------------------------------------------------------------------


def _rules_for(entries, domain=(0.0, 1.0), weight=None):
    return [quad.cc_rule(quad.growth(k), domain, weight) for k in entries]


def test_tensor_rule_midpoint():
    nodes, w = quad.tensor_rule((1, 1), _rules_for((1, 1)))
    np.testing.assert_allclose(nodes, [[0.5, 0.5]])
    np.testing.assert_allclose(w, [1.0], atol=1e-14)


def test_tensor_rule_2x1():
    nodes, w = quad.tensor_rule((2, 1), _rules_for((2, 1)))
    np.testing.assert_allclose(nodes, [[0.0, 0.5], [0.5, 0.5], [1.0, 0.5]])
    assert abs(w.sum() - 1.0) < 1e-12


def test_tensor_rule_2x2_mass():
    nodes, w = quad.tensor_rule((2, 2), _rules_for((2, 2)))
    assert nodes.shape == (9, 2)
    assert abs(w.sum() - 1.0) < 1e-12


def test_tensor_rule_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        quad.tensor_rule((2, 2), _rules_for((2,)))
    with pytest.raises(InvalidArgumentError):
        quad.tensor_rule((2, 2), _rules_for((2, 3)))


# ---------------------------------------------------------------------------
# Smolyak grids
# ---------------------------------------------------------------------------


def brute_force_smolyak_value(dim, level, f, weight=None):
    """Independent oracle: expand the alternating sum of tensor rules directly."""
    q = level + dim
    total = 0.0
    for entries in itertools.product(range(1, q + 1), repeat=dim):
        k = sum(entries)
        if not (q - dim + 1 <= k <= q):
            continue
        coeff = (-1) ** (q - k) * math.comb(dim - 1, q - k)
        nodes, w = quad.tensor_rule(entries, _rules_for(entries, weight=weight))
        vals = np.array([f(x) for x in nodes])
        total += coeff * float(np.dot(w, vals))
    return total


def brute_force_node_union(dim, level):
    """Set-union cardinality of all admissible tensor grids (rounded keys)."""
    q = level + dim
    pts = set()
    for entries in itertools.product(range(1, q + 1), repeat=dim):
        k = sum(entries)
        if not (q - dim + 1 <= k <= q):
            continue
        nodes, _ = quad.tensor_rule(entries, _rules_for(entries))
        for row in nodes:
            pts.add(tuple(np.round(row, 12)))
    return len(pts)


def test_smolyak_d1_collapses_to_univariate():
    for level in range(4):
        grid = quad.smolyak(1, level)
        m = quad.growth(level + 1)
        np.testing.assert_array_equal(grid.nodes.ravel(), quad.cc_nodes(m, (0.0, 1.0)))
        np.testing.assert_allclose(grid.weights, quad.cc_weights(m, (0.0, 1.0)), atol=1e-14)


def test_smolyak_level0_single_node():
    grid = quad.smolyak(2, 0)
    np.testing.assert_allclose(grid.nodes, [[0.5, 0.5]])
    np.testing.assert_allclose(grid.weights, [1.0], atol=1e-14)


def test_smolyak_node_count_matches_union_oracle():
    for dim, level in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)]:
        grid = quad.smolyak(dim, level)
        assert grid.node_count == brute_force_node_union(dim, level)


def test_smolyak_matches_brute_force_on_random_polynomials():
    rng = np.random.default_rng(7)
    for dim, level in [(2, 1), (2, 3), (3, 2)]:
        grid = quad.smolyak(dim, level)
        for _ in range(5):
            coef = rng.uniform(-1, 1, size=(3,) * dim)

            def f(x, coef=coef):
                val = 0.0
                for powers in itertools.product(range(3), repeat=len(x)):
                    val += coef[powers] * np.prod([xi**p for xi, p in zip(x, powers)])
                return val

            ours = quad.apply(grid, f)
            oracle = brute_force_smolyak_value(dim, level, f)
            assert abs(ours - oracle) < 1e-12


def test_smolyak_combination_band_and_coefficients():
    dim, level = 3, 2
    q = dim + level
    grid = quad.smolyak(dim, level)
    for mi, coeff in grid.combination_terms:
        assert q - dim + 1 <= mi.total <= q
        assert coeff == (-1) ** (q - mi.total) * math.comb(dim - 1, q - mi.total)


def test_smolyak_combination_terms_reproduce_unit_mass():
    grid = quad.smolyak(2, 3)
    total = 0.0
    for mi, coeff in grid.combination_terms:
        _, w = quad.tensor_rule(mi, _rules_for(mi.entries))
        total += coeff * w.sum()
    assert abs(total - 1.0) < 1e-12
    assert abs(grid.weights.sum() - 1.0) < 1e-10


def test_smolyak_nesting():
    for dim in (1, 2):
        coarse = quad.smolyak(dim, 1)
        fine = quad.smolyak(dim, 2)
        fine_set = {tuple(row) for row in fine.nodes}
        for row in coarse.nodes:
            assert tuple(row) in fine_set  # exact float match via canonical lattice


def test_smolyak_weighted_probability_mass():
    dens = lambda t: 2.0 * t
    grid = quad.smolyak(2, 2, weights=dens)
    assert abs(grid.weights.sum() - 1.0) < 1e-10


def test_smolyak_distinct_axis_weights():
    w1 = lambda t: 0.5 + t  # normalized linear tilt
    w2 = lambda t: 2.0 * t
    grid = quad.smolyak(2, 3, weights=[w1, w2])
    assert abs(grid.weights.sum() - 1.0) < 1e-10
    # E[x1 * x2^2] factorizes: int x(0.5+x) dx * int x^2 2x dx = (7/12)(1/2)
    got = quad.apply(grid, lambda x: x[0] * x[1] ** 2)
    assert abs(got - (7.0 / 12.0) * 0.5) < 1e-10


def test_node_count_asymptotic_values():
    assert quad.node_count_asymptotic(10, 0) == 1.0
    assert quad.node_count_asymptotic(4, 2) == 32.0
    assert abs(quad.node_count_asymptotic(2, 3) - 32.0 / 3.0) < 1e-12


def test_asymptotic_vs_exact_counts():
    # order-of-magnitude agreement at desk scale
    for dim in (4, 6, 8):
        for level in (1, 2, 3):
            exact = quad.smolyak(dim, level).node_count
            approx = quad.node_count_asymptotic(dim, level)
            ratio = exact / approx
            assert 1 / 3 <= ratio <= 3, (dim, level, exact, approx)


# ---------------------------------------------------------------------------
# apply
# ---------------------------------------------------------------------------


def test_apply_constant_is_total_mass():
    grid = quad.smolyak(3, 2)
    assert abs(quad.apply(grid, lambda x: 1.0) - 1.0) < 1e-10


def test_apply_product_integrand():
    grid = quad.smolyak(2, 2)
    val = quad.apply(grid, lambda x: x[0] * x[1])
    assert abs(val - 0.25) < 1e-12


def test_apply_cosine_product():
    grid = quad.smolyak(2, 4)
    val = quad.apply(grid, lambda x: math.cos(x[0]) * math.cos(x[1]))
    assert abs(val - math.sin(1.0) ** 2) < 1e-8


def test_apply_vectorized_matches_scalar():
    grid = quad.smolyak(2, 3)
    f_scalar = lambda x: math.exp(x[0]) * (1 + x[1])
    f_vec = lambda xs: np.exp(xs[:, 0]) * (1 + xs[:, 1])
    assert abs(quad.apply(grid, f_scalar) - quad.apply(grid, f_vec, vectorized=True)) < 1e-13


def test_apply_nonfinite_reports_node():
    grid = quad.smolyak(2, 1)
    bad = 3

    def f(x, count=[0]):
        count[0] += 1
        return math.nan if count[0] - 1 == bad else 1.0

    with pytest.raises(EvaluationError) as err:
        quad.apply(grid, f)
    assert err.value.node_index == bad


def test_convergence_trend_smooth_integrand():
    # error non-increasing in level up to a 10% tolerance band
    f = lambda x: math.exp(x[0] * x[1])
    xs = np.linspace(0, 1, 513)
    from scipy.integrate import simpson

    inner = np.array([simpson(np.exp(x1 * xs), x=xs) for x1 in xs])
    truth = simpson(inner, x=xs)
    errs = []
    for level in range(1, 7):
        grid = quad.smolyak(2, level)
        errs.append(abs(quad.apply(grid, f) - truth))
    for lo, hi in zip(errs[1:], errs[:-1]):
        assert lo <= 1.1 * hi + 1e-15, errs


@settings(max_examples=30, deadline=None)
@given(
    p=st.integers(min_value=0, max_value=8),
    mi=st.sampled_from([9, 17, 33]),
)
def test_exactness_property_random_monomials(p, mi):
    x = quad.cc_nodes(mi, (0.0, 1.0))
    w = quad.cc_weights(mi, (0.0, 1.0))
    exact = 1.0 / (p + 1)
    assert abs(np.dot(w, x**p) - exact) <= 1e-11 * exact


# ---------------------------------------------------------------------------
# file round trip
# ---------------------------------------------------------------------------


def test_grid_file_roundtrip(tmp_path):
    grid = quad.smolyak(2, 3)
    path = tmp_path / "grid.txt"
    quad.write_grid(grid, path)
    back = quad.read_grid(path)
    assert back.dim == grid.dim and back.level == grid.level
    np.testing.assert_array_equal(back.nodes, grid.nodes)
    np.testing.assert_array_equal(back.weights, grid.weights)
