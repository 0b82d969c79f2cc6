"""Clenshaw-Curtis rules, tensorization, and Smolyak sparse grids.

Univariate rules use the Chebyshev-extrema nodes on [-1, 1], mapped
affinely to the requested interval.  Weights are solved from Chebyshev
moment matching (closed-form moments for the uniform weight, reference
quadrature for user densities), so every m-point rule integrates
polynomials of degree < m exactly against its weight.

Sparse grids combine tensor rules over the admissible multi-index band
with alternating binomial coefficients; coincident nodes of the nested
lattice are merged by exact index arithmetic, never by comparing floats.
"""

import math
from dataclasses import dataclass
from itertools import product as iter_product

import numpy as np

from .errors import EvaluationError, InvalidArgumentError, InvalidWeightError

# Nodes with accumulated |weight| below this are dropped from sparse grids.
ZERO_WEIGHT_TOL = 1e-15

_GAUSS_PANEL_ORDER = 8


def _cos_pi_frac(num, den):
    """cos(pi * num / den) with exact symmetry.

    Evaluating the reflected angle for num/den > 1/2 keeps node sets exactly
    symmetric and puts the midpoint at exactly 0.
    """
    if 2 * num == den:
        return 0.0
    if num == 0:
        return 1.0
    if num == den:
        return -1.0
    if 2 * num < den:
        return math.cos(math.pi * num / den)
    return -math.cos(math.pi * (den - num) / den)


def _affine_to(domain, xi):
    a, b = domain
    return 0.5 * (a + b) + 0.5 * (b - a) * xi


def _check_domain(domain):
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise InvalidArgumentError(f"domain must satisfy a < b, got ({a}, {b})")
    return a, b


def growth(level):
    """Closed nonlinear growth: 1 point at level 1, then 2**(i-1) + 1."""
    if level < 1:
        raise InvalidArgumentError(f"growth level must be >= 1, got {level}")
    if level == 1:
        return 1
    return 2 ** (level - 1) + 1


def cc_nodes(m, domain=(-1.0, 1.0)):
    """Ascending Chebyshev-extrema nodes of the m-point rule on `domain`.

    The single-point rule sits at the interval midpoint.
    """
    a, b = _check_domain(domain)
    if m < 1:
        raise InvalidArgumentError(f"point count must be >= 1, got {m}")
    if m == 1:
        return np.array([0.5 * (a + b)])
    n = m - 1
    xi = np.array([_cos_pi_frac(n - j, n) for j in range(m)])
    return _affine_to((a, b), xi)


def _uniform_chebyshev_moments(m):
    # integral of T_k over [-1, 1]: 0 for odd k, 2/(1-k^2) for even k
    mom = np.zeros(m)
    for k in range(0, m, 2):
        mom[k] = 2.0 / (1.0 - k * k)
    return mom


def _weighted_chebyshev_moments(weight, m, domain, panels):
    """Moments of T_k against `weight` via composite Gauss-Legendre panels."""
    a, b = domain
    gx, gw = np.polynomial.legendre.leggauss(_GAUSS_PANEL_ORDER)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    pts = (mid[:, None] + half * gx[None, :]).ravel()
    wts = np.tile(half * gw, panels)

    x_phys = _affine_to((a, b), pts)
    dens = np.asarray(weight(x_phys), dtype=float)
    if dens.shape != pts.shape:
        dens = np.broadcast_to(dens, pts.shape).astype(float)
    if np.any(dens < 0):
        raise InvalidWeightError("weight function is negative on the probe grid")
    # Jacobian of the affine map folds the physical density into [-1, 1].
    dens = dens * (0.5 * (b - a))

    mom = np.empty(m)
    t_prev = np.ones_like(pts)
    t_curr = pts.copy()
    mom[0] = np.dot(wts, dens)
    if m > 1:
        mom[1] = np.dot(wts, dens * t_curr)
    for k in range(2, m):
        t_prev, t_curr = t_curr, 2.0 * pts * t_curr - t_prev
        mom[k] = np.dot(wts, dens * t_curr)
    return mom


def _weights_from_moments(mom):
    """Solve sum_j w_j T_k(xi_j) = mom_k on the Chebyshev-extrema nodes.

    Closed form via DCT-I orthogonality; returns weights for nodes in
    descending order cos(j*pi/n), j = 0..n.
    """
    m = len(mom)
    n = m - 1
    k = np.arange(m)
    halved = mom.copy()
    halved[0] *= 0.5
    halved[n] *= 0.5
    cos_table = np.cos(np.pi * np.outer(np.arange(m), k) / n)
    w = (2.0 / n) * cos_table @ halved
    w[0] *= 0.5
    w[n] *= 0.5
    return w


def cc_weights(m, domain=(-1.0, 1.0), weight=None):
    """Weights of the m-point Clenshaw-Curtis rule on `domain`.

    weight=None integrates against Lebesgue measure (total mass b - a);
    a callable is treated as a nonnegative density on the interval.
    Matches the first m Chebyshev moments of the weight, hence exact for
    all polynomials of degree < m.
    """
    a, b = _check_domain(domain)
    if m < 1:
        raise InvalidArgumentError(f"point count must be >= 1, got {m}")
    if m == 1:
        if weight is None:
            return np.array([b - a])
        total = _weighted_chebyshev_moments(weight, 1, (a, b), panels=max(64, 64 * m))[0]
        return np.array([total])
    if weight is None:
        mom = _uniform_chebyshev_moments(m) * (0.5 * (b - a))
    else:
        mom = _weighted_chebyshev_moments(weight, m, (a, b), panels=64 * m)
    w_desc = _weights_from_moments(mom)
    return w_desc[::-1].copy()  # nodes are reported ascending


@dataclass(frozen=True)
class Rule1D:
    """A univariate quadrature rule: ascending nodes, matching weights."""

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple
    weight_id: str
    point_count: int

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or len(self.nodes) != self.point_count:
            raise InvalidArgumentError("nodes/weights/point_count are inconsistent")
        a, b = self.domain
        if np.any(np.diff(self.nodes) <= 0):
            raise InvalidArgumentError("nodes must be strictly increasing")
        if self.nodes[0] < a - 1e-14 or self.nodes[-1] > b + 1e-14:
            raise InvalidArgumentError("nodes leave the domain")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


def cc_rule(m, domain=(0.0, 1.0), weight=None, weight_id=None):
    """Construct the m-point Clenshaw-Curtis Rule1D on `domain`."""
    if weight_id is None:
        weight_id = "uniform" if weight is None else "custom"
    return Rule1D(
        nodes=cc_nodes(m, domain),
        weights=cc_weights(m, domain, weight),
        domain=tuple(domain),
        weight_id=weight_id,
        point_count=m,
    )


@dataclass(frozen=True)
class MultiIndex:
    """A d-tuple of positive rule levels."""

    entries: tuple

    def __post_init__(self):
        if not self.entries or any(k < 1 for k in self.entries):
            raise InvalidArgumentError(f"multi-index entries must be >= 1, got {self.entries}")

    @property
    def dim(self):
        return len(self.entries)

    @property
    def total(self):
        return sum(self.entries)


def tensor_rule(index, per_dim_rules):
    """Cartesian product of univariate rules with product weights.

    per_dim_rules[i] must carry growth(index_i) points.
    Returns (nodes (M, d), weights (M,)).
    """
    if isinstance(index, MultiIndex):
        entries = index.entries
    else:
        entries = tuple(index)
        index = MultiIndex(entries)
    if len(per_dim_rules) != len(entries):
        raise InvalidArgumentError(
            f"index has {len(entries)} entries but {len(per_dim_rules)} rules were given"
        )
    for i, (k, rule) in enumerate(zip(entries, per_dim_rules)):
        if rule.point_count != growth(k):
            raise InvalidArgumentError(
                f"rule {i} has {rule.point_count} points, expected growth({k}) = {growth(k)}"
            )
    node_axes = [r.nodes for r in per_dim_rules]
    weight_axes = [r.weights for r in per_dim_rules]
    grids = np.meshgrid(*node_axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    w = weight_axes[0]
    for axis in weight_axes[1:]:
        w = np.multiply.outer(w, axis)
    return nodes, w.ravel()


@dataclass(frozen=True)
class SparseGrid:
    """Flat deduplicated node/weight list of a Smolyak rule.

    Weights are signed; combination_terms records the multi-index band and
    alternating coefficients the grid was assembled from.
    """

    dim: int
    level: int
    nodes: np.ndarray
    weights: np.ndarray
    combination_terms: tuple
    domain: tuple = (0.0, 1.0)
    weight_id: str = "uniform"

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def node_count(self):
        return len(self.weights)


def _compositions(total, parts):
    """All tuples of `parts` positive integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _node_ids(m):
    """Canonical (num, den) angle fractions of the m-point rule, ascending order.

    Node value is cos(pi * num / den); fractions are reduced so that nested
    levels share identical ids.
    """
    if m == 1:
        return [(1, 2)]
    n = m - 1
    ids = []
    for j in range(m):
        num, den = n - j, n
        while num % 2 == 0 and den > 1:
            num //= 2
            den //= 2
        ids.append((num, den))
    return ids


def smolyak(dim, level, weights=None, domain=(0.0, 1.0), drop_zero_weights=False):
    """Assemble the sparse grid of the given dimension and sparsity level.

    `weights` is None (uniform), a single density callable used on every
    axis, or a sequence of d per-axis density callables.  The same rule
    family per axis is reused at every level, preserving nesting.

    All deduplicated lattice nodes are kept by default so the node count
    equals the set union of the contributing tensor grids; pass
    drop_zero_weights=True to discard nodes whose accumulated weight
    cancelled to below ZERO_WEIGHT_TOL.
    """
    a, b = _check_domain(domain)
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    if level < 0:
        raise InvalidArgumentError(f"level must be >= 0, got {level}")
    if weights is None or callable(weights):
        per_dim_weight = [weights] * dim
    else:
        per_dim_weight = list(weights)
        if len(per_dim_weight) != dim:
            raise InvalidArgumentError(
                f"got {len(per_dim_weight)} axis weights for dim {dim}"
            )

    q = level + dim
    max_1d_level = q - dim + 1
    rules = []  # rules[i][k-1] = axis-i rule at level k
    for i in range(dim):
        rules.append(
            [cc_rule(growth(k), (a, b), per_dim_weight[i]) for k in range(1, max_1d_level + 1)]
        )
    ids_by_level = [_node_ids(growth(k)) for k in range(1, max_1d_level + 1)]

    accum = {}
    terms = []
    for total in range(max(dim, q - dim + 1), q + 1):
        coeff = (-1) ** (q - total) * math.comb(dim - 1, q - total)
        for entries in _compositions(total, dim):
            terms.append((MultiIndex(entries), coeff))
            axis_ids = [ids_by_level[k - 1] for k in entries]
            axis_weights = [rules[i][k - 1].weights for i, k in enumerate(entries)]
            for combo in iter_product(*(range(len(ids)) for ids in axis_ids)):
                key = tuple(axis_ids[i][j] for i, j in enumerate(combo))
                w = coeff
                for i, j in enumerate(combo):
                    w *= axis_weights[i][j]
                accum[key] = accum.get(key, 0.0) + w

    if drop_zero_weights:
        kept = [(key, w) for key, w in accum.items() if abs(w) >= ZERO_WEIGHT_TOL]
    else:
        kept = list(accum.items())
    nodes = np.array(
        [[_affine_to((a, b), _cos_pi_frac(num, den)) for num, den in key] for key, _ in kept]
    ).reshape(len(kept), dim)
    wvec = np.array([w for _, w in kept])
    order = np.lexsort(nodes.T[::-1])
    nodes = nodes[order]
    wvec = wvec[order]
    weight_id = "uniform" if weights is None else "custom"
    return SparseGrid(
        dim=dim,
        level=level,
        nodes=nodes,
        weights=wvec,
        combination_terms=tuple(terms),
        domain=(a, b),
        weight_id=weight_id,
    )


def node_count_asymptotic(dim, level):
    """Large-d node count estimate (2**l / l!) * d**l for fixed sparsity level."""
    if level < 0:
        raise InvalidArgumentError(f"level must be >= 0, got {level}")
    return (2.0**level / math.factorial(level)) * float(dim) ** level


def kahan_sum(values):
    """Compensated summation in fixed order."""
    total = 0.0
    comp = 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def apply(grid, f, vectorized=False):
    """Evaluate sum_j w_j f(xi_j) with compensated summation.

    With vectorized=True, f maps an (M, d) array to an (M,) array.
    Non-finite integrand values raise EvaluationError with the node index.
    """
    if vectorized:
        vals = np.asarray(f(grid.nodes), dtype=float).ravel()
        if len(vals) != grid.node_count:
            raise InvalidArgumentError("vectorized integrand returned wrong length")
    else:
        vals = np.array([float(f(x)) for x in grid.nodes])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        j = int(bad[0])
        raise EvaluationError(
            f"integrand returned {vals[j]} at node index {j}", node_index=j
        )
    return kahan_sum(grid.weights * vals)


def write_grid(grid, path):
    """Columnar text export: header 'dim level count', one x..x w row per node."""
    with open(path, "w") as fh:
        fh.write(f"{grid.dim} {grid.level} {grid.node_count}\n")
        for x, w in zip(grid.nodes, grid.weights):
            cols = " ".join(f"{v:.17g}" for v in x)
            fh.write(f"{cols} {w:.17g}\n")


def read_grid(path):
    """Read a grid file written by write_grid.

    Combination terms are not stored in the file; the returned grid carries
    an empty combination_terms tuple.
    """
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise InvalidArgumentError(f"malformed grid header in {path}")
        dim, level, count = (int(v) for v in header)
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    if len(rows) != count:
        raise InvalidArgumentError(f"grid file {path} promises {count} nodes, has {len(rows)}")
    data = np.array(rows).reshape(count, dim + 1)
    return SparseGrid(
        dim=dim,
        level=level,
        nodes=data[:, :dim].copy(),
        weights=data[:, dim].copy(),
        combination_terms=(),
    )
