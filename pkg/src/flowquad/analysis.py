"""Integration through the learned flow and the error decomposition.

The estimate of E_target[qoi] is the sparse grid sum of qoi composed with
the flow.  On synthetic targets the report also measures the split of
the total error: the quadrature part against a dense reference grid and
the learning part as total-variation / KL divergences between the
target and the pushforward density (grid mode, dim <= 2).
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UnsupportedDimensionError
from .flow import flow_forward, log_pushforward_density
from .quadrature import kahan_sum


@dataclass(frozen=True)
class QoI:
    """Quantity of interest with its declared sup norm."""

    evaluate: callable
    sup_norm: float
    name: str = "qoi"
    c1_norm: float = None


def check_qoi_bound(qoi, dim, points_per_axis=33):
    """Probe |qoi| <= sup_norm on a tensor lattice."""
    axes = [np.linspace(0, 1, points_per_axis)] * dim
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    worst = float(np.max(np.abs(qoi.evaluate(pts))))
    if worst > qoi.sup_norm + 1e-9:
        raise InvalidArgumentError(
            f"qoi '{qoi.name}' reaches {worst}, above declared sup {qoi.sup_norm}"
        )
    return worst


def make_qoi(family, dim, params=None):
    params = params or {}
    if family == "coordinate":
        axis = int(params.get("axis", 0))
        if not 0 <= axis < dim:
            raise InvalidArgumentError(f"coordinate axis {axis} outside 0..{dim - 1}")
        return QoI(lambda x: x[:, axis], sup_norm=1.0, name=f"coordinate[{axis}]", c1_norm=1.0)
    if family == "product":
        return QoI(lambda x: np.prod(x, axis=1), sup_norm=1.0, name="product")
    if family == "cos_product":
        return QoI(
            lambda x: np.prod(np.cos(x), axis=1), sup_norm=1.0, name="cos_product"
        )
    if family == "abs_product":
        return QoI(
            lambda x: np.prod(np.abs(x - 0.5), axis=1),
            sup_norm=0.5**dim,
            name="abs_product",
        )
    if family == "constant":
        return QoI(lambda x: np.ones(len(x)), sup_norm=1.0, name="constant")
    raise InvalidArgumentError(f"unknown qoi family '{family}'")


# ---------------------------------------------------------------------------
# dense reference grids
# ---------------------------------------------------------------------------


def _tensor_gauss(dim, points_per_axis):
    gx, gw = np.polynomial.legendre.leggauss(points_per_axis)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    mesh = np.meshgrid(*([gx] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    wt = gw
    for _ in range(dim - 1):
        wt = np.multiply.outer(wt, gw)
    return pts, wt.ravel()


def reference_expectation(target, qoi, points_per_axis=129):
    """Dense-grid value of E_target[qoi] (dim <= 3)."""
    if target.dim > 3:
        raise UnsupportedDimensionError("dense reference grid is limited to dim <= 3")
    pts, wt = _tensor_gauss(target.dim, points_per_axis)
    return float(np.dot(wt, qoi.evaluate(pts) * target.evaluate(pts)))


def pullback_integral_oracle(fm, qoi, source, points_per_axis=129):
    """Dense-grid value of the integral of qoi(flow(x)) against the source."""
    if fm.dim > 3:
        raise UnsupportedDimensionError("dense reference grid is limited to dim <= 3")
    pts, wt = _tensor_gauss(fm.dim, points_per_axis)
    mapped = flow_forward(fm, pts)
    return float(np.dot(wt, qoi.evaluate(mapped) * source.evaluate(pts)))


# ---------------------------------------------------------------------------
# the estimate and its error pieces
# ---------------------------------------------------------------------------


def integrate_via_flow(grid, fm, qoi, threads=1):
    """Sparse-grid estimate sum_j w_j qoi(flow(xi_j)).

    Flow evaluation fans out over contiguous node blocks when threads > 1;
    the weighted reduction is compensated and fixed-order either way.
    """
    nodes = grid.nodes
    if threads > 1 and len(nodes) > 1:
        blocks = np.array_split(np.arange(len(nodes)), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: flow_forward(fm, nodes[idx]), blocks))
        mapped = np.concatenate(parts, axis=0)
    else:
        mapped = flow_forward(fm, nodes)
    vals = qoi.evaluate(mapped)
    return kahan_sum(grid.weights * vals)


def total_error(reference, estimate):
    return abs(reference - estimate)


def quadrature_error_measured(grid, fm, qoi, source, oracle=None, points_per_axis=129):
    """|dense-grid pullback integral - sparse-grid estimate|."""
    if oracle is None:
        oracle = pullback_integral_oracle(fm, qoi, source, points_per_axis)
    return abs(oracle - integrate_via_flow(grid, fm, qoi))


def _model_log_density(fm, source, pts):
    return log_pushforward_density(fm, source, pts)


def kl_estimate(target, fm, source, mode="grid", points_per_axis=65, samples=None):
    """KL(target || pushforward).  Grid mode (dim <= 2) integrates densely;
    MC mode averages over provided fresh target samples and returns a
    standard error."""
    if mode == "grid":
        if target.dim > 2:
            raise UnsupportedDimensionError("grid KL estimate is limited to dim <= 2")
        pts, wt = _tensor_gauss(target.dim, points_per_axis)
        f_t = target.evaluate(pts)
        log_ratio = np.log(f_t) - _model_log_density(fm, source, pts)
        return float(np.dot(wt, f_t * log_ratio)), None
    if mode == "mc":
        if samples is None:
            raise InvalidArgumentError("MC mode needs fresh target samples")
        samples = np.atleast_2d(samples)
        vals = np.log(target.evaluate(samples)) - _model_log_density(fm, source, samples)
        return float(np.mean(vals)), float(np.std(vals) / math.sqrt(len(vals)))
    raise InvalidArgumentError(f"unknown KL mode {mode!r}")


def tv_estimate(target, fm, source, points_per_axis=65):
    """Total variation distance (half the L1 gap) on a dense grid, dim <= 2."""
    if target.dim > 2:
        raise UnsupportedDimensionError("grid TV estimate is limited to dim <= 2")
    pts, wt = _tensor_gauss(target.dim, points_per_axis)
    f_t = target.evaluate(pts)
    f_m = np.exp(_model_log_density(fm, source, pts))
    return 0.5 * float(np.dot(wt, np.abs(f_t - f_m)))


def pinsker_check(tv, kl, slack=5e-3):
    return tv <= math.sqrt(max(kl, 0.0) / 2.0) + slack


def decomposition_check(total, qoi_sup, tv, quad, slack=5e-3):
    return total <= qoi_sup * tv + quad + slack


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_HEADER = "n,level,m_nodes,total,quad,tv,kl,seed"


@dataclass
class ErrorReport:
    """Measured error split of one experiment at one grid level."""

    total_error: float
    quadrature_error: float
    learning_error_tv_bound: float
    kl_estimate: float
    reference_value: float
    estimate: float
    dim: int
    level: int
    node_count: int
    sample_size: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        payload = {
            "total_error": self.total_error,
            "quadrature_error": self.quadrature_error,
            "learning_error_tv_bound": self.learning_error_tv_bound,
            "kl_estimate": self.kl_estimate,
            "reference_value": self.reference_value,
            "estimate": self.estimate,
            "dim": self.dim,
            "level": self.level,
            "node_count": self.node_count,
            "sample_size": self.sample_size,
            "seed": self.seed,
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(**d)

    def csv_row(self):
        cells = [
            str(self.sample_size),
            str(self.level),
            str(self.node_count),
            f"{self.total_error:.17g}",
            f"{self.quadrature_error:.17g}",
            f"{self.learning_error_tv_bound:.17g}",
            f"{self.kl_estimate:.17g}",
            str(self.seed),
        ]
        return ",".join(cells)


def append_reports(path, reports):
    with open(path, "a") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def read_reports(path):
    with open(path) as fh:
        return [ErrorReport.from_json(line) for line in fh if line.strip()]


def write_convergence_csv(path, reports):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rep in reports:
            fh.write(rep.csv_row() + "\n")
