"""Fully connected ReLU^s vector fields and their exact derivatives.

The field takes (x, t) with t appended as an extra input coordinate and
returns a d-vector, optionally multiplied componentwise by the boundary
mask eta(x) = x*(1-x) so that flows cannot leave the unit cube.

Differentiation is hand-rolled over the fixed layer graph:
  * reverse mode for gradients with respect to parameters and inputs,
  * forward mode (one tangent column per spatial axis) for the exact
    Jacobian trace needed by the divergence,
  * a joint reverse pass through both chains for gradients of the
    divergence itself (second-order terms via sigma'').

Also houses the exact B-spline / product-network constructions and the
closed-form capacity and Lipschitz constant calculators.
"""

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .errors import InvalidArgumentError, NumericalOverflowError


# ---------------------------------------------------------------------------
# architecture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    """Layer widths (d_0, ..., d_{L+1}) and the activation power s."""

    widths: tuple
    activation_power: int = 2

    def __post_init__(self):
        if len(self.widths) < 2:
            raise InvalidArgumentError("an architecture needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise InvalidArgumentError(f"widths must be positive, got {self.widths}")
        if self.activation_power < 1:
            raise InvalidArgumentError("activation power must be >= 1")

    @property
    def hidden_depth(self):
        return len(self.widths) - 2

    @property
    def width(self):
        return max(self.widths)

    @property
    def param_count(self):
        return sum(i * o + o for i, o in zip(self.widths[:-1], self.widths[1:]))


def hypothesis_architecture(dim, hidden_depth, width, activation_power=2):
    """Architecture (d+1, W, ..., W, d) of the admissible vector-field class."""
    if width < dim + 1:
        raise InvalidArgumentError(f"width {width} must be >= dim + 1 = {dim + 1}")
    if hidden_depth < 1:
        raise InvalidArgumentError("need at least one hidden layer")
    widths = (dim + 1,) + (width,) * hidden_depth + (dim,)
    arch = Architecture(widths, activation_power)
    # the 2*L*W^2 parameter envelope only holds once there are >= 2 hidden
    # layers (there are L+1 affine maps, so L = 1 can exceed it)
    if hidden_depth >= 2:
        assert arch.param_count <= 2 * hidden_depth * width * width
    return arch


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu_power(x, s):
    """max(x, 0)**s; s = 0 is the (closed-left) unit step used by B-splines."""
    x = np.asarray(x, dtype=float)
    if s == 0:
        return (x >= 0).astype(float)
    return np.maximum(x, 0.0) ** s


def _act(a, s):
    return np.maximum(a, 0.0) ** s if s > 1 else np.maximum(a, 0.0)


def _act_d1(a, s):
    r = np.maximum(a, 0.0)
    if s == 1:
        return (a > 0).astype(float)
    if s == 2:
        return 2.0 * r
    return s * r ** (s - 1)


def _act_d2(a, s):
    if s == 1:
        return np.zeros_like(a)
    if s == 2:
        return 2.0 * (a > 0).astype(float)
    return s * (s - 1) * np.maximum(a, 0.0) ** (s - 2)


# ---------------------------------------------------------------------------
# the vector field
# ---------------------------------------------------------------------------


class MlpVectorField:
    """ReLU^s network v(x, t) with parameters constrained to [-1, 1]^q.

    Parameters live in one flat vector; per-layer weight matrices are
    views into it, so in-place updates of `theta` stay consistent.
    Evaluation is pure given a parameter snapshot; `clone` hands
    concurrent readers an independent copy.
    """

    def __init__(self, arch, theta=None, mask_enabled=True, rng=None,
                 linear_test_mode=False):
        self.arch = arch
        self.dim = arch.widths[-1]
        self.mask_enabled = mask_enabled
        self.linear_test_mode = linear_test_mode
        if mask_enabled and arch.widths[0] != self.dim + 1:
            raise InvalidArgumentError(
                f"masked field needs input width dim+1, got {arch.widths[0]} for dim {self.dim}"
            )
        q = arch.param_count
        if theta is None:
            rng = rng or np.random.default_rng()
            r = min(1.0, 1.0 / math.sqrt(arch.width))
            theta = rng.uniform(-r, r, size=q)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (q,):
            raise InvalidArgumentError(f"theta must have shape ({q},), got {theta.shape}")
        self._theta = theta.copy()
        self._build_views()

    def _build_views(self):
        self.layers = []
        o = 0
        for din, dout in zip(self.arch.widths[:-1], self.arch.widths[1:]):
            w = self._theta[o : o + din * dout].reshape(dout, din)
            o += din * dout
            b = self._theta[o : o + dout]
            o += dout
            self.layers.append((w, b))

    @property
    def theta(self):
        return self._theta

    def set_theta(self, theta):
        self._theta[:] = theta

    def project_theta(self):
        np.clip(self._theta, -1.0, 1.0, out=self._theta)

    def clone(self):
        return MlpVectorField(
            self.arch, self._theta.copy(), self.mask_enabled,
            linear_test_mode=self.linear_test_mode,
        )

    # -- plumbing ----------------------------------------------------------

    def _stack_input(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tcol = np.broadcast_to(np.asarray(t, dtype=float), (len(x),)).reshape(-1, 1)
        return x, np.concatenate([x, tcol], axis=1)

    def _sigma(self, a):
        if self.linear_test_mode:
            return a
        return _act(a, self.arch.activation_power)

    def _sigma_d1(self, a):
        if self.linear_test_mode:
            return np.ones_like(a)
        return _act_d1(a, self.arch.activation_power)

    def _sigma_d2(self, a):
        if self.linear_test_mode:
            return np.zeros_like(a)
        return _act_d2(a, self.arch.activation_power)

    # -- forward -----------------------------------------------------------

    def forward(self, x, t):
        """Field value; shape follows the input (single point or batch)."""
        single = np.ndim(x) == 1
        v = self._forward_cached(x, t, need_tangents=False)[0]
        return v[0] if single else v

    __call__ = forward

    def _forward_cached(self, x, t, need_tangents):
        x2, u = self._stack_input(x, t)
        d = self.dim
        zs = [u]
        avals = []
        tangents = None
        if need_tangents:
            t0 = np.zeros((len(u), u.shape[1], d))
            t0[:, :d, :] = np.eye(d)
            tz = [t0]
            ta = []
        z = u
        for li, (w, b) in enumerate(self.layers):
            with np.errstate(invalid="ignore", over="ignore"):
                a = z @ w.T + b
            if not np.all(np.isfinite(a)):
                raise NumericalOverflowError(
                    f"non-finite activation in layer {li}", layer=li
                )
            avals.append(a)
            if need_tangents:
                at = np.matmul(w, tz[-1])
                ta.append(at)
            if li < len(self.layers) - 1:
                z = self._sigma(a)
                zs.append(z)
                if need_tangents:
                    tz.append(self._sigma_d1(a)[:, :, None] * at)
        raw = avals[-1]
        eta = x2 * (1.0 - x2)
        etap = 1.0 - 2.0 * x2
        v = raw * eta if self.mask_enabled else raw

        cache = {
            "x": x2, "zs": zs, "avals": avals, "raw": raw,
            "eta": eta, "etap": etap,
        }
        if need_tangents:
            cache["tz"] = tz
            cache["ta"] = ta
            j_raw = ta[-1]
            if self.mask_enabled:
                jac = eta[:, :, None] * j_raw
                idx = np.arange(d)
                jac[:, idx, idx] += etap * raw
            else:
                jac = j_raw
            cache["j_raw"] = j_raw
            cache["jac"] = jac
            cache["div"] = np.trace(jac, axis1=1, axis2=2)
        return v, cache

    def value_jacobian_divergence(self, x, t):
        """Field value, spatial Jacobian and its exact trace, batched."""
        v, cache = self._forward_cached(x, t, need_tangents=True)
        return v, cache["jac"], cache["div"]

    def divergence(self, x, t):
        """Exact spatial divergence via d forward-mode passes."""
        single = np.ndim(x) == 1
        div = self._forward_cached(x, t, need_tangents=True)[1]["div"]
        return float(div[0]) if single else div

    def forward_with_cache(self, x, t, need_tangents=False):
        return self._forward_cached(x, t, need_tangents)

    # -- reverse mode ------------------------------------------------------

    def vjp(self, cache, lam_v=None, lam_div=None):
        """Gradient of sum_b [lam_v . v + lam_div * div] w.r.t. (theta, x).

        lam_div requires the cache to have been built with tangents.
        Returns (grad_theta flat, grad_x (B, d)).
        """
        d = self.dim
        zs, avals = cache["zs"], cache["avals"]
        raw, eta, etap = cache["raw"], cache["eta"], cache["etap"]
        batch = len(raw)
        if lam_v is None:
            lam_v = np.zeros((batch, d))
        lam_v = np.atleast_2d(lam_v)

        with_div = lam_div is not None
        if with_div:
            lam_div = np.asarray(lam_div, dtype=float).reshape(batch, 1)
            if "ta" not in cache:
                raise InvalidArgumentError("divergence VJP needs a tangent-bearing cache")
            tz, ta, j_raw = cache["tz"], cache["ta"], cache["j_raw"]

        if self.mask_enabled:
            r_a = lam_v * eta
            if with_div:
                r_a = r_a + lam_div * etap
        else:
            r_a = lam_v.copy()
        if with_div:
            r_t = np.zeros((batch, d, d))
            idx = np.arange(d)
            r_t[:, idx, idx] = lam_div * (eta if self.mask_enabled else 1.0)

        gtheta = np.zeros_like(self._theta)
        o_end = len(self._theta)
        gx = None
        for li in range(len(self.layers) - 1, -1, -1):
            w, b = self.layers[li]
            dout, din = w.shape
            z = zs[li]
            gw = r_a.T @ z
            gb = r_a.sum(axis=0)
            if with_div:
                gw = gw + np.einsum("bod,bid->oi", r_t, tz[li])
            o_b = o_end - dout
            o_w = o_b - din * dout
            gtheta[o_w:o_b] = gw.ravel()
            gtheta[o_b:o_end] = gb
            o_end = o_w

            r_z = r_a @ w
            if with_div:
                r_tz = np.matmul(w.T, r_t)
            if li > 0:
                a_prev = avals[li - 1]
                sp = self._sigma_d1(a_prev)
                r_a = sp * r_z
                if with_div:
                    spp = self._sigma_d2(a_prev)
                    r_a = r_a + spp * np.sum(r_tz * ta[li - 1], axis=2)
                    r_t = sp[:, :, None] * r_tz
            else:
                gx = r_z[:, :d].copy()

        if self.mask_enabled:
            gx += lam_v * raw * etap
            if with_div:
                gx += lam_div * (etap * np.einsum("bii->bi", j_raw) - 2.0 * raw)
        return gtheta, gx


def backward(net, x, t, output_cotangent):
    """Reverse-mode gradients of cotangent . v(x, t) w.r.t. theta and x."""
    _, cache = net.forward_with_cache(x, t)
    lam = np.atleast_2d(np.asarray(output_cotangent, dtype=float))
    return net.vjp(cache, lam_v=lam)


# ---------------------------------------------------------------------------
# B-splines and product networks
# ---------------------------------------------------------------------------


def bspline_eval(s, j, x):
    """Degree-s B-spline on integer knots via the signed ReLU^s sum."""
    if s < 0:
        raise InvalidArgumentError("spline degree must be >= 0")
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for k in range(s + 2):
        acc += (-1) ** k * math.comb(s + 1, k) * relu_power(x - (j + k), s)
    return acc / math.factorial(s)


def bspline_recursive(s, j, x):
    """Cox-de Boor recursion on integer knots; reference for bspline_eval."""
    if s < 0:
        raise InvalidArgumentError("spline degree must be >= 0")
    x = np.asarray(x, dtype=float)
    if s == 0:
        return ((x >= j) & (x < j + 1)).astype(float)
    left = (x - j) / s * bspline_recursive(s - 1, j, x)
    right = (j + s + 1 - x) / s * bspline_recursive(s - 1, j + 1, x)
    return left + right


@dataclass(frozen=True)
class BSpline:
    """Degree-s normalized B-spline with support [shift, shift + s + 1]."""

    degree: int
    shift: int = 0

    def __call__(self, x):
        return bspline_eval(self.degree, self.shift, x)

    @property
    def support(self):
        return (self.shift, self.shift + self.degree + 1)


class ProductGadgetNetwork:
    """One-hidden-layer ReLU^s network computing the product of s inputs.

    Hidden width 2^(s+1): one unit per sign pattern a in {0,1}^s and per
    orientation of the polarization identity; output weights +-1/s!.
    """

    def __init__(self, s):
        if s < 1:
            raise InvalidArgumentError("product power must be >= 1")
        self.s = s
        patterns = []
        signs = []
        for bits in range(2**s):
            a = np.array([(bits >> i) & 1 for i in range(s)], dtype=float)
            patterns.append(a)
            signs.append((-1) ** (s - int(a.sum())))
        pat = np.array(patterns)
        sgn = np.array(signs, dtype=float)
        self.w_hidden = np.vstack([pat, -pat])
        self.b_hidden = np.zeros(2 ** (s + 1))
        self.w_out = np.concatenate([sgn, (-1) ** s * sgn]) / math.factorial(s)
        self.arch = Architecture((s, 2 ** (s + 1), 1), activation_power=s)

    def __call__(self, xs):
        xs = np.asarray(xs, dtype=float)
        hidden = relu_power(self.w_hidden @ xs + self.b_hidden, self.s)
        return float(self.w_out @ hidden)


def product_gadget(s, xs):
    """Product of the inputs through the explicit ReLU^s network.

    Fewer than s inputs are padded with ones (the identity-padding trick
    used to reach a full power-of-s input count).
    """
    xs = list(np.atleast_1d(np.asarray(xs, dtype=float)))
    if len(xs) > s:
        raise InvalidArgumentError(f"gadget of power {s} takes at most {s} inputs")
    xs = xs + [1.0] * (s - len(xs))
    return ProductGadgetNetwork(s)(np.array(xs))


def tensor_bspline_network(s, shifts, x):
    """Tensor-product B-spline evaluated purely through network pieces.

    Each univariate factor is the signed ReLU^s sum; the factors are then
    multiplied by the product gadget (padded with ones when there are
    fewer than s of them).
    """
    vals = [float(bspline_eval(s, j, xi)) for j, xi in zip(shifts, x)]
    return product_gadget(s, vals)


# ---------------------------------------------------------------------------
# capacity / Lipschitz constant calculators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapacityConstants:
    """Closed-form parameter-Lipschitz constants, in logs (mpmath values).

    The L = 1 case of the inner constant has an ill-defined exponent; it is
    evaluated at its degenerate value (C = 1) and flagged.
    """

    log_lip0: object
    log_lip1: object
    log_c: object
    log_lbar_bound: object
    log_d_bound: object
    degenerate: bool


def capacity_constants(hidden_depth, width, dim, c_d=1.0, c_dkl=1.0, dps=50):
    """Evaluate Lip0, Lip1, C and the subgaussian/bounded-difference envelopes.

    All returns are natural logarithms as mpmath floats; the doubly
    exponential envelopes overflow any fixed-size float in linear scale.
    c_d and c_dkl are the non-explicit constants of the envelope bounds.
    """
    L, W, d = hidden_depth, width, dim
    if L < 1 or W < 1 or d < 1:
        raise InvalidArgumentError("hidden_depth, width and dim must all be >= 1")
    with mp.workdps(dps):
        two_w = mp.mpf(2 * W)
        dp1 = mp.mpf(d + 1)
        lip0 = mp.mpf(L) * two_w ** (2 ** (L + 2) + 2 * L - 3) * dp1 ** (2**L)
        degenerate = L == 1
        if degenerate:
            c_const = mp.mpf(1)
        else:
            c_const = two_w ** (2**L - 2) * dp1 ** (2 ** (L - 2))
        w2 = mp.mpf(W) ** 2
        inner = 8 * w2 * c_const + 2 * w2 * lip0 + 2 * W * (c_const + 1)
        lip1 = mp.mpf(L) / 4 * ((two_w**2) * c_const) ** (L - 1) * inner + lip0
        envelope = (mp.mpf(c_d) * W) ** (2 ** (2 * L + 3))
        log_env = mp.log(mp.mpf(c_dkl)) + envelope
        return CapacityConstants(
            log_lip0=mp.log(lip0),
            log_lip1=mp.log(lip1),
            log_c=mp.log(c_const),
            log_lbar_bound=log_env,
            log_d_bound=log_env,
            degenerate=degenerate,
        )


def requ_architecture(k, d, p, resolution, holder_norm):
    """Width/depth/weight-count recipe guaranteeing simultaneous C^l
    approximation of C^{k,alpha} targets at the given spline resolution."""
    if k < 2 or d < 1 or p < 1 or resolution < 2:
        raise InvalidArgumentError("need k >= 2, d >= 1, p >= 1, resolution >= 2")
    K = resolution
    width = max(4 * d * (K + k) ** d, 12 * ((K + 2 * k) + 1), p)
    loglog = math.log2(math.log2(holder_norm)) if holder_norm > 2.0 else 0.0
    inner = max(math.ceil(math.log2(2 * d * k + d)), loglog, 1.0)
    layers = 6 + 2 * (k - 2) + math.ceil(math.log2(d)) + 2 * inner
    c_count = (60 * max(math.ceil(max(math.log2(2 * d * k + d), loglog)), 1) + 38) \
        + 20 * d**2 + 144 * d * k + 8 * d
    return {
        "width": width,
        "hidden_layers": layers,
        "weight_count_factor": c_count,
        "nonzero_weight_bound": p * (K + k) ** d * c_count,
    }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "flowquad-net"
_CKPT_VERSION = 1


def save_checkpoint(net, path):
    """Versioned text checkpoint: architecture line, then one value per line."""
    with open(path, "w") as fh:
        fh.write(f"{_CKPT_MAGIC} {_CKPT_VERSION}\n")
        widths = " ".join(str(w) for w in net.arch.widths)
        fh.write(
            f"s {net.arch.activation_power} mask {int(net.mask_enabled)} widths {widths}\n"
        )
        for v in net.theta:
            fh.write(f"{v:.17g}\n")


def load_checkpoint(path):
    with open(path) as fh:
        magic = fh.readline().split()
        if magic[:1] != [_CKPT_MAGIC] or int(magic[1]) != _CKPT_VERSION:
            raise InvalidArgumentError(f"not a version-{_CKPT_VERSION} checkpoint: {path}")
        header = fh.readline().split()
        s = int(header[1])
        mask = bool(int(header[3]))
        widths = tuple(int(w) for w in header[5:])
        theta = np.array([float(line) for line in fh if line.strip()])
    arch = Architecture(widths, activation_power=s)
    return MlpVectorField(arch, theta=theta, mask_enabled=mask)
