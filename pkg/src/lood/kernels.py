"""Kernel families, Gram matrices and input-gradients.

Four families are supported: squared-distance RBF, a scaled linear kernel,
correlation kernels ``g(cos angle)`` and the fully connected NNGP kernel.
Gradients are always with respect to the *first* argument.

NNGP convention: the layer-0 covariance is ``<x, x'> / d`` of the (optionally
sphere-normalized, ``x -> sqrt(d) x / |x|``) inputs; each of the ``L`` layers
then applies ``K <- sigma_b^2 + sigma_w^2 E[phi(u) phi(v)]``. Normalized
inputs have unit layer-0 diagonal, so ReLU with ``sigma_w^2 = 2`` keeps
``K(x, x) = 1`` at every depth.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.distance import cdist
from scipy.special import erf, ndtr

from .errors import (
    ConfigError,
    DimensionMismatch,
    NonDifferentiablePoint,
    QuadratureDivergence,
    ZeroNormInput,
)
from .quadrature import DEFAULT_ORDER, bivariate_expectations

_CLAMP = 1.0 - 1e-12
_CS_TOL = 1e-10
_SQRT_2PI = np.sqrt(2.0 * np.pi)


# -- activations ---------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_d1(x):
    return (x > 0).astype(float)


def _relu_d2(x):
    return np.zeros_like(x)


def _npdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _gelu(x):
    return x * ndtr(x)


def _gelu_d1(x):
    return ndtr(x) + x * _npdf(x)


def _gelu_d2(x):
    return _npdf(x) * (2.0 - x * x)


def _tanh_d1(x):
    return 1.0 - np.tanh(x) ** 2


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


def _erf_d1(x):
    return 2.0 / np.sqrt(np.pi) * np.exp(-x * x)


def _erf_d2(x):
    return -4.0 * x / np.sqrt(np.pi) * np.exp(-x * x)


@dataclass(frozen=True)
class Activation:
    name: str
    f: object
    d1: object
    d2: object


ACTIVATIONS = {
    "relu": Activation("relu", _relu, _relu_d1, _relu_d2),
    "gelu": Activation("gelu", _gelu, _gelu_d1, _gelu_d2),
    "tanh": Activation("tanh", np.tanh, _tanh_d1, _tanh_d2),
    "erf": Activation("erf", erf, _erf_d1, _erf_d2),
}

# Correlation profiles g(t) on t in [-1, 1], each with g(1) = 1.
PROFILES = {
    "exponential": (lambda t: np.exp(t - 1.0), lambda t: np.exp(t - 1.0)),
    "quadratic": (lambda t: (0.5 * (1.0 + t)) ** 2, lambda t: 0.5 * (1.0 + t)),
    "linear": (lambda t: 0.5 * (1.0 + t), lambda t: 0.5 * np.ones_like(t)),
}


# -- specs ----------------------------------------------------------------------


@dataclass(frozen=True)
class Rbf:
    """``exp(-|x - x'|^2 / (2 l))``, parameterized on squared distance."""

    length: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigError(f"Rbf length must be positive, got {self.length}")


@dataclass(frozen=True)
class Linear:
    """``scale * <x, x'> / d``."""

    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"Linear scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class Correlation:
    """``g(<x, x'> / (|x| |x'|))`` for a named profile ``g`` with ``g(1) = 1``."""

    profile: str = "exponential"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown correlation profile {self.profile!r}; choose from {sorted(PROFILES)}")


@dataclass(frozen=True)
class NngpFc:
    """Fully connected NNGP kernel of ``depth`` hidden layers."""

    depth: int = 1
    activation: str = "relu"
    weight_variance: float = 2.0
    bias_variance: float = 0.0
    normalize_inputs: bool = True
    quadrature_order: int = DEFAULT_ORDER

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise ConfigError(f"depth must be a positive integer, got {self.depth}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if not self.weight_variance > 0:
            raise ConfigError("weight_variance must be positive")
        if not self.bias_variance >= 0:
            raise ConfigError("bias_variance must be nonnegative")


KernelSpec = Union[Rbf, Linear, Correlation, NngpFc]


@dataclass(frozen=True)
class KernelTriple:
    k_qq: float
    k_qx: float
    k_xx: float


@dataclass(frozen=True)
class RegularityReport:
    max_diag_deviation: float
    max_self_grad_norm: float
    max_self_grad_fd: float
    passed: bool


# -- NNGP layer expectations ----------------------------------------------------


def _check_cauchy_schwarz(a, b, k):
    bad = (k * k > a * b * (1.0 + 1e-8) + _CS_TOL) | (a < -_CS_TOL) | (b < -_CS_TOL)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise QuadratureDivergence(
            f"covariance triple violates Cauchy-Schwarz: k_qq={a.flat[i]:.6g}, "
            f"k_qx={k.flat[i]:.6g}, k_xx={b.flat[i]:.6g}"
        )


def _relu_moments(a, b, k):
    root = np.sqrt(np.maximum(a, 0.0) * np.maximum(b, 0.0))
    pos = root > 0
    c = np.clip(np.where(pos, k / np.where(pos, root, 1.0), 0.0), -_CLAMP, _CLAMP)
    theta = np.arccos(c)
    s = np.sin(theta)
    e = np.where(pos, root * (s + (np.pi - theta) * c) / (2.0 * np.pi), 0.0)
    de_dk = (np.pi - theta) / (2.0 * np.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        de_da = np.where(pos, root * s / (4.0 * np.pi * a), np.inf)
        de_db = np.where(pos, root * s / (4.0 * np.pi * b), np.inf)
    return e, de_da, de_db, de_dk


def _smooth_moments(act, a, b, k, order, grad):
    # canonical argument order makes the result exactly symmetric under a <-> b
    swap = a > b
    lo = np.where(swap, b, a)
    hi = np.where(swap, a, b)
    f, d1, d2 = act.f, act.d1, act.d2
    if not grad:
        (e,) = bivariate_expectations([(f, f)], lo, hi, k, order)
        return e, None, None, None
    e, e_k, e_lo, e_hi = bivariate_expectations([(f, f), (d1, d1), (d2, f), (f, d2)], lo, hi, k, order)
    e_lo, e_hi = 0.5 * e_lo, 0.5 * e_hi
    return e, np.where(swap, e_hi, e_lo), np.where(swap, e_lo, e_hi), e_k


def layer_moments(activation, a, b, k, order=DEFAULT_ORDER, grad=False, closed_form=True):
    """``E[phi(u) phi(v)]`` and its partials in ``(a, b, k)``.

    ``(u, v) ~ N(0, [[a, k], [k, b]])``. ReLU uses the arccosine closed form
    unless ``closed_form`` is false, in which case it goes through quadrature.
    Returns ``(E, dE/da, dE/db, dE/dk)``; the partials are ``None`` when
    ``grad`` is false.
    """
    a, b, k = (np.asarray(v, dtype=float) for v in np.broadcast_arrays(a, b, k))
    _check_cauchy_schwarz(a, b, k)
    act = ACTIVATIONS[activation]
    if activation == "relu" and closed_form:
        e, da, db, dk = _relu_moments(a, b, k)
        return (e, da, db, dk) if grad else (e, None, None, None)
    return _smooth_moments(act, a, b, k, order, grad)


def diag_moments(activation, a, order=DEFAULT_ORDER):
    """``E[phi(u)^2]`` for ``u ~ N(0, a)`` and its derivative in ``a``."""
    a = np.asarray(a, dtype=float)
    act = ACTIVATIONS[activation]
    if activation == "relu":
        return 0.5 * a, np.full_like(a, 0.5)
    f, d1, d2 = act.f, act.d1, act.d2
    e, e1, e2 = bivariate_expectations([(f, f), (d1, d1), (f, d2)], a, a, a, order)
    return e, e1 + e2


def nngp_depth_recursion(spec, base):
    """Push a layer-0 :class:`KernelTriple` through ``spec.depth`` layers."""
    a = np.array([base.k_qq], dtype=float)
    k = np.array([base.k_qx], dtype=float)
    b = np.array([base.k_xx], dtype=float)
    wv, bv = spec.weight_variance, spec.bias_variance
    for _ in range(spec.depth):
        e, _, _, _ = layer_moments(spec.activation, a, b, k, spec.quadrature_order)
        ea, _ = diag_moments(spec.activation, a, spec.quadrature_order)
        eb, _ = diag_moments(spec.activation, b, spec.quadrature_order)
        a, k, b = bv + wv * ea, bv + wv * e, bv + wv * eb
    return KernelTriple(float(a[0]), float(k[0]), float(b[0]))


def edge_of_chaos(activation, q_star=1.0, order=DEFAULT_ORDER):
    """``(sigma_w^2, sigma_b^2)`` with fixed point ``q_star`` and unit slope at c = 1.

    Solves ``sigma_w^2 E[phi'(u)^2] = 1`` and
    ``sigma_b^2 + sigma_w^2 E[phi(u)^2] = q_star`` with ``u ~ N(0, q_star)``.
    """
    act = ACTIVATIONS[activation]
    q = float(q_star)
    e_d1 = bivariate_expectations([(act.d1, act.d1)], q, q, q, order)[0][0]
    e_f = bivariate_expectations([(act.f, act.f)], q, q, q, order)[0][0]
    wv = 1.0 / e_d1
    bv = q - wv * e_f
    if bv < -1e-12:
        raise ConfigError(f"no nonnegative bias variance gives fixed point {q} for {activation}")
    return wv, max(bv, 0.0)


def depth_limit_fixed_point(spec, x0=0.0):
    """Correlation fixed point of a normalized NNGP map other than ``c = 1``, if any."""

    def excess(c):
        e = layer_moments(spec.activation, 1.0, 1.0, c, spec.quadrature_order)[0]
        return spec.bias_variance + spec.weight_variance * e - c

    try:
        return brentq(excess, -1.0 + 1e-9, 1.0 - 1e-6)
    except ValueError:
        return None


# -- layer-0 quantities ---------------------------------------------------------


def _as_matrix(x, d=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a matrix of inputs, got shape {x.shape}")
    if d is not None and x.shape[1] != d:
        raise DimensionMismatch(f"input dimension {x.shape[1]} does not match {d}")
    return x


def _norms(x):
    n = np.sqrt(np.einsum("ij,ij->i", x, x))
    if np.any(n == 0):
        raise ZeroNormInput("normalized kernel evaluated at a zero vector")
    return n


def _layer0(spec, x):
    """Layer-0 features ``x`` (sphere-normalized if requested)."""
    if spec.normalize_inputs:
        return np.sqrt(x.shape[1]) * x / _norms(x)[:, None]
    return x


def _diag_sequence(spec, a0):
    """Self-covariances at every layer, shape ``(depth + 1, n)``."""
    seq = [a0]
    wv, bv = spec.weight_variance, spec.bias_variance
    for _ in range(spec.depth):
        e, _ = diag_moments(spec.activation, seq[-1], spec.quadrature_order)
        seq.append(bv + wv * e)
    return np.array(seq)


def _nngp_matrix(spec, x, z):
    d = x.shape[1]
    fx, fz = _layer0(spec, x), _layer0(spec, z)
    ax = _diag_sequence(spec, np.einsum("ij,ij->i", fx, fx) / d)
    az = _diag_sequence(spec, np.einsum("ij,ij->i", fz, fz) / d)
    k = fx @ fz.T / d
    wv, bv = spec.weight_variance, spec.bias_variance
    for layer in range(spec.depth):
        a = np.broadcast_to(ax[layer][:, None], k.shape)
        b = np.broadcast_to(az[layer][None, :], k.shape)
        e, _, _, _ = layer_moments(spec.activation, a, b, k, spec.quadrature_order)
        k = bv + wv * e
    return k


# -- public evaluation ----------------------------------------------------------


def kernel_matrix(spec, x, z):
    """Gram block ``K(x_i, z_j)``; exactly symmetric when ``x is z``."""
    x = _as_matrix(x)
    z = _as_matrix(z, x.shape[1])
    d = x.shape[1]
    if x.shape[0] == 0 or z.shape[0] == 0:
        return np.zeros((x.shape[0], z.shape[0]))
    if isinstance(spec, Rbf):
        k = np.exp(-cdist(x, z, "sqeuclidean") / (2.0 * spec.length))
    elif isinstance(spec, Linear):
        k = spec.scale * (x @ z.T) / d
    elif isinstance(spec, Correlation):
        g, _ = PROFILES[spec.profile]
        c = (x @ z.T) / np.outer(_norms(x), _norms(z))
        k = g(np.clip(c, -1.0, 1.0))
    elif isinstance(spec, NngpFc):
        k = _nngp_matrix(spec, x, z)
    else:
        raise ConfigError(f"unsupported kernel spec {spec!r}")
    if x is z:
        k = 0.5 * (k + k.T)
    return k


def kernel_eval(spec, x, y):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel arguments have shapes {x.shape} and {y.shape}")
    return float(kernel_matrix(spec, x[None, :], y[None, :])[0, 0])


def kernel_diag(spec, x):
    """``K(x_i, x_i)`` for every row."""
    x = _as_matrix(x)
    d = x.shape[1]
    if isinstance(spec, (Rbf, Correlation)):
        if isinstance(spec, Correlation):
            _norms(x)
        return np.ones(x.shape[0])
    if isinstance(spec, Linear):
        return spec.scale * np.einsum("ij,ij->i", x, x) / d
    f = _layer0(spec, x)
    return _diag_sequence(spec, np.einsum("ij,ij->i", f, f) / d)[-1]


def _nngp_grad_rows(spec, q, x):
    """Gradients of ``K(q, x_i)`` and of ``K(q, q)`` by forward accumulation."""
    d = q.shape[0]
    qm = q[None, :]
    fx = _layer0(spec, x)
    if spec.normalize_inputs:
        nq = _norms(qm)[0]
        fq = np.sqrt(d) * q / nq
        jac = np.sqrt(d) * (np.eye(d) / nq - np.outer(q, q) / nq**3)
        a = np.array(1.0) * (fq @ fq) / d
        da = np.zeros(d)
        dk = fx @ jac / d
    else:
        fq = q
        a = np.array(q @ q / d)
        da = 2.0 * q / d
        dk = x / d
    k = fx @ fq / d
    bseq = _diag_sequence(spec, np.einsum("ij,ij->i", fx, fx) / d)
    wv, bv = spec.weight_variance, spec.bias_variance
    for layer in range(spec.depth):
        b = bseq[layer]
        if not a > 0:
            raise NonDifferentiablePoint("zero self-covariance: kernel is not differentiable at this query")
        aa = np.full_like(k, a)
        e, e_a, _, e_k = layer_moments(spec.activation, aa, b, k, spec.quadrature_order, grad=True)
        dk = wv * (e_a[:, None] * da[None, :] + e_k[:, None] * dk)
        ed, ed_a = diag_moments(spec.activation, np.atleast_1d(a), spec.quadrature_order)
        da = wv * ed_a[0] * da
        k = bv + wv * e
        a = bv + wv * ed[0]
    return dk, da


def kernel_grad_rows(spec, q, x):
    """``d K(q, x_i) / dq`` for every row of ``x``, shape ``(n, d)``."""
    q = np.asarray(q, dtype=float).reshape(-1)
    x = _as_matrix(x, q.shape[0])
    d = q.shape[0]
    if x.shape[0] == 0:
        return np.zeros((0, d))
    if isinstance(spec, Rbf):
        diff = q[None, :] - x
        k = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * spec.length))
        return -diff / spec.length * k[:, None]
    if isinstance(spec, Linear):
        return spec.scale * x / d
    if isinstance(spec, Correlation):
        _, dg = PROFILES[spec.profile]
        nq = _norms(q[None, :])[0]
        nx = _norms(x)
        dots = x @ q
        c = np.clip(dots / (nq * nx), -1.0, 1.0)
        dc = (x - (dots / nq**2)[:, None] * q[None, :]) / (nq * nx)[:, None]
        return dg(c)[:, None] * dc
    if isinstance(spec, NngpFc):
        return _nngp_grad_rows(spec, q, x)[0]
    raise ConfigError(f"unsupported kernel spec {spec!r}")


def kernel_grad_q(spec, q, x):
    """``d K(q, x) / dq``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return kernel_grad_rows(spec, q, x)[0]


def kernel_self_grad(spec, q):
    """Total derivative ``d K(q, q) / dq`` (both arguments move)."""
    q = np.asarray(q, dtype=float).reshape(-1)
    d = q.shape[0]
    if isinstance(spec, (Rbf, Correlation)):
        return np.zeros(d)
    if isinstance(spec, Linear):
        return 2.0 * spec.scale * q / d
    if spec.normalize_inputs:
        _norms(q[None, :])
        return np.zeros(d)
    return _nngp_grad_rows(spec, q, q[None, :])[1]


def central_difference(fn, x, step):
    """Central differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        out[i] = (fn((flat + e).reshape(x.shape)) - fn((flat - e).reshape(x.shape))) / (2.0 * step)
    return out.reshape(x.shape)


def check_regularity(spec, samples, tol=1e-10):
    """Check ``K(x, x) = 1`` and a vanishing self-gradient over ``samples``."""
    samples = _as_matrix(samples)
    if samples.shape[0] == 0:
        raise ConfigError("regularity check needs at least one sample")
    diag_dev = float(np.max(np.abs(kernel_diag(spec, samples) - 1.0)))
    grad_norm = 0.0
    grad_fd = 0.0
    for x in samples:
        g = kernel_grad_q(spec, x, x)
        grad_norm = max(grad_norm, float(np.linalg.norm(g)))
        step = 1e-5 * (1.0 + np.linalg.norm(x))
        g_fd = central_difference(lambda q: kernel_eval(spec, q, x), x, step)
        grad_fd = max(grad_fd, float(np.linalg.norm(g_fd)))
    passed = diag_dev <= tol and grad_norm <= tol
    return RegularityReport(diag_dev, grad_norm, grad_fd, passed)
