"""Query gradients, gradient-ascent query optimization and stationarity checks."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, KernelNotRegular, MultiQueryUnsupported
from .gp import GpFit, LeaveOneOutPair, as_queries
from .kernels import NngpFc, check_regularity, kernel_diag, kernel_grad_rows, kernel_matrix, kernel_self_grad
from .metrics import VARIANCE_FLOOR, LooModel, scalar_kl


@dataclass(frozen=True)
class GradientReport:
    """Gradient of the single-query KL measure split into three terms.

    With ``r = Sigma / Sigma'`` and ``Delta = mu - mu'``::

        f1 = 0.5 (1 - 1/r) dr
        f2 = Delta dDelta / Sigma'
        f3 = 0.5 Delta^2 d(1/Sigma')
    """

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    total: np.ndarray
    fd_total: Optional[np.ndarray]
    rel_discrepancy: Optional[float]
    kl: float = 0.0


@dataclass(frozen=True)
class UniformBox:
    lo: float = -5.0
    hi: float = 5.0


@dataclass(frozen=True)
class GivenPoint:
    point: tuple


@dataclass(frozen=True)
class GaussianAround:
    point: tuple
    std: float = 1.0


@dataclass(frozen=True)
class OptConfig:
    max_iters: int = 2000
    learning_rate: Optional[float] = None
    grad_tol: float = 1e-6
    project_to_sphere: bool = False
    seed: int = 0
    init: object = field(default_factory=UniformBox)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive")


@dataclass(frozen=True)
class Iterate:
    iteration: int
    query: np.ndarray
    value: float
    grad_norm: float


@dataclass(frozen=True)
class OptTrace:
    iterates: list
    converged: bool
    final_query: np.ndarray
    stop_reason: str = "grad_tol"

    @property
    def final_value(self):
        return self.iterates[-1].value

    def to_dict(self):
        return {
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "final_query": self.final_query.tolist(),
            "final_value": self.final_value,
            "iterates": [
                {"iteration": it.iteration, "query": it.query.tolist(), "value": it.value, "grad_norm": it.grad_norm}
                for it in self.iterates
            ],
        }


# -- gradients ---------------------------------------------------------------


def fd_grad(objective, q, step=None):
    """Central-difference gradient of a scalar ``objective`` at ``q`` (any shape)."""
    q = np.asarray(q, dtype=float)
    if step is None:
        step = 1e-4 * (1.0 + np.linalg.norm(q))
    flat = q.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        out[i] = (objective((flat + e).reshape(q.shape)) - objective((flat - e).reshape(q.shape))) / (2.0 * step)
    return out.reshape(q.shape)


def fd_hessian(objective, x, step):
    """Symmetrized central-difference Hessian of a scalar function of a vector."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    f0 = objective(x)
    h = np.empty((n, n))
    eye = np.eye(n) * step
    for i in range(n):
        h[i, i] = (objective(x + eye[i]) - 2.0 * f0 + objective(x - eye[i])) / step**2
        for j in range(i + 1, n):
            h[i, j] = (
                objective(x + eye[i] + eye[j])
                - objective(x + eye[i] - eye[j])
                - objective(x - eye[i] + eye[j])
                + objective(x - eye[i] - eye[j])
            ) / (4.0 * step**2)
            h[j, i] = h[i, j]
    return h


def _moments_and_grads(spec, fit, q):
    """Predictive mean/variance at one query and their gradients in ``q``."""
    x = fit.data.features
    qm = q[None, :]
    k = kernel_matrix(spec, qm, x)[0]
    dk = kernel_grad_rows(spec, q, x)
    v = fit.solve(k)
    mean = float(k @ fit.weights)
    dmean = dk.T @ fit.weights
    var = float(kernel_diag(spec, qm)[0] - k @ v)
    dvar = kernel_self_grad(spec, q) - 2.0 * dk.T @ v
    return mean, dmean, var, dvar


def _kl_terms(model, q):
    spec = model.spec
    m, dm, var, dvar = _moments_and_grads(spec, model.fit_d, q)
    mp, dmp, varp, dvarp = _moments_and_grads(spec, model.fit_dp, q)
    kl, _ = scalar_kl(m, var, mp, varp)
    var, varp = max(var, VARIANCE_FLOOR), max(varp, VARIANCE_FLOOR)
    r = var / varp
    dr = (dvar * varp - var * dvarp) / varp**2
    delta = m - mp
    ddelta = dm - dmp
    f1 = 0.5 * (1.0 - 1.0 / r) * dr
    f2 = delta * ddelta / varp
    f3 = -0.5 * delta**2 * dvarp / varp**2
    return kl, f1, f2, f3


def _single_query(pair, q):
    q = as_queries(q, pair.base.dim)
    if q.shape[0] != 1:
        raise MultiQueryUnsupported("analytic gradient is implemented for a single query")
    return q[0]


def kl_grad_single(spec, pair, q, with_fd=True, model=None):
    """Analytic gradient of ``KL(f_D(q) || f_D'(q))`` for a single query."""
    model = model or LooModel(spec, pair)
    q = _single_query(pair, q)
    kl, f1, f2, f3 = _kl_terms(model, q)
    total = f1 + f2 + f3
    fd = rel = None
    if with_fd:
        fd = fd_grad(lambda z: model.kl(z[None, :]), q)
        rel = float(np.linalg.norm(total - fd) / (1e-12 + np.linalg.norm(fd)))
    return GradientReport(f1, f2, f3, total, fd, rel, kl)


def _mean_grad(spec, fit_d, s, y_s):
    x = fit_d.data.features
    sm = s[None, :]
    k = kernel_matrix(spec, sm, x)[0]
    v = fit_d.solve(k)
    b = float(k @ v)
    resid = float(y_s - k @ fit_d.weights)
    alpha = 1.0 - b + fit_d.data.noise_variance
    return -(1.0 - b) * resid**2 / alpha**2 * (kernel_grad_rows(spec, s, x).T @ v)


def _require_single(pair):
    if pair.s != 1:
        raise MultiQueryUnsupported("this analysis needs exactly one differing record")


def mean_grad_at_s(spec, pair, check=True, tol=1e-8):
    """Closed-form gradient of the mean-distance measure at ``Q = S``.

    Valid for kernels with unit diagonal and vanishing self-gradient; with
    ``check`` the kernel is verified on ``D'`` first.
    """
    _require_single(pair)
    if check:
        rep = check_regularity(spec, pair.augmented.features, tol)
        if not rep.passed:
            raise KernelNotRegular(
                f"kernel fails regularity (diag dev {rep.max_diag_deviation:.3e}, "
                f"self-grad {rep.max_self_grad_norm:.3e})"
            )
    model = LooModel(spec, pair)
    return _mean_grad(spec, model.fit_d, pair.differing_features[0], pair.differing_labels[0])


# -- optimization ------------------------------------------------------------


def _initial_query(init, q, dim, rng):
    if isinstance(init, UniformBox):
        return rng.uniform(init.lo, init.hi, size=(q, dim))
    if isinstance(init, GivenPoint):
        pts = np.asarray(init.point, dtype=float).reshape(-1, dim)
        if pts.shape[0] not in (1, q):
            raise ConfigError(f"given point has {pts.shape[0]} rows, expected 1 or {q}")
        return np.broadcast_to(pts, (q, dim)).copy()
    if isinstance(init, GaussianAround):
        centre = np.asarray(init.point, dtype=float).reshape(-1, dim)
        return centre + init.std * rng.standard_normal((q, dim))
    raise ConfigError(f"unknown initialization {init!r}")


def _tangential(grad, q):
    norms2 = np.einsum("ij,ij->i", q, q)
    return grad - (np.einsum("ij,ij->i", grad, q) / norms2)[:, None] * q


def _gradient_ascent(value_fn, grad_fn, q0, config, scale_ref, project_radius=None, unit_first_step=False):
    q = q0.copy()
    if project_radius is not None:
        q = q / np.linalg.norm(q, axis=1, keepdims=True) * project_radius[:, None]

    def grad_at(z):
        g = grad_fn(z)
        return _tangential(g, z) if project_radius is not None else g

    value = value_fn(q)
    grad = grad_at(q)
    gnorm = float(np.linalg.norm(grad))
    lr = config.learning_rate
    if lr is None:
        denom = max(gnorm, 1e-300) if unit_first_step else 1.0 + gnorm
        lr = 0.1 * (1.0 + scale_ref) / denom
    iterates = [Iterate(0, q.copy(), value, gnorm)]
    reason = "max_iters"
    for it in range(1, config.max_iters + 1):
        if gnorm <= config.grad_tol:
            break
        step = lr
        accepted = False
        for _ in range(21):
            cand = q + step * grad
            if project_radius is not None:
                cand = cand / np.linalg.norm(cand, axis=1, keepdims=True) * project_radius[:, None]
            v = value_fn(cand)
            if v >= value:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            reason = "no_ascent"
            break
        q, value = cand, v
        grad = grad_at(q)
        gnorm = float(np.linalg.norm(grad))
        iterates.append(Iterate(it, q.copy(), value, gnorm))
    converged = gnorm <= config.grad_tol
    return OptTrace(iterates, converged, q.copy(), "grad_tol" if converged else reason)


def optimize_query(spec, pair, objective="kl", q=1, config=None, model=None):
    """Maximize a LOOD measure over ``q`` query points by gradient ascent.

    A step is halved (up to 20 times) until the objective does not decrease;
    the run stops if no halving helps. The single-query KL uses the analytic
    gradient, every other case central differences.
    """
    config = config or OptConfig()
    if q < 1:
        raise ConfigError("query count must be at least 1")
    if objective not in ("kl", "mean_distance"):
        raise ConfigError(f"unknown objective {objective!r}")
    model = model or LooModel(spec, pair)
    dim = pair.base.dim
    rng = np.random.default_rng(config.seed)
    q0 = _initial_query(config.init, q, dim, rng)

    if objective == "kl":
        value_fn = model.kl
    else:
        value_fn = model.mean_distance
    if objective == "kl" and q == 1:
        def grad_fn(z):
            _, f1, f2, f3 = _kl_terms(model, z[0])
            return (f1 + f2 + f3)[None, :]
    else:
        def grad_fn(z):
            return fd_grad(value_fn, z)

    radius = np.linalg.norm(q0, axis=1) if config.project_to_sphere else None
    return _gradient_ascent(value_fn, grad_fn, q0, config, float(np.linalg.norm(pair.differing_features)), radius)


@dataclass(frozen=True)
class SearchResult:
    point: np.ndarray
    value: float
    traces: list


def _pair_for(data, s, label_fn):
    s = np.asarray(s, dtype=float).reshape(1, -1)
    return LeaveOneOutPair(data, s, [float(label_fn(s[0]))])


def mean_grad_objective(spec, data, label_fn):
    """``|grad_Q M|_{Q=S}|^2`` as a function of the differing point ``S``."""
    fit_d = GpFit(spec, data)

    def objective(s):
        s = np.asarray(s, dtype=float).reshape(-1)
        g = _mean_grad(spec, fit_d, s, float(label_fn(s)))
        return float(g @ g)

    return objective


def find_nonstationary_s(spec, data, label_fn, config=None, restarts=10):
    """Search for the differing point whose mean-distance gradient at ``Q = S`` is largest.

    Runs ``restarts`` independent ascents on ``|grad M|^2`` over ``S`` with
    central-difference gradients; seeds are ``(config.seed, restart)``. The
    objective is tiny in absolute terms, so without an explicit learning rate
    the first step of every run has length ``0.1 (1 + |S_0|)``.
    Returns the best point found together with every trace.
    """
    config = config or OptConfig()
    rep = check_regularity(spec, data.features, 1e-8) if data.n else None
    if rep is not None and not rep.passed:
        raise KernelNotRegular("kernel fails regularity on the data")
    objective = mean_grad_objective(spec, data, label_fn)

    def value_fn(z):
        return objective(z[0])

    def grad_fn(z):
        return fd_grad(value_fn, z)

    traces = []
    for r in range(restarts):
        rng = np.random.default_rng([config.seed, r])
        s0 = _initial_query(config.init, 1, data.dim, rng)
        traces.append(
            _gradient_ascent(value_fn, grad_fn, s0, config, float(np.linalg.norm(s0)), unit_first_step=True)
        )
    best = max(traces, key=lambda t: t.final_value)
    return SearchResult(best.final_query[0], best.final_value, traces)


@dataclass(frozen=True)
class StationarityReport:
    passed: bool
    analytic_norm: float
    fd_norm: float
    tangential: bool
    regularity_passed: bool
    cause: Optional[str]

    def to_dict(self):
        return {
            "passed": self.passed,
            "analytic_norm": self.analytic_norm,
            "fd_norm": self.fd_norm,
            "tangential": self.tangential,
            "regularity_passed": self.regularity_passed,
            "cause": self.cause,
        }


def verify_stationarity(spec, pair, tol=1e-5, fd_tol=1e-3):
    """Check that ``Q = S`` is a stationary point of the single-query KL measure.

    For sphere-normalized NNGP kernels only the tangential component is
    tested; the radial direction is flat by construction.
    """
    _require_single(pair)
    s = pair.differing_features[0]
    rep = kl_grad_single(spec, pair, s[None, :])
    analytic, fd = rep.total, rep.fd_total
    tangential = isinstance(spec, NngpFc) and spec.normalize_inputs
    if tangential:
        analytic = _tangential(analytic[None, :], s[None, :])[0]
        fd = _tangential(fd[None, :], s[None, :])[0]
    reg = check_regularity(spec, pair.augmented.features, 1e-8)
    a_norm, f_norm = float(np.linalg.norm(analytic)), float(np.linalg.norm(fd))
    passed = a_norm <= tol and f_norm <= fd_tol
    cause = None
    if not passed:
        cause = "kernel not regular" if not reg.passed else "gradient above tolerance"
    return StationarityReport(passed, a_norm, f_norm, tangential, reg.passed, cause)


@dataclass(frozen=True)
class HessianReport:
    hessian: np.ndarray
    eigenvalues: np.ndarray
    max_eigenvalue: float
    negative_definite: bool

    def to_dict(self):
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "max_eigenvalue": self.max_eigenvalue,
            "negative_definite": self.negative_definite,
            "hessian": self.hessian.tolist(),
        }


def hessian_report(objective, x, step):
    h = fd_hessian(objective, x, step)
    h = 0.5 * (h + h.T)
    eig = np.linalg.eigvalsh(h)
    return HessianReport(h, eig, float(eig[-1]), bool(eig[-1] < 0))


def hessian_check(spec, pair, step=None):
    """Central-difference Hessian of the mean-distance measure at ``Q = S``."""
    _require_single(pair)
    model = LooModel(spec, pair)
    s = pair.differing_features[0]
    if step is None:
        step = 1e-3 * (1.0 + np.linalg.norm(s))
    return hessian_report(lambda z: model.mean_distance(z[None, :]), s, step)


@dataclass(frozen=True)
class ScanPoint:
    x: float
    kl: float
    mean_distance: float


def perturbation_scan(spec, pair, direction, xs):
    """LOOD measures along ``Q = S + x * direction``."""
    _require_single(pair)
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.shape[0] != pair.base.dim:
        raise ConfigError("direction dimension does not match the data")
    if np.max(np.abs(direction)) > 1.0:
        raise ConfigError("direction must lie in the unit max-norm ball")
    model = LooModel(spec, pair)
    s = pair.differing_features[0]
    out = []
    for x in xs:
        rep = model.report((s + float(x) * direction)[None, :])
        out.append(ScanPoint(float(x), rep.kl, rep.mean_distance))
    return out
