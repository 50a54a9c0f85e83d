"""Gaussian process regression over dense kernels or SKIP operators.

Two inference modes share one model description:

* ``exact_dense`` builds ``K + sigma^2 I`` and works through its Cholesky
  factor. It is the reference path and is practical up to a few thousand
  points.
* ``skip`` approximates each one-dimensional factor of the kernel with SKI,
  merges them with :func:`skipgp.skip.skip_decompose`, and runs CG and
  stochastic Lanczos quadrature against the resulting operator.

Hyperparameters are handled in log space. Gradients are central finite
differences that reuse identical probe seeds on both sides.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (DimensionError, InitializationError, NonConvergenceError,
                     OutOfRangeError)
from .kernels import KernelSpec, decompose_product, kernel_diag, kernel_matrix
from .krylov import cg_solve, slq_logdet
from .linop import CountingOperator, ScaledIdentity, SumOperator
from .optim import Adam, central_difference
from .ski import build_grid, ski_cross_covariance, ski_operator, ski_prior_variance
from .skip import SkipOperator, skip_decompose

log = logging.getLogger(__name__)

MODES = ("exact_dense", "skip")
LOG_2PI = math.log(2.0 * math.pi)
NOISE_FLOOR = 1e-6
FD_STEP = 1e-4


@dataclass(frozen=True)
class SkipSettings:
    grid_size: int = 100
    rank: int = 100
    num_probes: int = 20
    slq_rank: int = 50
    probe_seed: int = 0
    cg_tol: float = 1e-6
    max_cg_iters: int | None = None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass(frozen=True)
class GpModel:
    kernel: KernelSpec
    noise_variance: float
    constant_mean: float = 0.0
    inference_mode: str = "exact_dense"
    skip: SkipSettings = SkipSettings()

    def __post_init__(self):
        if self.inference_mode not in MODES:
            raise ValueError(f"inference_mode must be one of {MODES}, got {self.inference_mode!r}")
        if not self.noise_variance > 0:
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")

    # log-space parameter vector: [log lengthscales..., log outputscale, log noise]
    def log_params(self):
        return np.concatenate([np.log(self.kernel.lengthscales),
                               [math.log(self.kernel.outputscale), math.log(self.noise_variance)]])

    def with_log_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = len(self.kernel.lengthscales)
        kernel = self.kernel.with_log_params(theta[:k], theta[k])
        return replace(self, kernel=kernel, noise_variance=float(math.exp(theta[k + 1])))

    def param_names(self):
        k = len(self.kernel.lengthscales)
        names = [f"log_lengthscale_{i}" for i in range(k)] if k > 1 else ["log_lengthscale"]
        return names + ["log_outputscale", "log_noise_variance"]

    def to_dict(self):
        return {
            "kernel_family": self.kernel.family,
            "log_lengthscales": [math.log(v) for v in self.kernel.lengthscales],
            "log_outputscale": math.log(self.kernel.outputscale),
            "log_noise_variance": math.log(self.noise_variance),
            "constant_mean": self.constant_mean,
            "inference_mode": self.inference_mode,
            "skip": self.skip.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        kernel = KernelSpec(data["kernel_family"],
                            tuple(np.exp(data["log_lengthscales"])),
                            math.exp(data["log_outputscale"]))
        return cls(kernel=kernel,
                   noise_variance=math.exp(data["log_noise_variance"]),
                   constant_mean=float(data.get("constant_mean", 0.0)),
                   inference_mode=data.get("inference_mode", "exact_dense"),
                   skip=SkipSettings.from_dict(data.get("skip", {})))


def initial_model(X, y, family="RBF", inference_mode="exact_dense", skip=None):
    """Data-driven starting point: lengthscales at the per-dimension spread,
    outputscale at ``var(y)``, noise at a tenth of it, mean at ``mean(y)``."""
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    vy = float(y.var()) if y.size > 1 and y.var() > 0 else 1.0
    return GpModel(KernelSpec(family, tuple(sd), vy), 0.1 * vy, float(y.mean()),
                   inference_mode, skip or SkipSettings())


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


# ---------------------------------------------------------------------------
# backends


@dataclass
class MllDetails:
    value: float
    quadratic: float
    logdet: float
    cg_iterations: int = 0
    slq_clamped: int = 0
    leaf_applies: int = 0
    timings: dict = field(default_factory=dict)


class _DenseBackend:
    def __init__(self, model, X):
        self.model = model
        self.X = X
        t0 = time.perf_counter()
        K = kernel_matrix(model.kernel, X, X)
        K[np.diag_indices_from(K)] += model.noise_variance
        self.chol = scipy.linalg.cho_factor(K, lower=True)
        self.timings = {"decompose": time.perf_counter() - t0}

    def solve(self, b):
        return scipy.linalg.cho_solve(self.chol, b)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol[0]))))

    def cross(self, Xs):
        return kernel_matrix(self.model.kernel, Xs, self.X)

    def prior_var(self, Xs):
        return kernel_diag(self.model.kernel, Xs)


class _SkipBackend:
    def __init__(self, model, X, grid_values=None, seed=None):
        self.model = model
        self.X = X
        s = model.skip
        self.seed = s.probe_seed if seed is None else int(seed)
        t0 = time.perf_counter()
        prod = decompose_product(model.kernel, X.shape[1])
        ref = X if grid_values is None else grid_values
        self.components = []
        self.dims = [comp.active_dimension for comp in prod.components]
        for comp in prod.components:
            dim = comp.active_dimension
            grid = build_grid(ref[:, dim], s.grid_size)
            self.components.append(CountingOperator(ski_operator(comp, X[:, dim], grid=grid)))
        self.tree = skip_decompose(self.components, s.rank, self.seed)
        self.leaf_applies = sum(c.calls for c in self.components)
        n = X.shape[0]
        self.op = SumOperator(SkipOperator(self.tree), ScaledIdentity(n, model.noise_variance))
        self.timings = {"decompose": time.perf_counter() - t0}

    @property
    def grids(self):
        return [c.operator.grid for c in self.components]

    def covers(self, Xs):
        return all(g.covers(Xs[:, d]) for d, g in zip(self.dims, self.grids))

    def solve(self, b, what="solve"):
        s = self.model.skip
        res = cg_solve(self.op, b, tol=s.cg_tol, max_iters=s.max_cg_iters)
        if not res.converged:
            raise NonConvergenceError(f"CG did not converge during {what}",
                                      res.final_relative_residual)
        self.last_cg = res
        return res.solution

    def logdet(self):
        s = self.model.skip
        est = slq_logdet(self.op, s.num_probes, s.slq_rank, self.seed)
        self.last_slq = est
        return est.logdet

    def cross(self, Xs):
        out = None
        for dim, c in zip(self.dims, self.components):
            part = ski_cross_covariance(c.operator, Xs[:, dim])
            out = part if out is None else out * part
        return out

    def prior_var(self, Xs):
        out = None
        for dim, c in zip(self.dims, self.components):
            part = ski_prior_variance(c.operator, Xs[:, dim])
            out = part if out is None else out * part
        return out


def _backend(model, X, seed=None, grid_values=None):
    if model.inference_mode == "exact_dense":
        return _DenseBackend(model, X)
    return _SkipBackend(model, X, grid_values=grid_values, seed=seed)


# ---------------------------------------------------------------------------
# marginal likelihood


def _check_data(X, y):
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise DimensionError(f"{X.shape[0]} inputs for {y.shape[0]} targets")
    return X, y


def mll_details(model, X, y, seed=None):
    X, y = _check_data(X, y)
    n = y.shape[0]
    backend = _backend(model, X, seed=seed)
    r = y - model.constant_mean
    t0 = time.perf_counter()
    alpha = backend.solve(r) if model.inference_mode == "exact_dense" else backend.solve(r, "mll")
    t1 = time.perf_counter()
    logdet = backend.logdet()
    t2 = time.perf_counter()
    quad = float(r @ alpha)
    value = -0.5 * quad - 0.5 * logdet - 0.5 * n * LOG_2PI
    timings = dict(backend.timings, solve=t1 - t0, logdet=t2 - t1)
    details = MllDetails(value, quad, logdet, timings=timings)
    if isinstance(backend, _SkipBackend):
        details.cg_iterations = backend.last_cg.iterations
        details.slq_clamped = backend.last_slq.clamped
        details.leaf_applies = backend.leaf_applies
        if backend.last_slq.clamped:
            log.warning("SLQ clamped %d non-positive Ritz values", backend.last_slq.clamped)
    return details


def mll(model, X, y, seed=None):
    """Log marginal likelihood of ``y`` under ``model``.

    ``seed`` overrides the probe seed of skip mode; it has no effect in
    exact mode.
    """
    return mll_details(model, X, y, seed).value


def mll_gradient(model, X, y, seed=None, step=FD_STEP):
    """Central-difference gradient of :func:`mll` over ``model.log_params()``.

    Both sides of every difference use the same probe seed, so the
    stochastic parts of skip mode largely cancel.
    """
    if seed is None:
        seed = model.skip.probe_seed
    return central_difference(lambda th: mll(model.with_log_params(th), X, y, seed),
                              model.log_params(), step)


# ---------------------------------------------------------------------------
# training


@dataclass
class FitResult:
    model: GpModel
    best_mll: float
    initial_mll: float
    trace: list


def fit(model, X, y, learning_rate=0.1, steps=100, seed=0, callback=None):
    """Maximize the marginal likelihood with Adam in log-hyperparameter space.

    The returned model is the best one seen, including the starting point.
    ``seed`` fixes the probe seed of every evaluation, which keeps the
    skip-mode objective deterministic across steps. The noise variance is
    kept above ``1e-6 * var(y)``.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    X, y = _check_data(X, y)
    vy = float(y.var()) if y.size > 1 else 0.0
    noise_floor = math.log(max(NOISE_FLOOR * vy, 1e-12))

    theta = model.log_params()
    theta[-1] = max(theta[-1], noise_floor)
    current = model.with_log_params(theta)
    value = mll(current, X, y, seed)
    if not np.isfinite(value):
        raise InitializationError(f"marginal likelihood is {value} at the initial hyperparameters")
    best, best_value, initial = current, value, value
    trace = [{"step": 0, "mll": value, "log_params": theta.tolist()}]

    opt = Adam(theta, learning_rate)
    for t in range(1, steps + 1):
        theta = opt.step(mll_gradient(current, X, y, seed))
        theta[-1] = max(theta[-1], noise_floor)
        current = model.with_log_params(theta)
        try:
            value = mll(current, X, y, seed)
        except (NonConvergenceError, np.linalg.LinAlgError) as exc:
            log.warning("step %d: mll evaluation failed (%s)", t, exc)
            value = -np.inf
        trace.append({"step": t, "mll": value, "log_params": theta.tolist()})
        if callback is not None:
            callback(t, value, current)
        if value > best_value:
            best, best_value = current, value
    return FitResult(best, best_value, initial, trace)


# ---------------------------------------------------------------------------
# prediction


@dataclass
class TrainedPosterior:
    model: GpModel
    X: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    backend: object = field(repr=False, default=None)
    seed: int | None = None


def condition(model, X, y, seed=None, grid_values=None):
    """Solve ``(K + sigma^2 I) alpha = y - mu`` once for later predictions."""
    X, y = _check_data(X, y)
    backend = _backend(model, X, seed=seed, grid_values=grid_values)
    alpha = backend.solve(y - model.constant_mean)
    return TrainedPosterior(model, X, y, np.asarray(alpha), backend, seed)


def predict(posterior, Xstar, rebuild_grid=True, batch_size=500, progress=None):
    """Predictive means and variances at ``Xstar``.

    In skip mode, test points outside the training grids either trigger a
    rebuild of the grids over train and test inputs (recomputing the
    posterior) or raise :class:`OutOfRangeError` when ``rebuild_grid`` is
    false. Variances need one CG solve per test point; they run in blocks
    of ``batch_size`` and ``progress(done, total)`` is called after each.
    """
    Xs = _as_2d(Xstar)
    if Xs.shape[1] != posterior.X.shape[1]:
        raise DimensionError(f"test inputs have {Xs.shape[1]} columns, training {posterior.X.shape[1]}")
    model = posterior.model
    backend = posterior.backend
    if model.inference_mode == "skip" and not backend.covers(Xs):
        if not rebuild_grid:
            for i, g in zip(backend.dims, backend.grids):
                lo, hi = g.interior()
                bad = np.flatnonzero((Xs[:, i] < lo) | (Xs[:, i] > hi))
                if bad.size:
                    raise OutOfRangeError(
                        f"test point {int(bad[0])} lies outside the grid of dimension {i}", int(bad[0]))
        union = np.vstack([posterior.X, Xs])
        posterior = condition(model, posterior.X, posterior.y, posterior.seed, grid_values=union)
        backend = posterior.backend

    k = Xs.shape[0]
    means = np.empty(k)
    variances = np.empty(k)
    for start in range(0, k, batch_size):
        sl = slice(start, min(k, start + batch_size))
        Ks = backend.cross(Xs[sl])
        means[sl] = model.constant_mean + Ks @ posterior.alpha
        if model.inference_mode == "exact_dense":
            sol = backend.solve(Ks.T)
        else:
            sol = backend.solve(Ks.T, "prediction")
        variances[sl] = backend.prior_var(Xs[sl]) - np.einsum("ij,ji->i", Ks, sol)
        if progress is not None:
            progress(sl.stop, k)
    return means, np.maximum(variances, 0.0)
