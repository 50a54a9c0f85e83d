"""Multi-task GPs built on fast Hadamard MVMs.

Two models live here.

*Coregionalization*: ``K_multi = K_data o (V M V^T)`` with
``M = B B^T + diag(kappa)`` and ``V`` the one-hot observation-to-task
incidence. The task side is never decomposed: for a Lanczos factor
``Q T Q^T`` of the data kernel,

    [(Q T Q^T o V M V^T) v]_i = q_i . (T Q^T D_v V M)[:, task(i)]

so one MVM costs ``O(n r + s q r)``.

*Cluster MTGP*: tasks carry latent cluster labels ``lam`` and the kernel is
``k_cluster(x, x') [lam_i == lam_j] + k_indiv(x, x') [i == j]``. Both terms
are Hadamard products of a data kernel with an incidence operator (cluster
incidence and task incidence). Labels are resampled by Gibbs sweeps, each
costing ``c * s`` marginal likelihood evaluations.

Cluster labels are 0-based throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .errors import DimensionError, NonConvergenceError
from .kernels import KernelSpec, kernel_matrix
from .krylov import cg_solve, lanczos_decompose, slq_logdet
from .linop import LinearOperator
from .optim import Adam, central_difference
from .ski import build_grid, ski_operator
from .skip import node_probe

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# task structure


@dataclass(frozen=True)
class TaskAssignment:
    """Observation-to-task map; row ``i`` of ``V`` is one-hot at ``task_index[i]``."""

    task_index: np.ndarray
    s: int

    def __post_init__(self):
        t = np.array(self.task_index, dtype=np.intp, copy=True).ravel()
        if t.size and (t.min() < 0 or t.max() >= self.s):
            raise DimensionError(f"task index outside [0, {self.s})")
        t.setflags(write=False)
        object.__setattr__(self, "task_index", t)

    @property
    def n(self):
        return self.task_index.shape[0]

    def gather(self, G):
        """``V @ G`` for ``G`` with ``s`` rows."""
        return G[self.task_index]

    def scatter(self, v):
        """``V.T @ v`` for ``v`` with ``n`` rows."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return np.bincount(self.task_index, weights=v, minlength=self.s)
        out = np.zeros((self.s,) + v.shape[1:])
        np.add.at(out, self.task_index, v)
        return out

    def to_dense(self):
        V = np.zeros((self.n, self.s))
        V[np.arange(self.n), self.task_index] = 1.0
        return V


@dataclass(frozen=True)
class Coregionalization:
    """Task covariance ``M = B B^T + diag(kappa)``."""

    B: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.array(self.B, dtype=float))
        kappa = np.array(self.kappa, dtype=float).ravel()
        if B.shape[0] != kappa.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows but kappa has {kappa.shape[0]} entries")
        if np.any(kappa < 0):
            raise ValueError("kappa must be nonnegative")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "kappa", kappa)

    @property
    def s(self):
        return self.B.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    def apply(self, G):
        """``M @ G`` in ``O(s q)`` per column."""
        G = np.asarray(G, dtype=float)
        k = self.kappa if G.ndim == 1 else self.kappa.reshape((-1,) + (1,) * (G.ndim - 1))
        BtG = np.tensordot(self.B.T, G, axes=1)
        return np.tensordot(self.B, BtG, axes=1) + k * G

    def matrix(self):
        return self.B @ self.B.T + np.diag(self.kappa)


def task_operator_mvm(assignment, coreg, v):
    """``V M V^T v`` without forming any ``n x n`` matrix."""
    if coreg.s != assignment.s:
        raise DimensionError(f"coregionalization has {coreg.s} tasks, assignment has {assignment.s}")
    v = np.asarray(v, dtype=float)
    if v.shape[0] != assignment.n:
        raise DimensionError(f"vector of length {v.shape[0]} for {assignment.n} observations")
    return assignment.gather(coreg.apply(assignment.scatter(v)))


def hadamard_incidence_mvm(factor, assignment, task_apply, v):
    """``(Q T Q^T o V M V^T) v`` for a Lanczos factor and an incidence ``V``.

    ``task_apply`` multiplies an ``(s, ...)`` array by ``M``; ``None`` means
    ``M = I``.
    """
    v = np.asarray(v, dtype=float)
    Q = factor.Q
    if v.shape[0] != Q.shape[0] or assignment.n != Q.shape[0]:
        raise DimensionError("factor, assignment and vector disagree on n")
    if v.ndim == 1:
        G = assignment.scatter(Q * v[:, None])  # s x r, rows are Q^T D_v V columns
    else:
        G = assignment.scatter(Q[:, :, None] * v[:, None, :])  # s x r x k
    if task_apply is not None:
        G = task_apply(G)
    H = np.tensordot(G, factor.T, axes=([1], [0]))  # s x (k) x r  ->  M12 transposed
    if v.ndim == 1:
        return np.einsum("ir,ir->i", Q, H[assignment.task_index])
    H = np.moveaxis(H, -1, 1)  # s x r x k
    return np.einsum("ir,irk->ik", Q, H[assignment.task_index])


class MultitaskOperator(LinearOperator):
    """``K_data o (V M V^T)`` using a cached Lanczos factor of ``K_data``."""

    def __init__(self, data_factor, assignment, coreg):
        if coreg.s != assignment.s:
            raise DimensionError("coregionalization and assignment disagree on s")
        self.factor = data_factor
        self.assignment = assignment
        self.coreg = coreg
        self.size = assignment.n

    def _apply(self, v):
        return hadamard_incidence_mvm(self.factor, self.assignment, self.coreg.apply, v)


def multitask_operator(data_kernel, assignment, coreg, r=50, seed=0):
    """Decompose ``data_kernel`` (typically a SKI operator) and wrap it with
    the exact task-side structure."""
    r = min(r, data_kernel.size)
    factor = lanczos_decompose(data_kernel, node_probe(data_kernel.size, seed, 0), r)
    return MultitaskOperator(factor, assignment, coreg)


# ---------------------------------------------------------------------------
# cluster model


@dataclass(frozen=True)
class MultitaskData:
    x: np.ndarray
    y: np.ndarray
    task: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        t = np.array(self.task, dtype=np.intp).ravel()
        if not (x.shape == y.shape == t.shape):
            raise DimensionError("x, y and task must have equal lengths")
        for a in (x, y, t):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "task", t)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def s(self):
        return int(self.task.max()) + 1 if self.task.size else 0

    def tasks(self, keep):
        """Subset to the listed tasks, relabelled ``0..len(keep)-1``."""
        keep = list(keep)
        remap = {t: i for i, t in enumerate(keep)}
        mask = np.isin(self.task, keep)
        return MultitaskData(self.x[mask], self.y[mask],
                             np.array([remap[t] for t in self.task[mask]], dtype=np.intp))

    def append_task(self, x, y):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        t = np.full(x.shape[0], self.s, dtype=np.intp)
        return MultitaskData(np.concatenate([self.x, x]), np.concatenate([self.y, y]),
                             np.concatenate([self.task, t]))


@dataclass(frozen=True)
class ClusterHyperparameters:
    cluster: KernelSpec
    indiv: KernelSpec
    noise_variance: float
    mean: float = 0.0

    def log_params(self):
        return np.log([self.cluster.lengthscales[0], self.cluster.outputscale,
                       self.indiv.lengthscales[0], self.indiv.outputscale,
                       self.noise_variance])

    def with_log_params(self, theta):
        th = np.exp(np.asarray(theta, dtype=float))
        return replace(self,
                       cluster=KernelSpec("Matern52", (th[0],), th[1]),
                       indiv=KernelSpec("Matern52", (th[2],), th[3]),
                       noise_variance=float(th[4]))

    def to_dict(self):
        return {"cluster": self.cluster.to_dict(), "indiv": self.indiv.to_dict(),
                "noise_variance": self.noise_variance, "mean": self.mean}

    @classmethod
    def initial(cls, data):
        span = float(np.ptp(data.x)) or 1.0
        vy = float(data.y.var()) or 1.0
        return cls(KernelSpec("Matern52", (span / 3,), vy),
                   KernelSpec("Matern52", (span / 3,), 0.1 * vy),
                   0.01 * vy, float(data.y.mean()))


@dataclass(frozen=True)
class ClusterSettings:
    mode: str = "exact_dense"
    grid_size: int = 100
    rank: int = 50
    num_probes: int = 20
    slq_rank: int = 50
    probe_seed: int = 0
    cg_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("exact_dense", "skip"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class ClusterState:
    lam: np.ndarray
    c: int
    hyper: ClusterHyperparameters
    rng_seed: int = 0
    sweep: int = 0
    mll_evaluations: int = 0
    last_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        lam = np.array(self.lam, dtype=np.intp).ravel()
        if lam.size and (lam.min() < 0 or lam.max() >= self.c):
            raise DimensionError(f"cluster labels must lie in [0, {self.c})")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)


class ClusterMTGP:
    """Marginal likelihood and prediction for the cluster multi-task kernel.

    In skip mode the Lanczos factors of the two data kernels depend only on
    the hyperparameters, so they are cached per hyperparameter setting and
    reused across every label configuration a Gibbs sweep tries.
    """

    def __init__(self, data, c, settings=None):
        self.data = data
        self.c = int(c)
        self.settings = settings or ClusterSettings()
        self.evaluations = 0
        self._factor_cache = {}
        self._grid = None

    # -- covariance pieces -------------------------------------------------

    def obs_clusters(self, lam, data=None):
        data = data or self.data
        return np.asarray(lam)[data.task]

    def dense_covariance(self, lam, hyper, data=None, noise=True):
        data = data or self.data
        X = data.x[:, None]
        cl = self.obs_clusters(lam, data)
        K = (kernel_matrix(hyper.cluster, X, X) * (cl[:, None] == cl[None, :])
             + kernel_matrix(hyper.indiv, X, X) * (data.task[:, None] == data.task[None, :]))
        if noise:
            K[np.diag_indices_from(K)] += hyper.noise_variance
        return K

    def _factors(self, hyper, data):
        key = (id(data), hyper.cluster, hyper.indiv)
        if key not in self._factor_cache:
            if len(self._factor_cache) > 8:
                self._factor_cache.clear()
            s = self.settings
            grid = build_grid(data.x, s.grid_size)
            r = min(s.rank, data.n)
            out = []
            for i, spec in enumerate((hyper.cluster, hyper.indiv)):
                op = ski_operator(spec, data.x, grid=grid)
                out.append(lanczos_decompose(op, node_probe(data.n, s.probe_seed, i), r))
            self._factor_cache[key] = tuple(out)
        return self._factor_cache[key]

    def operator(self, lam, hyper, data=None):
        """``K_cluster o C C^T + K_indiv o V V^T + sigma^2 I`` as an operator."""
        data = data or self.data
        fc, fi = self._factors(hyper, data)
        clusters = TaskAssignment(self.obs_clusters(lam, data), self.c)
        tasks = TaskAssignment(data.task, data.s)
        noise = hyper.noise_variance

        class _Op(LinearOperator):
            size = data.n

            def _apply(self, v):
                return (hadamard_incidence_mvm(fc, clusters, None, v)
                        + hadamard_incidence_mvm(fi, tasks, None, v) + noise * v)

        return _Op()

    # -- likelihood --------------------------------------------------------

    def mll(self, lam, hyper, data=None, seed=None):
        self.evaluations += 1
        data = data or self.data
        r = data.y - hyper.mean
        n = data.n
        if self.settings.mode == "exact_dense":
            K = self.dense_covariance(lam, hyper, data)
            L = scipy.linalg.cho_factor(K, lower=True)
            quad = float(r @ scipy.linalg.cho_solve(L, r))
            logdet = 2.0 * float(np.sum(np.log(np.diag(L[0]))))
        else:
            s = self.settings
            seed = s.probe_seed if seed is None else seed
            op = self.operator(lam, hyper, data)
            res = cg_solve(op, r, tol=s.cg_tol)
            if not res.converged:
                raise NonConvergenceError("CG did not converge in cluster mll",
                                          res.final_relative_residual)
            quad = float(r @ res.solution)
            logdet = slq_logdet(op, s.num_probes, s.slq_rank, seed).logdet
        return -0.5 * quad - 0.5 * logdet - 0.5 * n * LOG_2PI

    def mll_gradient(self, lam, hyper, data=None):
        return central_difference(lambda th: self.mll(lam, hyper.with_log_params(th), data),
                                  hyper.log_params())

    # -- prediction --------------------------------------------------------

    def _solve(self, lam, hyper, data, B):
        if self.settings.mode == "exact_dense":
            K = self.dense_covariance(lam, hyper, data)
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(K, lower=True), B)
        res = cg_solve(self.operator(lam, hyper, data), B, tol=self.settings.cg_tol)
        if not res.converged:
            raise NonConvergenceError("CG did not converge in prediction",
                                      res.final_relative_residual)
        return res.solution

    def predict_given(self, lam, hyper, task_id, cluster, xstar, data=None):
        """Latent predictive mean and variance for ``task_id`` (assumed to be
        in ``cluster``) at ``xstar``, conditioned on ``data`` under ``lam``."""
        data = data or self.data
        xstar = np.asarray(xstar, dtype=float).ravel()
        cl = self.obs_clusters(lam, data)
        Xs, X = xstar[:, None], data.x[:, None]
        Ks = (kernel_matrix(hyper.cluster, Xs, X) * (cl == cluster)[None, :]
              + kernel_matrix(hyper.indiv, Xs, X) * (data.task == task_id)[None, :])
        if data.n == 0:
            prior = np.full(xstar.shape, hyper.cluster.outputscale + hyper.indiv.outputscale)
            return np.full(xstar.shape, hyper.mean), prior
        sol = self._solve(lam, hyper, data, np.column_stack([data.y - hyper.mean, Ks.T]))
        mean = hyper.mean + Ks @ sol[:, 0]
        var = (hyper.cluster.outputscale + hyper.indiv.outputscale
               - np.einsum("ij,ji->i", Ks, sol[:, 1:]))
        return mean, np.maximum(var, 0.0)


def cluster_kernel_mll(lam, hyper, data, c, settings=None, seed=None):
    return ClusterMTGP(data, c, settings).mll(lam, hyper, seed=seed)


# ---------------------------------------------------------------------------
# Gibbs sampling


def _sweep_rng(seed, sweep):
    return np.random.default_rng([int(seed), int(sweep), 0x6A5])


def initial_state(model, hyper=None, seed=0):
    rng = np.random.default_rng([int(seed), 0x1A])
    lam = rng.integers(0, model.c, size=model.data.s)
    return ClusterState(lam, model.c, hyper or ClusterHyperparameters.initial(model.data), seed)


def gibbs_sweep(state, model):
    """Resample every task's cluster label once, in task order.

    For task ``i`` the marginal likelihood is evaluated under each of the
    ``c`` candidate labels with all other labels fixed; the uniform prior
    adds a constant, so the conditional is the softmax of those values.
    Exactly ``c * s`` evaluations are made.
    """
    rng = _sweep_rng(state.rng_seed, state.sweep + 1)
    lam = np.array(state.lam)
    s, c = lam.shape[0], state.c
    weights = np.zeros((s, c))
    before = model.evaluations
    for i in range(s):
        scores = np.empty(c)
        for a in range(c):
            lam[i] = a
            scores[a] = model.mll(lam, state.hyper)
        w = np.exp(scores - logsumexp(scores))
        weights[i] = w
        lam[i] = rng.choice(c, p=w / w.sum())
    used = model.evaluations - before
    return replace(state, lam=lam, sweep=state.sweep + 1,
                   mll_evaluations=state.mll_evaluations + used, last_weights=weights)


@dataclass
class GibbsResult:
    state: ClusterState
    samples: list
    trace: list


def run_gibbs(model, sweeps=20, burn_in=5, seed=0, hyper=None, hyper_steps=5,
              learning_rate=0.1, callback=None):
    """Alternate ``hyper_steps`` Adam updates of the kernel hyperparameters
    with one Gibbs sweep over cluster labels.

    ``samples`` holds label vectors after ``burn_in`` sweeps; ``trace`` holds
    one record per sweep (sweep index, labels, mll after the sweep).
    """
    state = initial_state(model, hyper, seed)
    opt = Adam(state.hyper.log_params(), learning_rate) if hyper_steps else None
    samples, trace = [], []
    for k in range(sweeps):
        if opt is not None:
            h = state.hyper
            for _ in range(hyper_steps):
                theta = opt.step(model.mll_gradient(state.lam, h))
                h = h.with_log_params(theta)
            state = replace(state, hyper=h)
        state = gibbs_sweep(state, model)
        value = model.mll(state.lam, state.hyper)
        record = {"sweep": state.sweep, "lambda": state.lam.tolist(), "mll": value}
        trace.append(record)
        if callback is not None:
            callback(record)
        if k >= burn_in:
            samples.append(state.lam.copy())
    return GibbsResult(state, samples, trace)


def membership_probabilities(model, state, x_new, y_new):
    """Posterior over the cluster of a new task given its observations."""
    x_new = np.asarray(x_new, dtype=float).ravel()
    if x_new.size == 0:
        return np.full(state.c, 1.0 / state.c)
    data = model.data.append_task(x_new, y_new)
    scores = np.array([model.mll(np.append(state.lam, a), state.hyper, data)
                       for a in range(state.c)])
    return np.exp(scores - logsumexp(scores))


def predict_task(model, state, xstar, task_id=None, x_new=None, y_new=None):
    """Mixture-over-clusters prediction for an existing or a new task.

    For an existing ``task_id`` the mixture weights are its Gibbs
    conditional given the other labels. For a new task (``x_new``,
    ``y_new``, possibly empty) they are its membership probabilities.
    Returns ``(means, variances, probabilities)``.
    """
    xstar = np.asarray(xstar, dtype=float).ravel()
    if task_id is not None:
        data = model.data
        lam = np.array(state.lam)
        scores = np.empty(state.c)
        for a in range(state.c):
            lam[task_id] = a
            scores[a] = model.mll(lam, state.hyper)
        probs = np.exp(scores - logsumexp(scores))
        tid = task_id
        labels = []
        for a in range(state.c):
            la = np.array(state.lam)
            la[task_id] = a
            labels.append(la)
    else:
        x_new = np.asarray(x_new if x_new is not None else [], dtype=float).ravel()
        y_new = np.asarray(y_new if y_new is not None else [], dtype=float).ravel()
        probs = membership_probabilities(model, state, x_new, y_new)
        data = model.data.append_task(x_new, y_new)
        tid = model.data.s
        labels = [np.append(state.lam, a) for a in range(state.c)]
    means = np.zeros((state.c, xstar.size))
    variances = np.zeros((state.c, xstar.size))
    for a in range(state.c):
        means[a], variances[a] = model.predict_given(labels[a], state.hyper, tid, a, xstar, data)
    mean = probs @ means
    var = probs @ (variances + means**2) - mean**2
    return mean, np.maximum(var, 0.0), probs
