"""Benchmark and experiment drivers behind the CLI's table-producing commands."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import gp
from .kernels import KernelSpec, decompose_product, kernel_matrix
from .multitask import ClusterMTGP, membership_probabilities, predict_task, run_gibbs
from .ski import ski_operator
from .skip import skip_decompose
from .synthetic import growth_curves, growth_task

MVM_DIMS = (4, 8, 12)
MVM_RANKS = (5, 10, 20, 30, 50, 100)


@dataclass(frozen=True)
class MvmRow:
    d: int
    r: int
    median: float
    iqr: float


def mvm_errors(X, r, grid_size=100, num_vectors=20, seed=0, exact=None):
    """Relative errors of SKIP MVMs against the dense product of exact
    unit-lengthscale RBF factors, one per random Gaussian vector."""
    n, d = X.shape
    comps = decompose_product(KernelSpec("RBF", (1.0,) * d)).components
    leaves = [ski_operator(KernelSpec("RBF", (1.0,)), X[:, c.active_dimension], m=grid_size)
              for c in comps]
    tree = skip_decompose(leaves, r=r, probe_seed=seed)
    if exact is None:
        exact = kernel_matrix(KernelSpec("RBF", (1.0,) * d), X, X)
    V = np.random.default_rng([int(seed), 0xB]).standard_normal((n, num_vectors))
    ref = exact @ V
    approx = tree.mvm(V)
    return np.linalg.norm(approx - ref, axis=0) / np.linalg.norm(ref, axis=0)


def bench_mvm(n=500, seed=0, dims=MVM_DIMS, ranks=MVM_RANKS, grid_size=100, num_vectors=20):
    rows = []
    for d in dims:
        X = np.random.default_rng([int(seed), d]).standard_normal((n, d))
        exact = kernel_matrix(KernelSpec("RBF", (1.0,) * d), X, X)
        for r in ranks:
            e = mvm_errors(X, r, grid_size, num_vectors, seed, exact)
            q1, q2, q3 = np.percentile(e, [25, 50, 75])
            rows.append(MvmRow(d, r, float(q2), float(q3 - q1)))
    return rows


def bench_inducing(X, y, m_list=(50, 100, 200, 400), repeats=3, seed=0, rank=30):
    """Best-of-``repeats`` wall time of one skip-mode mll evaluation per grid size."""
    out = []
    for m in m_list:
        settings = gp.SkipSettings(grid_size=int(m), rank=rank, probe_seed=seed)
        model = gp.initial_model(X, y, "RBF", "skip", settings)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            gp.mll(model, X, y, seed)
            best = min(best, time.perf_counter() - t0)
        out.append((int(m), best))
    return out


def loglog_slope(xs, ts):
    return float(np.polyfit(np.log(xs), np.log(ts), 1)[0])


# ---------------------------------------------------------------------------
# multi-task experiments


def _split(x, y, cutoff):
    early = x < cutoff
    return (x[early], y[early]), (x[~early], y[~early])


def extrapolation_rmse(data, targets, task_counts, c=3, cutoff=5.0, sweeps=10, burn_in=3,
                       seed=0, settings=None, baseline_steps=60, trace=None):
    """RMSE of forecasting the late part (``x >= cutoff``) of each target task
    from its early observations, for models trained on the first ``s`` tasks
    of ``data`` for each ``s`` in ``task_counts``.

    The multi-task model runs Gibbs and predicts with the cluster mixture.
    The baseline is one GP fitted to all observations pooled together,
    ignoring task identity. ``trace(s, record)`` receives every Gibbs record.
    """
    splits = [_split(np.asarray(x), np.asarray(y), cutoff) for x, y in targets]
    rows = []
    for s in task_counts:
        sub = data.tasks(range(s))
        model = ClusterMTGP(sub, c, settings)
        cb = (lambda rec, s=s: trace(s, rec)) if trace is not None else None
        state = run_gibbs(model, sweeps=sweeps, burn_in=burn_in, seed=seed, callback=cb).state
        base = gp.initial_model(sub.x, sub.y, "Matern52")
        base = gp.fit(base, sub.x, sub.y, learning_rate=0.1, steps=baseline_steps).model
        mt_err, base_err = [], []
        for (xe, ye), (xl, yl) in splits:
            if xl.size == 0:
                continue
            mean, _, _ = predict_task(model, state, xl, x_new=xe, y_new=ye)
            mt_err.append(mean - yl)
            post = gp.condition(base, np.concatenate([sub.x, xe]), np.concatenate([sub.y, ye]))
            bmean, _ = gp.predict(post, xl)
            base_err.append(bmean - yl)
        rows.append({"tasks": int(s),
                     "multitask_rmse": float(np.sqrt(np.mean(np.concatenate(mt_err) ** 2))),
                     "baseline_rmse": float(np.sqrt(np.mean(np.concatenate(base_err) ** 2)))})
    return rows


def extrapolation_study(task_counts=(2, 5, 10, 15), c=3, seed=0, n_targets=6, target_obs=14,
                        cutoff=5.0, sweeps=10, burn_in=3, settings=None, baseline_steps=60):
    """:func:`extrapolation_rmse` on synthetic growth curves with fresh target tasks."""
    data, _ = growth_curves(s=max(task_counts), c=c, seed=seed)
    targets = [growth_task(i % c, target_obs, seed=1000 * seed + i) for i in range(n_targets)]
    return extrapolation_rmse(data, targets, task_counts, c, cutoff, sweeps, burn_in, seed,
                              settings, baseline_steps)


def membership_curve(model, state, x, y, counts):
    """Largest membership probability after revealing the first ``k``
    observations (in input order), for each ``k`` in ``counts``."""
    order = np.argsort(x, kind="stable")
    x, y = np.asarray(x)[order], np.asarray(y)[order]
    return [float(membership_probabilities(model, state, x[:k], y[:k]).max()) for k in counts]
