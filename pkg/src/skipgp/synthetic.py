"""Seeded synthetic datasets used by the benchmarks, CLI demos and tests."""

from __future__ import annotations

import numpy as np

from .kernels import KernelSpec, kernel_matrix
from .multitask import MultitaskData

CLUSTER_SCALES = (0.7, 1.0, 1.3)


def rbf_regression(n, d=1, noise_std=0.1, lengthscale=1.0, seed=0, low=-3.0, high=3.0):
    """Draw ``y = f(X) + eps`` with ``f`` a unit-outputscale RBF GP sample."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, d))
    K = kernel_matrix(KernelSpec("RBF", (lengthscale,)), X, X)
    L = np.linalg.cholesky(K + 1e-8 * np.eye(n))
    f = L @ rng.standard_normal(n)
    return X, f + noise_std * rng.standard_normal(n), f


def growth_mean(x):
    return 2.0 + 6.0 * (1.0 - np.exp(-np.asarray(x, dtype=float) / 4.0))


def growth_curves(s=15, c=3, seed=0, noise_std=0.1, deviation=0.3, obs_range=(8, 14),
                  x_max=10.0, scales=CLUSTER_SCALES):
    """Tasks drawn from ``c`` clusters of saturating growth curves.

    Cluster ``k`` has mean ``scales[k] * growth_mean(x)``; each task adds a
    Matérn 5/2 deviation of standard deviation ``deviation`` and noise.
    Tasks are assigned to clusters round-robin so every cluster is present.
    Returns ``(data, truth)`` with ``truth`` the 0-based cluster of each task.
    """
    if c > len(scales):
        raise ValueError(f"at most {len(scales)} clusters are defined")
    rng = np.random.default_rng(seed)
    truth = np.arange(s) % c
    rng.shuffle(truth)
    dev = KernelSpec("Matern52", (2.0,), deviation**2)
    xs, ys, ts = [], [], []
    for t in range(s):
        k = rng.integers(obs_range[0], obs_range[1] + 1)
        x = np.sort(rng.uniform(0.0, x_max, size=k))
        K = kernel_matrix(dev, x[:, None], x[:, None]) + 1e-9 * np.eye(k)
        g = scales[truth[t]] * growth_mean(x) + np.linalg.cholesky(K) @ rng.standard_normal(k)
        xs.append(x)
        ys.append(g + noise_std * rng.standard_normal(k))
        ts.append(np.full(k, t))
    data = MultitaskData(np.concatenate(xs), np.concatenate(ys), np.concatenate(ts))
    return data, truth


def growth_task(cluster, n, seed, noise_std=0.1, deviation=0.3, x_max=10.0,
                scales=CLUSTER_SCALES):
    """One fresh task from ``cluster`` with ``n`` sorted observations."""
    rng = np.random.default_rng([int(seed), 0x7A5C])
    x = np.sort(rng.uniform(0.0, x_max, size=n))
    dev = KernelSpec("Matern52", (2.0,), deviation**2)
    K = kernel_matrix(dev, x[:, None], x[:, None]) + 1e-9 * np.eye(n)
    g = scales[cluster] * growth_mean(x) + np.linalg.cholesky(K) @ rng.standard_normal(n)
    return x, g + noise_std * rng.standard_normal(n)


def two_task_toy(seed=0, n_per_task=4):
    """Two short tasks whose clustering posterior can be enumerated."""
    rng = np.random.default_rng(seed)
    x = np.tile(np.linspace(0.0, 3.0, n_per_task), 2)
    task = np.repeat([0, 1], n_per_task)
    y = np.sin(x) + np.where(task == 1, 0.4, 0.0) + 0.2 * rng.standard_normal(x.size)
    return MultitaskData(x, y, task)
