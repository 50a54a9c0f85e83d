"""Conjugate gradients, Lanczos tridiagonalization and stochastic Lanczos
quadrature, all driven through ``LinearOperator.apply``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalBreakdownError
from .linop import LanczosFactor

BREAKDOWN_TOL = 1e-10
RITZ_FLOOR = 1e-12


@dataclass(frozen=True)
class CgResult:
    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


def default_max_iters(n):
    return min(n, 1000)


def cg_solve(A, b, tol=1e-6, max_iters=None):
    """Solve ``A x = b`` for SPD ``A`` by conjugate gradients.

    ``b`` may be ``(n,)`` or ``(n, k)``; columns of a block are solved
    independently but share one ``apply`` per iteration. The reported
    residual is the recursively updated one, so no extra apply is spent.
    For a block the reported residual is the worst column.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.size or b.ndim not in (1, 2):
        raise DimensionError(f"rhs shape {b.shape} does not match operator size {A.size}")
    if max_iters is None:
        max_iters = default_max_iters(A.size)
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")

    vector = b.ndim == 1
    B = b[:, None] if vector else b
    bnorm = np.linalg.norm(B, axis=0)
    zero = bnorm == 0
    safe_bnorm = np.where(zero, 1.0, bnorm)

    X = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    rs = np.einsum("ij,ij->j", R, R)
    active = ~zero
    history = []
    it = 0
    rel = np.where(zero, 0.0, 1.0)
    while it < max_iters and active.any():
        it += 1
        AP = A.apply(P[:, 0] if vector else P)
        if vector:
            AP = AP[:, None]
        pap = np.einsum("ij,ij->j", P, AP)
        if not np.all(np.isfinite(AP)) or np.any(pap[active] <= 0):
            raise NumericalBreakdownError(
                "CG encountered a non-positive or non-finite curvature", it)
        step = np.where(active, rs / np.where(active, pap, 1.0), 0.0)
        X += step * P
        R -= step * AP
        rs_new = np.einsum("ij,ij->j", R, R)
        rel = np.where(zero, 0.0, np.sqrt(rs_new) / safe_bnorm)
        history.append(float(rel.max()))
        active = active & (rel > tol)
        ratio = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        P = np.where(active, R + ratio * P, P)
        rs = rs_new

    if not np.all(np.isfinite(X)):
        raise NumericalBreakdownError("CG produced non-finite iterates", it)
    worst = float(rel.max()) if rel.size else 0.0
    return CgResult(
        solution=X[:, 0] if vector else X,
        iterations=it,
        final_relative_residual=worst,
        converged=bool(worst <= tol),
        residual_history=history,
    )


def _orthogonalize(w, Q):
    # two passes of classical Gram-Schmidt against every stored column
    for _ in range(2):
        w = w - Q @ (Q.T @ w)
    return w


def lanczos_decompose(A, probe, r, breakdown_tol=BREAKDOWN_TOL):
    """Rank-``r`` Lanczos factor ``Q T Q^T`` of the symmetric operator ``A``.

    Uses exactly one ``apply`` per returned column. Stops early when the
    Krylov space becomes invariant, i.e. when the next off-diagonal falls
    below ``breakdown_tol`` times the running norm estimate.
    """
    n = A.size
    probe = np.asarray(probe, dtype=float).ravel()
    if probe.shape[0] != n:
        raise DimensionError(f"probe length {probe.shape[0]} does not match operator size {n}")
    if not 1 <= r <= n:
        raise DimensionError(f"rank {r} outside [1, {n}]")
    pnorm = np.linalg.norm(probe)
    if pnorm == 0:
        raise DimensionError("probe vector is zero")

    Q = np.zeros((n, r))
    Q[:, 0] = probe / pnorm
    alpha = []
    beta = []
    norm_est = 0.0
    for j in range(r):
        q = Q[:, j]
        w = A.apply(q)
        a = float(q @ w)
        alpha.append(a)
        w = _orthogonalize(w, Q[:, : j + 1])
        b = float(np.linalg.norm(w))
        norm_est = max(norm_est, abs(a), b)
        if j == r - 1 or b <= breakdown_tol * max(norm_est, np.finfo(float).tiny):
            break
        beta.append(b)
        Q[:, j + 1] = w / b
    k = len(alpha)
    return LanczosFactor(Q[:, :k], np.array(alpha), np.array(beta[: k - 1]))


def lanczos_tridiag_batch(A, probes, r, breakdown_tol=BREAKDOWN_TOL):
    """Independent Lanczos runs for each column of ``probes``, sharing one
    block ``apply`` per step. Returns a list of ``(alpha, beta)`` pairs.
    """
    n, k = probes.shape
    r = min(r, n)
    Z = probes / np.linalg.norm(probes, axis=0)
    Qs = np.zeros((k, r, n))
    Qs[:, 0, :] = Z.T
    alphas = np.zeros((k, r))
    betas = np.zeros((k, r))
    ranks = np.full(k, r)
    alive = np.ones(k, dtype=bool)
    norm_est = np.zeros(k)
    for j in range(r):
        W = A.apply(Qs[:, j, :].T).T
        a = np.einsum("kn,kn->k", Qs[:, j, :], W)
        alphas[:, j] = np.where(alive, a, 0.0)
        basis = Qs[:, : j + 1, :]
        for _ in range(2):
            W = W - np.einsum("kjn,kj->kn", basis, np.einsum("kjn,kn->kj", basis, W))
        b = np.linalg.norm(W, axis=1)
        norm_est = np.maximum(norm_est, np.maximum(np.abs(a), b))
        if j == r - 1:
            break
        stop = alive & (b <= breakdown_tol * np.maximum(norm_est, np.finfo(float).tiny))
        ranks[stop] = j + 1
        alive &= ~stop
        if not alive.any():
            break
        betas[:, j] = np.where(alive, b, 0.0)
        Qs[:, j + 1, :] = np.where(alive[:, None], W / np.where(b > 0, b, 1.0)[:, None], 0.0)
    return [(alphas[i, : ranks[i]], betas[i, : ranks[i] - 1]) for i in range(k)]


@dataclass(frozen=True)
class SlqEstimate:
    logdet: float
    num_probes: int
    probe_seed: int
    clamped: int = 0


def probe_matrix(n, num_probes, seed):
    """Unit-normalized standard normal probes, one per column."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, num_probes))
    return Z / np.linalg.norm(Z, axis=0)


def slq_logdet(A, num_probes, r, seed):
    """Stochastic Lanczos quadrature estimate of ``log det A``.

    Each probe ``z`` contributes ``n * sum_j tau_j**2 log(theta_j)`` where
    ``theta_j`` are the Ritz values of its tridiagonal matrix and ``tau_j``
    the first components of the corresponding eigenvectors; contributions
    are averaged over probes.
    """
    if num_probes < 1 or r < 1:
        raise ValueError("num_probes and r must be at least 1")
    n = A.size
    Z = probe_matrix(n, num_probes, seed)
    total = 0.0
    clamped = 0
    for alpha, beta in lanczos_tridiag_batch(A, Z, r):
        if alpha.shape[0] == 1:
            theta = alpha.copy()
            tau2 = np.ones(1)
        else:
            T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
            theta, vecs = np.linalg.eigh(T)
            tau2 = vecs[0] ** 2
        bad = theta <= 0
        clamped += int(bad.sum())
        theta = np.where(bad, RITZ_FLOOR, np.maximum(theta, RITZ_FLOOR))
        total += float(tau2 @ np.log(theta))
    return SlqEstimate(logdet=n * total / num_probes, num_probes=num_probes,
                       probe_seed=seed, clamped=clamped)
