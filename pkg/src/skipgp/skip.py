"""Fast MVMs with element-wise (Hadamard) products of kernel matrices.

Each component operator is reduced to a low-rank Lanczos factor
``Q T Q^T``. For two factors the product acts on ``v`` as::

    (K1 o K2) v = diag(Q1 T1 Q1^T D_v Q2 T2 Q2^T)

which costs ``O(n r^2)`` through the ``r x r`` matrix
``M = T1 Q1^T D_v Q2 T2``. More components are merged by a balanced
divide and conquer: each half is itself Lanczos-decomposed through this
product MVM, so ``d`` components need ``d`` leaf decompositions and
``O(log d)`` merge levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .krylov import lanczos_decompose
from .linop import LanczosFactor, LinearOperator

DEFAULT_RANK = 100


def _check_pair(left, right):
    if left.n != right.n:
        raise DimensionError(f"factors have {left.n} and {right.n} rows")


def _hadamard_apply(Q1, P1, Q2, P2, v):
    n = Q1.shape[0]
    if v.shape[0] != n:
        raise DimensionError(f"vector of shape {v.shape} for factors with {n} rows")
    if v.ndim == 1:
        M = P1.T @ (v[:, None] * P2)
        return np.einsum("ij,ij->i", Q1 @ M, Q2)
    k = v.shape[1]
    r2 = P2.shape[1]
    G = (v[:, :, None] * P2[:, None, :]).reshape(n, k * r2)
    M = P1.T @ G  # r1 x (k * r2), one block of M per column of v
    out = (Q1 @ M).reshape(n, k, r2)
    return np.einsum("ikb,ib->ik", out, Q2)


def hadamard_mvm(left, right, v):
    """``(A o B) v`` from Lanczos factors of ``A`` and ``B``.

    Never forms an ``n x n`` matrix: ``M = T1 Q1^T D_v Q2 T2`` is built in
    ``O(n r^2)`` and row ``i`` of the result is ``q1_i M q2_i^T``.
    """
    _check_pair(left, right)
    v = np.asarray(v, dtype=float)
    return _hadamard_apply(left.Q, left.Q @ left.T, right.Q, right.Q @ right.T, v)


class HadamardProductOperator(LinearOperator):
    """The product of two factored operators, with ``Q T`` precomputed."""

    def __init__(self, left, right):
        _check_pair(left, right)
        self.left = left
        self.right = right
        self.size = left.n
        self._P1 = left.Q @ left.T
        self._P2 = right.Q @ right.T
        self.cached = True

    def _apply(self, v):
        return _hadamard_apply(self.left.Q, self._P1, self.right.Q, self._P2, v)


def node_probe(n, probe_seed, node_id):
    rng = np.random.default_rng([int(probe_seed), int(node_id)])
    z = rng.standard_normal(n)
    return z / np.linalg.norm(z)


@dataclass
class SkipTree:
    """Cached decomposition of ``K1 o ... o Kd``.

    Only the two factors under the root are retained; MVMs combine them
    with ``hadamard_mvm``. For ``d == 1`` ``right`` is ``None`` and
    ``left`` is the single component's factor. ``nodes`` maps heap-style
    node ids to factors when ``keep_nodes`` was requested.
    """

    left: LanczosFactor
    right: LanczosFactor | None
    d: int
    rank: int
    probe_seed: int
    nodes: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.left.n

    @property
    def levels(self):
        return math.ceil(math.log2(self.d)) if self.d > 1 else 0

    def __post_init__(self):
        self._op = (HadamardProductOperator(self.left, self.right)
                    if self.right is not None else None)
        self._P = self.left.Q @ self.left.T if self.right is None else None

    def mvm(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError(f"tree has {self.n} rows, got shape {v.shape}")
        if self._op is not None:
            return self._op.apply(v)
        return self.left.Q @ (self._P.T @ v)


def split_point(d):
    return (d + 1) // 2


def skip_decompose(components, r=DEFAULT_RANK, probe_seed=0, keep_nodes=False):
    """Build the balanced merge tree over ``components``.

    Every leaf is Lanczos-decomposed with ``r`` applies (fewer on
    breakdown). Internal nodes below the root are decomposed through the
    virtual Hadamard operator of their children at the same rank ``r``.
    The two halves of size ``ceil(d/2)`` and ``floor(d/2)`` under the root
    are kept for MVMs.
    """
    components = list(components)
    if not components:
        raise ValueError("need at least one component")
    n = components[0].size
    for i, c in enumerate(components):
        if c.size != n:
            raise DimensionError(f"component {i} has size {c.size}, expected {n}")
    rank = min(int(r), n)
    nodes = {}

    def factor(ops, node_id):
        if len(ops) == 1:
            target = ops[0]
        else:
            h = split_point(len(ops))
            left = factor(ops[:h], 2 * node_id + 1)
            right = factor(ops[h:], 2 * node_id + 2)
            target = HadamardProductOperator(left, right)
        f = lanczos_decompose(target, node_probe(n, probe_seed, node_id), rank)
        if keep_nodes:
            nodes[node_id] = f
        return f

    d = len(components)
    if d == 1:
        return SkipTree(factor(components, 0), None, 1, rank, probe_seed, nodes)
    h = split_point(d)
    left = factor(components[:h], 1)
    right = factor(components[h:], 2)
    return SkipTree(left, right, d, rank, probe_seed, nodes)


def skip_mvm(tree, v):
    """MVM with the cached tree; touches no component operator."""
    return tree.mvm(v)


class SkipOperator(LinearOperator):
    def __init__(self, tree):
        self.tree = tree
        self.size = tree.n

    def _apply(self, v):
        return self.tree.mvm(v)
