"""Matrix-free symmetric operators.

Every operator here is known through ``apply`` alone. ``apply`` accepts a
vector of length ``n`` or an ``(n, k)`` block whose columns are multiplied
independently, which lets Krylov routines batch probe vectors.

Dense materialization (``to_dense``) exists for tests and small problems.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

DENSE_LIMIT = 4096


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class LinearOperator(ABC):
    """Symmetric ``n x n`` operator defined by its action on vectors."""

    size: int

    @property
    def shape(self):
        return (self.size, self.size)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim not in (1, 2) or v.shape[0] != self.size:
            raise DimensionError(
                f"operator of size {self.size} cannot act on shape {v.shape}")
        return self._apply(v)

    @abstractmethod
    def _apply(self, v):
        ...

    def __matmul__(self, v):
        return self.apply(v)

    def to_dense(self):
        if self.size > DENSE_LIMIT:
            raise DimensionError(
                f"refusing to materialize a {self.size}x{self.size} operator")
        return self.apply(np.eye(self.size))

    def __add__(self, other):
        return SumOperator(self, other)


class DenseOperator(LinearOperator):
    def __init__(self, matrix):
        matrix = _frozen(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"expected a square matrix, got {matrix.shape}")
        self.matrix = matrix
        self.size = matrix.shape[0]

    def _apply(self, v):
        return self.matrix @ v

    def to_dense(self):
        return np.array(self.matrix)


class DiagonalOperator(LinearOperator):
    def __init__(self, diagonal):
        self.diagonal = _frozen(diagonal).ravel()
        self.size = self.diagonal.shape[0]

    def _apply(self, v):
        if v.ndim == 1:
            return self.diagonal * v
        return self.diagonal[:, None] * v

    def to_dense(self):
        return np.diag(self.diagonal)


class ScaledIdentity(LinearOperator):
    def __init__(self, size, scale):
        self.size = int(size)
        self.scale = float(scale)

    def _apply(self, v):
        return self.scale * v


class SumOperator(LinearOperator):
    def __init__(self, *operators):
        sizes = {op.size for op in operators}
        if len(sizes) != 1:
            raise DimensionError(f"cannot add operators of sizes {sorted(sizes)}")
        self.operators = tuple(operators)
        self.size = sizes.pop()

    def _apply(self, v):
        out = self.operators[0].apply(v)
        for op in self.operators[1:]:
            out = out + op.apply(v)
        return out


class FunctionOperator(LinearOperator):
    """Wraps a callable; the caller vouches for linearity and symmetry."""

    def __init__(self, size, fn):
        self.size = int(size)
        self._fn = fn

    def _apply(self, v):
        return self._fn(v)


class CountingOperator(LinearOperator):
    """Records how many times the wrapped operator is applied.

    A block apply on an ``(n, k)`` array counts as one call; ``columns``
    tracks the total number of vectors pushed through.
    """

    def __init__(self, operator):
        self.operator = operator
        self.size = operator.size
        self.calls = 0
        self.columns = 0

    def _apply(self, v):
        self.calls += 1
        self.columns += 1 if v.ndim == 1 else v.shape[1]
        return self.operator.apply(v)

    def reset(self):
        self.calls = 0
        self.columns = 0


# ---------------------------------------------------------------------------
# Toeplitz


def _next_pow2(k):
    return 1 << max(0, int(k - 1).bit_length())


def circulant_embedding(first_column):
    """Generator of a circulant of length ``2**p >= 2m`` containing the
    symmetric Toeplitz matrix as its leading ``m x m`` block."""
    c = np.asarray(first_column, dtype=float)
    m = c.shape[0]
    size = _next_pow2(2 * m)
    emb = np.zeros(size)
    emb[:m] = c
    if m > 1:
        emb[size - m + 1:] = c[:0:-1]
    return emb


class ToeplitzOperator(LinearOperator):
    """Symmetric Toeplitz matrix ``A[i, j] = first_column[|i - j|]``."""

    def __init__(self, first_column):
        self.first_column = _frozen(first_column).ravel()
        if self.first_column.shape[0] < 1:
            raise DimensionError("Toeplitz generator must be nonempty")
        self.size = self.first_column.shape[0]
        emb = circulant_embedding(self.first_column)
        self._nfft = emb.shape[0]
        self._spectrum = np.fft.rfft(emb)
        self._spectrum.setflags(write=False)

    @property
    def embedding_size(self):
        return self._nfft

    def _apply(self, v):
        m = self.size
        if v.ndim == 1:
            vf = np.fft.rfft(v, n=self._nfft)
            return np.fft.irfft(self._spectrum * vf, n=self._nfft)[:m]
        vf = np.fft.rfft(v, n=self._nfft, axis=0)
        out = np.fft.irfft(self._spectrum[:, None] * vf, n=self._nfft, axis=0)
        return out[:m]

    def to_dense(self):
        idx = np.arange(self.size)
        return np.array(self.first_column[np.abs(idx[:, None] - idx[None, :])])


def toeplitz_mvm(first_column, v):
    """Multiply the symmetric Toeplitz matrix generated by ``first_column``
    with ``v`` in ``O(m log m)`` via circulant embedding."""
    first_column = np.asarray(first_column, dtype=float)
    v = np.asarray(v, dtype=float)
    if first_column.ndim != 1 or v.shape[0] != first_column.shape[0]:
        raise DimensionError(
            f"generator length {first_column.shape} does not match vector {v.shape}")
    return ToeplitzOperator(first_column).apply(v)


# ---------------------------------------------------------------------------
# Sparse interpolation


@dataclass(frozen=True)
class SparseInterpolationMatrix:
    """``n x m`` matrix with (at most) four nonzeros per row.

    Row ``i`` holds ``weights[i, k]`` at column ``indices[i, k]``.
    """

    indices: np.ndarray
    weights: np.ndarray
    n_cols: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.intp, copy=True)
        w = np.array(self.weights, dtype=float, copy=True)
        if idx.ndim != 2 or idx.shape != w.shape or idx.shape[1] != 4:
            raise DimensionError(
                f"expected matching (n, 4) index/weight arrays, got {idx.shape} and {w.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_cols):
            raise DimensionError(f"column index outside [0, {self.n_cols})")
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def n_rows(self):
        return self.indices.shape[0]

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return self.indices.size

    def apply(self, v):
        """``W @ v`` for ``v`` of shape ``(m,)`` or ``(m, k)``."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n_cols or v.ndim not in (1, 2):
            raise DimensionError(f"W has {self.n_cols} columns, got shape {v.shape}")
        if v.ndim == 1:
            return np.einsum("ij,ij->i", self.weights, v[self.indices])
        return np.einsum("ij,ijk->ik", self.weights, v[self.indices])

    def apply_transpose(self, u):
        """``W.T @ u`` for ``u`` of shape ``(n,)`` or ``(n, k)``."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n_rows or u.ndim not in (1, 2):
            raise DimensionError(f"W has {self.n_rows} rows, got shape {u.shape}")
        flat = self.indices.ravel()
        if u.ndim == 1:
            return np.bincount(flat, weights=(self.weights * u[:, None]).ravel(),
                               minlength=self.n_cols)
        contrib = self.weights[:, :, None] * u[:, None, :]
        out = np.zeros((self.n_cols, u.shape[1]))
        np.add.at(out, flat, contrib.reshape(-1, u.shape[1]))
        return out

    def to_dense(self):
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.n_rows), 4)
        np.add.at(out, (rows, self.indices.ravel()), self.weights.ravel())
        return out


def interp_apply(W, v):
    return W.apply(v)


def interp_apply_transpose(W, u):
    return W.apply_transpose(u)


# ---------------------------------------------------------------------------
# Low-rank factors


@dataclass(frozen=True)
class LanczosFactor:
    """Low-rank symmetric factorization ``Q T Q^T``.

    ``T`` is tridiagonal with diagonal ``alpha`` and off-diagonal ``beta``.
    """

    Q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        Q = _frozen(self.Q)
        alpha = _frozen(self.alpha).ravel()
        beta = _frozen(self.beta).ravel()
        if Q.ndim != 2 or Q.shape[1] != alpha.shape[0]:
            raise DimensionError(f"Q shape {Q.shape} does not match {alpha.shape[0]} diagonal entries")
        if alpha.shape[0] == 0:
            raise DimensionError("rank-0 factor")
        if beta.shape[0] != alpha.shape[0] - 1:
            raise DimensionError("off-diagonal must have rank - 1 entries")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def rank(self):
        return self.alpha.shape[0]

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def T(self):
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)

    def orthogonality_error(self):
        return float(np.max(np.abs(self.Q.T @ self.Q - np.eye(self.rank))))

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError(f"factor has {self.n} rows, got shape {v.shape}")
        return self.Q @ (self.T @ (self.Q.T @ v))

    def to_dense(self):
        return self.Q @ self.T @ self.Q.T

    def as_operator(self):
        return FunctionOperator(self.n, self.apply)
