"""Structured kernel interpolation for one-dimensional component kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, OutOfRangeError
from .kernels import KernelSpec
from .linop import LinearOperator, SparseInterpolationMatrix, ToeplitzOperator

KEYS_A = -0.5
DEFAULT_GRID_SIZE = 100


@dataclass(frozen=True)
class Grid1D:
    lower: float
    upper: float
    m: int

    def __post_init__(self):
        if self.m < 4:
            raise ValueError(f"grid needs at least 4 nodes, got {self.m}")
        if not self.upper > self.lower:
            raise ValueError(f"grid upper bound {self.upper} must exceed lower bound {self.lower}")

    @property
    def spacing(self):
        return (self.upper - self.lower) / (self.m - 1)

    @property
    def nodes(self):
        return self.lower + self.spacing * np.arange(self.m)

    def interior(self):
        """Range of points that get four in-range cubic neighbors."""
        h = self.spacing
        return self.lower + h, self.lower + (self.m - 2) * h

    def covers(self, values):
        lo, hi = self.interior()
        values = np.asarray(values, dtype=float)
        tol = 1e-9 * h_scale(self)
        return bool(np.all(values >= lo - tol) and np.all(values <= hi + tol))


def h_scale(grid):
    return max(grid.spacing, abs(grid.lower), abs(grid.upper))


def build_grid(values, m=DEFAULT_GRID_SIZE):
    """Regular grid padded beyond the data range.

    The padding is two cells on each side, so the spacing solves
    ``h = (max - min + 4h) / (m - 1)``. Grids with fewer than six nodes
    cannot fit two cells of padding and fall back to one.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot build a grid from no values")
    if m < 4:
        raise ValueError(f"grid needs at least 4 nodes, got {m}")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return Grid1D(lo - 0.5, lo + 0.5, m)
    pad = 2 if m >= 6 else 1
    h = (hi - lo) / (m - 1 - 2 * pad)
    return Grid1D(lo - pad * h, hi + pad * h, m)


def keys_kernel(s, a=KEYS_A):
    """Keys cubic convolution kernel, supported on ``|s| < 2``."""
    s = np.abs(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    inner = s <= 1
    outer = (s > 1) & (s < 2)
    si, so = s[inner], s[outer]
    out[inner] = ((a + 2) * si - (a + 3)) * si * si + 1
    out[outer] = ((a * so - 5 * a) * so + 8 * a) * so - 4 * a
    return out


def interpolation_weights(points, grid):
    """Four-point cubic convolution weights of ``points`` on ``grid``."""
    points = np.asarray(points, dtype=float).ravel()
    lo, hi = grid.interior()
    tol = 1e-9 * h_scale(grid)
    bad = np.flatnonzero((points < lo - tol) | (points > hi + tol) | ~np.isfinite(points))
    if bad.size:
        i = int(bad[0])
        raise OutOfRangeError(
            f"point {i} (value {points[i]!r}) lies outside the grid interior [{lo}, {hi}]", i)
    h = grid.spacing
    u = (points - grid.lower) / h
    j = np.clip(np.floor(u).astype(np.intp), 1, grid.m - 3)
    t = u - j
    offsets = np.arange(-1, 3)
    idx = j[:, None] + offsets[None, :]
    weights = keys_kernel(t[:, None] - offsets[None, :])
    return SparseInterpolationMatrix(idx, weights, grid.m)


def grid_kernel_column(component, grid):
    """First column of ``K_UU``: the kernel between node 0 and every node."""
    nodes = grid.nodes
    return component.profile(((nodes - nodes[0]) / component.lengthscales[0]) ** 2)


class SkiOperator(LinearOperator):
    """``W K_UU W^T`` with sparse ``W`` and Toeplitz ``K_UU``.

    ``flops`` accumulates a multiply count per apply (interpolation
    gathers/scatters plus the FFT convolution) so cost scaling can be
    asserted without timing.
    """

    def __init__(self, W, kuu, grid):
        if W.n_cols != kuu.size:
            raise DimensionError(f"W has {W.n_cols} columns but K_UU is {kuu.size}x{kuu.size}")
        self.W = W
        self.kuu = kuu
        self.grid = grid
        self.size = W.n_rows
        self.flops = 0
        self._kuu_wt = None

    def cost_per_apply(self):
        L = self.kuu.embedding_size
        return 2 * self.W.nnz + int(3 * L * np.log2(L)) + L

    def _apply(self, v):
        k = 1 if v.ndim == 1 else v.shape[1]
        self.flops += k * self.cost_per_apply()
        return self.W.apply(self.kuu.apply(self.W.apply_transpose(v)))

    def to_dense(self):
        Wd = self.W.to_dense()
        return Wd @ self.kuu.to_dense() @ Wd.T


@dataclass(frozen=True)
class SkiApproximation:
    grid: Grid1D
    W: SparseInterpolationMatrix
    kuu: ToeplitzOperator


def ski_approximation(component, points, m=DEFAULT_GRID_SIZE, grid=None):
    points = np.asarray(points, dtype=float).ravel()
    if grid is None:
        grid = build_grid(points, m)
    W = interpolation_weights(points, grid)
    return SkiApproximation(grid, W, ToeplitzOperator(grid_kernel_column(component, grid)))


def ski_operator(component, points, m=DEFAULT_GRID_SIZE, grid=None):
    """SKI operator for a one-dimensional component kernel.

    ``points`` is the coordinate the component acts on, one value per datum.
    """
    if not isinstance(component, KernelSpec) or len(component.lengthscales) != 1:
        raise DimensionError("SKI components must be one-dimensional kernels")
    approx = ski_approximation(component, points, m, grid)
    return SkiOperator(approx.W, approx.kuu, approx.grid)


def ski_cross_covariance(op, test_points):
    """Interpolated cross-covariance ``W_* K_UU W^T`` (shape ``k x n``)."""
    Ws = interpolation_weights(test_points, op.grid)
    if getattr(op, "_kuu_wt", None) is None:
        op._kuu_wt = op.kuu.apply(op.W.to_dense().T)
    return Ws.apply(op._kuu_wt)


def ski_prior_variance(op, test_points):
    """Interpolated ``k(x, x)`` for each test point."""
    Ws = interpolation_weights(test_points, op.grid)
    col = op.kuu.first_column
    lag = np.abs(Ws.indices[:, :, None] - Ws.indices[:, None, :])
    return np.einsum("ia,iab,ib->i", Ws.weights, col[lag], Ws.weights)
