"""Stationary kernels and their product structure."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, UnsupportedDecompositionError

FAMILIES = ("RBF", "Matern52")
_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """A stationary kernel.

    ``lengthscales`` has one entry per input dimension (ARD) or a single
    shared entry. When ``active_dimension`` is set the kernel only looks at
    that coordinate of its inputs.
    """

    family: str
    lengthscales: tuple
    outputscale: float = 1.0
    active_dimension: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if not ls or min(ls) <= 0 or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.outputscale > 0:
            raise ValueError(f"outputscale must be positive, got {self.outputscale}")
        if self.active_dimension is not None and len(ls) != 1:
            raise ValueError("a component bound to one dimension takes a single lengthscale")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "outputscale", float(self.outputscale))

    @property
    def ard(self):
        return len(self.lengthscales) > 1

    def _select(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.active_dimension is not None:
            return X[:, [self.active_dimension]]
        if self.ard and X.shape[1] != len(self.lengthscales):
            raise DimensionError(
                f"kernel has {len(self.lengthscales)} lengthscales, inputs have {X.shape[1]} columns")
        return X

    def scaled_sqdist(self, X, Z):
        X = self._select(X) / np.asarray(self.lengthscales)
        Z = self._select(Z) / np.asarray(self.lengthscales)
        # per-dimension differences avoid cancellation for far-from-origin inputs
        d2 = np.zeros((X.shape[0], Z.shape[0]))
        for i in range(X.shape[1]):
            d2 += (X[:, i, None] - Z[None, :, i]) ** 2
        return d2

    def profile(self, tau2):
        """Kernel value as a function of the scaled squared distance."""
        tau2 = np.asarray(tau2, dtype=float)
        if self.family == "RBF":
            return self.outputscale * np.exp(-0.5 * tau2)
        t = np.sqrt(tau2)
        return self.outputscale * (1.0 + _SQRT5 * t + 5.0 * tau2 / 3.0) * np.exp(-_SQRT5 * t)

    def to_dict(self):
        out = {"family": self.family, "lengthscales": list(self.lengthscales),
               "outputscale": self.outputscale}
        if self.active_dimension is not None:
            out["active_dimension"] = self.active_dimension
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(family=data["family"], lengthscales=tuple(data["lengthscales"]),
                   outputscale=float(data.get("outputscale", 1.0)),
                   active_dimension=data.get("active_dimension"))

    def with_log_params(self, log_lengthscales, log_outputscale):
        return replace(self, lengthscales=tuple(np.exp(np.atleast_1d(log_lengthscales))),
                       outputscale=float(np.exp(log_outputscale)))


@dataclass(frozen=True)
class ProductKernelSpec:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a product kernel needs at least one component")
        dims = [c.active_dimension for c in comps]
        if None in dims:
            raise ValueError("every product component must be bound to one dimension")
        if len(set(dims)) != len(dims):
            raise ValueError(f"component dimensions overlap: {dims}")
        object.__setattr__(self, "components", comps)

    def __len__(self):
        return len(self.components)

    def to_dict(self):
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(KernelSpec.from_dict(c) for c in data["components"]))


def kernel_matrix(spec, X, Z):
    if isinstance(spec, ProductKernelSpec):
        out = kernel_matrix(spec.components[0], X, Z)
        for comp in spec.components[1:]:
            out = out * kernel_matrix(comp, X, Z)
        return out
    return spec.profile(spec.scaled_sqdist(X, Z))


def kernel_eval(spec, x, z):
    return float(kernel_matrix(spec, np.atleast_1d(x)[None, :], np.atleast_1d(z)[None, :])[0, 0])


def kernel_diag(spec, X):
    """Prior variances ``k(x, x)``; constant for stationary kernels."""
    n = np.atleast_2d(X).shape[0]
    if isinstance(spec, ProductKernelSpec):
        return np.full(n, float(np.prod([c.outputscale for c in spec.components])))
    return np.full(n, spec.outputscale)


def decompose_product(spec, d=None):
    """Split a d-dimensional RBF kernel into d one-dimensional factors.

    The first factor carries the full outputscale, the others carry 1.
    """
    if isinstance(spec, ProductKernelSpec):
        return spec
    if spec.active_dimension is not None:
        return ProductKernelSpec((spec,))
    if d is None:
        d = len(spec.lengthscales)
    ls = spec.lengthscales if spec.ard else spec.lengthscales * d
    if len(ls) != d:
        raise DimensionError(f"kernel has {len(ls)} lengthscales for {d} dimensions")
    if spec.family != "RBF" and d > 1:
        raise UnsupportedDecompositionError(
            f"{spec.family} does not factor exactly across {d} dimensions")
    comps = tuple(
        KernelSpec(spec.family, (ls[i],), spec.outputscale if i == 0 else 1.0, active_dimension=i)
        for i in range(d))
    return ProductKernelSpec(comps)
