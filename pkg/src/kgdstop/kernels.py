"""Mercer kernels on the unit cube and Gram-matrix assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import InputError, NumericError
from .spectral import KernelMatrix


class KernelKind(str, Enum):
    MIN_PLUS_ONE = "min_plus_one"
    WENDLAND_G3 = "wendland_g3"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to use and on how many input coordinates.

    ``min_plus_one`` is ``1 + min(x, x')`` on [0, 1] (Sobolev W^1_1 kernel).
    ``wendland_g3`` is the compactly supported radial function
    ``(1 - r)^4 (4r + 1)`` of ``r = |x - x'|``. ``gaussian`` is
    ``exp(-r^2 / (2 h^2))`` with bandwidth ``h``; it is not one of the
    kernels of the reference simulation and is kept for experimentation.
    """

    kind: KernelKind
    input_dim: int = 1
    bandwidth: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise InputError(f"input_dim must be a positive integer, got {self.input_dim!r}")
        if self.kind is KernelKind.MIN_PLUS_ONE and self.input_dim != 1:
            raise InputError("min_plus_one kernel is only defined for input_dim=1")
        if self.kind is KernelKind.GAUSSIAN and not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise InputError(f"gaussian bandwidth must be positive, got {self.bandwidth!r}")

    @classmethod
    def min_plus_one(cls) -> "KernelSpec":
        return cls(KernelKind.MIN_PLUS_ONE, 1)

    @classmethod
    def wendland_g3(cls, input_dim: int = 3) -> "KernelSpec":
        return cls(KernelKind.WENDLAND_G3, input_dim)

    @classmethod
    def gaussian(cls, input_dim: int = 1, bandwidth: float = 0.2) -> "KernelSpec":
        return cls(KernelKind.GAUSSIAN, input_dim, bandwidth)


@dataclass(frozen=True)
class Dataset:
    """Training or test sample: ``inputs`` is (n, d), ``outputs`` is (n,)."""

    inputs: np.ndarray
    outputs: np.ndarray = field(repr=False)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise InputError(f"inputs must be a 2-d array, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise InputError(f"inputs and outputs differ in length: {x.shape[0]} != {y.shape[0]}")
        if x.shape[0] < 1:
            raise InputError("a dataset needs at least one sample")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.inputs[index], self.outputs[index])


def wendland_g3(r):
    """(1 - r)^4 (4 r + 1) on [0, 1], exactly zero for r >= 1."""
    r = np.asarray(r, dtype=float)
    u = 1.0 - r
    u2 = u * u
    return np.where(r < 1.0, u2 * u2 * (4.0 * r + 1.0), 0.0)


def _as_points(points, dim: int) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        # a flat array is a list of scalars for d=1, a single point otherwise
        x = x[:, None] if dim == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputError(f"dimension mismatch: expected points of dimension {dim}, got array of shape {x.shape}")
    return x


def _distances(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    # coordinate-wise accumulation keeps entries bitwise symmetric
    sq = np.zeros((x.shape[0], z.shape[0]))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - z[None, :, k]
        sq += diff * diff
    return np.sqrt(sq)


def _block(spec: KernelSpec, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    if spec.kind is KernelKind.MIN_PLUS_ONE:
        return 1.0 + np.minimum(x[:, 0, None], z[None, :, 0])
    r = _distances(x, z)
    if spec.kind is KernelKind.WENDLAND_G3:
        return wendland_g3(r)
    return np.exp(-(r * r) / (2.0 * spec.bandwidth**2))


def eval_kernel(spec: KernelSpec, x, x_prime) -> float:
    """K(x, x') for two single points."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if a.shape != (spec.input_dim,) or b.shape != (spec.input_dim,):
        raise InputError(
            f"dimension mismatch: kernel expects {spec.input_dim}-d points, got shapes {a.shape} and {b.shape}"
        )
    return float(_block(spec, a[None, :], b[None, :])[0, 0])


def kappa_sq(spec: KernelSpec) -> float:
    """sup of K(x, x) over the unit cube, in closed form."""
    if spec.kind is KernelKind.MIN_PLUS_ONE:
        return 2.0
    return 1.0


def cross_kernel(spec: KernelSpec, points, other) -> np.ndarray:
    """Rectangular matrix ``K(points[i], other[j])``."""
    x = _as_points(points, spec.input_dim)
    z = _as_points(other, spec.input_dim)
    return _block(spec, x, z)


def build_kernel_matrix(spec: KernelSpec, points) -> KernelMatrix:
    """Gram matrix of ``points`` together with its cached eigendecomposition."""
    x = _as_points(points, spec.input_dim)
    if x.shape[0] < 1:
        raise InputError("cannot build a kernel matrix from zero points")
    entries = _block(spec, x, x)
    if not np.all(np.isfinite(entries)):
        raise NumericError("kernel matrix has non-finite entries")
    return KernelMatrix.from_entries(entries)
