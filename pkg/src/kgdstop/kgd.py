"""The KGD coefficient recursion and quantities derived from it.

With Gram matrix ``K`` and step size ``beta`` the iterates are
``f_t = sum_i c_t[i] K(x_i, .)`` where

    c_0 = 0,    c_{t+1} = c_t - (beta / n) (K c_t - y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import InputError, NumericError
from .kernels import KernelSpec, cross_kernel
from .spectral import KernelMatrix

# relative slack on beta <= 1 / kappa^2 so that beta = 1 / kappa_sq passes
_BETA_RTOL = 1e-12


def check_step_size(beta: float, kappa_sq: float) -> None:
    if not beta > 0 or not np.isfinite(beta):
        raise InputError(f"step size must be positive and finite, got {beta!r}")
    if beta * kappa_sq > 1.0 + _BETA_RTOL:
        raise InputError(f"step size {beta!r} exceeds 1/kappa^2 = {1.0 / kappa_sq!r}")


@dataclass
class KgdState:
    coeffs: np.ndarray
    t: int
    beta: float
    prev_coeffs: np.ndarray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def start(cls, n: int, beta: float, kappa_sq: float) -> "KgdState":
        """Zero initial state; rejects step sizes above 1/kappa^2."""
        check_step_size(beta, kappa_sq)
        return cls(np.zeros(n), 0, float(beta))

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.t < 0:
            raise InputError("iteration counter must be nonnegative")
        if self.t == 0 and np.any(self.coeffs != 0):
            raise InputError("state at t=0 must have zero coefficients")


class IncrementNorms(NamedTuple):
    d_norm: float  # empirical L2 norm ||f_{t+1} - f_t||_D
    k_norm: float  # RKHS norm ||f_{t+1} - f_t||_K


def kgd_step(state: KgdState, matrix: KernelMatrix, y) -> KgdState:
    """One gradient step on the empirical squared loss."""
    y = np.asarray(y, dtype=float)
    n = matrix.n
    if state.coeffs.shape != (n,) or y.shape != (n,):
        raise InputError(
            f"dimension mismatch: matrix is {n}x{n}, coeffs {state.coeffs.shape}, y {y.shape}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        new = state.coeffs - (state.beta / n) * (matrix.entries @ state.coeffs - y)
    if not np.all(np.isfinite(new)):
        raise NumericError(f"KGD iterate became non-finite at t={state.t + 1}")
    return KgdState(new, state.t + 1, state.beta, state.coeffs)


def kgd_path(matrix: KernelMatrix, y, beta: float, t_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Run the recursion for ``t = 0..t_max`` and keep every iterate.

    Returns ``(coeffs, fitted)`` of shape ``(t_max + 1, n)`` where
    ``fitted[t] = K @ coeffs[t]`` are the iterate's values at the training
    inputs.
    """
    y = np.asarray(y, dtype=float)
    n = matrix.n
    if y.shape != (n,):
        raise InputError(f"dimension mismatch: matrix is {n}x{n}, y has shape {y.shape}")
    if t_max < 0:
        raise InputError("t_max must be nonnegative")
    k = matrix.entries
    coeffs = np.zeros((t_max + 1, n))
    fitted = np.zeros((t_max + 1, n))
    step = beta / n
    for t in range(t_max):
        coeffs[t + 1] = coeffs[t] - step * (fitted[t] - y)
        fitted[t + 1] = k @ coeffs[t + 1]
    if not np.all(np.isfinite(coeffs[-1])):
        raise NumericError("KGD iterates became non-finite")
    return coeffs, fitted


def gd_filter(u, t: int, beta: float) -> np.ndarray:
    """(1 - (1 - beta u)^t) / u, continued by beta * t at u = 0."""
    u = np.asarray(u, dtype=float)
    out = np.full(u.shape, float(beta * t))
    pos = u > 0
    shrink = 1.0 - beta * u[pos]
    safe = np.where(shrink > 0, shrink, 1.0)
    # -expm1(t log(s)) is 1 - s^t without cancellation when beta*u is tiny
    one_minus = np.where(shrink > 0, -np.expm1(t * np.log(safe)), 1.0 - shrink**t)
    out[pos] = one_minus / u[pos]
    return out


def kgd_closed_form(matrix: KernelMatrix, y, t: int, beta: float) -> np.ndarray:
    """Coefficients after ``t`` steps from the spectral filter representation.

    Test oracle for the recursion; production code iterates instead.
    """
    if t < 0:
        raise InputError("t must be nonnegative")
    y = np.asarray(y, dtype=float)
    n = matrix.n
    v = matrix.eigvecs
    g = gd_filter(matrix.eigvals / n, t, beta)
    return (v @ (g * (v.T @ y))) / n


def increment_norms(prev, cur, matrix: KernelMatrix, n: int | None = None) -> IncrementNorms:
    """D- and K-norms of ``f_cur - f_prev`` from the coefficient difference."""
    n = matrix.n if n is None else n
    delta = np.asarray(cur, dtype=float) - np.asarray(prev, dtype=float)
    if delta.shape != (matrix.n,):
        raise InputError(f"dimension mismatch: coefficient vectors must have length {matrix.n}")
    kd = matrix.entries @ delta
    k_sq = float(delta @ kd)
    d_sq = float(kd @ kd) / n
    if k_sq < 0:
        floor = -1e-12 * float(delta @ delta) * float(np.trace(matrix.entries))
        if k_sq < floor:
            raise NumericError(f"negative RKHS quadratic form {k_sq:.3e} (clamp floor {floor:.3e})")
        k_sq = 0.0
    return IncrementNorms(float(np.sqrt(d_sq)), float(np.sqrt(k_sq)))


def predict_many(spec: KernelSpec, train_inputs, coeffs, points) -> np.ndarray:
    """Evaluate ``sum_i c_i K(x_i, .)`` at every row of ``points``."""
    coeffs = np.asarray(coeffs, dtype=float)
    kx = cross_kernel(spec, points, train_inputs)
    if kx.shape[1] != coeffs.shape[0]:
        raise InputError(f"dimension mismatch: {kx.shape[1]} training inputs but {coeffs.shape[0]} coefficients")
    return kx @ coeffs


def predict(spec: KernelSpec, train_inputs, coeffs, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(predict_many(spec, train_inputs, coeffs, x.reshape(1, -1))[0])
