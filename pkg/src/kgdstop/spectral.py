"""Eigendecomposition of Gram matrices and spectral capacity measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericError

PSD_RTOL = 1e-8


def eig_sym(entries) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a real symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    m = np.asarray(entries, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"matrix of shape {m.shape} has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > 1e-12 * max(1.0, np.max(np.abs(m))):
        raise InputError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"eigendecomposition failed for {m.shape[0]}x{m.shape[0]} matrix "
            f"(frobenius norm {np.linalg.norm(m):.6e}, trace {np.trace(m):.6e}): {exc}"
        ) from exc
    return vals[::-1].copy(), vecs[:, ::-1].copy()


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric PSD Gram matrix with its cached spectrum.

    ``eigvals`` are the eigenvalues of ``entries`` itself (not of
    ``entries / n``), sorted descending, with round-off negatives clamped to
    zero.
    """

    entries: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def from_entries(cls, entries) -> "KernelMatrix":
        m = np.array(entries, dtype=float)
        vals, vecs = eig_sym(m)
        tol = PSD_RTOL * max(float(np.trace(m)), 0.0)
        if vals.size and vals[-1] < -tol:
            raise NumericError(
                f"matrix is not positive semidefinite: smallest eigenvalue {vals[-1]:.6e} "
                f"below tolerance -{tol:.3e}"
            )
        vals = np.maximum(vals, 0.0)
        for a in (m, vals, vecs):
            a.setflags(write=False)
        return cls(m, vals, vecs)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def normalized_eigvals(self) -> np.ndarray:
        """Eigenvalues of ``K / n`` (the empirical integral operator)."""
        return self.eigvals / self.n

    def effective_dim(self, lam):
        return empirical_effective_dim(self.eigvals, lam, self.n)


def empirical_effective_dim(eigvals, lam, n: int):
    """sum_i s_i / (s_i + lam * n) for the eigenvalues s_i of the Gram matrix.

    Equal to Tr[(lam n I + K)^{-1} K]. ``lam`` may be an array, in which case
    one value per entry is returned.
    """
    s = np.asarray(eigvals, dtype=float)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise InputError("lambda must be positive")
    if n < 1:
        raise InputError("n must be a positive integer")
    s = np.maximum(s, 0.0)
    denom = s + lam_arr[..., None] * n
    out = np.sum(s / denom, axis=-1)
    return float(out) if out.ndim == 0 else out


def local_rademacher(eigvals, epsilon: float, n: int) -> float:
    """Local empirical Rademacher complexity sqrt(mean(min(mu_i, eps^2))).

    ``eigvals`` must be the eigenvalues of the normalised matrix ``K / n``.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    mu = np.maximum(np.asarray(eigvals, dtype=float), 0.0)
    return float(np.sqrt(np.sum(np.minimum(mu, epsilon * epsilon)) / n))
