"""Matrix value types: empirical covariances and block-partitioned precisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPrecisionError, NotPositiveDefiniteError


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def check_symmetric(m: np.ndarray, name: str, rtol: float = 1e-8) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return symmetrize(m)


@dataclass(frozen=True)
class EmpiricalCovariance:
    """Empirical covariance of the observed variables together with the sample count."""

    matrix: np.ndarray
    n: int

    def __post_init__(self):
        m = check_symmetric(self.matrix, "covariance")
        if int(self.n) < 1:
            raise ValueError("sample count must be >= 1")
        d = np.diag(m)
        if np.any(d <= 0):
            raise ValueError("covariance diagonal must be strictly positive")
        evals = np.linalg.eigvalsh(m)
        if evals[0] < -1e-10 * max(1.0, evals[-1]):
            raise NotPositiveDefiniteError(
                f"covariance has eigenvalue {evals[0]:.3e} below tolerance"
            )
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "n", int(self.n))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_data(cls, data: np.ndarray, center: bool = True) -> "EmpiricalCovariance":
        """MLE covariance (1/n normalization) of an n x p sample matrix."""
        x = np.asarray(data, dtype=float)
        if x.ndim != 2:
            raise ValueError("data must be a 2-d array")
        n = x.shape[0]
        if center:
            x = x - x.mean(axis=0, keepdims=True)
        return cls(symmetrize(x.T @ x / n), n)


@dataclass(frozen=True)
class PartitionedPrecision:
    """Precision matrix over observed (first) and hidden (last) variables."""

    matrix: np.ndarray
    n_observed: int
    n_hidden: int = 0

    def __post_init__(self):
        m = check_symmetric(self.matrix, "precision")
        if self.n_observed < 0 or self.n_hidden < 0:
            raise ValueError("block sizes must be nonnegative")
        if m.shape[0] != self.n_observed + self.n_hidden:
            raise ValueError(
                f"matrix size {m.shape[0]} != n_observed + n_hidden "
                f"({self.n_observed} + {self.n_hidden})"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def k_oo(self) -> np.ndarray:
        return self.matrix[: self.n_observed, : self.n_observed]

    @property
    def k_oh(self) -> np.ndarray:
        return self.matrix[: self.n_observed, self.n_observed :]

    @property
    def k_ho(self) -> np.ndarray:
        return self.matrix[self.n_observed :, : self.n_observed]

    @property
    def k_hh(self) -> np.ndarray:
        return self.matrix[self.n_observed :, self.n_observed :]

    def hidden_diagonal(self) -> np.ndarray:
        return np.diag(self.matrix)[self.n_observed :]

    def require_positive_hidden_diagonal(self):
        if self.n_hidden and np.any(self.hidden_diagonal() <= 0):
            raise InvalidPrecisionError("hidden diagonal entries must be positive")


def project_to_positive_definite(
    matrix: np.ndarray, eig_floor: float = 1e-6
) -> tuple[np.ndarray, bool]:
    """Clip eigenvalues below eig_floor * lambda_max; returns (matrix, changed)."""
    m = symmetrize(np.asarray(matrix, dtype=float))
    evals, vecs = np.linalg.eigh(m)
    lmax = max(evals[-1], np.finfo(float).tiny)
    floor = eig_floor * lmax
    if evals[0] >= floor:
        return m, False
    clipped = np.maximum(evals, floor)
    return symmetrize((vecs * clipped) @ vecs.T), True


def floor_spectrum(
    matrix: np.ndarray, n_observed: int, eig_floor: float = 1e-6
) -> tuple[np.ndarray, bool]:
    """PD projection that keeps the hidden block strictly diagonal.

    Re-zeroing the hidden off-diagonal after clipping can push an eigenvalue
    back below the floor, so the two steps alternate; a diagonal ridge is the
    final fallback.
    """
    m = symmetrize(np.asarray(matrix, dtype=float))
    projected = False
    for _ in range(6):
        evals = np.linalg.eigvalsh(m)
        lmax = max(evals[-1], np.finfo(float).tiny)
        floor = eig_floor * lmax
        if evals[0] >= floor:
            return m, projected
        w, v = np.linalg.eigh(m)
        m = symmetrize((v * np.maximum(w, floor)) @ v.T)
        hidden = m[n_observed:, n_observed:]
        m[n_observed:, n_observed:] = np.diag(np.diag(hidden))
        projected = True
    evals = np.linalg.eigvalsh(m)
    floor = eig_floor * max(evals[-1], np.finfo(float).tiny)
    if evals[0] < floor:
        m = m + (floor - evals[0]) * np.eye(m.shape[0])
    return symmetrize(m), True
