"""Ridge-regression feature ranking."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from ..errors import DataError, ParameterError


def ridge_coefficients(X, y, lam: float = 1.0) -> np.ndarray:
    """beta = (X^T X + lam I)^-1 X^T (2y - 1) via a symmetric positive-definite solve."""
    if not lam > 0:
        raise ParameterError(f"ridge penalty must be positive, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"ridge needs a non-empty 2-D design matrix, got shape {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise DataError("ridge labels must be 0 or 1")
    A = X.T @ X + lam * np.eye(X.shape[1])
    return scipy.linalg.solve(A, X.T @ (2.0 * y - 1.0), assume_a="pos")


def ridge_rank(X, y, lam: float = 1.0) -> list[tuple[int, float]]:
    """(feature index, coefficient) pairs sorted by descending signed coefficient."""
    beta = ridge_coefficients(X, y, lam)
    order = sorted(range(beta.size), key=lambda i: (-beta[i], i))
    return [(i, float(beta[i])) for i in order]
