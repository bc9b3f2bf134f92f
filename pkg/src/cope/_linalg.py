"""Shared dense linear-algebra helpers."""
from __future__ import annotations

import numpy as np
import scipy.linalg

# Relative singular-value cutoff for the pseudo-inverse fallback.
PINV_RCOND = 1e-12


def solve_psd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a``.

    Uses a Cholesky factorization; falls back to a pseudo-inverse when the
    matrix is numerically singular (possible only for degenerate tiny
    datasets, since all call sites add a positive ridge).
    """
    try:
        c, low = scipy.linalg.cho_factor(a, check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except scipy.linalg.LinAlgError:
        return np.linalg.pinv(a, rcond=PINV_RCOND) @ b


def inv_psd(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix (same fallback as solve_psd)."""
    return solve_psd(a, np.eye(a.shape[0]))
