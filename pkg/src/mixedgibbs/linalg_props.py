"""Small dense linear-algebra utilities and matrix-inequality verifiers.

Holds the symmetric positive definite square root, a tolerance-aware
positive-semidefinite ordering check, the explicit N x N group smoothing
matrix (test-only, it certifies the structured aggregates), and a finite
difference verifier for the derivative bound on matrix square roots.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "spd_sqrt",
    "psd_dominates",
    "dense_smoother",
    "sqrt_derivative_bound_check",
]

SYMMETRY_RTOL = 1e-12


def _require_symmetric(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return a


def spd_sqrt(a):
    """Unique symmetric positive definite square root of an SPD matrix."""
    a = _require_symmetric(a)
    vals, vecs = np.linalg.eigh(a)
    if vals[0] <= 0:
        raise ValueError(f"matrix is not positive definite (smallest eigenvalue {vals[0]:.3e})")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T)


def psd_dominates(a, b, tol):
    """True iff a is below b in the positive-semidefinite order.

    The slack allowed is scale-aware: smallest eigenvalue of b - a must be
    at least ``-tol * (1 + largest absolute entry of a or b)``.
    """
    a = _require_symmetric(a, "a")
    b = _require_symmetric(b, "b")
    if a.shape != b.shape:
        raise ValueError("a and b must have the same dimension")
    scale = 1.0 + max(float(np.abs(a).max()), float(np.abs(b).max()))
    return bool(np.linalg.eigvalsh(b - a)[0] >= -tol * scale)


def dense_smoother(lam, tau, data, cap=512):
    """Explicit N x N smoothing matrix: per-group shrinkage weights on the
    diagonal plus the rank-one grand-mean correction.

    Test-only; refuses N beyond ``cap`` so production paths cannot fall into
    O(N^2) work by accident.  Row sums are exactly one and the spectrum lies
    in (0, 1].
    """
    if not (lam > 0 and tau > 0):
        raise ValueError("lambda and tau must be strictly positive")
    n = data.n_total
    if n > cap:
        raise ValueError(f"dense path refused: N={n} exceeds cap {cap}")
    c_group = data.group_sizes * tau / (lam + data.group_sizes * tau)
    c_row = np.repeat(c_group, data.group_sizes)
    u = 1.0 - c_row
    return np.diag(c_row) + np.outer(u, u) / u.sum()


def sqrt_derivative_bound_check(family, x, h):
    """Central-difference check of the square-root derivative bound.

    ``family`` maps a scalar to an SPD matrix.  Returns ``(lhs, rhs)`` where
    lhs is the largest eigenvalue of the squared derivative of the matrix
    square root and rhs is the bound built from the derivative of the matrix
    itself over four times its smallest eigenvalue.  Both derivatives use the
    same central-difference stencil, so the caller should allow a
    discretization slack on the comparison.
    """
    a_minus, a_mid, a_plus = family(x - h), family(x), family(x + h)
    d_root = (spd_sqrt(a_plus) - spd_sqrt(a_minus)) / (2.0 * h)
    d_mat = (np.asarray(a_plus) - np.asarray(a_minus)) / (2.0 * h)
    lhs = float(np.linalg.eigvalsh(d_root @ d_root)[-1])
    lam_min = float(np.linalg.eigvalsh(_require_symmetric(a_mid))[0])
    if lam_min <= 0:
        raise ValueError("family is not positive definite at the midpoint")
    rhs = float(np.linalg.eigvalsh(d_mat @ d_mat)[-1]) / (4.0 * lam_min)
    return lhs, rhs
