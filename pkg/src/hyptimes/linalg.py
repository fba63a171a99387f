"""Small dense kernels: batched one-sided Jacobi singular values."""

from __future__ import annotations

import numpy as np

_MAX_SWEEPS = 60


def singular_values(A, tol: float = 1e-15) -> np.ndarray:
    """Singular values of a stack of small matrices, descending.

    One-sided (Hestenes) Jacobi: plane rotations orthogonalise the columns of
    every matrix in the batch simultaneously; the column norms are then the
    singular values. ``A`` has shape ``(..., m, n)``.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.ndim < 2:
        raise ValueError("expected an array of matrices")
    batch = A.shape[:-2]
    m, n = A.shape[-2:]
    if m < n:
        A = np.swapaxes(A, -1, -2).copy()
        m, n = n, m
    A = A.reshape((-1, m, n))
    if n == 1:
        s = np.sqrt(np.einsum("bij,bij->b", A, A))
        return s.reshape(batch + (1,))
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = A[:, :, p]
                aq = A[:, :, q]
                alpha = np.einsum("bi,bi->b", ap, ap)
                beta = np.einsum("bi,bi->b", aq, aq)
                gamma = np.einsum("bi,bi->b", ap, aq)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                g = np.where(active, gamma, 1.0)
                with np.errstate(over="ignore"):
                    # a huge zeta only means a tiny rotation; t -> 0 is correct
                    zeta = (beta - alpha) / (2.0 * g)
                    t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(zeta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c[:, None] * ap - s[:, None] * aq
                new_q = s[:, None] * ap + c[:, None] * aq
                A[:, :, p] = new_p
                A[:, :, q] = new_q
        if not rotated:
            break
    s = np.sqrt(np.einsum("bij,bij->bj", A, A))
    s = -np.sort(-s, axis=-1)
    return s.reshape(batch + (n,))


def spectral_norm(A) -> np.ndarray:
    """Largest singular value of each matrix in a stack."""
    return singular_values(A)[..., 0]


def conorm(A) -> np.ndarray:
    """Smallest singular value (``1/|A^-1|`` for invertible square ``A``)."""
    return singular_values(A)[..., -1]


def log_norms(A) -> tuple[np.ndarray, np.ndarray]:
    """``(ln sigma_max, ln sigma_min)`` for a stack of square matrices."""
    s = singular_values(A)
    with np.errstate(divide="ignore"):
        return np.log(s[..., 0]), np.log(s[..., -1])
