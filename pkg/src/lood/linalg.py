"""Positive-semidefinite linear algebra.

All solves go through a Cholesky factor. The only explicit inverse in the
package is :func:`block_inverse`, which appends one row/column to a known
inverse and is what makes leave-one-out posteriors cheap.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, NotPsd, SingularSchur

# Jitter levels, as multiples of the largest diagonal entry.
DEFAULT_JITTER_LEVELS = (0.0, 1e-10, 1e-9, 1e-8)


@dataclass(frozen=True)
class JitterPolicy:
    levels: tuple = DEFAULT_JITTER_LEVELS


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``lower`` with ``lower @ lower.T == M + jitter * I``."""

    lower: np.ndarray
    jitter: float

    @property
    def n(self):
        return self.lower.shape[0]


@dataclass(frozen=True)
class BlockInverseResult:
    inverse: np.ndarray
    alpha: float


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def cholesky_psd(m, jitter_policy=None):
    """Cholesky factor of a symmetric PSD matrix, escalating diagonal jitter.

    The applied jitter is ``level * max(diag(m))`` for the first level in the
    policy that factorizes; it is recorded on the returned factor.
    """
    policy = jitter_policy or JitterPolicy()
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    m = symmetrize(m)
    n = m.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)), 0.0)
    scale = float(np.max(np.diag(m)))
    if not np.isfinite(scale):
        raise NotPsd("matrix has non-finite entries")
    if scale <= 0:
        # all-zero diagonal: fall back to absolute jitter
        scale = 1.0
    for level in policy.levels:
        delta = level * scale
        try:
            lower = np.linalg.cholesky(m + delta * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(lower)):
            return CholeskyFactor(lower, delta)
    raise NotPsd(f"Cholesky failed after jitter {policy.levels[-1]:g} x max-diagonal")


def solve_psd(factor, b):
    """Solve ``(L L^T) X = B`` by two triangular solves."""
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    b2 = b[:, None] if vector else b
    if b2.shape[0] != factor.n:
        raise DimensionMismatch(f"factor is {factor.n}x{factor.n}, rhs has {b2.shape[0]} rows")
    if factor.n == 0:
        out = np.zeros_like(b2)
    else:
        y = sla.solve_triangular(factor.lower, b2, lower=True)
        out = sla.solve_triangular(factor.lower.T, y, lower=False)
    return out[:, 0] if vector else out


def logdet_psd(factor):
    if factor.n == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


def block_inverse(a_inv, b, c):
    """Inverse of ``[[A, b], [b^T, c]]`` given ``A^{-1}``.

    Uses the Schur complement ``alpha = c - b^T A^{-1} b``::

        [[A^-1 + A^-1 b b^T A^-1 / alpha, -A^-1 b / alpha],
         [-b^T A^-1 / alpha,               1 / alpha      ]]
    """
    a_inv = np.atleast_2d(np.asarray(a_inv, dtype=float)) if np.size(a_inv) else np.zeros((0, 0))
    b = np.asarray(b, dtype=float).reshape(-1)
    n = a_inv.shape[0]
    if a_inv.shape != (n, n) or b.shape[0] != n:
        raise DimensionMismatch(f"A^-1 is {a_inv.shape}, b has length {b.shape[0]}")
    ab = a_inv @ b
    alpha = float(c) - float(b @ ab)
    if not alpha > 1e-14:
        raise SingularSchur(f"Schur complement {alpha:.3e} is not positive")
    out = np.empty((n + 1, n + 1))
    out[:n, :n] = a_inv + np.outer(ab, ab) / alpha
    out[:n, n] = -ab / alpha
    out[n, :n] = -ab / alpha
    out[n, n] = 1.0 / alpha
    return BlockInverseResult(symmetrize(out), alpha)


def is_psd(m, tol=1e-8):
    """True if ``m`` factorizes without jitter or its smallest eigenvalue is >= -tol."""
    m = symmetrize(m)
    if m.size == 0:
        return True
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        pass
    return bool(np.linalg.eigvalsh(m).min() >= -tol)
