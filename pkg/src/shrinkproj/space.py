"""Finite-dimensional inner-product space primitives.

Vectors are 1-D float arrays and linear operators are dense 2-D arrays of
shape ``(dim_H2, dim_H1)``. Everything here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# power iteration settings
POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000
EIGH_FALLBACK_DIM = 64
SPECTRAL_RTOL = 1e-10


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float array, optionally of length ``dim``."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    if dim is not None and v.size != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.size}")
    return v


def as_operator(A, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce ``A`` to a finite dense 2-D float array."""
    m = np.asarray(A, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("operator entries must be finite")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"operator shape mismatch: expected {shape}, got {m.shape}")
    return m


def inner(x, y) -> float:
    """Euclidean inner product; raises ``ValueError`` on dimension mismatch."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


def norm(x) -> float:
    return float(np.linalg.norm(x))


def adjoint(A) -> np.ndarray:
    """Adjoint of a real dense operator, i.e. its transpose."""
    return np.ascontiguousarray(as_operator(A).T)


@dataclass(frozen=True)
class SpectralBound:
    """Largest eigenvalues ``L_i`` of ``A_i^T A_i`` and their maximum ``L``.

    The admissible step sizes form the open interval ``(0, 1/L)``; when every
    operator is zero ``L = 0`` and the upper end is ``inf``.
    """

    per_operator: tuple[float, ...]
    L: float

    @property
    def gamma_interval(self) -> tuple[float, float]:
        upper = np.inf if self.L == 0.0 else 1.0 / self.L
        return (0.0, upper)


def power_iteration(G: np.ndarray, tol: float = POWER_TOL,
                    max_iter: int = POWER_MAX_ITER) -> tuple[float, bool]:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Starts from the normalized all-ones vector so the result is reproducible.
    Returns the Rayleigh quotient and whether the stopping test was met.
    """
    n = G.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    rq = float(v @ G @ v)
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True
        v = w / nw
        rq_new = float(v @ G @ v)
        if abs(rq_new - rq) < tol * max(1.0, abs(rq_new)):
            return rq_new, True
        rq = rq_new
    return rq, False


def _largest_eig(A: np.ndarray) -> float:
    G = A.T @ A
    G = 0.5 * (G + G.T)
    lam, converged = power_iteration(G)
    if G.shape[0] <= EIGH_FALLBACK_DIM:
        # the all-ones start can be orthogonal to the top eigenvector
        exact = float(np.linalg.eigvalsh(G)[-1])
        if not converged or abs(lam - exact) > SPECTRAL_RTOL * max(1.0, abs(exact)):
            lam = exact
    elif not converged:
        raise RuntimeError("power iteration did not converge")
    return max(lam, 0.0)


def spectral_bound(ops) -> SpectralBound:
    """Compute ``L_i = lambda_max(A_i^T A_i)`` for each operator and ``L = max L_i``.

    Parameters
    ----------
    ops : sequence of array_like
        Dense operators ``A_i``.

    Returns
    -------
    SpectralBound
    """
    ops = list(ops)
    if not ops:
        raise ValueError("spectral_bound needs at least one operator")
    per = tuple(_largest_eig(as_operator(A)) for A in ops)
    return SpectralBound(per_operator=per, L=max(per))


def gamma_valid(gamma: float, bound: SpectralBound) -> bool:
    """True iff ``0 < gamma < 1/L`` (any positive gamma when ``L == 0``)."""
    if not np.isfinite(gamma) or gamma <= 0.0:
        return False
    if bound.L == 0.0:
        return True
    return gamma < 1.0 / bound.L
