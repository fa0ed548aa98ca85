"""Monotone bifunctions, their resolvents and equilibrium residuals.

Every supported family has an affine "operator form" ``z -> M z + q``:

* ``MonotoneAffine(M, q)``: ``f(x, y) = <M x + q, y - x>``
* ``ConvexDifference(P, c)``: ``f(x, y) = phi(y) - phi(x)`` with
  ``phi(z) = 0.5 <P z, z> + <c, z>``; its operator form is ``(P, c)``
* ``ZeroBifunction``: ``f = 0``; operator form ``(0, 0)``

The resolvent ``T_r^f x`` is the unique ``z`` in the domain with
``f(z, y) + <y - z, z - x> / r >= 0`` for every ``y`` in the domain, i.e. the
solution of the variational inequality for ``G(z) = M z + q + (z - x) / r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexSet, NonConvergenceError, WholeSpace, sample_points
from .space import as_operator, as_vector

INNER_TOL = 1e-10
INNER_MAX_ITER = 200_000
LINSOLVE_GUARD = 1e-8
MONOTONE_TOL = 1e-10


class NumericalError(ArithmeticError):
    """A linear solve failed its residual guard."""


class Bifunction:
    """Base class; subclasses provide ``value`` and ``operator_form``."""

    family: str = ""
    domain: ConvexSet

    @property
    def dim(self) -> int:
        return self.domain.dim

    def value(self, x, y) -> float:
        raise NotImplementedError

    def operator_form(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x, y) -> float:
        return self.value(x, y)


def _check_domain(domain, dim):
    if domain is None:
        return WholeSpace(dim)
    if domain.dim != dim:
        raise ValueError(f"domain dimension {domain.dim} does not match {dim}")
    return domain


@dataclass(frozen=True, eq=False)
class MonotoneAffine(Bifunction):
    """``f(x, y) = <M x + q, y - x>``; monotone iff ``M + M^T`` is PSD."""

    M: np.ndarray
    q: np.ndarray
    domain: ConvexSet | None = None
    check: bool = field(default=True, repr=False)
    family = "MonotoneAffine"

    def __post_init__(self):
        M = as_operator(self.M)
        n = M.shape[0]
        if M.shape != (n, n):
            raise ValueError("M must be square")
        q = as_vector(self.q, n)
        if self.check:
            sym_min = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
            if sym_min < -MONOTONE_TOL * max(1.0, np.abs(M).max()):
                raise ValueError(f"M + M^T is not positive semidefinite (min eig {sym_min:.3e})")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "domain", _check_domain(self.domain, n))

    def value(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        return float((self.M @ x + self.q) @ (np.asarray(y, dtype=float) - x))

    def operator_form(self):
        return self.M, self.q


@dataclass(frozen=True, eq=False)
class ConvexDifference(Bifunction):
    """``f(x, y) = phi(y) - phi(x)`` for a convex quadratic ``phi``."""

    P: np.ndarray
    c: np.ndarray
    domain: ConvexSet | None = None
    family = "ConvexDifference"

    def __post_init__(self):
        P = as_operator(self.P)
        n = P.shape[0]
        if P.shape != (n, n) or not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be square and symmetric")
        if np.linalg.eigvalsh(P)[0] < -MONOTONE_TOL * max(1.0, np.abs(P).max()):
            raise ValueError("P must be positive semidefinite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", as_vector(self.c, n))
        object.__setattr__(self, "domain", _check_domain(self.domain, n))

    def phi(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.P @ z + self.c @ z)

    def value(self, x, y) -> float:
        return self.phi(y) - self.phi(x)

    def operator_form(self):
        return self.P, self.c


@dataclass(frozen=True, eq=False)
class ZeroBifunction(Bifunction):
    domain: ConvexSet
    family = "Zero"

    def value(self, x, y) -> float:
        return 0.0

    def operator_form(self):
        n = self.domain.dim
        return np.zeros((n, n)), np.zeros(n)


@dataclass(frozen=True)
class ResolventQuery:
    r: float
    x: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0.0):
            raise ValueError("resolvent parameter r must be positive")
        object.__setattr__(self, "x", as_vector(self.x))


def _unconstrained(M, q, r, x):
    n = x.size
    K = np.eye(n) + r * M
    rhs = x - r * q
    z = np.linalg.solve(K, rhs)
    res = np.linalg.norm(K @ z - rhs)
    if res > LINSOLVE_GUARD * max(1.0, np.linalg.norm(rhs)):
        raise NumericalError(f"resolvent linear solve residual {res:.3e}")
    return z


def projected_gradient(M, q, r, x, domain: ConvexSet, z0=None,
                       tol: float = INNER_TOL, max_iter: int = INNER_MAX_ITER) -> np.ndarray:
    """Solve the resolvent inequality on ``domain`` by projected gradient.

    ``G(z) = M z + q + (z - x)/r`` is ``1/r``-strongly monotone and
    ``(||M|| + 1/r)``-Lipschitz, so the step ``r / (1 + r ||M||)^2`` makes the
    iteration a contraction with factor ``c = sqrt(1 - 1/(1 + r||M||)^2)``.
    Iteration stops when the step length certifies ``||z_k - z*|| <= tol``.
    """
    norm_M = float(np.linalg.norm(M, 2)) if M.size else 0.0
    beta = r / (1.0 + r * norm_M) ** 2
    c = np.sqrt(max(0.0, 1.0 - 1.0 / (1.0 + r * norm_M) ** 2))
    # ||z_{k+1} - z*|| <= c/(1-c) ||z_{k+1} - z_k||
    stop = tol if c == 0.0 else tol * (1.0 - c) / c
    z = domain.project(x if z0 is None else z0)
    step = np.inf
    for _ in range(max_iter):
        g = M @ z + q + (z - x) / r
        z_new = domain.project(z - beta * g)
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        if step <= stop:
            return z
    raise NonConvergenceError("resolvent inner solver hit its iteration cap", step)


def resolvent(f: Bifunction, query: ResolventQuery | None = None, *, r: float | None = None,
              x=None, z0=None, method: str = "auto") -> np.ndarray:
    """Evaluate ``T_r^f x``.

    Parameters
    ----------
    f : Bifunction
    query : ResolventQuery, optional
        Alternatively pass ``r`` and ``x`` as keywords.
    z0 : array_like, optional
        Starting point for the inner solver.
    method : {"auto", "closed", "iterative"}
        ``auto`` uses the closed form on the whole space, the projection for
        the zero bifunction, and projected gradient otherwise.

    Returns
    -------
    ndarray
    """
    if query is None:
        query = ResolventQuery(r, x)
    r, x = query.r, as_vector(query.x, f.dim)
    dom = f.domain
    if method == "auto":
        if isinstance(f, ZeroBifunction):
            return dom.project(x)
        method = "closed" if isinstance(dom, WholeSpace) else "iterative"
    M, q = f.operator_form()
    if method == "closed":
        if not isinstance(dom, WholeSpace):
            raise ValueError("closed-form resolvent requires an unconstrained domain")
        return _unconstrained(M, q, r, x)
    if method == "iterative":
        if z0 is None and isinstance(dom, WholeSpace):
            z0 = x
        elif z0 is None:
            # the unconstrained solution, projected, is usually a close start
            z0 = _unconstrained(M, q, r, x)
        return projected_gradient(M, q, r, x, dom, z0=z0)
    raise ValueError(f"unknown resolvent method {method!r}")


def ep_residual(f: Bifunction, x, r: float = 1.0) -> float:
    """``||x - T_r^f x||``; vanishes exactly on the equilibrium set of ``f``."""
    x = as_vector(x, f.dim)
    return float(np.linalg.norm(x - resolvent(f, ResolventQuery(r, x))))


def resolvent_inequality_slack(f: Bifunction, r: float, x, z, y) -> float:
    """``f(z, y) + <y - z, z - x>/r``; nonnegative when ``z = T_r^f x``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return f.value(z, y) + float((y - z) @ (z - np.asarray(x, dtype=float))) / r


@dataclass
class AxiomCheck:
    name: str
    worst: float
    passed: bool


@dataclass
class AxiomReport:
    """Per-axiom outcome of :func:`check_bifunction_axioms`.

    ``worst`` is the largest observed violation (positive means violated).
    """

    checks: list[AxiomCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AxiomCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def check_bifunction_axioms(f: Bifunction, samples: int = 200, seed: int = 0,
                            tol: float = MONOTONE_TOL) -> AxiomReport:
    """Sample the four standing assumptions on a bifunction.

    Checks ``f(x, x) = 0``, monotonicity ``f(x, y) + f(y, x) <= 0``, midpoint
    convexity of ``y -> f(x, y)`` and upper hemicontinuity
    ``lim_{t -> 0} f(t z + (1 - t) x, y) <= f(x, y)`` on random points of
    the domain.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    pts = sample_points(f.domain, rng, 4 * samples)
    X, Y, Y2, Z = pts[0::4], pts[1::4], pts[2::4], pts[3::4]

    def scale(*vs):
        return 1.0 + sum(float(v @ v) for v in vs)

    diag = max(abs(f.value(x, x)) / scale(x) for x in X)
    mono = max((f.value(x, y) + f.value(y, x)) / scale(x, y) for x, y in zip(X, Y))
    conv = max((f.value(x, 0.5 * (y1 + y2)) - 0.5 * (f.value(x, y1) + f.value(x, y2)))
               / scale(x, y1, y2) for x, y1, y2 in zip(X, Y, Y2))
    hemi = -np.inf
    for x, y, z in zip(X, Y, Z):
        base = f.value(x, y)
        # along t -> 0 the excess must die out
        t = 1e-9
        excess = f.value(t * z + (1.0 - t) * x, y) - base
        hemi = max(hemi, excess / scale(x, y, z))
    return AxiomReport([
        AxiomCheck("vanishes_on_diagonal", diag, diag <= tol),
        AxiomCheck("monotone", mono, mono <= tol),
        AxiomCheck("convex_in_second_argument", conv, conv <= tol),
        AxiomCheck("upper_hemicontinuous", hemi, hemi <= 1e3 * tol),
    ])
