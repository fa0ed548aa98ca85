"""Closed convex sets and metric projections onto them.

Polyhedral intersections are projected exactly with a dual active-set
(Goldfarb-Idnani) quadratic program; intersections with a ball or an affine
subspace fall back to Dykstra's alternating projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import as_vector

CLOSED_FORM_TOL = 1e-10
ITERATIVE_TOL = 1e-8
DYKSTRA_MAX_ITER = 100_000

# feasibility slack for the dual active-set QP, measured on unit normals
_QP_FEAS_TOL = 1e-12
_QP_DEP_TOL = 1e-11


class InfeasibleSetError(ValueError):
    """The requested intersection is certified to be empty."""


class NonConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """The set ``{z : <normal, z> <= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = as_vector(self.normal)
        b = float(self.offset)
        if not np.isfinite(b):
            raise ValueError("half-space offset must be finite")
        if not np.any(a) and b < 0.0:
            raise ValueError("zero normal with negative offset describes the empty set")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self) -> int:
        return self.normal.size

    @property
    def is_whole_space(self) -> bool:
        return not np.any(self.normal)

    def violation(self, z) -> float:
        """Signed value ``<a, z> - b``; positive means outside."""
        return float(self.normal @ np.asarray(z, dtype=float) - self.offset)

    def contains(self, z, tol: float = CLOSED_FORM_TOL) -> bool:
        return self.violation(z) <= tol

    def normalized(self) -> tuple[np.ndarray, float]:
        s = np.linalg.norm(self.normal)
        return self.normal / s, self.offset / s


class ConvexSet:
    """Base class for the supported closed convex sets."""

    variant: str = ""
    dim: int

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = CLOSED_FORM_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def halfspace_rows(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(G, h)`` with the set equal to ``{z : G z <= h}``, or None."""
        return None

    def diameter(self) -> float:
        return np.inf

    def anchor(self) -> np.ndarray:
        """A representative point used to centre random sampling."""
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class WholeSpace(ConvexSet):
    dim: int
    variant = "WholeSpace"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dimension must be positive")

    def project(self, x) -> np.ndarray:
        return as_vector(x, self.dim).copy()

    def contains(self, x, tol: float = CLOSED_FORM_TOL) -> bool:
        return np.asarray(x).size == self.dim

    def halfspace_rows(self):
        return np.zeros((0, self.dim)), np.zeros(0)


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray
    variant = "Box"

    def __post_init__(self):
        lo = as_vector(self.lower)
        hi = as_vector(self.upper, lo.size)
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def project(self, x) -> np.ndarray:
        return np.clip(as_vector(x, self.dim), self.lower, self.upper)

    def halfspace_rows(self):
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower])

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def anchor(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float
    variant = "Ball"

    def __post_init__(self):
        object.__setattr__(self, "center", as_vector(self.center))
        r = float(self.radius)
        if not (np.isfinite(r) and r > 0.0):
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.size

    def project(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        d = x - self.center
        dist = np.linalg.norm(d)
        if dist <= self.radius:
            return x.copy()
        return self.center + (self.radius / dist) * d

    def diameter(self) -> float:
        return 2.0 * self.radius

    def anchor(self) -> np.ndarray:
        return self.center.copy()


@dataclass(frozen=True, eq=False)
class HalfSpaceIntersection(ConvexSet):
    halfspaces: tuple[HalfSpace, ...]
    dim_: int | None = None
    variant = "HalfSpaceIntersection"

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        if not hs and self.dim_ is None:
            raise ValueError("an empty half-space list needs an explicit dimension")
        dim = hs[0].dim if hs else int(self.dim_)
        if any(h.dim != dim for h in hs):
            raise ValueError("half-spaces have inconsistent dimensions")
        object.__setattr__(self, "halfspaces", hs)
        object.__setattr__(self, "dim_", dim)

    @property
    def dim(self) -> int:
        return self.dim_

    def halfspace_rows(self):
        if not self.halfspaces:
            return np.zeros((0, self.dim)), np.zeros(0)
        G = np.array([h.normal for h in self.halfspaces])
        h = np.array([h.offset for h in self.halfspaces])
        return G, h

    def project(self, x) -> np.ndarray:
        G, h = self.halfspace_rows()
        return qp_project(G, h, as_vector(x, self.dim))

    def contains(self, x, tol: float = CLOSED_FORM_TOL) -> bool:
        return all(hs.contains(x, tol) for hs in self.halfspaces)


@dataclass(frozen=True, eq=False)
class AffineSubspace(ConvexSet):
    """``{offset + basis @ t}``; columns of ``basis`` span the directions."""

    basis: np.ndarray
    offset: np.ndarray
    variant = "AffineSubspace"

    def __post_init__(self):
        off = as_vector(self.offset)
        B = np.asarray(self.basis, dtype=float)
        if B.size == 0:
            B = np.zeros((off.size, 0))
        elif B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape[0] != off.size or not np.all(np.isfinite(B)):
            raise ValueError("affine basis must have one row per coordinate")
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "offset", off)

    @property
    def dim(self) -> int:
        return self.offset.size

    def project(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        if self.basis.shape[1] == 0:
            return self.offset.copy()
        t, *_ = np.linalg.lstsq(self.basis, x - self.offset, rcond=None)
        return self.offset + self.basis @ t

    def anchor(self) -> np.ndarray:
        return self.offset.copy()


def project(S: ConvexSet, x) -> np.ndarray:
    """Metric projection of ``x`` onto ``S``.

    Raises
    ------
    InfeasibleSetError
        If ``S`` is a half-space intersection certified to be empty.
    """
    return S.project(x)


def project_halfspace(h: HalfSpace, x) -> np.ndarray:
    """Closed-form projection onto a single half-space."""
    x = as_vector(x, h.dim)
    excess = h.normal @ x - h.offset
    if excess <= 0.0:
        return x.copy()
    return x - (excess / (h.normal @ h.normal)) * h.normal


def halfspace_from_iterates(x_n, y_n, theta_n: float) -> HalfSpace:
    """Half-space ``{z : ||y_n - z||^2 <= ||x_n - z||^2 + theta_n}``.

    Expanded, this is ``2<x_n - y_n, z> <= ||x_n||^2 - ||y_n||^2 + theta_n``.
    The right-hand side is evaluated as ``<x_n - y_n, x_n + y_n> + theta_n``
    to avoid cancellation once the iterates are close.
    """
    x_n = as_vector(x_n)
    y_n = as_vector(y_n, x_n.size)
    if theta_n < 0.0:
        raise ValueError("theta_n must be nonnegative")
    d = x_n - y_n
    return HalfSpace(2.0 * d, float(d @ (x_n + y_n)) + float(theta_n))


def accumulate_halfspace(halves: list[HalfSpace], new: HalfSpace) -> list[HalfSpace]:
    """Append ``new`` unless it is redundant; returns the (new) list.

    Whole-space half-spaces are skipped. A half-space with the same unit normal
    as an existing one keeps only the tighter offset.
    """
    if new.is_whole_space:
        return halves
    a_new, b_new = new.normalized()
    for i, h in enumerate(halves):
        a, b = h.normalized()
        if np.array_equal(a, a_new):
            if b <= b_new:
                return halves
            out = list(halves)
            out[i] = new
            return out
    return [*halves, new]


def _rows(halves: Sequence[HalfSpace], dim: int) -> tuple[np.ndarray, np.ndarray]:
    live = [h for h in halves if not h.is_whole_space]
    if not live:
        return np.zeros((0, dim)), np.zeros(0)
    return np.array([h.normal for h in live]), np.array([h.offset for h in live])


def qp_project(G, h, x0, max_steps: int | None = None) -> np.ndarray:
    """Project ``x0`` onto ``{z : G z <= h}`` with a dual active-set method.

    This is the Goldfarb-Idnani scheme specialised to the identity Hessian:
    start from the unconstrained minimizer ``x0`` and repeatedly add the most
    violated constraint, taking partial steps that drop active constraints
    whose multipliers would turn negative. Rows are scaled to unit norm first.

    Raises
    ------
    InfeasibleSetError
        When a violated constraint cannot be satisfied while keeping the
        multipliers of the active set nonnegative (an infeasibility
        certificate).
    """
    x0 = np.asarray(x0, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, x0.size)
    h = np.asarray(h, dtype=float).reshape(-1)
    if G.shape[0] == 0:
        return x0.copy()
    norms = np.linalg.norm(G, axis=1)
    zero = norms == 0.0
    if np.any(h[zero] < 0.0):
        raise InfeasibleSetError("zero-normal constraint with negative offset")
    G = G[~zero] / norms[~zero, None]
    h = h[~zero] / norms[~zero]
    m = G.shape[0]
    if m == 0:
        return x0.copy()
    feas_tol = _QP_FEAS_TOL * (1.0 + np.linalg.norm(x0) + np.max(np.abs(h)))
    if max_steps is None:
        max_steps = 50 * (m + x0.size) + 100

    z = x0.copy()
    active: list[int] = []
    u = np.zeros(0)
    steps = 0
    while True:
        viol = G @ z - h
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol))
        if viol[p] <= feas_tol:
            return z
        a_p = G[p]
        u_p = 0.0
        while True:
            steps += 1
            if steps > max_steps:
                raise NonConvergenceError("dual active-set QP exceeded its step cap",
                                          float(np.max(G @ z - h)))
            if active:
                N = G[active].T
                coef, *_ = np.linalg.lstsq(N, a_p, rcond=None)
                r = -coef
                dz = -(a_p - N @ coef)
            else:
                r = np.zeros(0)
                dz = -a_p
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] < 0.0:
                    tj = u[j] / -r[j]
                    if tj < t1:
                        t1, k = tj, j
            dz_sq = float(dz @ dz)
            dependent = dz_sq <= _QP_DEP_TOL**2
            excess = float(a_p @ z - h[p])
            if dependent:
                if not np.isfinite(t1):
                    raise InfeasibleSetError(
                        f"half-space intersection is empty (violation {excess:.3e})")
                u = u + t1 * r
                u_p += t1
                del active[k]
                u = np.delete(u, k)
                continue
            t2 = max(excess, 0.0) / dz_sq
            t = min(t1, t2)
            z = z + t * dz
            u = u + t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[k]
            u = np.delete(u, k)


def _poly_rows(base: ConvexSet, halves: Sequence[HalfSpace], dim: int):
    G, h = _rows(halves, dim)
    base_rows = base.halfspace_rows()
    if base_rows is not None and base_rows[0].shape[0]:
        G = np.vstack([base_rows[0], G])
        h = np.concatenate([base_rows[1], h])
    return G, h


def project_intersection(base: ConvexSet, halves: Sequence[HalfSpace], x,
                         tol: float = ITERATIVE_TOL,
                         max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Nearest point of ``base`` intersected with every half-space in ``halves``.

    Parameters
    ----------
    base : ConvexSet
        The fixed set ``C``.
    halves : sequence of HalfSpace
        Accumulated cuts; may be empty.
    x : array_like
        Point to project.
    tol : float
        Stopping tolerance for Dykstra's method (ignored on the exact QP path).
    max_iter : int
        Dykstra iteration cap.

    Returns
    -------
    ndarray
    """
    x = as_vector(x, base.dim)
    live = [hs for hs in halves if not hs.is_whole_space]
    if not live:
        return base.project(x)
    if base.halfspace_rows() is not None:
        G, h = _poly_rows(base, live, base.dim)
        return qp_project(G, h, x)

    G, h = _rows(live, base.dim)
    if isinstance(base, Ball):
        # distance from the centre to the polyhedron certifies emptiness
        pc = qp_project(G, h, base.center)
        if np.linalg.norm(pc - base.center) > base.radius * (1.0 + 1e-12) + tol:
            raise InfeasibleSetError("ball does not meet the half-space intersection")
    return dykstra(base.project, lambda v: qp_project(G, h, v), x, tol, max_iter)


def dykstra(proj_a, proj_b, x, tol: float = ITERATIVE_TOL,
            max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Dykstra's alternating projections onto ``A`` and ``B``.

    Keeps one correction vector per set. Stops once the two partial projections
    agree to ``tol`` and the iterate has stalled; the returned point lies in
    ``B`` exactly and within ``tol`` of ``A``.
    """
    y = np.array(x, dtype=float)
    p = np.zeros_like(y)
    q = np.zeros_like(y)
    gap = np.inf
    for _ in range(max_iter):
        a = proj_a(y + p)
        p = y + p - a
        y_new = proj_b(a + q)
        q = a + q - y_new
        gap = float(np.linalg.norm(y_new - a))
        moved = float(np.linalg.norm(y_new - y))
        y = y_new
        if gap <= tol and moved <= tol:
            return y
    raise NonConvergenceError("Dykstra projection did not converge", gap)


def sample_points(S: ConvexSet, rng: np.random.Generator, count: int,
                  scale: float = 2.0) -> np.ndarray:
    """Points of ``S``: Gaussian draws around its centre, projected onto ``S``.

    Half of the draws are shrunk toward the centre first so that interior
    points are well represented.
    """
    c = S.anchor()
    raw = c + scale * rng.standard_normal((count, S.dim))
    raw[::2] = c + 0.3 * (raw[::2] - c)
    return np.array([S.project(z) for z in raw])


def sets_equal(S: ConvexSet, T: ConvexSet) -> bool:
    """Structural equality of two set descriptions (same variant, same data)."""
    if S is T:
        return True
    if type(S) is not type(T) or S.dim != T.dim:
        return False
    if isinstance(S, WholeSpace):
        return True
    if isinstance(S, Box):
        return np.array_equal(S.lower, T.lower) and np.array_equal(S.upper, T.upper)
    if isinstance(S, Ball):
        return np.array_equal(S.center, T.center) and S.radius == T.radius
    if isinstance(S, HalfSpaceIntersection):
        return len(S.halfspaces) == len(T.halfspaces) and all(
            np.array_equal(a.normal, b.normal) and a.offset == b.offset
            for a, b in zip(S.halfspaces, T.halfspaces))
    if isinstance(S, AffineSubspace):
        return np.array_equal(S.basis, T.basis) and np.array_equal(S.offset, T.offset)
    return False
