"""Brute-force references for tests: exact solution sets, enumerated QPs, grids.

Nothing here shares code paths with the solver beyond set membership, so the
results can be used to check it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .convex import AffineSubspace, Ball, Box, ConvexSet, HalfSpace, HalfSpaceIntersection, WholeSpace
from .equilibrium import Bifunction, ZeroBifunction
from .mapping import CompositeMap, MappingSpec, NegationMap, ProjectionMap
from .space import as_vector

ORACLE_TOL = 1e-9


class UnsupportedInstanceError(ValueError):
    """The instance falls outside the affine families the oracle can solve."""


class NoSolutionError(ValueError):
    """Projection onto an empty solution set was requested."""


@dataclass
class AnalyticSolutionSet:
    """``Point``, ``AffineSet`` (``offset + span(basis)``) or ``Empty``."""

    kind: str
    offset: np.ndarray | None = None
    basis: np.ndarray | None = None
    provenance: str = ""

    @classmethod
    def point(cls, z, provenance=""):
        return cls("Point", as_vector(z), None, provenance)

    @classmethod
    def affine(cls, offset, basis, provenance=""):
        offset = as_vector(offset)
        basis = np.asarray(basis, dtype=float).reshape(offset.size, -1)
        if basis.shape[1] == 0:
            return cls.point(offset, provenance)
        return cls("AffineSet", offset, basis, provenance)

    @classmethod
    def empty(cls, provenance=""):
        return cls("Empty", None, None, provenance)

    @property
    def is_empty(self) -> bool:
        return self.kind == "Empty"

    def members(self, rng: np.random.Generator | None = None, count: int = 3,
                scale: float = 1.0) -> list[np.ndarray]:
        """The offset plus a few random members (for affine sets)."""
        if self.is_empty:
            return []
        out = [self.offset.copy()]
        if self.kind == "AffineSet" and rng is not None:
            for _ in range(count):
                out.append(self.offset + self.basis @ (scale * rng.standard_normal(self.basis.shape[1])))
        return out


def solve_linear_set(E, e, tol: float = ORACLE_TOL, provenance: str = "") -> AnalyticSolutionSet:
    """Solution set of ``E z = e`` via the SVD (``Empty`` if inconsistent)."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    e = np.asarray(e, dtype=float).reshape(-1)
    n = E.shape[1]
    if E.shape[0] == 0:
        return AnalyticSolutionSet.affine(np.zeros(n), np.eye(n), provenance)
    U, sv, Vt = np.linalg.svd(E)
    rank_tol = max(E.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0) * 100
    rank = int(np.sum(sv > rank_tol))
    z0 = Vt[:rank].T @ ((U[:, :rank].T @ e) / sv[:rank])
    if np.linalg.norm(E @ z0 - e) > tol * max(1.0, np.linalg.norm(e)):
        return AnalyticSolutionSet.empty(provenance + "; inconsistent linear system")
    return AnalyticSolutionSet.affine(z0, Vt[rank:].T, provenance)


def enumerate_qp_project(G, h, x, tol: float = 1e-12) -> np.ndarray | None:
    """Project ``x`` onto ``{z : G z <= h}`` by enumerating active sets.

    Tries every subset of at most ``dim`` constraints, solves the equality
    constrained projection and keeps the nearest KKT point. Returns None when
    no feasible KKT point exists. Exponential; meant for a handful of rows.
    """
    x = np.asarray(x, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, x.size)
    h = np.asarray(h, dtype=float).reshape(-1)
    m, d = G.shape
    best, best_d = None, np.inf
    feas_tol = 1e-10 * (1.0 + np.abs(h).max(initial=0.0) + np.linalg.norm(x))
    for size in range(min(m, d) + 1):
        for W in itertools.combinations(range(m), size):
            W = list(W)
            if W:
                N = G[W]
                K = N @ N.T
                if np.linalg.matrix_rank(K) < size:
                    continue
                lam = np.linalg.solve(K, N @ x - h[W])
                if np.any(lam < -tol):
                    continue
                z = x - N.T @ lam
            else:
                z = x.copy()
            if np.all(G @ z - h <= feas_tol):
                dist = np.linalg.norm(z - x)
                if dist < best_d:
                    best, best_d = z, dist
    return best


def _vi_on_polyhedron(M, q, G, h) -> np.ndarray:
    """Unique solution of ``<M z + q, y - z> >= 0`` on ``{G z <= h}`` by KKT enumeration."""
    n = M.shape[0]
    if np.linalg.eigvalsh(0.5 * (M + M.T))[0] <= 1e-12:
        raise UnsupportedInstanceError("constrained equilibrium needs a strictly monotone M")
    m = G.shape[0]
    for size in range(min(m, n) + 1):
        for W in itertools.combinations(range(m), size):
            W = list(W)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = M
            K[:n, n:] = G[W].T
            K[n:, :n] = G[W]
            rhs = np.concatenate([-q, h[W]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if np.all(lam >= -1e-12) and np.all(G @ z - h <= 1e-10 * (1 + np.abs(h).max())):
                return z
    raise UnsupportedInstanceError("no KKT point found")


def _polyhedral_rows(S: ConvexSet):
    if isinstance(S, (WholeSpace, Box, HalfSpaceIntersection)):
        return S.halfspace_rows()
    return None


class _Collector:
    """Accumulates linear equations ``E z = e`` and set constraints on ``z``."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.sets: list[tuple[np.ndarray, ConvexSet]] = []  # (T, S): T z in S
        self.notes: list[str] = []

    def equation(self, E, e, note):
        self.rows.append(np.atleast_2d(E))
        self.rhs.append(np.atleast_1d(e))
        self.notes.append(note)

    def member(self, T, S, note):
        if isinstance(S, WholeSpace):
            return
        if isinstance(S, AffineSubspace):
            # T z - offset must lie in span(basis): project onto the complement
            B = S.basis
            P = np.eye(S.dim) - (B @ np.linalg.pinv(B) if B.shape[1] else 0.0)
            self.equation(P @ T, P @ S.offset, note)
            return
        self.sets.append((T, S))
        self.notes.append(note)

    def bifunction(self, f: Bifunction, T, note):
        if isinstance(f, ZeroBifunction):
            self.member(T, f.domain, note + ": zero bifunction, whole domain")
            return
        M, q = f.operator_form()
        dom = f.domain
        if isinstance(dom, WholeSpace):
            self.equation(M @ T, -q, note + ": M z + q = 0")
            return
        rows = _polyhedral_rows(dom)
        if rows is None:
            raise UnsupportedInstanceError(f"{note}: domain {dom.variant} not supported")
        w = _vi_on_polyhedron(M, q, *rows)
        self.equation(T, w, note + ": KKT point on polyhedral domain")

    def mapping(self, S: MappingSpec, note):
        n = self.n
        if S.affine is not None:
            B, b = S.affine.B, S.affine.b
            self.equation(np.eye(n) - B, b, note + ": (I - B) z = b")
        elif isinstance(S.map, NegationMap):
            self.equation(2.0 * np.eye(n), np.zeros(n), note + ": negation fixes 0 only")
        elif isinstance(S.map, ProjectionMap):
            self.member(np.eye(n), S.map.target, note + ": fixed points of a projection")
        elif isinstance(S.map, CompositeMap):
            raise UnsupportedInstanceError(f"{note}: non-affine composite")
        else:
            raise UnsupportedInstanceError(f"{note}: unsupported map {S.map.kind}")


def solve_target_set(problem) -> AnalyticSolutionSet:
    """Common fixed points of all ``S_i`` that solve every split equilibrium pair.

    Builds the stacked linear system from the affine data, solves it by SVD,
    and checks any remaining set constraints when the solution is a single
    point.

    Raises
    ------
    UnsupportedInstanceError
        For non-affine components, or set constraints on a non-trivial
        affine solution set.
    """
    n = problem.dim_H1
    col = _Collector(n)
    col.member(np.eye(n), problem.C, "z in C")
    for i in range(problem.N):
        col.bifunction(problem.f[i], np.eye(n), f"f[{i}]")
        col.bifunction(problem.g[i], problem.A[i], f"g[{i}] o A[{i}]")
        col.mapping(problem.S[i], f"S[{i}]")
    prov = "; ".join(col.notes)
    if col.rows:
        sol = solve_linear_set(np.vstack(col.rows), np.concatenate(col.rhs), provenance=prov)
    else:
        sol = AnalyticSolutionSet.affine(np.zeros(n), np.eye(n), prov)
    if sol.is_empty or not col.sets:
        return sol
    if sol.kind == "Point":
        for T, S in col.sets:
            w = T @ sol.offset
            if np.linalg.norm(w - S.project(w)) > 1e-9 * max(1.0, np.linalg.norm(w)):
                return AnalyticSolutionSet.empty(prov + "; point violates a set constraint")
        return sol
    raise UnsupportedInstanceError("set constraints on a positive-dimensional affine solution set")


def project_target(target: AnalyticSolutionSet, x1) -> np.ndarray:
    """Nearest point of the solution set to ``x1`` (normal equations for affine sets)."""
    if target.is_empty:
        raise NoSolutionError("the solution set is empty")
    x1 = as_vector(x1, target.offset.size)
    if target.kind == "Point":
        return target.offset.copy()
    B = target.basis
    t = np.linalg.solve(B.T @ B, B.T @ (x1 - target.offset))
    return target.offset + B @ t


def _member_mask(S: ConvexSet, pts: np.ndarray, halves=()) -> np.ndarray:
    tol = 1e-12
    if isinstance(S, WholeSpace):
        mask = np.ones(len(pts), dtype=bool)
    elif isinstance(S, Box):
        mask = np.all((pts >= S.lower - tol) & (pts <= S.upper + tol), axis=1)
    elif isinstance(S, Ball):
        diff = pts - S.center
        mask = np.einsum("ij,ij->i", diff, diff) <= (S.radius + tol) ** 2
    elif isinstance(S, HalfSpaceIntersection):
        G, h = S.halfspace_rows()
        mask = np.all(pts @ G.T <= h + tol, axis=1)
    else:
        raise UnsupportedInstanceError(f"grid search cannot sample {S.variant}")
    for hs in halves:
        mask &= pts @ hs.normal <= hs.offset + tol
    return mask


def _grid_best(S, halves, x, lo, hi, spacing, chunk=2_000_000):
    axes = [np.arange(lo[j], hi[j] + 0.5 * spacing, spacing) for j in range(x.size)]
    best, best_d = None, np.inf
    # squared distance separates by axis, so it is built by broadcasting
    sq = [(a - xj) ** 2 for a, xj in zip(axes, x)]
    shape = tuple(a.size for a in axes)
    per_row = int(np.prod(shape[1:]))
    rest = sum(np.ix_(*sq[1:])) if x.size > 1 else np.zeros(())
    rows_per_chunk = max(1, chunk // per_row)
    for start in range(0, shape[0], rows_per_chunk):
        stop = min(shape[0], start + rows_per_chunk)
        d2 = (sq[0][start:stop].reshape((-1,) + (1,) * (x.size - 1)) + rest).ravel()
        # only points that could beat the current best need a membership test
        keep = np.flatnonzero(d2 < best_d)
        # try the nearest candidates first, then all of the rest in one pass
        nearest_first = keep.size > _BATCH
        while keep.size:
            if nearest_first:
                part = np.argpartition(d2[keep], _BATCH)
                batch, keep = keep[part[:_BATCH]], keep[part[_BATCH:]]
                nearest_first = False
            else:
                batch, keep = keep, keep[:0]
            idx = np.unravel_index(batch, (stop - start,) + shape[1:])
            pts = np.stack([axes[0][start + idx[0]],
                            *(axes[j][idx[j]] for j in range(1, x.size))], axis=1)
            inside = _member_mask(S, pts, halves)
            if not inside.any():
                continue
            d_in = d2[batch][inside]
            # ties go to the lexicographically first point, i.e. the smallest flat index
            tied = np.flatnonzero(d_in == d_in.min())
            j = np.flatnonzero(inside)[tied[np.argmin(batch[inside][tied])]]
            if d_in.min() < best_d:
                best, best_d = pts[j], float(d_in.min())
            break
    if best is None:
        return None, np.inf
    return best, float(np.sqrt(best_d))


_POINTS_PER_AXIS = {1: 1_000_000, 2: 1500, 3: 300}
_HALF_WIDTH = 10
_BATCH = 65536
_MAX_RECENTRES = 1000


def grid_project(S: ConvexSet, x, step: float, lower, upper, halves=(),
                 refine: int = 100) -> np.ndarray | None:
    """Exhaustive grid minimizer of ``||z - x||`` over ``S`` (and extra half-spaces).

    A grid of spacing ``step`` over the box ``[lower, upper]`` is searched
    first. The neighbourhood of the winner is then re-gridded, each level
    covering the region where the true minimizer can lie (by strong convexity
    of the squared distance), until the spacing reaches ``step / refine`` or
    the per-axis point budget stops the window from shrinking. The result is
    finally polished by re-centring a small window on the best point until it
    stops moving. Returns None if no grid point is feasible. Meant for
    ``dim <= 3``.
    """
    x = as_vector(x)
    dim = x.size
    if dim > 3:
        raise ValueError("grid_project is limited to dimension 3")
    lo = as_vector(lower, dim)
    hi = as_vector(upper, dim)
    best, dist = _grid_best(S, halves, x, lo, hi, step)
    if best is None:
        return None
    h = step
    target = step / refine
    while h > target * (1 + 1e-9):
        radius = 1.5 * np.sqrt(2.0 * dist * h * np.sqrt(dim) + dim * h * h) + h
        h_new = max(target, 2.0 * radius / _POINTS_PER_AXIS[dim])
        if h_new > 0.9 * h:
            break
        wlo = np.maximum(lo, best - radius)
        whi = np.minimum(hi, best + radius)
        cand, cand_d = _grid_best(S, halves, x, wlo, whi, h_new)
        if cand is not None and cand_d <= dist:
            best, dist = cand, cand_d
        h = h_new
    h = target
    for _ in range(_MAX_RECENTRES):
        wlo = np.maximum(lo, best - _HALF_WIDTH * h)
        whi = np.minimum(hi, best + _HALF_WIDTH * h)
        cand, cand_d = _grid_best(S, halves, x, wlo, whi, h)
        if cand is None or cand_d >= dist:
            break
        best, dist = cand, cand_d
    return best
