"""Shrinking projection iteration for split equilibrium and fixed-point problems.

One step, with ``i`` the cyclic family index of ``n``::

    w_n     = x_n - gamma A_i^T (A_i x_n - T_{s_n}^{g_i} A_i x_n)
    u_n     = T_{r_n}^{f_i} w_n
    y_n     = alpha_n u_n + (1 - alpha_n) S_i^n u_n
    H_n     = {z : ||y_n - z||^2 <= ||x_n - z||^2 + theta_n}
    C_{n+1} = C_n intersected with H_n
    x_{n+1} = P_{C_{n+1}} x_1

The cut sets are accumulated so ``C_{n+1}`` is contained in ``C_n``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .convex import (
    ConvexSet,
    HalfSpace,
    InfeasibleSetError,
    accumulate_halfspace,
    halfspace_from_iterates,
    project_intersection,
    sets_equal,
)
from .equilibrium import Bifunction, ResolventQuery, resolvent
from .mapping import (
    DivergenceError,
    MappingSpec,
    Schedule,
    XiFunction,
    apply_power,
    verify_class,
)
from .space import SpectralBound, as_operator, as_vector, gamma_valid, spectral_bound

log = logging.getLogger(__name__)

MODES = ("full", "nonexpansive", "identity_operator")
STATUSES = ("converged", "max_iter", "infeasible", "diverged")
RESIDUAL_NAMES = ("step_change", "y_gap", "u_gap", "split_residual", "power_residual")


@dataclass(eq=False)
class ProblemInstance:
    """Sets, bifunction families, operators and mappings of one problem.

    ``f[i]`` live on ``C``, ``g[i]`` on ``Q``, ``A[i]`` maps ``H1 -> H2`` and
    ``S[i]`` acts on ``C``. All four lists share the length ``N``.
    """

    C: ConvexSet
    Q: ConvexSet
    f: list[Bifunction]
    g: list[Bifunction]
    A: list[np.ndarray]
    S: list[MappingSpec]

    def __post_init__(self):
        self.f, self.g, self.S = list(self.f), list(self.g), list(self.S)
        self.A = [as_operator(a, (self.dim_H2, self.dim_H1)) for a in self.A]
        N = len(self.f)
        if N < 1 or not (len(self.g) == len(self.A) == len(self.S) == N):
            raise ValueError("f, g, A and S must be non-empty lists of equal length")
        for i, fi in enumerate(self.f):
            if not sets_equal(fi.domain, self.C):
                raise ValueError(f"f[{i}] must be defined on C")
        for i, gi in enumerate(self.g):
            if not sets_equal(gi.domain, self.Q):
                raise ValueError(f"g[{i}] must be defined on Q")
        for i, Si in enumerate(self.S):
            if Si.dim is not None and Si.dim != self.dim_H1:
                raise ValueError(f"S[{i}] acts on dimension {Si.dim}, expected {self.dim_H1}")

    @property
    def dim_H1(self) -> int:
        return self.C.dim

    @property
    def dim_H2(self) -> int:
        return self.Q.dim

    @property
    def N(self) -> int:
        return len(self.f)


@dataclass
class SolverConfig:
    """Step size, parameter schedules and stopping rules.

    ``D_bound`` replaces the supremum of ``||x_n - p||^2`` over the unknown
    target set; ``"auto"`` derives it from ``x_1`` and the size of ``C`` and
    only ever raises it.
    """

    gamma: float
    r_schedule: Schedule = field(default_factory=lambda: Schedule.constant(1.0))
    s_schedule: Schedule = field(default_factory=lambda: Schedule.constant(1.0))
    alpha_schedule: Schedule = field(default_factory=lambda: Schedule.constant(0.5))
    D_bound: float | str = "auto"
    tol_residual: float = 1e-6
    max_iter: int = 5000
    mode: str = "full"
    projection_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.D_bound != "auto":
            self.D_bound = float(self.D_bound)
            if not self.D_bound >= 0.0:
                raise ValueError("D_bound must be nonnegative or 'auto'")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class StepRecord:
    n: int
    index: int
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    x_next: np.ndarray
    theta: float
    D: float
    halfspace: HalfSpace
    step_change: float
    y_gap: float
    u_gap: float
    split_residual: float
    power_residual: float

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in RESIDUAL_NAMES)


@dataclass
class SolverState:
    """Iterate bundle owned by the solve loop.

    ``x`` is ``x_n`` and ``halves`` the cuts defining ``C_n`` beyond ``C``.
    ``u`` and ``y`` are the auxiliary points of the latest completed step.
    """

    n: int
    x1: np.ndarray
    x: np.ndarray
    halves: list[HalfSpace] = field(default_factory=list)
    history: list[StepRecord] = field(default_factory=list)
    D: float = 0.0
    u: np.ndarray | None = None
    y: np.ndarray | None = None

    @classmethod
    def initial(cls, problem: ProblemInstance, config: SolverConfig, x1) -> "SolverState":
        x1 = as_vector(x1, problem.dim_H1)
        if not problem.C.contains(x1, 1e-9):
            raise ValueError("x1 must lie in C")
        return cls(n=1, x1=x1, x=x1.copy(), D=_initial_D(problem.C, x1, config))


@dataclass
class RunResult:
    final: np.ndarray
    iterations: int
    status: str
    trace: list[StepRecord]
    halves: list[HalfSpace]
    message: str = ""


def cyclic_index(n: int, N: int) -> int:
    """1-based family index of step ``n``: ``((n - 1) mod N) + 1``."""
    if n < 1 or N < 1:
        raise ValueError("n and N must be positive")
    return (n - 1) % N + 1


def theta(alpha_n: float, lambda_n: float, mu_n: float, xi: XiFunction, M: float,
          M_star: float, D_bound: float) -> float:
    """Cut slack ``(1 - alpha_n)(lambda_n xi(M) + lambda_n M_star D + mu_n)``."""
    return (1.0 - alpha_n) * (lambda_n * xi(M) + lambda_n * M_star * D_bound + mu_n)


def _diameter_proxy(C: ConvexSet) -> float:
    d = C.diameter()
    return d if np.isfinite(d) else 1.0


def _initial_D(C: ConvexSet, x1, config: SolverConfig) -> float:
    if config.D_bound != "auto":
        return float(config.D_bound)
    return max(1.0, (2.0 * np.linalg.norm(x1) + _diameter_proxy(C)) ** 2)


def _refresh_D(D: float, C: ConvexSet, x1, x, config: SolverConfig) -> float:
    if config.D_bound != "auto":
        return D
    return max(D, (np.linalg.norm(x) + np.linalg.norm(x1) + _diameter_proxy(C)) ** 2)


def step(state: SolverState, problem: ProblemInstance, config: SolverConfig) -> SolverState:
    """Advance the iteration by one step.

    Raises
    ------
    InfeasibleSetError
        If ``C_{n+1}`` turns out empty.
    DivergenceError
        If ``S_i^n u_n`` blows up.
    """
    n = state.n
    i = cyclic_index(n, problem.N) - 1
    A, f, g, S = problem.A[i], problem.f[i], problem.g[i], problem.S[i]
    x = state.x
    r_n, s_n, alpha_n = config.r_schedule(n), config.s_schedule(n), config.alpha_schedule(n)

    Ax = A @ x
    split = Ax - resolvent(g, ResolventQuery(s_n, Ax))
    w = x - config.gamma * (A.T @ split)
    u = resolvent(f, ResolventQuery(r_n, w))
    Snu = apply_power(S, n, u)
    y = alpha_n * u + (1.0 - alpha_n) * Snu

    D = _refresh_D(state.D, problem.C, state.x1, x, config)
    th = theta(alpha_n, S.lambda_schedule(n), S.mu_schedule(n), S.xi,
               S.xi.threshold, S.xi.slope, D)
    cut = halfspace_from_iterates(x, y, th)
    halves = accumulate_halfspace(state.halves, cut)
    x_next = project_intersection(problem.C, halves, state.x1, tol=config.projection_tol)

    rec = StepRecord(
        n=n, index=i + 1, x=x, u=u, y=y, x_next=x_next, theta=th, D=D, halfspace=cut,
        step_change=float(np.linalg.norm(x_next - x)),
        y_gap=float(np.linalg.norm(y - x)),
        u_gap=float(np.linalg.norm(u - x)),
        split_residual=float(np.linalg.norm(split)),
        power_residual=float(np.linalg.norm(Snu - u)),
    )
    return SolverState(n=n + 1, x1=state.x1, x=x_next, halves=halves,
                       history=[*state.history, rec], D=D, u=u, y=y)


def run(problem: ProblemInstance, config: SolverConfig, x1,
        callback: Callable[[StepRecord], None] | None = None) -> RunResult:
    """Iterate until every tracked residual stays below ``tol_residual`` for a
    full cycle of ``N`` consecutive steps, or ``max_iter`` steps have run.

    Parameters
    ----------
    problem : ProblemInstance
    config : SolverConfig
        ``config.mode`` other than ``"full"`` reduces the problem first.
    x1 : array_like
        Anchor and starting point; must lie in ``C``.
    callback : callable, optional
        Called with each :class:`StepRecord` as it is produced.

    Returns
    -------
    RunResult
    """
    problem = mode_reduce(problem, config.mode, seed=config.seed)
    state = SolverState.initial(problem, config, x1)
    trace: list[StepRecord] = []
    streak = 0
    status, message = "max_iter", ""
    for _ in range(config.max_iter):
        try:
            # history is kept in ``trace``; the state itself stays small
            state.history = []
            state = step(state, problem, config)
        except InfeasibleSetError as exc:
            status, message = "infeasible", str(exc)
            break
        except DivergenceError as exc:
            status, message = "diverged", str(exc)
            break
        rec = state.history[-1]
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if max(rec.residuals) < config.tol_residual:
            streak += 1
        else:
            streak = 0
        if streak >= problem.N:
            status = "converged"
            break
    log.debug("run finished: %s after %d steps", status, len(trace))
    return RunResult(final=state.x, iterations=len(trace), status=status, trace=trace,
                     halves=state.halves, message=message)


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    checks: list[ConditionCheck]
    bound: SpectralBound | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[ConditionCheck]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        return "\n".join(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}"
                         for c in self.checks)


def _xi_growth_ok(xi: XiFunction) -> bool:
    t = xi.threshold + np.linspace(0.0, 1e3, 2001)
    t = t[t > 0]
    return bool(np.all(xi(t) <= xi.slope * t * (1 + 1e-12)))


def validate_config(problem: ProblemInstance, config: SolverConfig) -> ValidationReport:
    """Check the parameter admissibility conditions.

    * ``step_size``: ``0 < gamma < 1/L``
    * ``relaxation``: ``max k_i < a <= alpha_n <= b < 1``
    * ``regularization``: ``r_n, s_n > 0`` with positive liminf
    * ``summability``: ``lambda_n, mu_n`` nonnegative and summable
    * ``growth``: ``xi_i(t) <= M_i^* t`` for ``t >= M_i``
    """
    bound = spectral_bound(problem.A)
    checks = []
    upper = bound.gamma_interval[1]
    checks.append(ConditionCheck(
        "step_size", gamma_valid(config.gamma, bound),
        f"gamma={config.gamma:.6g}, admissible interval (0, {upper:.6g})"))

    k_max = max(S.k for S in problem.S)
    a, b = config.alpha_schedule.infimum, config.alpha_schedule.supremum
    checks.append(ConditionCheck(
        "relaxation", k_max < a and b < 1.0 and a > 0.0,
        f"alpha_n in [{a:.6g}, {b:.6g}], max k={k_max:.6g}"))

    r, s = config.r_schedule, config.s_schedule
    reg_ok = all(sch.infimum > 0.0 and sch.liminf > 0.0 for sch in (r, s))
    checks.append(ConditionCheck(
        "regularization", reg_ok,
        f"inf r_n={r.infimum:.6g}, liminf r_n={r.liminf:.6g}, "
        f"inf s_n={s.infimum:.6g}, liminf s_n={s.liminf:.6g}"))

    bad = [f"S[{i}].{name}" for i, S in enumerate(problem.S)
           for name, sch in (("lambda", S.lambda_schedule), ("mu", S.mu_schedule))
           if not (sch.is_summable and sch.nonnegative)]
    checks.append(ConditionCheck(
        "summability", not bad,
        "all summable" if not bad else "not summable: " + ", ".join(bad)))

    bad_xi = [f"S[{i}].xi" for i, S in enumerate(problem.S) if not _xi_growth_ok(S.xi)]
    checks.append(ConditionCheck(
        "growth", not bad_xi, "xi bounded by slope beyond threshold" if not bad_xi
        else "violated: " + ", ".join(bad_xi)))
    return ValidationReport(checks, bound)


def mode_reduce(problem: ProblemInstance, mode: str, seed: int = 0) -> ProblemInstance:
    """Specialise a problem to one of the solver modes.

    ``identity_operator`` requires ``H1 = H2`` and ``C = Q`` and replaces every
    ``A_i`` by the identity. ``nonexpansive`` requires every ``S_i`` to pass the
    sampled nonexpansiveness check and zeroes the ``lambda``/``mu`` schedules,
    so every cut slack vanishes.
    """
    if mode == "full":
        return problem
    if mode == "identity_operator":
        if problem.dim_H1 != problem.dim_H2 or not sets_equal(problem.C, problem.Q):
            raise ValueError("identity_operator mode needs H1 = H2 and C = Q")
        eye = np.eye(problem.dim_H1)
        return ProblemInstance(problem.C, problem.Q, problem.f, problem.g,
                               [eye.copy() for _ in problem.A], problem.S)
    if mode == "nonexpansive":
        reduced = []
        for i, S in enumerate(problem.S):
            report = verify_class(S, "nonexpansive", n_max=1, samples=200, seed=seed,
                                  domain=problem.C)
            if not report.passed:
                raise ValueError(f"S[{i}] is not nonexpansive (worst slack {report.worst:.3e})")
            reduced.append(replace(S, lambda_schedule=Schedule.zero(),
                                   mu_schedule=Schedule.zero()))
        return ProblemInstance(problem.C, problem.Q, problem.f, problem.g, problem.A, reduced)
    raise ValueError(f"unknown mode {mode!r}")
