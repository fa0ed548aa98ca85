"""Acceptance suite: nine criteria, each printing one pass/fail line.

Suites 1 to 4 share one set of solver runs on generated affine instances
whose target set is known in closed form.
"""

from dataclasses import replace

import numpy as np
import pytest

from shrinkproj.convex import (
    Ball,
    Box,
    HalfSpace,
    HalfSpaceIntersection,
    WholeSpace,
    project,
    project_intersection,
)
from shrinkproj.equilibrium import ConvexDifference, MonotoneAffine, ZeroBifunction, resolvent
from shrinkproj.mapping import (
    AffineMap,
    MappingSpec,
    NegationMap,
    Schedule,
    fixed_point_slacks,
    identity_map,
    verify_class,
)
from shrinkproj.oracle import enumerate_qp_project, grid_project, project_target, solve_target_set
from shrinkproj.solver import ProblemInstance, SolverConfig, run, validate_config
from shrinkproj.space import spectral_bound

from instances import NONEXPANSIVE, SUITE, mapping_zoo, random_instance, zoo_fixed_point

RESIDUAL_TOL = 1e-6


@pytest.fixture(scope="module")
def suite_runs():
    """Run every generated instance once; returns (instance, target, limit, members, result)."""
    out = []
    for seed, dim, N, opts in SUITE:
        inst = random_instance(seed, dim, N, **opts)
        target = solve_target_set(inst.problem)
        limit = project_target(target, inst.x1)
        members = [limit, *target.members(np.random.default_rng(seed), count=4)]
        result = run(inst.problem, inst.config, inst.x1)
        out.append((inst, target, limit, members, result))
    return out


def test_criterion_1_strong_convergence(suite_runs, report_criterion):
    dims = sorted({inst.problem.dim_H1 for inst, *_ in suite_runs})
    Ns = sorted({inst.problem.N for inst, *_ in suite_runs})
    errors = [float(np.linalg.norm(res.final - limit)) for _, _, limit, _, res in suite_runs]
    statuses = [res.status for *_, res in suite_runs]
    passed = (len(suite_runs) >= 10 and max(errors) <= 1e-4
              and set(Ns) == {1, 2, 3} and dims[0] == 1 and dims[-1] == 8)
    report_criterion(1, "strong convergence to the oracle limit", passed,
                     f"{len(errors)} instances, dims {dims}, N {Ns}, worst error {max(errors):.2e}, "
                     f"statuses {sorted(set(statuses))}")
    assert passed


def test_criterion_2_containment(suite_runs, report_criterion):
    worst = -np.inf
    for _, _, _, members, res in suite_runs:
        for rec in res.trace:
            h = rec.halfspace
            for p in members:
                worst = max(worst, float(h.normal @ p - h.offset))
    passed = worst <= 1e-7
    report_criterion(2, "target set stays inside every cut", passed,
                     f"worst half-space residual {worst:.2e}")
    assert passed


def test_criterion_3_residuals(suite_runs, report_criterion):
    worst_res, worst_drop, converged = 0.0, 0.0, 0
    for inst, _, _, _, res in suite_runs:
        dist = [np.linalg.norm(rec.x - inst.x1) for rec in res.trace]
        dist.append(np.linalg.norm(res.final - inst.x1))
        worst_drop = max(worst_drop, float(np.max(-np.diff(dist), initial=0.0)))
        if res.status == "converged":
            converged += 1
            worst_res = max(worst_res, max(res.trace[-1].residuals))
    passed = converged == len(suite_runs) and worst_res < RESIDUAL_TOL and worst_drop <= 1e-9
    report_criterion(3, "residuals vanish and distance to x1 is nondecreasing", passed,
                     f"{converged}/{len(suite_runs)} converged, worst final residual "
                     f"{worst_res:.2e}, worst decrease of ||x_n - x1|| {worst_drop:.2e}")
    assert passed


def test_criterion_4_step_inequalities(suite_runs, report_criterion):
    worst_descent, worst_growth = np.inf, np.inf
    for inst, _, _, members, res in suite_runs:
        L = spectral_bound(inst.problem.A).L
        gamma = inst.config.gamma
        for rec in res.trace:
            for p in members:
                dx = float(np.sum((rec.x - p) ** 2))
                descent = dx - gamma * (1 - gamma * L) * rec.split_residual ** 2 \
                    - float(np.sum((rec.u - p) ** 2))
                growth = dx + rec.theta - float(np.sum((rec.y - p) ** 2))
                worst_descent = min(worst_descent, descent)
                worst_growth = min(worst_growth, growth)
    passed = worst_descent >= -1e-6 and worst_growth >= -1e-6
    report_criterion(4, "per-step descent and growth inequalities", passed,
                     f"worst descent slack {worst_descent:.2e}, worst growth slack {worst_growth:.2e}")
    assert passed


def _families(rng, dim):
    G = rng.standard_normal((dim, dim))
    M = G @ G.T + (G - G.T)
    M /= np.linalg.norm(M, 2)
    P = G @ G.T / np.linalg.norm(G @ G.T, 2)
    box = Box(-np.ones(dim), np.ones(dim))
    ball = Ball(np.zeros(dim), 1.0)
    q = rng.standard_normal(dim)
    return [
        MonotoneAffine(M, q), ConvexDifference(P, q),
        MonotoneAffine(M, q, box), ConvexDifference(P, q, ball),
        ZeroBifunction(box), ZeroBifunction(ball),
    ]


def test_criterion_5_resolvents(report_criterion):
    rng = np.random.default_rng(5)
    rs = (0.1, 1.0, 10.0)
    worst_firm, worst_closed, worst_zero = -np.inf, 0.0, 0.0
    for dim in (2, 3):
        for f in _families(rng, dim):
            for r in rs:
                for _ in range(100):
                    x, y = 3 * rng.standard_normal(dim), 3 * rng.standard_normal(dim)
                    tx, ty = resolvent(f, r=r, x=x), resolvent(f, r=r, x=y)
                    d = tx - ty
                    worst_firm = max(worst_firm, float(d @ d - d @ (x - y)))
                    if isinstance(f.domain, WholeSpace):
                        it = resolvent(f, r=r, x=x, method="iterative")
                        worst_closed = max(worst_closed, float(np.linalg.norm(it - tx)))
                    if isinstance(f, ZeroBifunction):
                        worst_zero = max(worst_zero, float(np.linalg.norm(tx - project(f.domain, x))))
    passed = worst_firm <= 1e-8 and worst_closed <= 1e-7 and worst_zero <= 1e-9
    report_criterion(5, "resolvent firm nonexpansiveness and consistency", passed,
                     f"200 pairs x 3 r x 6 families, worst firm excess {worst_firm:.2e}, "
                     f"closed vs iterative {worst_closed:.2e}, zero vs projection {worst_zero:.2e}")
    assert passed


def test_criterion_6_mapping_classes(report_criterion):
    zoo = mapping_zoo()
    zero = Schedule.zero()
    failures = []
    for name in NONEXPANSIVE:
        S = zoo[name]
        if verify_class(S, "nonexpansive").passed and not verify_class(
                S, "taspc", k=0.0, lambda_schedule=zero, mu_schedule=zero).passed:
            failures.append(f"{name}: nonexpansive but not taspc")
    for name, S in zoo.items():
        if verify_class(S, "k_strict").passed and not verify_class(S, "taspc").passed:
            failures.append(f"{name}: k-strict but not taspc")
    rng = np.random.default_rng(6)
    worst = np.inf
    for name, S in zoo.items():
        for n in range(1, 17):
            for _ in range(10):
                p = zoo_fixed_point(name, S, rng)
                x = 3 * rng.standard_normal(S.dim)
                worst = min(worst, min(fixed_point_slacks(S, p, x, n)))
    passed = not failures and worst >= -1e-7
    report_criterion(6, "class hierarchy and fixed-point estimates", passed,
                     f"{len(zoo)} mappings, hierarchy failures {failures or 'none'}, "
                     f"worst fixed-point slack {worst:.2e}")
    assert passed


def test_criterion_7_reductions(report_criterion):
    inst = random_instance(21, 3, 2)
    p = inst.problem
    eye = ProblemInstance(p.C, p.C, p.f, p.g, [np.eye(3)] * p.N, p.S)
    full = run(eye, inst.config, inst.x1)
    reduced = run(eye, replace(inst.config, mode="identity_operator"), inst.x1)
    bitwise = len(full.halves) == len(reduced.halves) and all(
        np.array_equal(a.normal, b.normal) and a.offset == b.offset
        for a, b in zip(full.halves, reduced.halves))
    bitwise &= all(np.array_equal(a.halfspace.normal, b.halfspace.normal)
                   and a.halfspace.offset == b.halfspace.offset
                   for a, b in zip(full.trace, reduced.trace))

    # nonexpansive maps carrying a nonzero asymptotic schedule; the mode drops it
    errs = []
    for seed, dim, N in ((31, 2, 1), (32, 4, 2), (33, 5, 3)):
        inst = random_instance(seed, dim, N, kinds=("identity", "reflect"))
        claimed = [replace(S, lambda_schedule=Schedule.inverse_square(0.5)) for S in inst.problem.S]
        q = inst.problem
        problem = ProblemInstance(q.C, q.Q, q.f, q.g, q.A, claimed)
        limit = project_target(solve_target_set(problem), inst.x1)
        res = run(problem, replace(inst.config, mode="nonexpansive"), inst.x1)
        errs.append(float(np.linalg.norm(res.final - limit)) if res.status == "converged" else np.inf)
    passed = bitwise and max(errs) <= 1e-4
    report_criterion(7, "identity-operator and nonexpansive reductions", passed,
                     f"bitwise-equal cuts {bitwise}, nonexpansive-mode errors "
                     + ", ".join(f"{e:.2e}" for e in errs))
    assert passed


def test_criterion_8_negative_controls(report_criterion):
    inst = random_instance(2, 2, 1)
    p, cfg = inst.problem, inst.config
    L = spectral_bound(p.A).L
    caught = {}
    caught["gamma = 1/L"] = not validate_config(p, replace(cfg, gamma=1.0 / L))["step_size"].passed
    caught["gamma = 2/L"] = not validate_config(p, replace(cfg, gamma=2.0 / L))["step_size"].passed
    strict = ProblemInstance(p.C, p.Q, p.f, p.g, p.A, [replace(p.S[0], k=0.5)])
    caught["alpha = k"] = not validate_config(
        strict, replace(cfg, alpha_schedule=Schedule.constant(0.5)))["relaxation"].passed
    caught["alpha < k"] = not validate_config(
        strict, replace(cfg, alpha_schedule=Schedule.constant(0.3)))["relaxation"].passed
    for label, sch in (("lambda = 1/n", Schedule.harmonic(1.0)), ("lambda = 0.1", Schedule.constant(0.1))):
        bad = ProblemInstance(p.C, p.Q, p.f, p.g, p.A, [replace(p.S[0], lambda_schedule=sch)])
        caught[label] = not validate_config(bad, cfg)["summability"].passed

    # empty target sets: a half-line against a negation, and translations with no fixed point
    statuses = []
    C = HalfSpaceIntersection((HalfSpace([1.0], 1.0),))
    Q = WholeSpace(1)
    empty = ProblemInstance(C, Q, [MonotoneAffine([[1.0]], [-2.0], C)], [ZeroBifunction(Q)],
                            [np.eye(1)], [MappingSpec(NegationMap(1))])
    assert solve_target_set(empty).is_empty
    statuses.append(run(empty, SolverConfig(gamma=0.5, max_iter=1000), [0.5]).status)
    for seed, dim in ((41, 2), (42, 3)):
        inst = random_instance(seed, dim, 1)
        q = inst.problem
        shift = MappingSpec(AffineMap(np.eye(dim), 0.1 * np.ones(dim)))
        problem = ProblemInstance(q.C, q.Q, q.f, q.g, q.A, [shift])
        assert solve_target_set(problem).is_empty
        statuses.append(run(problem, replace(inst.config, max_iter=1000), inst.x1).status)
    passed = all(caught.values()) and "converged" not in statuses
    report_criterion(8, "condition violations and empty targets are caught", passed,
                     ", ".join(f"{k}: {'caught' if v else 'MISSED'}" for k, v in caught.items())
                     + f"; empty-target statuses {statuses}")
    assert passed


def _grid_cases():
    """20 cases in dimensions 1 to 3: balls, boxes, a ball cut by a face, single half-spaces."""
    rng = np.random.default_rng(9)
    cases = []
    for dim, count in ((1, 4), (2, 10), (3, 6)):
        for k in range(count):
            x = rng.uniform(-2.5, 2.5, dim)
            kind = k % 4
            if kind == 0:
                S, halves = Ball(rng.uniform(-0.5, 0.5, dim).round(1), 1.0), []
            elif kind == 1:
                lo = rng.integers(-10, 0, dim) / 10
                S, halves = Box(lo, lo + rng.integers(5, 15, dim) / 10), []
            elif kind == 2:
                S = Ball(np.zeros(dim), 1.2)
                e = np.zeros(dim)
                e[k % dim] = 1.0
                halves = [HalfSpace(e, 0.3)]
            else:
                S = WholeSpace(dim)
                halves = [HalfSpace(rng.integers(-2, 3, dim).astype(float) + (np.arange(dim) == 0),
                                    float(rng.integers(0, 3)) / 2)]
            cases.append((S, halves, x))
    return cases


def test_criterion_9_projections(report_criterion):
    worst_grid = 0.0
    cases = _grid_cases()
    for S, halves, x in cases:
        dim = x.size
        z = project_intersection(S, halves, x, tol=1e-10) if halves else project(S, x)
        step = {1: 1e-3, 2: 1e-2, 3: 2e-2}[dim]
        g = grid_project(S, x, step, -3 * np.ones(dim), 3 * np.ones(dim), halves=halves)
        worst_grid = max(worst_grid, float(np.linalg.norm(g - z)))

    rng = np.random.default_rng(10)
    worst_qp, qp_cases = 0.0, 0
    while qp_cases < 50:
        dim = int(rng.integers(1, 7))
        m = int(rng.integers(1, 9))
        G = rng.standard_normal((m, dim))
        h = rng.standard_normal(m)
        x = 3 * rng.standard_normal(dim)
        ref = enumerate_qp_project(G, h, x)
        if ref is None:
            continue
        base = Box(-5 * np.ones(dim), 5 * np.ones(dim)) if qp_cases % 2 else WholeSpace(dim)
        if isinstance(base, Box):
            G_all = np.vstack([G, np.eye(dim), -np.eye(dim)])
            h_all = np.concatenate([h, 5 * np.ones(dim), 5 * np.ones(dim)])
            ref = enumerate_qp_project(G_all, h_all, x)
            if ref is None:
                continue
        z = project_intersection(base, [HalfSpace(a, b) for a, b in zip(G, h)], x)
        worst_qp = max(worst_qp, float(np.linalg.norm(z - ref)))
        qp_cases += 1
    passed = len(cases) == 20 and worst_grid <= 5e-3 and worst_qp <= 1e-7
    report_criterion(9, "projections agree with grid and enumerated QP oracles", passed,
                     f"{len(cases)} grid cases worst {worst_grid:.2e}, "
                     f"{qp_cases} QP cases worst {worst_qp:.2e}")
    assert passed
