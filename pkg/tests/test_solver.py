from dataclasses import replace

import numpy as np
import pytest

from shrinkproj.convex import Box, HalfSpace, HalfSpaceIntersection, WholeSpace
from shrinkproj.equilibrium import MonotoneAffine, ZeroBifunction
from shrinkproj.mapping import AffineMap, MappingSpec, NegationMap, Schedule, XiFunction, identity_map
from shrinkproj.solver import (
    ProblemInstance,
    SolverConfig,
    SolverState,
    cyclic_index,
    mode_reduce,
    run,
    step,
    theta,
    validate_config,
)

from instances import random_instance


def scalar_instance(f=None, S=None, C=None):
    C = C or WholeSpace(1)
    f = f or MonotoneAffine([[1.0]], [0.0], C)
    S = S or MappingSpec(identity_map(1))
    Q = WholeSpace(1)
    return ProblemInstance(C, Q, [f], [ZeroBifunction(Q)], [np.eye(1)], [S])


def stationary_instance(dim=2):
    W = WholeSpace(dim)
    return ProblemInstance(W, W, [ZeroBifunction(W)], [ZeroBifunction(W)], [np.eye(dim)],
                           [MappingSpec(identity_map(dim))])


@pytest.mark.parametrize("n, N, i", [(1, 3, 1), (3, 3, 3), (7, 3, 1), (4, 1, 1)])
def test_cyclic_index(n, N, i):
    assert cyclic_index(n, N) == i


def test_theta_examples():
    assert theta(0.5, 0.0, 0.0, XiFunction.linear(1.0), 1.0, 1.0, 4.0) == 0.0
    assert theta(0.5, 0.1, 0.01, XiFunction.linear(1.0), 1.0, 1.0, 4.0) == pytest.approx(0.255)
    assert theta(1.0, 0.3, 0.2, XiFunction.linear(5.0), 3.0, 2.0, 9.0) == 0.0


def test_stationary_instance():
    cfg = SolverConfig(gamma=0.5)
    x1 = np.array([0.3, -1.2])
    state = step(SolverState.initial(stationary_instance(), cfg, x1), stationary_instance(), cfg)
    rec = state.history[-1]
    np.testing.assert_array_equal(rec.u, x1)
    np.testing.assert_array_equal(rec.y, x1)
    assert rec.halfspace.is_whole_space
    np.testing.assert_array_equal(state.x, x1)

    res = run(stationary_instance(), cfg, x1)
    assert res.status == "converged" and res.iterations == 1
    np.testing.assert_array_equal(res.final, x1)


def test_one_scalar_step_by_hand():
    # u = (1 + r)^{-1} w = 0.5, y = 0.5 u + 0.5 S u = 0.5,
    # cut 2 (x - y) z <= x^2 - y^2, i.e. z <= 0.75, and x_2 = P x_1 = 0.75
    p = scalar_instance()
    cfg = SolverConfig(gamma=0.5)
    state = step(SolverState.initial(p, cfg, [1.0]), p, cfg)
    rec = state.history[-1]
    assert rec.u[0] == pytest.approx(0.5)
    assert rec.y[0] == pytest.approx(0.5)
    a, b = rec.halfspace.normalized()
    assert a[0] == pytest.approx(1.0) and b == pytest.approx(0.75)
    assert state.x[0] == pytest.approx(0.75)


def test_scalar_run_converges_to_zero():
    res = run(scalar_instance(), SolverConfig(gamma=0.5), [1.0])
    assert res.status == "converged"
    assert abs(res.final[0]) < 1e-4


def test_empty_target_never_converges():
    # C = {z <= 1}; f has its root at 2 so EP(f) = {1}; negation fixes only 0
    C = HalfSpaceIntersection((HalfSpace([1.0], 1.0),))
    p = scalar_instance(f=MonotoneAffine([[1.0]], [-2.0], C), S=MappingSpec(NegationMap(1)), C=C)
    res = run(p, SolverConfig(gamma=0.5, max_iter=500), [0.5])
    assert res.status in ("infeasible", "max_iter")


def test_x1_must_lie_in_c():
    C = Box([0.0], [1.0])
    p = scalar_instance(f=MonotoneAffine([[1.0]], [0.0], C), C=C)
    with pytest.raises(ValueError):
        run(p, SolverConfig(gamma=0.5), [2.0])


def test_validate_examples():
    p = scalar_instance()
    assert validate_config(p, SolverConfig(gamma=0.5)).passed
    assert not validate_config(p, SolverConfig(gamma=1.0))["step_size"].passed

    strict = scalar_instance(S=MappingSpec(identity_map(1), k=0.4))
    rep = validate_config(strict, SolverConfig(gamma=0.5, alpha_schedule=Schedule.constant(0.3)))
    assert not rep["relaxation"].passed

    harmonic = scalar_instance(S=MappingSpec(identity_map(1), lambda_schedule=Schedule.harmonic(1.0)))
    rep = validate_config(harmonic, SolverConfig(gamma=0.5))
    assert not rep["summability"].passed
    assert [c.name for c in rep.failures()] == ["summability"]


def test_validate_regularization():
    p = scalar_instance()
    cfg = SolverConfig(gamma=0.5, r_schedule=Schedule.harmonic(1.0))
    assert not validate_config(p, cfg)["regularization"].passed
    cfg = SolverConfig(gamma=0.5, r_schedule=Schedule.shifted(0.5, 1.0))
    assert validate_config(p, cfg)["regularization"].passed


def test_problem_instance_checks_lengths():
    W = WholeSpace(1)
    with pytest.raises(ValueError):
        ProblemInstance(W, W, [ZeroBifunction(W)], [], [np.eye(1)], [MappingSpec(identity_map(1))])
    with pytest.raises(ValueError):
        ProblemInstance(W, W, [ZeroBifunction(Box([0.0], [1.0]))], [ZeroBifunction(W)],
                        [np.eye(1)], [MappingSpec(identity_map(1))])


def test_config_checks():
    with pytest.raises(ValueError):
        SolverConfig(gamma=0.5, mode="fast")
    with pytest.raises(ValueError):
        SolverConfig(gamma=0.5, max_iter=0)


def test_identity_operator_mode_matches_full():
    inst = random_instance(3, 2, 2)
    p = inst.problem
    eye = ProblemInstance(p.C, p.C, p.f, [ZeroBifunction(p.C)] * p.N, [np.eye(2)] * p.N, p.S)
    full = run(eye, inst.config, inst.x1)
    reduced = run(eye, replace(inst.config, mode="identity_operator"), inst.x1)
    assert len(full.halves) == len(reduced.halves)
    for a, b in zip(full.halves, reduced.halves):
        assert np.array_equal(a.normal, b.normal) and a.offset == b.offset


def test_identity_operator_mode_needs_matching_spaces():
    p = random_instance(12, 5, 3, dim2=3).problem
    with pytest.raises(ValueError):
        mode_reduce(p, "identity_operator")


def test_nonexpansive_mode_zeroes_slack():
    S = MappingSpec(identity_map(1), lambda_schedule=Schedule.inverse_square(1.0),
                    mu_schedule=Schedule.geometric(1.0, 0.5))
    p = scalar_instance(S=S)
    reduced = mode_reduce(p, "nonexpansive")
    assert reduced.S[0].lambda_schedule.rule == "zero"
    res = run(p, SolverConfig(gamma=0.5, mode="nonexpansive"), [1.0])
    assert all(rec.theta == 0.0 for rec in res.trace)
    assert res.status == "converged" and abs(res.final[0]) < 1e-4


def test_nonexpansive_mode_rejects_expansive_map():
    W = WholeSpace(2)
    S = MappingSpec(AffineMap([[0.5, 0.8], [0.0, 0.5]], [0, 0]), k=0.25)
    p = ProblemInstance(W, W, [ZeroBifunction(W)], [ZeroBifunction(W)], [np.eye(2)], [S])
    with pytest.raises(ValueError):
        mode_reduce(p, "nonexpansive")


def test_callback_sees_every_step():
    seen = []
    res = run(scalar_instance(), SolverConfig(gamma=0.5, max_iter=10), [1.0], callback=seen.append)
    assert [r.n for r in seen] == list(range(1, res.iterations + 1))


def test_diverging_mapping_reports_status():
    S = MappingSpec(AffineMap([[3.0]], [0.0]))
    p = scalar_instance(f=MonotoneAffine([[0.0]], [0.0]), S=S)
    res = run(p, SolverConfig(gamma=0.5, max_iter=100), [1.0])
    assert res.status == "diverged"
