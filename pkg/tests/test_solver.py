import itertools
import json
from types import SimpleNamespace

import numpy as np
import pytest

import otlimits.solver as solver
from otlimits.core import build_interval, build_torus_1d, dirac, probability, random_measure, signed
from otlimits.errors import SolverError, ValidationError
from otlimits.formatters import emit_json
from otlimits.solver import solve_circulation, solve_joint_min_mu, solve_transportation


def test_transportation_between_diracs(interval5):
    plan = solve_transportation(interval5.dist, dirac(interval5, 0), dirac(interval5, 4))
    assert plan.value == pytest.approx(1.0)
    assert plan.plan[0, 4] == pytest.approx(1.0)
    assert plan.dual_value == pytest.approx(1.0)


def test_transportation_marginals_and_certificate(torus16, rng):
    a = random_measure(torus16, rng)
    b = random_measure(torus16, rng)
    cost = torus16.dist ** 2
    result = solve_transportation(cost, a, b)
    assert np.allclose(result.source_marginal, a.weights, atol=1e-9)
    assert np.allclose(result.target_marginal, b.weights, atol=1e-9)
    reduced = cost - (result.phi[None, :] - result.psi[:, None])
    assert reduced.min() >= -1e-9
    assert result.dual_value == pytest.approx(result.value, abs=1e-9)


def test_transportation_partial_supports(interval5):
    a = np.array([0.5, 0.5, 0.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 0.0, 0.5, 0.5])
    result = solve_transportation(interval5.dist, a, b)
    assert result.value == pytest.approx(0.75)
    assert np.all(np.isfinite(result.phi))
    assert np.all(np.isfinite(result.psi))


def test_transportation_zero_mass(interval5):
    zero = np.zeros(5)
    assert solve_transportation(interval5.dist, zero, zero).value == 0.0


def test_transportation_rejects_unbalanced(interval5):
    with pytest.raises(ValidationError, match="розрив"):
        solve_transportation(interval5.dist, dirac(interval5, 0), dirac(interval5, 1, mass=2.0))


def test_transportation_rejects_nan_cost(interval5):
    cost = interval5.dist.copy()
    cost[1, 2] = np.nan
    with pytest.raises(ValidationError, match="NaN"):
        solve_transportation(cost, dirac(interval5, 0), dirac(interval5, 1))


def test_solver_failure_raises(monkeypatch, interval5):
    monkeypatch.setattr(solver, "linprog", lambda *a, **kw: SimpleNamespace(status=2, message="infeasible"))
    with pytest.raises(SolverError, match="статус 2"):
        solve_transportation(interval5.dist, dirac(interval5, 0), dirac(interval5, 4))


def test_circulation_picks_cheapest_cycle():
    cost = np.ones((4, 4))
    cost[2, 2] = -0.5
    mu, plan = solve_circulation(cost)
    assert plan.value == pytest.approx(-0.5)
    assert mu.weights.tolist() == pytest.approx([0, 0, 1, 0])
    assert np.allclose(plan.source_marginal, plan.target_marginal)


def test_circulation_two_cycle():
    cost = np.full((3, 3), 5.0)
    cost[0, 1] = cost[1, 0] = 1.0
    mu, plan = solve_circulation(cost)
    assert plan.value == pytest.approx(1.0)
    assert mu.weights.tolist() == pytest.approx([0.5, 0.5, 0])


def test_joint_problem_on_three_points():
    space = build_interval(3)
    lam = signed(dirac(space, 0), dirac(space, 2))
    solution = solve_joint_min_mu(space.dist ** 2, lam, 0.5)
    assert solution.value == pytest.approx(0.25)
    assert solution.mu.mass == pytest.approx(1.0)
    marginal = solution.plan.source_marginal
    assert np.allclose(marginal, solution.mu.weights + 0.5 * lam.pos.weights, atol=1e-9)


def test_joint_problem_rejects_bad_eps(interval5):
    lam = signed(dirac(interval5, 0), dirac(interval5, 4))
    with pytest.raises(ValidationError):
        solve_joint_min_mu(interval5.dist, lam, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_transportation_matches_permutation_vertices(seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((4, 4))
    quarter = np.full(4, 0.25)
    best = min(sum(cost[i, perm[i]] for i in range(4)) for perm in itertools.permutations(range(4)))
    assert solve_transportation(cost, quarter, quarter).value == pytest.approx(0.25 * best, abs=1e-12)


def test_joint_problem_beats_random_measures(rng):
    space = build_torus_1d(8)
    lam = signed(random_measure(space, rng), random_measure(space, rng))
    cost = space.dist ** 2
    eps = 0.25
    joint = solve_joint_min_mu(cost, lam, eps)
    for _ in range(100):
        mu = probability(rng.random(8) * (rng.random(8) < 0.7) + 1e-3)
        candidate = solve_transportation(cost, mu.weights + eps * lam.pos.weights, mu.weights + eps * lam.neg.weights)
        assert candidate.value >= joint.value - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_restricted_plan_stays_optimal(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(4, 11))
    space = build_torus_1d(m)
    cost = space.dist ** 2
    plan = solve_transportation(cost, random_measure(space, rng), random_measure(space, rng)).plan
    keep = (rng.random((m, m)) < 0.5) & (plan > 0)
    keep.flat[np.flatnonzero(plan)[0]] = True
    part = np.where(keep, plan, 0.0)
    restricted = solve_transportation(cost, part.sum(axis=1), part.sum(axis=0))
    assert restricted.value == pytest.approx(float((cost * part).sum()), abs=1e-9)


def test_plans_serialise_to_json(interval5):
    lam = signed(dirac(interval5, 0), dirac(interval5, 4))
    plan = solve_transportation(interval5.dist, lam.pos, lam.neg)
    data = json.loads(emit_json(plan))
    assert data["value"] == pytest.approx(1.0)
    assert np.array(data["plan"]).shape == (5, 5)
    joint = json.loads(emit_json(solve_joint_min_mu(interval5.dist ** 2, lam, 0.5)))
    assert set(joint) == {"value", "plan", "mu"}
    assert sum(joint["mu"]) == pytest.approx(1.0)
    assert np.array(joint["plan"]).sum() == pytest.approx(1.5)
