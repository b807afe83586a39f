import math

import numpy as np
import pytest

import otlimits.config as config
from otlimits.core import (
    AtomicMeasure,
    build_interval,
    build_torus_1d,
    cdf_distance,
    dirac,
    probability,
    ramp_measure,
    random_measure,
    signed,
    uniform,
)
from otlimits.errors import ValidationError
from otlimits.lagrangian import d_e, d_e_transport, homogeneous, mechanical
from otlimits.limits import (
    DEFAULT_T_GRID,
    affine_continuation,
    build_report,
    chat_conditional,
    chat_T_energy,
    conditional_objective,
    conditional_w1p,
    d_e_conditional,
    default_energy_range,
    epsilon_sweep,
    gamma_liminf_check,
    is_unbounded,
    min_mu_scaled,
    richardson,
    th5_spotcheck,
    transport_measure,
)
from otlimits.wasserstein import w1_dual, wasserstein_p


@pytest.fixture
def ends():
    """Простір [0, 1] з 129 вузлів та λ = δ.25 − δ.75."""
    space = build_interval(129)
    return space, signed(dirac(space, 32), dirac(space, 96))


def _end_to_end(m):
    space = build_interval(m)
    return space, signed(dirac(space, 0), dirac(space, m - 1))


def test_richardson_removes_first_order_error():
    assert richardson(10, 1.0 - 1 / 10, 20, 1.0 - 1 / 20) == pytest.approx(1.0)


def test_build_report_edge_cases():
    empty = build_report([], [])
    assert math.isnan(empty.extrapolated_limit)
    assert empty.n_values == []
    single = build_report([4], [0.5])
    assert single.extrapolated_limit == 0.5
    assert math.isnan(single.observed_rate)


def test_build_report_rate():
    n = [4, 8, 16]
    report = build_report(n, [1.0 - 1.0 / k for k in n])
    assert report.observed_rate == pytest.approx(1.0)
    assert report.extrapolated_limit == pytest.approx(1.0)
    assert math.isnan(report.rates[0]) and math.isnan(report.rates[1])


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_energy_route_matches_closed_form(torus16, rng, T):
    lam = signed(random_measure(torus16, rng), random_measure(torus16, rng))
    w1 = wasserstein_p(torus16, 1.0, lam.pos, lam.neg)
    model = homogeneous(torus16, 2.0)
    value = chat_T_energy(torus16, lam, T, model, default_energy_range(torus16, lam, 2.0, T))
    assert value == pytest.approx(w1 ** 2 / T, rel=1e-6)


def test_energy_route_rejects_bad_time(torus16, half_pair):
    with pytest.raises(ValidationError):
        chat_T_energy(torus16, half_pair, 0.0, homogeneous(torus16, 2.0), [0.0, 1.0])


def test_energy_range_boundary_warns(torus64, half_pair, caplog):
    chat_T_energy(torus64, half_pair, 1.0, homogeneous(torus64, 2.0), [0.0, 0.01, 0.02])
    assert "верхній межі" in caplog.text


@pytest.mark.parametrize("m", [32, 64])
def test_conditional_uniform_mu(m):
    space, lam = _end_to_end(m)
    solution = chat_conditional(space, lam, uniform(space), 1.0, homogeneous(space, 2.0))
    assert solution.converged
    assert solution.value == pytest.approx(m * (m - 1.5) / (m - 1) ** 2, rel=1e-6)
    assert solution.value == pytest.approx(1.0, rel=0.03)
    assert solution.phi[0] == 0.0


def test_conditional_error_decreases_with_m():
    errors = []
    for m in (32, 64):
        space, lam = _end_to_end(m)
        errors.append(abs(chat_conditional(space, lam, uniform(space), 1.0, homogeneous(space, 2.0)).value - 1.0))
    assert errors[1] < errors[0]


def test_conditional_w1p_uniform():
    space, lam = _end_to_end(64)
    assert conditional_w1p(space, lam, uniform(space), 2.0) == pytest.approx(1.0, rel=0.03)


def test_conditional_point_mass_is_unbounded():
    space, lam = _end_to_end(16)
    mu = dirac(space, 8)
    assert is_unbounded(space, lam, mu)
    solution = chat_conditional(space, lam, mu, 1.0, homogeneous(space, 2.0))
    assert math.isinf(solution.value)
    assert math.isinf(conditional_w1p(space, lam, mu, 2.0))


def test_conditional_relay_measure_is_bounded():
    space, lam = _end_to_end(16)
    assert not is_unbounded(space, lam, ramp_measure(space, 0.05, 0.95))


def test_conditional_rejects_non_probability(interval5):
    lam = signed(dirac(interval5, 0), dirac(interval5, 4))
    with pytest.raises(ValidationError, match="ймовірнісною"):
        chat_conditional(interval5, lam, AtomicMeasure(np.full(5, 0.5)), 1.0, homogeneous(interval5, 2.0))


@pytest.mark.parametrize("model_factory", [
    lambda s: homogeneous(s, 2.0),
    lambda s: homogeneous(s, 3.0),
    lambda s: mechanical(s, np.cos(2 * np.pi * s.points[:, 0])),
])
def test_conditional_gradient_matches_finite_differences(torus16, rng, model_factory):
    lam = signed(random_measure(torus16, rng), random_measure(torus16, rng))
    mu = probability(rng.random(16) + 0.1)
    model = model_factory(torus16)
    phi = rng.normal(size=16)
    _, grad = conditional_objective(torus16, lam, mu, 0.7, model, phi)
    step = 1e-6
    numeric = np.empty(16)
    for k in range(16):
        e = np.zeros(16)
        e[k] = step
        plus, _ = conditional_objective(torus16, lam, mu, 0.7, model, phi + e)
        minus, _ = conditional_objective(torus16, lam, mu, 0.7, model, phi - e)
        numeric[k] = (plus - minus) / (2 * step)
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)


def test_non_converged_ascent_warns(monkeypatch, caplog):
    monkeypatch.setattr(config, "MAX_ASCENT_ITERATIONS", 2)
    space, lam = _end_to_end(32)
    solution = chat_conditional(space, lam, uniform(space), 1.0, homogeneous(space, 2.0))
    assert not solution.converged
    assert "не збіглося" in caplog.text


def test_d_e_conditional_matches_homogeneous_oracle():
    space, lam = _end_to_end(16)
    mu = uniform(space)
    E = 1.0
    w = conditional_w1p(space, lam, mu, 2.0)
    value = d_e_conditional(space, lam, mu, homogeneous(space, 2.0), E)
    assert value == pytest.approx(2.0 * math.sqrt(E) * w, rel=1e-4)


def test_d_e_conditional_zero_lambda(interval5):
    zero = signed(dirac(interval5, 0), dirac(interval5, 0))
    assert d_e_conditional(interval5, zero, uniform(interval5), homogeneous(interval5, 2.0), 1.0) == 0.0


def test_min_mu_scaled_three_points():
    space = build_interval(3)
    lam = signed(dirac(space, 0), dirac(space, 2))
    value, mu = min_mu_scaled(space, 2.0, lam, 2)
    assert value == pytest.approx(1.0)
    assert mu.mass == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        min_mu_scaled(space, 2.0, lam, 0)


def test_sweep_rejects_non_increasing(torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    with pytest.raises(ValidationError, match="зростати"):
        epsilon_sweep(torus16, 2.0, lam, [8, 4])


def test_empty_sweep(torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    report = epsilon_sweep(torus16, 2.0, lam, [])
    assert report.n_values == []
    assert math.isnan(report.extrapolated_limit)


@pytest.mark.slow
def test_sweep_approaches_w1(torus64, half_pair):
    report = epsilon_sweep(torus64, 2.0, half_pair, [4, 8, 16, 32])
    values = dict(zip(report.n_values, report.scaled_values))
    assert values[8] == pytest.approx(0.4759, abs=2e-3)
    assert values[16] == pytest.approx(0.49212, abs=2e-3)
    assert values[32] == pytest.approx(0.5, abs=1e-6)
    for n in (8, 16, 32):
        assert values[n] == pytest.approx(0.5, rel=0.05)
    assert report.extrapolated_limit == pytest.approx(0.5, rel=0.02)
    assert all(mu.mass == pytest.approx(1.0) for mu in report.mu_trace)


def test_sweep_threads_give_same_values(monkeypatch, torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    serial = epsilon_sweep(torus16, 2.0, lam, [2, 4]).scaled_values
    monkeypatch.setattr(config, "THREADS", 2)
    threaded = epsilon_sweep(torus16, 2.0, lam, [2, 4]).scaled_values
    assert threaded == pytest.approx(serial, abs=1e-12)


@pytest.mark.slow
def test_three_routes_agree(torus64, half_pair):
    closed = 0.5 ** 2
    model = homogeneous(torus64, 2.0)
    energy = chat_T_energy(torus64, half_pair, 1.0, model, default_energy_range(torus64, half_pair, 2.0, 1.0))
    assert energy == pytest.approx(closed, rel=1e-6)
    limit = epsilon_sweep(torus64, 2.0, half_pair, [4, 8]).extrapolated_limit
    assert limit ** 2 == pytest.approx(closed, rel=0.03)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_gamma_liminf_holds(torus16, seed):
    rng = np.random.default_rng(seed)
    lam = signed(random_measure(torus16, rng), random_measure(torus16, rng))
    mu = probability(rng.random(16) + 0.2)
    rows = gamma_liminf_check(torus16, 2.0, lam, mu, [4, 8, 16])
    assert [row.n for row in rows] == [4, 8, 16]
    assert all(row.holds for row in rows)
    assert all(row.lower_bound == rows[0].lower_bound for row in rows)


def test_gamma_liminf_requires_positive_mu(torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    with pytest.raises(ValidationError, match="строго додатною"):
        gamma_liminf_check(torus16, 2.0, lam, dirac(torus16, 3), [4])


@pytest.mark.slow
def test_transport_measure_is_uniform_ramp(ends):
    space, lam = ends
    result = transport_measure(space, lam, [32, 64])
    assert result.n == 64
    assert result.mu.mass == pytest.approx(1.0)
    assert cdf_distance(result.mu, ramp_measure(space, 0.25, 0.75)) <= 0.1
    assert result.tv_gap >= 0


@pytest.mark.slow
def test_nested_minimisation(ends):
    space, lam = ends
    tm = transport_measure(space, lam, [32, 64]).mu
    result = th5_spotcheck(space, lam, 2.0, [uniform(space), tm, dirac(space, 64)])
    assert result.unconditional == pytest.approx(0.25, rel=1e-6)
    assert result.min_over_candidates == pytest.approx(result.unconditional, rel=0.05)
    assert result.min_over_candidates >= result.unconditional - result.slack
    assert math.isinf(result.candidate_values[2])
    assert result.candidate_values[2] >= 5 * result.unconditional
    assert result.holds


def test_nested_minimisation_with_energy():
    space, lam = _end_to_end(16)
    result = th5_spotcheck(space, lam, 2.0, [uniform(space)], E=1.0)
    assert result.d_e_unconditional == pytest.approx(2.0, rel=1e-6)
    assert result.d_e_min_over_candidates >= result.d_e_unconditional - result.slack


def test_nested_minimisation_needs_candidates(torus16, rng):
    lam = signed(random_measure(torus16, rng), random_measure(torus16, rng))
    with pytest.raises(ValidationError):
        th5_spotcheck(torus16, lam, 2.0, [])


def test_affine_continuation_is_monotone(torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    model = mechanical(torus16, np.cos(2 * np.pi * torus16.points[:, 0]))
    E_range = 1.0 + np.linspace(0.0, 8.0, 33)
    report = affine_continuation(torus16, lam, model, [0.5, 1.0, 2.0, 4.0], E_range, steps=16)
    assert report.ubar == pytest.approx(1.0, abs=1e-9)
    assert report.monotone
    assert report.values[-1] <= report.values[0]
    assert report.to_dict()["T_values"] == [0.5, 1.0, 2.0, 4.0]


@pytest.mark.parametrize("model_factory", [
    lambda s: homogeneous(s, 2.0),
    lambda s: homogeneous(s, 3.0),
    lambda s: mechanical(s, np.cos(2 * np.pi * s.points[:, 0])),
])
def test_conditional_objective_lies_above_chords(torus16, rng, model_factory):
    lam = signed(random_measure(torus16, rng), random_measure(torus16, rng))
    mu = probability(rng.random(16) + 0.1)
    model = model_factory(torus16)
    phi0, phi1 = rng.normal(size=16), rng.normal(size=16)
    f0, _ = conditional_objective(torus16, lam, mu, 0.7, model, phi0)
    f1, _ = conditional_objective(torus16, lam, mu, 0.7, model, phi1)
    scale = max(1.0, abs(f0), abs(f1))
    for t in np.linspace(0.0, 1.0, 7)[1:-1]:
        value, _ = conditional_objective(torus16, lam, mu, 0.7, model, (1 - t) * phi0 + t * phi1)
        assert value >= (1 - t) * f0 + t * f1 - 1e-10 * scale


@pytest.mark.slow
def test_sweep_two_pairs_approaches_w1():
    space = build_torus_1d(128)
    lam = signed(
        AtomicMeasure(dirac(space, 0).weights + dirac(space, 64).weights),
        AtomicMeasure(dirac(space, 32).weights + dirac(space, 96).weights),
    )
    w1 = w1_dual(space, lam).value
    assert w1 == pytest.approx(0.5)
    report = epsilon_sweep(space, 2.0, lam, [8, 16])
    assert report.extrapolated_limit == pytest.approx(w1, rel=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_gamma_liminf_on_random_pairs(seed):
    space = build_torus_1d(32)
    rng = np.random.default_rng(seed)
    lam = signed(random_measure(space, rng), random_measure(space, rng))
    mu = probability(rng.random(32) + 0.2)
    rows = gamma_liminf_check(space, 2.0, lam, mu, [4, 8, 16, 32, 64])
    assert sum(not row.holds for row in rows) == 0


@pytest.mark.slow
def test_transport_measure_splits_between_segments():
    space = build_interval(129)
    lam = signed(
        AtomicMeasure(dirac(space, 0).weights + dirac(space, 64).weights),
        AtomicMeasure(dirac(space, 32).weights + dirac(space, 128).weights),
    )
    mu = transport_measure(space, lam, [16, 24]).mu.weights
    assert mu[:33].sum() == pytest.approx(1 / 3, abs=0.02)
    assert mu[64:].sum() == pytest.approx(2 / 3, abs=0.02)
    assert mu[33:64].sum() == pytest.approx(0.0, abs=0.02)


def test_affine_continuation_becomes_flat(torus16):
    lam = signed(dirac(torus16, 0), dirac(torus16, 8))
    model = mechanical(torus16, np.cos(2 * np.pi * torus16.points[:, 0]))
    E_range = 1.0 + np.linspace(0.0, 8.0, 33)
    T_values = [0.5, 1.0, 2.0, 4.0, 8.0, 256.0, 1024.0]
    report = affine_continuation(torus16, lam, model, T_values, E_range, steps=16)
    assert report.monotone
    # нахил 𝒟_E при E = ūE не більший за суму часів ланцюга: 15 ребер по T <= 16
    assert report.flat_from is not None
    assert report.flat_from <= 256.0
    floor = d_e_transport(torus16, lam, d_e(model, 1.0, DEFAULT_T_GRID, 16, [(0, 8)]))
    assert report.values[-1] == pytest.approx(floor + 1024.0 * (report.ubar - 1.0), rel=1e-6)
