import math

import numpy as np
import pytest

from analysis.rescaler import (
    brownian_discretization_error,
    chi,
    chi_knots,
    discretization_error,
    grid_gap,
    increments,
    knots,
    norm_inf1,
    pi_n,
    rescale,
    rescaled_at,
    sup_gap,
)
from engine.simulator import PathRecord, SimulationSettings, compensator_at, simulate_path, simulate_replicas
from utils.errors import ConfigurationError, DomainError


def _empty(model, horizon):
    return PathRecord(model=model, horizon=horizon, event_times=np.empty(0), event_thetas=np.empty(0),
                      event_marks=np.empty(0))


def _path(model, horizon, seed=1):
    settings = SimulationSettings(record_candidates=False)
    return simulate_path(model, horizon, settings.field(seed, model), settings)


def test_event_free_path_is_a_decreasing_ramp(linear_model):
    T, n = 100.0, 8
    rp = rescale(_empty(linear_model, T), linear_model, T, n)
    assert np.all(np.diff(rp.values) < 0.0)
    assert rp.values == pytest.approx(-math.sqrt(T) * knots(n))
    assert sup_gap(rp) == pytest.approx(math.sqrt(T) / n)


def test_values_match_direct_evaluation(sigmoid_model):
    T, n = 80.0, 10
    path = _path(sigmoid_model, T, seed=3)
    rp = rescale(path, sigmoid_model, T, n)
    direct = rescaled_at(path, sigmoid_model, T, knots(n), quad_step=1e-4)
    assert np.allclose(rp.values, direct, atol=1e-6)


def test_increments_reproduce_values(linear_model):
    rp = rescale(_path(linear_model, 50.0), linear_model, 50.0, 7)
    inc = increments(rp)
    assert inc.n == 7
    assert np.array_equal(chi(inc.deltas).knot_values, rp.values)


def test_rescale_rejects_short_paths(linear_model):
    with pytest.raises(DomainError):
        rescale(_path(linear_model, 10.0), linear_model, 20.0, 4)
    with pytest.raises(DomainError):
        rescale(_path(linear_model, 10.0), linear_model, 10.0, 0)


def test_pi_n_examples():
    assert pi_n(lambda t: 3.0 + 0.0 * t, 5)(np.linspace(0, 1, 11)) == pytest.approx(np.full(11, 3.0))
    step = pi_n(lambda t: t, 2)
    assert step([0.0, 0.25, 0.5, 0.75, 1.0]) == pytest.approx([0.0, 0.0, 0.5, 0.5, 1.0])
    twice = pi_n(step, 2)
    assert np.array_equal(twice.knot_values, step.knot_values)


def test_pi_n_validates_length():
    with pytest.raises(DomainError):
        pi_n([0.0, 1.0], 3)


def test_norm_inf1():
    assert norm_inf1([1.0, -2.0, 3.0]) == 2.0
    assert norm_inf1(np.zeros(4)) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=9)
        assert norm_inf1(x) == pytest.approx(np.max(np.abs(chi(x)(knots(9)))))
    with pytest.raises(DomainError):
        norm_inf1([])


def test_chi_knots_matches_chi():
    inc = np.random.default_rng(1).normal(size=(5, 4))
    rows = chi_knots(inc)
    for k in range(5):
        assert np.array_equal(rows[k], chi(inc[k]).knot_values)


def test_exact_gap_dominates_audit_grid(sigmoid_model):
    T, n = 60.0, 6
    path = _path(sigmoid_model, T, seed=4)
    rp = rescale(path, sigmoid_model, T, n)
    assert grid_gap(path, sigmoid_model, rp, 1e-4) <= sup_gap(rp) * (1 + 1e-9) + 1e-9
    assert grid_gap(path, sigmoid_model, rp, 1e-5) == pytest.approx(sup_gap(rp), abs=1e-3)


def test_refinement_limit_bounded_by_largest_jump(linear_model):
    T = 50.0
    path = _path(linear_model, T, seed=8)
    n = 5000
    rp = rescale(path, linear_model, T, n)
    edges = knots(n) * T
    counts = np.histogram(path.event_times, bins=edges)[0]
    drift = np.diff(compensator_at(path, edges))
    # within a cell F moves up by the claims and down by the compensator
    assert sup_gap(rp) <= np.max(np.maximum(counts, drift)) / math.sqrt(T) + 1e-9
    assert np.max(drift) < 1.0


def test_discretization_error_decreases_in_n(poisson_model):
    paths = simulate_replicas(poisson_model, 400.0, master_seed=2, replicas=100,
                              settings=SimulationSettings(record_candidates=False))
    gaps = [discretization_error(paths, 400.0, n).mean_sup_gap for n in (8, 16, 32, 64)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_discretization_error_guards(poisson_model):
    paths = simulate_replicas(poisson_model, 20.0, master_seed=2, replicas=5)
    with pytest.raises(DomainError):
        discretization_error(paths, 20.0, 4)
    with pytest.raises(ConfigurationError):
        discretization_error(paths, 20.0, 4, audit_step=0.1, min_replicas=5)


def test_brownian_reference_scales_like_inverse_root_n():
    coarse = brownian_discretization_error(1.0, 4, 2000, seed=1)
    fine = brownian_discretization_error(1.0, 64, 2000, seed=1)
    assert fine.mean_sup_gap < coarse.mean_sup_gap
    assert fine.mean_sup_gap <= 3 * 1.0 / 64**0.25


def test_discretization_error_past_the_horizon_and_in_parallel(sigmoid_model):
    paths = simulate_replicas(sigmoid_model, 60.0, master_seed=6, replicas=100,
                              settings=SimulationSettings(record_candidates=False))
    serial = discretization_error(paths, 40.0, 8, quad_step=1e-3)
    pooled = discretization_error(paths, 40.0, 8, quad_step=1e-3, workers=2)
    assert serial == pooled
    assert serial.audit_ok and serial.audit_excess <= 1e-9
    assert serial.grid_mean_sup_gap <= serial.mean_sup_gap * (1 + 1e-9) + 1e-9
