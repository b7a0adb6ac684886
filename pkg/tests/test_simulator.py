import math

import numpy as np
import pytest

from engine.poisson_field import PoissonField
from engine.simulator import (
    PathRecord,
    SimulationSettings,
    _compensator_simpson,
    compensator,
    compensator_at,
    compensator_refinement_gap,
    dominance_audit,
    intensity_at,
    martingale_check,
    simulate_path,
    simulate_replicas,
    stationary_sigma2,
    time_rescaling_ks,
)
from model import HawkesModel, Kernel, MarkDistribution, MarkFunction, MarkModel, Nonlinearity, NonlinearityFamily
from utils.errors import DomainError, ExplosionGuardError

from conftest import unit_marks


def _path(model, horizon, seed=1, **kwargs):
    settings = SimulationSettings(**kwargs)
    return simulate_path(model, horizon, settings.field(seed, model), settings)


def _events(model, times, marks=None):
    times = np.asarray(times, dtype=float)
    marks = np.ones(times.size) if marks is None else np.asarray(marks, dtype=float)
    return PathRecord(model=model, horizon=float(times.max()) + 5.0, event_times=times,
                      event_thetas=np.zeros(times.size), event_marks=marks)


def test_intensity_single_event():
    marks = MarkModel(MarkDistribution.discrete([0.0, 2.0], [0.9, 0.1]), b_fn=MarkFunction.identity())
    model = HawkesModel(Kernel.exponential(1.0, 1.0), marks, Nonlinearity(NonlinearityFamily.LINEAR, 1.0))
    value = intensity_at(1.5, ([0.5], [2.0]), model)
    assert value == pytest.approx(1.0 + 2.0 * math.exp(-1.0), rel=1e-12)
    assert value == pytest.approx(1.73576, abs=1e-5)


def test_intensity_without_events(linear_model, poisson_model):
    assert intensity_at(3.0, ([], []), linear_model) == pytest.approx(1.0)
    assert intensity_at(3.0, ([0.5, 1.0], [1.0, 1.0]), poisson_model) == pytest.approx(1.0)


def test_intensity_ignores_events_at_or_after_t(linear_model):
    assert intensity_at(1.0, ([1.0, 2.0], [1.0, 1.0]), linear_model) == pytest.approx(1.0)


def test_poisson_rate():
    model = HawkesModel(Kernel.exponential(0.0, 1.0), unit_marks(), Nonlinearity(NonlinearityFamily.LINEAR, 2.0))
    path = _path(model, 1000.0, seed=4)
    assert abs(path.n_events / 1000.0 - 2.0) <= 3 * math.sqrt(2.0 / 1000.0)


def test_linear_hawkes_mean_rate(linear_model):
    T = 2000.0
    path = _path(linear_model, T, seed=9, record_candidates=False)
    # asymptotic variance of H_T / T is mu / (1 - rho)^3 / T
    stderr = math.sqrt(1.0 / 0.5**3 / T)
    assert abs(path.n_events / T - 2.0) <= 4 * stderr


@pytest.mark.parametrize("fixture", ["linear_model", "sigmoid_model", "inhibitory_model"])
def test_accepted_events_replay_exactly(fixture, request):
    model = request.getfixturevalue(fixture)
    path = _path(model, 60.0, seed=2)
    assert path.n_events > 0
    for t, th in zip(path.event_times.tolist(), path.event_thetas.tolist()):
        assert th <= intensity_at(t, path, model)
    rejected = ~path.candidate_accepted
    for t, th in zip(path.candidate_times[rejected].tolist(), path.candidate_thetas[rejected].tolist()):
        assert th > intensity_at(t, path, model)


def test_simulation_is_deterministic(sigmoid_model):
    a = _path(sigmoid_model, 80.0, seed=42)
    b = _path(sigmoid_model, 80.0, seed=42)
    assert np.array_equal(a.event_times, b.event_times)
    assert np.array_equal(a.event_marks, b.event_marks)
    assert np.array_equal(a.candidate_times, b.candidate_times)


def test_accepted_set_independent_of_segment(linear_model):
    a = _path(linear_model, 100.0, seed=5, segment=1.0)
    b = _path(linear_model, 100.0, seed=5, segment=0.3)
    assert np.array_equal(a.event_times, b.event_times)


def test_shorter_horizon_is_a_prefix(linear_model):
    long = _path(linear_model, 120.0, seed=6)
    short = _path(linear_model, 50.0, seed=6)
    k = short.n_events
    assert np.array_equal(long.event_times[:k], short.event_times)
    assert long.n_events == k or long.event_times[k] > 50.0


def test_event_cap(linear_model):
    with pytest.raises(ExplosionGuardError) as info:
        _path(linear_model, 500.0, seed=1, max_events=10)
    assert info.value.diagnostics["events"] > 10


def test_horizon_must_be_positive(linear_model):
    with pytest.raises(DomainError):
        _path(linear_model, 0.0)


def test_record_candidates_off(linear_model):
    path = _path(linear_model, 20.0, record_candidates=False)
    assert not path.has_candidates
    assert path.to_frame()["accepted"].eq(1).all()


def test_zero_kernel_compensator():
    model = HawkesModel(Kernel.exponential(0.0, 1.0), unit_marks(), Nonlinearity(NonlinearityFamily.LINEAR, 2.0))
    path = _path(model, 10.0)
    assert compensator(path, 5.0) == pytest.approx(10.0)
    assert compensator(path, 0.0) == 0.0


def test_compensator_closed_form_on_injected_events(linear_model):
    path = _events(linear_model, [0.5, 1.2, 3.0])
    q = np.array([0.0, 0.5, 1.0, 2.5, 3.0, 7.9])
    exact = q + sum(0.5 * np.where(q > tau, -np.expm1(-(q - tau)), 0.0) for tau in (0.5, 1.2, 3.0))
    assert np.allclose(compensator_at(path, q), exact, atol=1e-12)
    assert np.allclose(_compensator_simpson(path, q, 1e-3), exact, atol=1e-8)


def test_compensator_simpson_erlang_matches_fine_trapezoid(sigmoid_model):
    path = _events(sigmoid_model, [0.7, 1.1, 4.0], marks=[0.6, 1.4, 1.0])
    grid = np.linspace(0.0, path.horizon, 400_001)
    fine = np.trapezoid(path.intensity(grid), grid)
    assert compensator(path, path.horizon, quad_step=1e-3) == pytest.approx(fine, abs=1e-6)


def test_compensator_rejects_times_outside_horizon(linear_model):
    path = _events(linear_model, [1.0])
    with pytest.raises(DomainError):
        compensator_at(path, [path.horizon + 1.0])


@pytest.mark.parametrize("fixture", ["linear_model", "sigmoid_model", "inhibitory_model"])
def test_dominance_audit(fixture, request):
    model = request.getfixturevalue(fixture)
    assert dominance_audit(_path(model, 100.0, seed=3), points=5000)


@pytest.mark.parametrize("fixture", ["linear_model", "sigmoid_model", "inhibitory_model"])
def test_martingale_and_time_rescaling(fixture, request):
    model = request.getfixturevalue(fixture)
    paths = simulate_replicas(model, 50.0, master_seed=17, replicas=200,
                              settings=SimulationSettings(record_candidates=False))
    # the rescaled process on the knots 0, 1/8, ..., 1
    table = martingale_check(paths, np.linspace(0.0, 50.0, 9))
    assert table["ok"].all()
    ks = time_rescaling_ks(paths)
    assert ks.pvalue > 1e-3
    assert ks.count == sum(p.n_events for p in paths)


def test_replicas_do_not_depend_on_worker_count(linear_model):
    settings = SimulationSettings(record_candidates=False)
    serial = simulate_replicas(linear_model, 30.0, 5, 4, settings, workers=1)
    pooled = simulate_replicas(linear_model, 30.0, 5, 4, settings, workers=2)
    for a, b in zip(serial, pooled):
        assert np.array_equal(a.event_times, b.event_times)


def test_replica_field_matches_direct_field(linear_model):
    settings = SimulationSettings()
    field = PoissonField.for_replica(5, 2, linear_model.marks.distribution)
    direct = simulate_path(linear_model, 30.0, field, settings)
    via = simulate_replicas(linear_model, 30.0, 5, 3, settings)[2]
    assert np.array_equal(direct.event_times, via.event_times)


def test_stationary_sigma2(poisson_model, linear_model):
    exact = stationary_sigma2(poisson_model, None, 100.0, 10, master_seed=1)
    assert exact.sigma2 == pytest.approx(1.0) and exact.stderr == 0.0
    est = stationary_sigma2(linear_model, 50.0, 400.0, 20, master_seed=3, stderr_tol=1.0)
    assert abs(est.sigma2 - 2.0) <= 4 * est.stderr + 1e-12
    assert est.sigma2 <= linear_model.mean_intensity_bound() + 4 * est.stderr


def test_martingale_check_needs_two_paths(linear_model):
    with pytest.raises(DomainError):
        martingale_check([_path(linear_model, 10.0)], [5.0])


def test_martingale_check_flags_a_biased_compensator(linear_model):
    paths = simulate_replicas(linear_model, 50.0, master_seed=4, replicas=200,
                              settings=SimulationSettings(record_candidates=False))
    # a path model with twice the baseline has the wrong compensator for these events
    doubled = HawkesModel(linear_model.kernel, linear_model.marks, Nonlinearity(NonlinearityFamily.LINEAR, 2.0))
    shifted = [PathRecord(model=doubled, horizon=p.horizon, event_times=p.event_times,
                          event_thetas=p.event_thetas, event_marks=p.event_marks) for p in paths]
    assert not martingale_check(shifted, [50.0])["ok"].all()


@pytest.mark.parametrize("fixture", ["poisson_model", "linear_model", "sigmoid_model", "inhibitory_model"])
def test_compensator_refinement_gap_is_small(fixture, request):
    model = request.getfixturevalue(fixture)
    assert compensator_refinement_gap(_path(model, 40.0, seed=9)) <= 1e-6
