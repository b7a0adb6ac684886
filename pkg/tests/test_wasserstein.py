import itertools
import math

import numpy as np
import pytest

from analysis.rescaler import chi_knots
from analysis.wasserstein import (
    GaussianReference,
    TestFunctionalFamily,
    functional_w1_lower_bound,
    increment_vector_w1_lower_bound,
    pi_bound_shape,
    rate_envelope,
    sigma_tilde_sensitivity,
    verify_family_lipschitz,
    w1_empirical_1d,
    w1_vs_gaussian_1d,
)
from utils.errors import DomainError


def test_w1_identical_samples():
    x = np.random.default_rng(0).normal(size=50)
    assert w1_empirical_1d(x, x[::-1]) == 0.0


def test_w1_point_masses():
    assert w1_empirical_1d([2.0] * 4, [-1.5] * 4) == pytest.approx(3.5)


def test_w1_matches_brute_force_assignment():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=6), rng.exponential(size=6)
    best = min(np.mean(np.abs(a - b[list(p)])) for p in itertools.permutations(range(6)))
    assert w1_empirical_1d(a, b) == pytest.approx(best, rel=1e-12)


def test_w1_unequal_sizes():
    a = np.linspace(0.0, 1.0, 100)
    b = np.linspace(0.0, 1.0, 1000)
    assert w1_empirical_1d(a, b) < 0.01


def test_w1_empty_rejected():
    with pytest.raises(DomainError):
        w1_empirical_1d([], [1.0])


def test_w1_vs_gaussian_same_law():
    draws = np.random.default_rng(7).normal(0.0, 2.0, 100_000)
    assert w1_vs_gaussian_1d(draws, 0.0, 4.0) < 0.02 * 2.0


def test_w1_vs_gaussian_constant_sample():
    value = w1_vs_gaussian_1d(np.full(200_000, 1.0), 1.0, 9.0)
    assert value == pytest.approx(math.sqrt(2.0 * 9.0 / math.pi), rel=1e-3)


def test_w1_vs_gaussian_translation_invariant():
    draws = np.random.default_rng(1).normal(size=500)
    assert w1_vs_gaussian_1d(draws + 3.0, 3.0, 1.0) == pytest.approx(w1_vs_gaussian_1d(draws, 0.0, 1.0), abs=1e-12)


def test_w1_vs_gaussian_needs_positive_variance():
    with pytest.raises(DomainError):
        w1_vs_gaussian_1d([0.0, 1.0], 0.0, 0.0)


def test_family_is_lipschitz():
    assert verify_family_lipschitz(TestFunctionalFamily(), n=12, pairs=10_000)


def test_unknown_functional_rejected():
    with pytest.raises(DomainError):
        TestFunctionalFamily(("terminal", "variance"))


def test_reference_against_reference():
    ref = GaussianReference(2.0, 8)
    a, b = ref.sample_paths(2000, seed=1), ref.sample_paths(2000, seed=2)
    result = functional_w1_lower_bound(a, ref, reference_paths=b)
    assert result.bound <= 4 * result.table["stderr"].max()


def test_translation_detected_by_terminal_value():
    ref = GaussianReference(1.0, 4)
    shifted = ref.sample_paths(2000, seed=5)
    shifted[:, 1:] += 0.8
    result = functional_w1_lower_bound(shifted, ref, TestFunctionalFamily(("terminal",)), seed=9)
    assert result.bound >= 0.8 - 4 * result.stderr


def test_lower_bound_needs_enough_paths():
    ref = GaussianReference(1.0, 4)
    with pytest.raises(DomainError):
        functional_w1_lower_bound(ref.sample_paths(50, seed=1), ref)


def test_increment_geometry_matches_path_geometry():
    ref = GaussianReference(1.5, 6)
    inc = np.random.default_rng(4).standard_t(5, size=(1500, 6))
    ref_inc = ref.sample_increments(1500, seed=3)
    by_increments = increment_vector_w1_lower_bound(inc, ref, reference_increments=ref_inc)
    by_paths = functional_w1_lower_bound(chi_knots(inc), ref, reference_paths=chi_knots(ref_inc))
    assert by_increments.bound == by_paths.bound
    assert by_increments.table.equals(by_paths.table)


def test_single_coordinate_reduces_to_terminal_law():
    ref = GaussianReference(1.0, 1)
    inc = np.random.default_rng(2).uniform(-2.0, 2.0, size=(1200, 1))
    ref_inc = ref.sample_increments(1200, seed=8)
    result = increment_vector_w1_lower_bound(inc, ref, TestFunctionalFamily(("terminal",)), reference_increments=ref_inc)
    assert result.bound == pytest.approx(abs(inc.mean() - ref_inc.mean()), abs=1e-12)


def test_shape_helpers():
    assert pi_bound_shape(100.0, 4) == pytest.approx(16 / 100 + 4 / 10 + 0.4 * math.log(25.0) + 2 / 100)
    assert rate_envelope(1000.0) == pytest.approx(math.log(1000.0) / 1000.0**0.1)
    with pytest.raises(DomainError):
        pi_bound_shape(0.0, 4)


def test_sigma_tilde_sensitivity():
    # sqrt(1 + 0.21) - 1 = 0.1
    assert sigma_tilde_sensitivity(1.0, 0.21) == pytest.approx(0.1 * math.sqrt(2.0 / math.pi))
    assert sigma_tilde_sensitivity(1.0, 0.21, path_space=True) == pytest.approx(0.1 * math.sqrt(math.pi / 2.0))
    assert sigma_tilde_sensitivity(2.0, 0.0) == 0.0
    with pytest.raises(DomainError):
        sigma_tilde_sensitivity(0.0, 0.1)


def test_sensitivity_bounds_the_gaussian_shift():
    # W1(N(0, s2), N(0, s2 + e2)) is exactly the marginal sensitivity
    rng = np.random.default_rng(4)
    draws = rng.normal(0.0, math.sqrt(1.44), 200_000)
    distance = w1_vs_gaussian_1d(draws, 0.0, 1.0)
    assert distance == pytest.approx(sigma_tilde_sensitivity(1.0, 0.44), abs=0.01)
