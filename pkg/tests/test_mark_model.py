import math

import numpy as np
import pytest

from model.kernel_toolkit import Kernel
from model.mark_model import (
    MarkDistribution,
    MarkFunction,
    MarkModel,
    Nonlinearity,
    NonlinearityFamily,
    mean_intensity_bound,
    moments,
    stability_margin,
    verify_nonlinearity,
)
from utils.errors import ModelValidationError, StabilityViolation


def test_constant_marks_identity_impact():
    m_b, _ = moments(MarkModel(MarkDistribution.constant(1.0), MarkFunction.identity()))
    assert m_b == pytest.approx([1.0, 1.0])


def test_uniform_identity_claim_moments():
    _, m_g = moments(MarkModel(MarkDistribution.uniform(0.0, 1.0), g_fn=MarkFunction.identity()))
    assert m_g == pytest.approx([1 / 2, 1 / 3, 1 / 4, 1 / 5])


def test_exponential_identity_claim_moments():
    _, m_g = moments(MarkModel(MarkDistribution.exponential(1.0), g_fn=MarkFunction.identity()))
    assert m_g == pytest.approx([1.0, 2.0, 6.0, 24.0])


def test_square_uses_doubled_orders():
    _, m_g = moments(MarkModel(MarkDistribution.uniform(0.0, 1.0), g_fn=MarkFunction.square()))
    assert m_g[:2] == pytest.approx([1 / 3, 1 / 5])


def test_discrete_affine_clamp_exact():
    dist = MarkDistribution.discrete([0.0, 1.0, 3.0], [0.25, 0.5, 0.25])
    model = MarkModel(dist, b_fn=MarkFunction.affine_clamp(2.0, -1.0, cap=4.0))
    # b values: 0, 1, 4
    assert model.m_b1 == pytest.approx(0.5 + 1.0)
    assert not model.moment_table.monte_carlo


def test_affine_clamp_on_continuous_marks_falls_back_to_monte_carlo():
    model = MarkModel(MarkDistribution.uniform(0.0, 2.0), b_fn=MarkFunction.affine_clamp(1.0, -1.0))
    # E max(X - 1, 0) for X ~ U(0, 2) = 1/4
    table = model.moment_table
    assert table.monte_carlo
    assert abs(model.m_b1 - 0.25) <= 5 * table.m_b_stderr[0]


def test_discrete_probabilities_must_sum_to_one():
    with pytest.raises(ModelValidationError):
        MarkDistribution.discrete([1.0, 2.0], [0.5, 0.49])


def test_negative_claim_function_rejected():
    with pytest.raises(ModelValidationError):
        MarkModel(MarkDistribution.uniform(-1.0, 1.0), g_fn=MarkFunction.identity())


def test_sampling_is_reproducible():
    dist = MarkDistribution.exponential(2.0)
    a = dist.sample(np.random.default_rng(5), 10)
    b = dist.sample(np.random.default_rng(5), 10)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "h,alpha",
    [
        (Nonlinearity(NonlinearityFamily.LINEAR, 1.0), 1.0),
        (Nonlinearity(NonlinearityFamily.RELU, 0.5, epsilon=0.1), 1.0),
        (Nonlinearity(NonlinearityFamily.SIGMOID, 0.0, level=2.0), 0.5),
        (Nonlinearity(NonlinearityFamily.SOFTPLUS, 0.0, scale=3.0), 3.0),
    ],
)
def test_lipschitz_constants_and_probe(h, alpha):
    assert h.lipschitz_alpha == alpha
    assert verify_nonlinearity(h, pairs=2000)


@pytest.mark.parametrize("mu,spread", [(40.0, 10.0), (0.5, 50.0)])
def test_steep_softplus_passes_at_large_arguments(mu, spread):
    h = Nonlinearity(NonlinearityFamily.SOFTPLUS, mu, scale=3.0)
    # h(z) ~ 3z here, so |h1 - h2| and 3|z1 - z2| agree up to ulps of h
    assert verify_nonlinearity(h, pairs=5000, spread=spread)


class _Understated(Nonlinearity):
    @property
    def lipschitz_alpha(self) -> float:
        return 0.5 * self.scale


def test_lipschitz_check_rejects_an_understated_constant():
    assert not verify_nonlinearity(_Understated(NonlinearityFamily.SOFTPLUS, 40.0, scale=3.0), pairs=2000, spread=10.0)


def test_scalar_and_vector_evaluation_agree():
    for h in (
        Nonlinearity(NonlinearityFamily.SIGMOID, 0.0, level=2.0),
        Nonlinearity(NonlinearityFamily.SOFTPLUS, 0.0, scale=1.5),
        Nonlinearity(NonlinearityFamily.RELU, 0.0, epsilon=0.2),
    ):
        zs = np.array([-40.0, -1.0, 0.0, 0.3, 35.0])
        assert np.allclose(h(zs), [h.scalar(float(z)) for z in zs], rtol=1e-14, atol=0.0)


def test_softplus_does_not_overflow():
    h = Nonlinearity(NonlinearityFamily.SOFTPLUS, 0.0)
    assert h.scalar(800.0) == pytest.approx(800.0)
    assert h.h_mu == pytest.approx(math.log(2.0))


def test_stability_margin_examples():
    unit = MarkModel(MarkDistribution.constant(1.0))
    linear = Nonlinearity(NonlinearityFamily.LINEAR, 1.0)
    assert stability_margin(Kernel.exponential(0.5, 1.0), unit, linear) == pytest.approx(0.5)
    assert stability_margin(Kernel.exponential(0.0, 1.0), unit, linear) == 0.0
    steep = Nonlinearity(NonlinearityFamily.SOFTPLUS, 0.0, scale=2.0)
    assert stability_margin(Kernel.exponential(0.5, 1.0), unit, steep) == pytest.approx(1.0)


def test_mean_intensity_bound_examples():
    assert mean_intensity_bound(Nonlinearity(NonlinearityFamily.LINEAR, 1.0), 0.5) == pytest.approx(2.0)
    assert mean_intensity_bound(Nonlinearity(NonlinearityFamily.LINEAR, 3.0), 0.25) == pytest.approx(4.0)
    assert mean_intensity_bound(Nonlinearity(NonlinearityFamily.LINEAR, 1.7), 0.0) == pytest.approx(1.7)
    with pytest.raises(StabilityViolation, match="stability violated"):
        mean_intensity_bound(Nonlinearity(NonlinearityFamily.LINEAR, 1.0), 1.0)
