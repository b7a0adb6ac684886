"""Shared models and settings for the test suite."""
import pytest

from engine.simulator import SimulationSettings
from model import HawkesModel, Kernel, MarkDistribution, MarkFunction, MarkModel, Nonlinearity, NonlinearityFamily


def unit_marks() -> MarkModel:
    return MarkModel(MarkDistribution.constant(1.0), MarkFunction.one(), MarkFunction.one())


@pytest.fixture
def settings() -> SimulationSettings:
    return SimulationSettings()


@pytest.fixture
def poisson_model() -> HawkesModel:
    """Zero kernel: constant intensity h(mu) = 1."""
    return HawkesModel(Kernel.exponential(0.0, 1.0), unit_marks(), Nonlinearity(NonlinearityFamily.LINEAR, 1.0))


@pytest.fixture
def linear_model() -> HawkesModel:
    """phi(t) = 0.5 e^{-t}, unit marks, h(z) = z, mu = 1: rho = 0.5."""
    return HawkesModel(Kernel.exponential(0.5, 1.0), unit_marks(), Nonlinearity(NonlinearityFamily.LINEAR, 1.0))


@pytest.fixture
def sigmoid_model() -> HawkesModel:
    """Erlang kernel with ||phi||_1 = 0.5, uniform marks, b = x, g = x^2, sigmoid h."""
    marks = MarkModel(MarkDistribution.uniform(0.5, 1.5), MarkFunction.identity(), MarkFunction.square())
    return HawkesModel(Kernel.erlang(2.0, 2.0), marks, Nonlinearity(NonlinearityFamily.SIGMOID, 0.5, level=3.0))


@pytest.fixture
def inhibitory_model() -> HawkesModel:
    """Signed exponential kernel under relu: self-correcting intensity."""
    return HawkesModel(
        Kernel.exponential(-0.6, 1.5),
        unit_marks(),
        Nonlinearity(NonlinearityFamily.RELU, 1.0, epsilon=0.05),
    )
