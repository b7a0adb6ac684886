# Analysis package
from .rescaler import (
    IncrementVector,
    RescaledPath,
    StepFunction,
    brownian_discretization_error,
    chi,
    discretization_error,
    increments,
    norm_inf1,
    pi_n,
    rescale,
)
from .wasserstein import (
    GaussianReference,
    TestFunctionalFamily,
    functional_w1_lower_bound,
    increment_vector_w1_lower_bound,
    pi_bound_shape,
    sigma_tilde_sensitivity,
    w1_empirical_1d,
    w1_vs_gaussian_1d,
)

__all__ = [
    "GaussianReference",
    "IncrementVector",
    "RescaledPath",
    "StepFunction",
    "TestFunctionalFamily",
    "brownian_discretization_error",
    "chi",
    "discretization_error",
    "functional_w1_lower_bound",
    "increment_vector_w1_lower_bound",
    "increments",
    "norm_inf1",
    "pi_bound_shape",
    "pi_n",
    "rescale",
    "sigma_tilde_sensitivity",
    "w1_empirical_1d",
    "w1_vs_gaussian_1d",
]
