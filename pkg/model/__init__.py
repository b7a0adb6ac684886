# Model package
from .hawkes_model import HawkesModel
from .kernel_toolkit import (
    Kernel,
    KernelFamily,
    Resolvent,
    build_resolvent,
    iterated_convolution,
    kernel_eval,
    kernel_l1_and_moment,
    renewal_residual,
    resolvent_l1_closed_form,
    verify_majorant,
)
from .mark_model import (
    MarkDistribution,
    MarkFamily,
    MarkFunction,
    MarkFunctionKind,
    MarkModel,
    MomentTable,
    Nonlinearity,
    NonlinearityFamily,
    mean_intensity_bound,
    moments,
    stability_margin,
    verify_nonlinearity,
)

__all__ = [
    "HawkesModel",
    "Kernel",
    "KernelFamily",
    "MarkDistribution",
    "MarkFamily",
    "MarkFunction",
    "MarkFunctionKind",
    "MarkModel",
    "MomentTable",
    "Nonlinearity",
    "NonlinearityFamily",
    "Resolvent",
    "build_resolvent",
    "iterated_convolution",
    "kernel_eval",
    "kernel_l1_and_moment",
    "mean_intensity_bound",
    "moments",
    "renewal_residual",
    "resolvent_l1_closed_form",
    "stability_margin",
    "verify_majorant",
    "verify_nonlinearity",
]
