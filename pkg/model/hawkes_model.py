"""
HawkesModel: kernel + mark model + nonlinearity, validated as one unit.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional

from model.kernel_toolkit import Kernel, Resolvent, build_resolvent, resolvent_l1_closed_form
from model.mark_model import (
    MarkModel,
    Nonlinearity,
    NonlinearityFamily,
    mean_intensity_bound,
    stability_margin,
    verify_nonlinearity,
)
from utils.errors import ModelValidationError, StabilityViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HawkesModel:
    kernel: Kernel
    marks: MarkModel
    h: Nonlinearity

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise if the configuration is not an admissible subcritical model."""
        if self.h.family is NonlinearityFamily.LINEAR:
            if not self.kernel.nonnegative:
                raise ModelValidationError("linear h requires a nonnegative kernel")
            if not self.marks.b_nonnegative:
                raise ModelValidationError("linear h requires b >= 0 on the mark support")
            if not self.h.mu > 0.0:
                raise ModelValidationError("linear h requires mu > 0")
        if self.rho >= 1.0:
            raise StabilityViolation(self.rho)
        logger.debug("model admissible: %s, rho = %.6g", self.h.describe(), self.rho)

    @property
    def mu(self) -> float:
        return self.h.mu

    @property
    def alpha(self) -> float:
        return self.h.lipschitz_alpha

    @property
    def h_mu(self) -> float:
        return self.h.h_mu

    @property
    def m_b(self):
        return self.marks.moment_table.m_b

    @property
    def m_g(self):
        return self.marks.moment_table.m_g

    @cached_property
    def rho(self) -> float:
        return stability_margin(self.kernel, self.marks, self.h)

    @property
    def is_linear(self) -> bool:
        return self.h.family is NonlinearityFamily.LINEAR

    def mean_intensity_bound(self) -> float:
        return mean_intensity_bound(self.h, self.rho)

    def resolvent_l1(self) -> float:
        return resolvent_l1_closed_form(self.alpha, self.marks.m_b1, self.kernel.l1_norm)

    def resolvent(self, step: float = 1e-3, tail_tol: float = 1e-8, horizon: Optional[float] = None) -> Resolvent:
        return build_resolvent(self.kernel, self.alpha, self.marks.m_b1, step, tail_tol, horizon)

    def sigma2_closed_form(self) -> Optional[float]:
        """E[lambda^inf] when known exactly: h(mu) for a zero kernel, mu/(1-rho) for linear h."""
        if self.kernel.is_zero:
            return self.h_mu
        if self.is_linear:
            return self.mu / (1.0 - self.rho)
        return None

    def sigma_tilde2(self, sigma2: float) -> float:
        return sigma2 * self.marks.m_g2

    def burn_in(self) -> float:
        """Heuristic 50 * m / ||phi||_1 (mean memory length); 0 without memory."""
        if self.kernel.l1_norm == 0.0:
            return 0.0
        return 50.0 * self.kernel.first_moment / self.kernel.l1_norm

    def probe(self, pairs: int = 10_000) -> bool:
        return verify_nonlinearity(self.h, pairs=pairs)

    def describe(self) -> Dict[str, object]:
        """Constants table printed by ``constants``."""
        table = self.marks.moment_table
        return {
            "kernel": self.kernel.describe(),
            "marks": self.marks.distribution.describe(),
            "b": self.marks.b_fn.describe(),
            "g": self.marks.g_fn.describe(),
            "h": self.h.describe(),
            "alpha": self.alpha,
            "h_mu": self.h_mu,
            "phi_l1": self.kernel.l1_norm,
            "phi_first_moment": self.kernel.first_moment,
            "t_max": self.kernel.t_max,
            "tail_mass": self.kernel.tail_mass,
            "rho": self.rho,
            "psi_l1": self.resolvent_l1(),
            "mean_intensity_bound": self.mean_intensity_bound(),
            "sigma2_closed_form": self.sigma2_closed_form(),
            **{f"m_b{k + 1}": float(v) for k, v in enumerate(table.m_b)},
            **{f"m_g{k + 1}": float(v) for k, v in enumerate(table.m_g)},
            "moments_monte_carlo": table.monte_carlo,
        }
