"""
Difference-operator derivatives by coupled re-simulation.

D_{(u, rho, x)} F = F(field + point) - F(field): the shifted path is rebuilt
on the very same Poisson field, so the derivative is exact per path.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from engine.poisson_field import PoissonField, SplicedField
from engine.simulator import PathRecord, SimulationSettings, intensity_at, resume_with_point, simulate_path
from model.hawkes_model import HawkesModel
from utils.errors import DomainError, ModelValidationError, UnsupportedPathError
from utils.parallel import run_replicas
from utils.seeding import PURPOSE_PROBE, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShiftSpec:
    """Point (u, rho, x) added to the driving measure."""

    u: float
    rho: float
    x: float

    def __post_init__(self):
        if not self.u > 0.0:
            raise DomainError(f"shift time must be > 0, got {self.u}")
        if self.rho < 0.0:
            raise DomainError(f"shift threshold must be >= 0, got {self.rho}")


@dataclass(frozen=True, eq=False)
class DerivativePath:
    base: PathRecord
    shifted: PathRecord
    spec: ShiftSpec

    @property
    def d_H(self) -> int:
        return self.shifted.n_events - self.base.n_events

    @property
    def d_L(self) -> float:
        return float(self.shifted.event_g.sum() - self.base.event_g.sum())

    def d_lambda(self, times) -> np.ndarray:
        """lambda o eps+ (t-) - lambda(t-)."""
        return self.shifted.intensity(times) - self.base.intensity(times)

    def prefix_identical(self) -> bool:
        """Events and candidates agree bit for bit on [0, u)."""
        u = self.spec.u
        pairs = [("event_times", "event_thetas", "event_marks")]
        if self.base.has_candidates and self.shifted.has_candidates:
            pairs.append(("candidate_times", "candidate_thetas", "candidate_marks", "candidate_accepted"))
        for names in pairs:
            ka = int(np.searchsorted(getattr(self.base, names[0]), u, side="left"))
            kb = int(np.searchsorted(getattr(self.shifted, names[0]), u, side="left"))
            if ka != kb:
                return False
            for name in names:
                if not np.array_equal(getattr(self.base, name)[:ka], getattr(self.shifted, name)[:kb]):
                    return False
        return True


def _require_replayable(path: PathRecord, field) -> None:
    if not path.has_candidates:
        raise UnsupportedPathError("path has no candidate log; simulate with record_candidates=True")
    if path.field_key != field.key:
        raise UnsupportedPathError("path was not simulated on the given field")


def shift_and_resolve(
    path: PathRecord,
    spec: ShiftSpec,
    field,
    settings: Optional[SimulationSettings] = None,
) -> DerivativePath:
    """Add (u, rho, x) to the field of ``path`` and replay forward from u.

    Shifts past the horizon change nothing: the shifted record is ``path`` itself.
    """
    _require_replayable(path, field)
    if spec.u > path.horizon:
        return DerivativePath(path, path, spec)
    shifted = resume_with_point(path, spec.u, spec.rho, spec.x, field, settings)
    return DerivativePath(path, shifted, spec)


def theta_irrelevance_check(
    path: PathRecord,
    u: float,
    rho1: float,
    rho2: float,
    x: float,
    field,
    settings: Optional[SimulationSettings] = None,
) -> bool:
    """Shifts at (u, rho1, x) and (u, rho2, x) give the same events when both rho <= lambda(u)."""
    lam_u = intensity_at(u, path, path.model)
    if rho1 > lam_u or rho2 > lam_u:
        raise DomainError(f"theta_irrelevance_check: thresholds must be <= lambda(u) = {lam_u:.6g}")
    one = shift_and_resolve(path, ShiftSpec(u, rho1, x), field, settings).shifted
    two = shift_and_resolve(path, ShiftSpec(u, rho2, x), field, settings).shifted
    same = np.array_equal(one.event_times, two.event_times) and np.array_equal(one.event_marks, two.event_marks)
    if not same:
        logger.warning("theta irrelevance failed at u=%g (rho1=%g, rho2=%g)", u, rho1, rho2)
    return bool(same)


def _suffix_cell(args) -> np.ndarray:
    model, u, x, times, prefix_seed, master_seed, replica, settings = args
    marks = model.marks.distribution
    prefix = PoissonField(prefix_seed, marks, settings.block_length, settings.strip_height)
    suffix = PoissonField.for_suffix(master_seed, replica, marks,
                                     block_length=settings.block_length, strip_height=settings.strip_height)
    field = SplicedField(prefix, suffix, u)
    base = simulate_path(model, float(times.max()), field, settings)
    return np.abs(shift_and_resolve(base, ShiftSpec(u, 0.0, x), field, settings).d_lambda(times))


def derivative_bound_check(
    model: HawkesModel,
    u: float,
    x: float,
    t_grid: Sequence[float],
    replicas: int,
    master_seed: int,
    settings: Optional[SimulationSettings] = None,
    resolvent_step: float = 1e-3,
    z: float = 4.0,
    workers: int = 1,
) -> pd.DataFrame:
    """E_u |D_{(u,0,x)} lambda_t| against (|b(x)| / m_b1) psi(t - u).

    The history before u is held fixed (one prefix field); the suffix field is
    redrawn per replica.
    """
    times = np.asarray(t_grid, dtype=float)
    if times.size == 0 or np.any(times <= u):
        raise DomainError("derivative_bound_check: every grid time must be > u")
    if replicas < 2:
        raise DomainError("derivative_bound_check: need at least two replicas")
    settings = settings or SimulationSettings()

    prefix_seed = derive_seed(master_seed, PURPOSE_PROBE, 0)
    cells = [(model, u, x, times, prefix_seed, master_seed, r, settings) for r in range(replicas)]
    samples = np.stack(run_replicas(_suffix_cell, cells, workers=workers, desc="malliavin"))
    estimate = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / math.sqrt(replicas)

    lags = times - u
    m_b1 = model.marks.m_b1
    if m_b1 == 0.0 or model.kernel.is_zero:
        bound = np.zeros(lags.size)
    else:
        psi = model.resolvent(step=resolvent_step, horizon=float(lags.max()) + resolvent_step)
        bound = abs(float(model.marks.b(x))) / m_b1 * np.asarray(psi(lags))
    return pd.DataFrame({
        "t_minus_u": lags,
        "estimate": estimate,
        "stderr": stderr,
        "psi_bound": bound,
        "ok": estimate <= bound + z * stderr,
    })


class ProgenyEstimate(NamedTuple):
    mean: float
    stderr: float
    expected: float


def _progeny_cell(args) -> int:
    model, u, x, horizon, master_seed, replica, settings = args
    field = settings.replica_field(master_seed, replica, model)
    base = simulate_path(model, horizon, field, settings)
    return shift_and_resolve(base, ShiftSpec(u, 0.0, x), field, settings).d_H


def progeny_check(
    model: HawkesModel,
    u: float,
    x: float,
    horizon: float,
    replicas: int,
    master_seed: int,
    settings: Optional[SimulationSettings] = None,
    workers: int = 1,
) -> ProgenyEstimate:
    """Mean number of events created by one added immigrant.

    For linear h with a nonnegative kernel this is the branching total progeny
    1 + b(x) ||phi||_1 / (1 - rho), which is 1 / (1 - rho) when b = 1.
    """
    if not model.is_linear:
        raise ModelValidationError("progeny_check needs linear h (branching representation)")
    if not horizon > u:
        raise DomainError("progeny_check: horizon must exceed u")
    settings = settings or SimulationSettings()
    cells = [(model, u, x, horizon, master_seed, r, settings) for r in range(replicas)]
    counts = np.asarray(run_replicas(_progeny_cell, cells, workers=workers, desc="progeny"), dtype=float)
    expected = 1.0 + float(model.marks.b(x)) * model.kernel.l1_norm / (1.0 - model.rho)
    return ProgenyEstimate(float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(counts.size)), expected)
