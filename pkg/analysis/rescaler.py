"""
Rescaled martingale F^(T)_t = (L_{tT} - m_g1 * Lambda(tT)) / sqrt(T) on [0, 1],
its projection Pi_n onto step functions over t_i = i/n, and the (inf, 1) norm.

Between events F is non-increasing (the compensator grows, L is flat) and it
jumps up at events, so sup_t |F_t - Pi_n F_t| is attained at an event left or
right limit or just before a knot. The exact gap is computed from that
candidate set; a dense audit grid is kept as a cross-check.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from engine.simulator import PathRecord, compensator_at
from model.hawkes_model import HawkesModel
from utils.errors import ConfigurationError, DomainError
from utils.parallel import run_replicas
from utils.seeding import PURPOSE_REFERENCE, generator

logger = logging.getLogger(__name__)

MIN_REPLICAS = 100


def knots(n: int) -> np.ndarray:
    """t_i = i / n, i = 0..n."""
    return np.arange(n + 1) / n


@dataclass(frozen=True, eq=False)
class RescaledPath:
    T: float
    n: int
    values: np.ndarray = field(repr=False)
    deltas: np.ndarray = field(repr=False)
    sup_norm_estimate: float
    # event positions tau / T in (0, 1] with F just before and at each event
    event_u: np.ndarray = field(repr=False)
    f_left: np.ndarray = field(repr=False)
    f_right: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": knots(self.n), "F": self.values})


@dataclass(frozen=True, eq=False)
class IncrementVector:
    deltas: np.ndarray

    @property
    def n(self) -> int:
        return int(self.deltas.size)


def rescale(path: PathRecord, model: HawkesModel, T: float, n: int, quad_step: Optional[float] = None) -> RescaledPath:
    """F^(T) on the subdivision t_i = i / n.

    Increments are computed first and the knot values are their partial sums,
    so ``increments(...)`` reproduces ``values[1:]`` exactly.
    """
    if n < 1:
        raise DomainError("rescale: n must be >= 1")
    if path.horizon < T * (1.0 - 1e-12):
        raise DomainError(f"rescale: path horizon {path.horizon} shorter than T = {T}")

    m_g1 = model.marks.m_g1
    root = math.sqrt(T)
    times = knots(n) * T

    inside = path.event_times <= T
    tau = path.event_times[inside]
    g = path.event_g[inside]
    anchors = np.concatenate([times, tau])
    lam = compensator_at(path, anchors, quad_step)
    lam_knots, lam_events = lam[: n + 1], lam[n + 1 :]

    claims = path.claims(times)
    deltas = (np.diff(claims) - m_g1 * np.diff(lam_knots)) / root
    values = np.concatenate([[0.0], np.cumsum(deltas)])

    claims_before = np.concatenate([[0.0], np.cumsum(g)])[:-1]
    f_left = (claims_before - m_g1 * lam_events) / root
    f_right = f_left + g / root
    sup = max(np.max(np.abs(values)), np.max(np.abs(f_left), initial=0.0), np.max(np.abs(f_right), initial=0.0))

    return RescaledPath(
        T=float(T),
        n=int(n),
        values=values,
        deltas=deltas,
        sup_norm_estimate=float(sup),
        event_u=tau / T,
        f_left=f_left,
        f_right=f_right,
    )


def rescaled_at(path: PathRecord, model: HawkesModel, T: float, u, quad_step: Optional[float] = None) -> np.ndarray:
    """F^(T)_u at arbitrary u in [0, 1] (independent of any subdivision)."""
    s = np.asarray(u, dtype=float) * T
    return (path.claims(s) - model.marks.m_g1 * compensator_at(path, s, quad_step)) / math.sqrt(T)


def increments(rescaled: RescaledPath) -> IncrementVector:
    return IncrementVector(rescaled.deltas.copy())


# ---------------------------------------------------------------------------
# Pi_n, chi and the (inf, 1) norm
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function on [0, 1] with values at t_i = i / n."""

    knot_values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.knot_values.size - 1)

    def __call__(self, t) -> Union[float, np.ndarray]:
        idx = np.searchsorted(knots(self.n), np.asarray(t, dtype=float), side="right") - 1
        out = self.knot_values[np.clip(idx, 0, self.n)]
        return float(out) if np.ndim(out) == 0 else out


def pi_n(path_values: Union[Callable, np.ndarray, Sequence[float]], n: int) -> StepFunction:
    """Pi_n(x)_t = x(t_i) on [t_i, t_{i+1}), x(t_n) at t = 1.

    ``path_values`` is either a function of t or its values at the n + 1 knots.
    """
    if n < 1:
        raise DomainError("pi_n: n must be >= 1")
    if callable(path_values):
        vals = np.asarray(path_values(knots(n)), dtype=float) * np.ones(n + 1)
    else:
        vals = np.asarray(path_values, dtype=float)
        if vals.size != n + 1:
            raise DomainError(f"pi_n: expected {n + 1} knot values, got {vals.size}")
    return StepFunction(vals.copy())


def chi(x) -> StepFunction:
    """Cumulative-sum embedding of an increment vector as a step path."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("chi: empty increment vector")
    return StepFunction(np.concatenate([[0.0], np.cumsum(x)]))


def chi_knots(increments_matrix: np.ndarray) -> np.ndarray:
    """Row-wise chi for an (N, n) matrix of increments -> (N, n + 1) knot values."""
    inc = np.asarray(increments_matrix, dtype=float)
    return np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def norm_inf1(x) -> float:
    """max_i |x_0 + ... + x_i|."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("norm_inf1: empty vector")
    return float(np.max(np.abs(np.cumsum(x))))


# ---------------------------------------------------------------------------
# Discretization error
# ---------------------------------------------------------------------------
def sup_gap(rescaled: RescaledPath) -> float:
    """Exact sup_t |F_t - Pi_n(F)_t| from the breakpoint candidate set."""
    n = rescaled.n
    grid = knots(n)
    vals = rescaled.values
    # just before t_{i+1} (no event sits on a knot almost surely)
    candidates = [np.abs(np.diff(vals))]
    if rescaled.event_u.size:
        left_idx = np.clip(np.searchsorted(grid, rescaled.event_u, side="left") - 1, 0, n - 1)
        right_idx = np.clip(np.searchsorted(grid, rescaled.event_u, side="right") - 1, 0, n)
        candidates.append(np.abs(rescaled.f_left - vals[left_idx]))
        candidates.append(np.abs(rescaled.f_right - vals[right_idx]))
    return float(max(np.max(c) for c in candidates))


def grid_gap(
    path: PathRecord, model: HawkesModel, rescaled: RescaledPath, audit_step: float, quad_step: Optional[float] = None
) -> float:
    """sup over a uniform audit grid of |F - Pi_n F|."""
    points = int(math.ceil(1.0 / audit_step)) + 1
    grid = np.linspace(0.0, 1.0, points)
    f = rescaled_at(path, model, rescaled.T, grid, quad_step)
    step = StepFunction(rescaled.values)
    return float(np.max(np.abs(f - step(grid))))


class DiscretizationError(NamedTuple):
    mean_sup_gap: float
    fourth_moment: float
    stderr: float
    grid_mean_sup_gap: float
    audit_ok: bool
    replicas: int
    # max over paths of (audit-grid gap - exact gap); <= 0 up to rounding
    audit_excess: float = 0.0


def _gap_cell(args) -> Tuple[float, float]:
    path, model, T, n, audit_step, quad_step = args
    rp = rescale(path, model, T, n, quad_step)
    return sup_gap(rp), grid_gap(path, model, rp, audit_step, quad_step)


def discretization_error(
    paths: Sequence[PathRecord],
    T: float,
    n: int,
    model: Optional[HawkesModel] = None,
    audit_step: Optional[float] = None,
    min_replicas: int = MIN_REPLICAS,
    quad_step: Optional[float] = None,
    workers: int = 1,
) -> DiscretizationError:
    """Monte Carlo E sup_t |F^(T)_t - Pi_n(F^(T))_t| and E[sup^4].

    Paths may run past T; only [0, T] is used, so one set of paths serves every
    (T, n) with common random numbers.
    """
    if len(paths) < min_replicas:
        raise DomainError(f"discretization_error: need >= {min_replicas} replicas, got {len(paths)}")
    audit_step = 1.0 / (10 * n) if audit_step is None else audit_step
    if audit_step > 1.0 / (10 * n):
        raise ConfigurationError(f"audit grid step {audit_step:g} coarser than 1/(10n) = {1.0 / (10 * n):g}")

    cells = [(path, model or path.model, T, n, audit_step, quad_step) for path in paths]
    gaps = np.asarray(run_replicas(_gap_cell, cells, workers=workers, desc=f"gaps T={T:g} n={n}"))
    exact, audited = gaps[:, 0], gaps[:, 1]

    audit_ok = bool(np.all(audited <= exact * (1.0 + 1e-9) + 1e-9))
    if not audit_ok:
        logger.error("audit grid found a gap above the breakpoint maximum")
    return DiscretizationError(
        mean_sup_gap=float(exact.mean()),
        fourth_moment=float(np.mean(exact**4)),
        stderr=float(exact.std(ddof=1) / math.sqrt(exact.size)),
        grid_mean_sup_gap=float(audited.mean()),
        audit_ok=audit_ok,
        replicas=len(paths),
        audit_excess=float(np.max(audited - exact)),
    )


def brownian_discretization_error(
    sigma_tilde2: float, n: int, replicas: int, seed: int, refine: int = 64
) -> DiscretizationError:
    """E sup_t |sigma B_t - Pi_n(sigma B)_t| on a grid refined ``refine`` times per cell."""
    if sigma_tilde2 <= 0.0 or n < 1 or replicas < 2:
        raise DomainError("brownian_discretization_error: need sigma_tilde2 > 0, n >= 1, replicas >= 2")
    rng = generator(seed, PURPOSE_REFERENCE, n, refine)
    fine = n * refine
    steps = rng.normal(0.0, math.sqrt(sigma_tilde2 / fine), size=(replicas, fine))
    paths = np.concatenate([np.zeros((replicas, 1)), np.cumsum(steps, axis=1)], axis=1)
    anchors = np.repeat(paths[:, :-1:refine], refine, axis=1)
    gaps = np.max(np.abs(paths[:, :-1] - anchors), axis=1)
    return DiscretizationError(
        mean_sup_gap=float(gaps.mean()),
        fourth_moment=float(np.mean(gaps**4)),
        stderr=float(gaps.std(ddof=1) / math.sqrt(replicas)),
        grid_mean_sup_gap=float(gaps.mean()),
        audit_ok=True,
        replicas=replicas,
    )

