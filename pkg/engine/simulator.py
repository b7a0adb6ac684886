"""
Exact sample paths of (L, H, lambda) by thinning a Poisson field.

A field point (t, theta, x) becomes an event when theta <= lambda(t-). The
scan proposes candidates under a piecewise-constant level taken from the
Lipschitz envelope

    lambda_bar(t) = h(mu) + alpha * sum_i phi_bar(t - tau_i) |b(x_i)|

which is non-increasing between events, so the level read at the start of a
segment dominates lambda until the next acceptance. The accepted set does not
depend on the level, only the recorded rejections do.
"""
import logging
import math
import warnings
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from engine.poisson_field import DEFAULT_BLOCK_LENGTH, DEFAULT_STRIP_HEIGHT, PoissonField
from model.hawkes_model import HawkesModel
from model.kernel_toolkit import Kernel, KernelFamily
from utils.errors import DomainError, ExplosionGuardError, PrecisionWarning
from utils.parallel import run_replicas

logger = logging.getLogger(__name__)

DOMINANCE_SLACK = 1e-12
DEFAULT_MAX_EVENTS = 10_000_000


@dataclass(frozen=True)
class SimulationSettings:
    segment: float = 1.0
    block_length: float = DEFAULT_BLOCK_LENGTH
    strip_height: float = DEFAULT_STRIP_HEIGHT
    max_events: int = DEFAULT_MAX_EVENTS
    record_candidates: bool = True

    def field(self, seed: int, model: HawkesModel) -> PoissonField:
        return PoissonField(seed, model.marks.distribution, self.block_length, self.strip_height)

    def replica_field(self, master_seed: int, replica: int, model: HawkesModel) -> PoissonField:
        return PoissonField.for_replica(
            master_seed, replica, model.marks.distribution,
            block_length=self.block_length, strip_height=self.strip_height,
        )


# ---------------------------------------------------------------------------
# Excitation trackers
#
# The thinning loop and ``intensity_at`` feed events through the same tracker,
# so the intensity used to accept an event can be replayed bit for bit.
# ---------------------------------------------------------------------------
class _ZeroTracker:
    def add(self, tau: float, bx: float) -> None:
        pass

    def excitation(self, t: float) -> float:
        return 0.0

    def dominating(self, t: float) -> float:
        return 0.0


class _ExponentialTracker:
    """s(t) = sum a e^{-beta (t - tau_i)} b(x_i), updated at events only."""

    def __init__(self, kernel: Kernel):
        self.a = kernel.a
        self.amp = abs(kernel.a)
        self.beta = kernel.beta
        self.s = 0.0
        self.sbar = 0.0
        self.last = 0.0

    def add(self, tau: float, bx: float) -> None:
        decay = math.exp(-self.beta * (tau - self.last))
        self.s = self.s * decay + self.a * bx
        self.sbar = self.sbar * decay + self.amp * abs(bx)
        self.last = tau

    def excitation(self, t: float) -> float:
        return self.s * math.exp(-self.beta * (t - self.last))

    def dominating(self, t: float) -> float:
        return self.sbar * math.exp(-self.beta * (t - self.last))


class _WindowTracker:
    """Direct sum over the events within t_max of t (Erlang, tabulated)."""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.t_max = kernel.t_max
        self.times: List[float] = []
        self.weights: List[float] = []

    def add(self, tau: float, bx: float) -> None:
        self.times.append(tau)
        self.weights.append(bx)

    def _sum(self, t: float, hi: int, fn) -> float:
        lo = bisect_left(self.times, t - self.t_max)
        if hi <= lo:
            return 0.0
        lags = t - np.array(self.times[lo:hi])
        return float(np.dot(fn(lags), np.array(self.weights[lo:hi])))

    def excitation(self, t: float) -> float:
        return self._sum(t, bisect_left(self.times, t), self.kernel.evaluate)

    def dominating(self, t: float) -> float:
        lo = bisect_left(self.times, t - self.t_max)
        if len(self.times) <= lo:
            return 0.0
        lags = t - np.array(self.times[lo:])
        return float(np.dot(self.kernel.majorant(lags), np.abs(np.array(self.weights[lo:]))))


def _tracker(kernel: Kernel):
    if kernel.is_zero:
        return _ZeroTracker()
    if kernel.family is KernelFamily.EXPONENTIAL:
        return _ExponentialTracker(kernel)
    return _WindowTracker(kernel)


# ---------------------------------------------------------------------------
# Path record
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PathRecord:
    """One realization on [0, horizon]: accepted events and every thinning candidate."""

    model: HawkesModel = field(repr=False)
    horizon: float
    event_times: np.ndarray = field(repr=False)
    event_thetas: np.ndarray = field(repr=False)
    event_marks: np.ndarray = field(repr=False)
    candidate_times: Optional[np.ndarray] = field(default=None, repr=False)
    candidate_thetas: Optional[np.ndarray] = field(default=None, repr=False)
    candidate_marks: Optional[np.ndarray] = field(default=None, repr=False)
    candidate_accepted: Optional[np.ndarray] = field(default=None, repr=False)
    field_key: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_events(self) -> int:
        return int(self.event_times.size)

    @property
    def has_candidates(self) -> bool:
        return self.candidate_times is not None

    @cached_property
    def event_b(self) -> np.ndarray:
        return np.asarray(self.model.marks.b(self.event_marks), dtype=float) * np.ones(self.n_events)

    @cached_property
    def event_g(self) -> np.ndarray:
        return np.asarray(self.model.marks.g(self.event_marks), dtype=float) * np.ones(self.n_events)

    @cached_property
    def _post_event_states(self) -> Tuple[np.ndarray, np.ndarray]:
        """Exponential kernels: s and s_bar right after each event."""
        kernel = self.model.kernel
        tracker = _ExponentialTracker(kernel)
        s = np.empty(self.n_events)
        sbar = np.empty(self.n_events)
        for k, (tau, bx) in enumerate(zip(self.event_times.tolist(), self.event_b.tolist())):
            tracker.add(tau, bx)
            s[k], sbar[k] = tracker.s, tracker.sbar
        return s, sbar

    def counting(self, t) -> np.ndarray:
        """H_t (right-continuous)."""
        return np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")

    def claims(self, t) -> np.ndarray:
        """L_t = sum_{tau_i <= t} g(x_i)."""
        cum = np.concatenate([[0.0], np.cumsum(self.event_g)])
        return cum[self.counting(t)]

    def excitation(self, times, inclusive: bool = False, majorant: bool = False) -> np.ndarray:
        """sum phi(t - tau_i) b(x_i) over tau_i < t (tau_i <= t when ``inclusive``)."""
        times = np.asarray(times, dtype=float)
        out = np.zeros(times.shape)
        kernel = self.model.kernel
        if kernel.is_zero or self.n_events == 0:
            return out
        side = "right" if inclusive else "left"
        if kernel.family is KernelFamily.EXPONENTIAL:
            s, sbar = self._post_event_states
            state = sbar if majorant else s
            idx = np.searchsorted(self.event_times, times, side=side) - 1
            has = idx >= 0
            j = idx[has]
            out[has] = state[j] * np.exp(-kernel.beta * (times[has] - self.event_times[j]))
            return out

        order = np.argsort(times, kind="stable")
        sorted_t = times[order]
        acc = np.zeros(sorted_t.size)
        fn = kernel.majorant if majorant else kernel.evaluate
        weights = np.abs(self.event_b) if majorant else self.event_b
        for tau, w in zip(self.event_times.tolist(), weights.tolist()):
            lo = np.searchsorted(sorted_t, tau, side="left" if inclusive else "right")
            hi = np.searchsorted(sorted_t, tau + kernel.t_max, side="right")
            if hi > lo:
                acc[lo:hi] += w * np.asarray(fn(sorted_t[lo:hi] - tau))
        out[order] = acc
        return out

    def intensity(self, times, inclusive: bool = False) -> np.ndarray:
        """lambda(t-) on an array of times (lambda(t+) when ``inclusive``)."""
        return np.asarray(self.model.h(self.model.mu + self.excitation(times, inclusive)), dtype=float)

    def dominating_intensity(self, times, inclusive: bool = False) -> np.ndarray:
        model = self.model
        return (model.h_mu + model.alpha * self.excitation(times, inclusive, majorant=True)) * (1.0 + DOMINANCE_SLACK)

    def compensator_checkpoints(self, grid, quad_step: Optional[float] = None) -> pd.DataFrame:
        grid = np.asarray(grid, dtype=float)
        return pd.DataFrame({"t": grid, "Lambda": compensator_at(self, grid, quad_step)})

    def to_frame(self) -> pd.DataFrame:
        """Candidates (tau, theta, mark, accepted); accepted events only without a log."""
        if self.has_candidates:
            return pd.DataFrame({
                "tau": self.candidate_times,
                "theta": self.candidate_thetas,
                "mark": self.candidate_marks,
                "accepted": self.candidate_accepted.astype(int),
            })
        return pd.DataFrame({
            "tau": self.event_times,
            "theta": self.event_thetas,
            "mark": self.event_marks,
            "accepted": np.ones(self.n_events, dtype=int),
        })


def _as_array(values: List[float]) -> np.ndarray:
    return np.array(values, dtype=float)


class _Log:
    """Growing event/candidate lists for one run."""

    def __init__(self, record: bool):
        self.record = record
        self.ev_t: List[float] = []
        self.ev_th: List[float] = []
        self.ev_x: List[float] = []
        self.c_t: List[float] = []
        self.c_th: List[float] = []
        self.c_x: List[float] = []
        self.c_acc: List[bool] = []

    def candidate(self, t, th, x, accepted):
        if self.record:
            self.c_t.append(t)
            self.c_th.append(th)
            self.c_x.append(x)
            self.c_acc.append(accepted)

    def event(self, t, th, x):
        self.ev_t.append(t)
        self.ev_th.append(th)
        self.ev_x.append(x)

    def build(self, model: HawkesModel, horizon: float, field_key) -> PathRecord:
        cand = {}
        if self.record:
            cand = dict(
                candidate_times=_as_array(self.c_t),
                candidate_thetas=_as_array(self.c_th),
                candidate_marks=_as_array(self.c_x),
                candidate_accepted=np.array(self.c_acc, dtype=bool),
            )
        return PathRecord(
            model=model,
            horizon=float(horizon),
            event_times=_as_array(self.ev_t),
            event_thetas=_as_array(self.ev_th),
            event_marks=_as_array(self.ev_x),
            field_key=field_key,
            **cand,
        )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------
def intensity_at(t: float, events, model: HawkesModel) -> float:
    """lambda(t-) = h(mu + sum_{tau_i < t} phi(t - tau_i) b(x_i)).

    ``events`` is a PathRecord or a (times, marks) pair; only events before t count.
    """
    if isinstance(events, PathRecord):
        times, marks = events.event_times, events.event_marks
    else:
        times, marks = (np.asarray(v, dtype=float) for v in events)
    tracker = _tracker(model.kernel)
    count = int(np.searchsorted(times, t, side="left"))
    for tau, x in zip(times[:count].tolist(), marks[:count].tolist()):
        tracker.add(tau, float(model.marks.b(x)))
    return model.h.scalar(model.mu + tracker.excitation(float(t)))


def _explosion(model: HawkesModel, t: float, count: int, cap: int) -> ExplosionGuardError:
    return ExplosionGuardError(
        f"path exceeded the event cap of {cap}",
        {"t": round(t, 6), "events": count, "rho": round(model.rho, 6)},
    )


def _thin(model, horizon, field, settings, tracker, log: _Log, start: float, closed: bool) -> None:
    h, mu, alpha, h_mu = model.h, model.mu, model.alpha, model.h_mu
    b = model.marks.b
    cap = settings.max_events

    if model.kernel.is_zero:
        ts, ths, xs = field.window(start, horizon, h_mu * (1.0 + DOMINANCE_SLACK), closed)
        accepted = ths <= h_mu
        if len(log.ev_t) + int(accepted.sum()) > cap:
            raise _explosion(model, horizon, len(log.ev_t) + int(accepted.sum()), cap)
        if log.record:
            log.c_t.extend(ts.tolist())
            log.c_th.extend(ths.tolist())
            log.c_x.extend(xs.tolist())
            log.c_acc.extend(accepted.tolist())
        log.ev_t.extend(ts[accepted].tolist())
        log.ev_th.extend(ths[accepted].tolist())
        log.ev_x.extend(xs[accepted].tolist())
        return

    s = start
    # a closed start scans [start, start] even when start == horizon
    while s < horizon or closed:
        end = min(horizon, s + settings.segment)
        level = (h_mu + alpha * tracker.dominating(s)) * (1.0 + DOMINANCE_SLACK)
        ts, ths, xs = field.window(s, end, level, closed_lo=closed)
        closed = False
        nxt = end
        for t, th, x in zip(ts.tolist(), ths.tolist(), xs.tolist()):
            accepted = th <= h.scalar(mu + tracker.excitation(t))
            log.candidate(t, th, x, accepted)
            if accepted:
                tracker.add(t, float(b(x)))
                log.event(t, th, x)
                if len(log.ev_t) > cap:
                    raise _explosion(model, t, len(log.ev_t), cap)
                nxt = t
                break
        s = nxt


def simulate_path(
    model: HawkesModel,
    horizon: float,
    field,
    settings: Optional[SimulationSettings] = None,
) -> PathRecord:
    """Thin ``field`` on (0, horizon]; deterministic in (field, model, settings)."""
    if horizon <= 0.0:
        raise DomainError("simulate_path: horizon must be positive")
    settings = settings or SimulationSettings()
    log = _Log(settings.record_candidates)
    _thin(model, horizon, field, settings, _tracker(model.kernel), log, 0.0, False)
    path = log.build(model, horizon, field.key)
    logger.debug("simulated %d events on [0, %g]", path.n_events, horizon)
    return path


def resume_with_point(
    base: PathRecord,
    u: float,
    theta: float,
    x: float,
    field,
    settings: Optional[SimulationSettings] = None,
) -> PathRecord:
    """Path driven by ``field.with_point(u, theta, x)``.

    Everything before u is copied from ``base``; the scan resumes at u (closed)
    on the shifted field, so the added point is tested against lambda(u-).
    """
    settings = settings or SimulationSettings()
    model = base.model
    log = _Log(settings.record_candidates)
    k = int(np.searchsorted(base.event_times, u, side="left"))
    log.ev_t = base.event_times[:k].tolist()
    log.ev_th = base.event_thetas[:k].tolist()
    log.ev_x = base.event_marks[:k].tolist()
    if log.record and base.has_candidates:
        c = int(np.searchsorted(base.candidate_times, u, side="left"))
        log.c_t = base.candidate_times[:c].tolist()
        log.c_th = base.candidate_thetas[:c].tolist()
        log.c_x = base.candidate_marks[:c].tolist()
        log.c_acc = base.candidate_accepted[:c].tolist()

    tracker = _tracker(model.kernel)
    for tau, mark in zip(log.ev_t, log.ev_x):
        tracker.add(tau, float(model.marks.b(mark)))

    shifted = field.with_point(u, theta, x)
    _thin(model, base.horizon, shifted, settings, tracker, log, u, True)
    return log.build(model, base.horizon, shifted.key)


# ---------------------------------------------------------------------------
# Compensator
# ---------------------------------------------------------------------------
def default_quad_step(horizon: float) -> float:
    return min(horizon * 1e-5, 1e-2)


def _compensator_linear_exponential(path: PathRecord, q: np.ndarray) -> np.ndarray:
    """mu t + sum over events of S_k / beta (1 - e^{-beta (t - tau_k)}), piecewise."""
    mu, beta = path.model.mu, path.model.kernel.beta
    tau = path.event_times
    if tau.size == 0:
        return mu * q
    s, _ = path._post_event_states
    prev_t = np.concatenate([[0.0], tau[:-1]])
    prev_s = np.concatenate([[0.0], s[:-1]])
    gaps = tau - prev_t
    at_events = np.cumsum(mu * gaps - prev_s / beta * np.expm1(-beta * gaps))
    j = np.searchsorted(tau, q, side="right") - 1
    base = np.where(j >= 0, at_events[np.maximum(j, 0)], 0.0)
    last = np.where(j >= 0, tau[np.maximum(j, 0)], 0.0)
    state = np.where(j >= 0, s[np.maximum(j, 0)], 0.0)
    dt = q - last
    return base + mu * dt - state / beta * np.expm1(-beta * dt)


def _compensator_simpson(path: PathRecord, q: np.ndarray, quad_step: float) -> np.ndarray:
    """Composite Simpson on every interval between breakpoints (events, cutoffs, queries)."""
    q_max = float(q.max()) if q.size else 0.0
    kernel = path.model.kernel
    tau = path.event_times[path.event_times <= q_max]
    pieces = [[0.0], tau, q]
    if kernel.family is not KernelFamily.EXPONENTIAL:
        cut = tau + kernel.t_max
        pieces.append(cut[cut < q_max])
    bps = np.unique(np.concatenate(pieces))
    if bps.size < 2:
        return np.zeros(q.shape)

    lefts, widths = bps[:-1], np.diff(bps)
    m = 2 * np.maximum(1, np.ceil(widths / (2.0 * quad_step)).astype(np.int64))
    counts = m + 1
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    m_rep = np.repeat(m, counts)
    nodes = np.repeat(lefts, counts) + np.repeat(widths, counts) * local / m_rep

    values = path.intensity(nodes)
    values[starts] = path.intensity(nodes[starts], inclusive=True)
    weights = np.where((local == 0) | (local == m_rep), 1.0, np.where(local % 2 == 1, 4.0, 2.0))
    weights *= np.repeat(widths / (3.0 * m), counts)
    pieces_int = np.add.reduceat(values * weights, starts)
    cumulative = np.concatenate([[0.0], np.cumsum(pieces_int)])
    return cumulative[np.searchsorted(bps, q)]


def compensator_at(path: PathRecord, times, quad_step: Optional[float] = None) -> np.ndarray:
    """Lambda(t) = int_0^t lambda_s ds for every t in ``times`` (any order)."""
    quad_step = default_quad_step(path.horizon) if quad_step is None else quad_step
    if quad_step <= 0.0:
        raise DomainError("compensator: quad_step must be positive")
    times = np.asarray(times, dtype=float)
    flat = times.ravel()
    if flat.size and (flat.min() < 0.0 or flat.max() > path.horizon * (1.0 + 1e-12)):
        raise DomainError(f"compensator: times must lie in [0, {path.horizon}]")

    model = path.model
    if model.kernel.is_zero:
        return (model.h_mu * flat).reshape(times.shape)

    order = np.argsort(flat, kind="stable")
    q = flat[order]
    if model.is_linear and model.kernel.is_exponential:
        vals = _compensator_linear_exponential(path, q)
    else:
        vals = _compensator_simpson(path, q, quad_step)
    out = np.empty_like(flat)
    out[order] = vals
    return out.reshape(times.shape)


def compensator(path: PathRecord, t: float, quad_step: Optional[float] = None) -> float:
    return float(compensator_at(path, [t], quad_step)[0])


# ---------------------------------------------------------------------------
# Replicas and diagnostics
# ---------------------------------------------------------------------------
def _simulate_cell(args) -> PathRecord:
    model, horizon, master_seed, replica, settings = args
    return simulate_path(model, horizon, settings.replica_field(master_seed, replica, model), settings)


def simulate_replicas(
    model: HawkesModel,
    horizon: float,
    master_seed: int,
    replicas: int,
    settings: Optional[SimulationSettings] = None,
    workers: int = 1,
) -> List[PathRecord]:
    settings = settings or SimulationSettings()
    cells = [(model, horizon, master_seed, r, settings) for r in range(replicas)]
    return run_replicas(_simulate_cell, cells, workers=workers, desc="paths")


class Sigma2Estimate(NamedTuple):
    sigma2: float
    stderr: float
    closed_form: Optional[float]
    replicas: int


def _time_average_cell(args) -> float:
    model, burn_in, horizon, master_seed, replica, settings = args
    path = simulate_path(model, horizon, settings.replica_field(master_seed, replica, model), settings)
    lam = compensator_at(path, [burn_in, horizon])
    return float((lam[1] - lam[0]) / (horizon - burn_in))


def stationary_sigma2(
    model: HawkesModel,
    burn_in: Optional[float],
    horizon: float,
    replicas: int,
    master_seed: int,
    settings: Optional[SimulationSettings] = None,
    stderr_tol: float = 0.05,
    workers: int = 1,
) -> Sigma2Estimate:
    """sigma^2 = E[lambda^inf_0] by time-averaging lambda over [burn_in, horizon]."""
    closed = model.sigma2_closed_form()
    if model.kernel.is_zero:
        return Sigma2Estimate(model.h_mu, 0.0, closed, 0)
    burn_in = model.burn_in() if burn_in is None else burn_in
    if not 0.0 <= burn_in < horizon:
        raise DomainError(f"stationary_sigma2: need 0 <= burn_in < horizon, got {burn_in}, {horizon}")
    if replicas < 2:
        raise DomainError("stationary_sigma2: need at least two replicas")

    settings = settings or SimulationSettings(record_candidates=False)
    cells = [(model, burn_in, horizon, master_seed, r, settings) for r in range(replicas)]
    averages = np.asarray(run_replicas(_time_average_cell, cells, workers=workers, desc="sigma2"))
    estimate = float(averages.mean())
    stderr = float(averages.std(ddof=1) / math.sqrt(averages.size))
    if stderr > stderr_tol:
        message = f"sigma2 standard error {stderr:.3g} above tolerance {stderr_tol:.3g}"
        logger.warning(message)
        warnings.warn(message, PrecisionWarning, stacklevel=2)
    return Sigma2Estimate(estimate, stderr, closed, replicas)


def martingale_check(paths: Sequence[PathRecord], grid, z: float = 4.0, quad_step: Optional[float] = None) -> pd.DataFrame:
    """Mean and standard error of L_t - m_g1 Lambda(t) across replicas.

    On the knots t_i T this is sqrt(T) F^(T)_{t_i}; with g = 1 it is H - Lambda.
    """
    if len(paths) < 2:
        raise DomainError("martingale_check: need at least two replicas")
    grid = np.asarray(grid, dtype=float)
    gaps = np.stack([p.claims(grid) - p.model.marks.m_g1 * compensator_at(p, grid, quad_step) for p in paths])
    mean = gaps.mean(axis=0)
    stderr = gaps.std(axis=0, ddof=1) / math.sqrt(len(paths))
    return pd.DataFrame({"t": grid, "mean": mean, "stderr": stderr, "ok": np.abs(mean) <= z * stderr + 1e-12})


class KSResult(NamedTuple):
    statistic: float
    pvalue: float
    count: int


def time_rescaling_ks(paths: Sequence[PathRecord]) -> KSResult:
    """KS test of pooled Lambda-rescaled inter-arrival times against Exp(1)."""
    gaps = []
    for path in paths:
        if path.n_events:
            rescaled = compensator_at(path, path.event_times)
            gaps.append(np.diff(np.concatenate([[0.0], rescaled])))
    pooled = np.concatenate(gaps) if gaps else np.empty(0)
    if pooled.size == 0:
        raise DomainError("time_rescaling_ks: no events to test")
    result = stats.kstest(pooled, "expon")
    return KSResult(float(result.statistic), float(result.pvalue), int(pooled.size))


def dominance_audit(path: PathRecord, points: int = 10_000) -> bool:
    """lambda <= lambda_bar on a dense grid plus the left limits at every event."""
    grid = np.concatenate([np.linspace(0.0, path.horizon, points), path.event_times])
    ok = bool(np.all(path.intensity(grid) <= path.dominating_intensity(grid)))
    if not ok:
        logger.error("dominating intensity violated on a path with %d events", path.n_events)
    return ok



def compensator_refinement_gap(path: PathRecord, quad_step: Optional[float] = None) -> float:
    """|Lambda(T) - Simpson at half the step|, relative to 1 + Lambda(T)."""
    step = default_quad_step(path.horizon) if quad_step is None else quad_step
    value = compensator(path, path.horizon, step)
    refined = float(_compensator_simpson(path, np.array([path.horizon]), 0.5 * step)[0])
    return abs(value - refined) / (1.0 + abs(value))
