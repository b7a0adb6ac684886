"""
Experiment drivers behind the CLI subcommands.

Every driver runs its control cells first (known answers, deterministic or
Monte Carlo against an exact law) and aborts through AcceptanceGate if one
fails. Model-cell checks are returned in ``Report.checks`` so the caller can
write the tables before enforcing them.

Replicas use common random numbers: replica r is always driven by the field
derived from (master seed, r), so the path on [0, T] is a prefix of the path
on [0, T'] for T < T'. Each cell simulates once, at the largest horizon.
Monte Carlo checks are judged in standard errors; where sigma_tilde2 is an
estimate, its standard error is folded into the tolerance.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from analysis.rescaler import (
    brownian_discretization_error,
    chi_knots,
    discretization_error,
    knots,
    rescale,
    sup_gap,
)
from analysis.wasserstein import (
    MIN_PATHS,
    GaussianReference,
    TestFunctionalFamily,
    functional_w1_lower_bound,
    increment_vector_w1_lower_bound,
    pi_bound_shape,
    rate_envelope,
    sigma_tilde_sensitivity,
    w1_vs_gaussian_1d,
)
from engine.malliavin_probe import (
    ShiftSpec,
    derivative_bound_check,
    progeny_check,
    shift_and_resolve,
    theta_irrelevance_check,
)
from engine.simulator import (
    PathRecord,
    Sigma2Estimate,
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
from harness.acceptance import AcceptanceGate
from harness.config import ExperimentConfig
from harness.schemas import (
    ControlRow,
    ConvergenceRow,
    DiscretizationRow,
    FunctionalRow,
    LemmaRow,
    Sigma2Row,
    rows_to_frame,
)
from model.hawkes_model import HawkesModel
from model.kernel_toolkit import Kernel, build_resolvent, renewal_residual, verify_majorant
from model.mark_model import MarkDistribution, MarkModel, Nonlinearity, NonlinearityFamily
from utils.errors import AcceptanceFailure, ConfigurationError
from utils.parallel import run_replicas
from utils.seeding import PURPOSE_BOOTSTRAP, PURPOSE_PROBE, PURPOSE_REFERENCE, derive_seed, generator

logger = logging.getLogger(__name__)

MARTINGALE_MIN_REPLICAS = 30
RESOLVENT_CONTROL_TOL = 1e-5


@dataclass
class Report:
    name: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    controls: List[ControlRow] = field(default_factory=list)
    checks: List[ControlRow] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)

    def enforce_controls(self) -> None:
        if self.controls:
            AcceptanceGate.enforce(self.controls)
            logger.info("%s: %d control cells passed", self.name, len(self.controls))


def _zero_kernel_twin(model: HawkesModel) -> HawkesModel:
    """Same marks and h without memory: intensity is the constant h(mu)."""
    return HawkesModel(kernel=Kernel.exponential(0.0, 1.0), marks=model.marks, h=model.h)


def _linear_reference() -> HawkesModel:
    """phi = 0.5 e^{-t}, unit marks, h = Id, mu = 1: sigma^2 = 2 exactly."""
    return HawkesModel(
        kernel=Kernel.exponential(0.5, 1.0),
        marks=MarkModel(MarkDistribution.constant(1.0)),
        h=Nonlinearity(NonlinearityFamily.LINEAR, 1.0),
    )


def _log_slope(x, y) -> Optional[float]:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0.0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _log_slope_stderr(x, y, yerr) -> float:
    """Standard error of the least-squares log-log slope, with sd(ln y) ~ yerr / y."""
    x, y, yerr = (np.asarray(v, dtype=float) for v in (x, y, yerr))
    if x.size < 2 or np.any(y <= 0.0):
        return 0.0
    lx = np.log(x) - np.log(x).mean()
    return float(math.sqrt(np.sum((lx * yerr / y) ** 2)) / np.sum(lx * lx))


def _decreasing_row(cell: str, values, stderrs) -> ControlRow:
    worst = AcceptanceGate.worst_increase(list(values), list(stderrs))
    return ControlRow(cell=cell, value=worst, tolerance=AcceptanceGate.Z_BAND, passed=worst <= AcceptanceGate.Z_BAND)


def _spread_row(cell: str, ratios) -> ControlRow:
    spread = AcceptanceGate.spread(list(ratios))
    return ControlRow(cell=cell, value=spread, tolerance=AcceptanceGate.RATIO_SPREAD_MAX,
                      passed=spread < AcceptanceGate.RATIO_SPREAD_MAX)


def resolve_sigma2(cfg: ExperimentConfig, model: HawkesModel, workers: int = 1) -> Sigma2Estimate:
    """Closed form when available, otherwise a stationary estimate; aborts if too noisy."""
    closed = model.sigma2_closed_form()
    if closed is not None:
        return Sigma2Estimate(closed, 0.0, closed, 0)
    exp = cfg.experiment
    est = stationary_sigma2(
        model, exp.sigma2_burn_in, exp.sigma2_horizon, exp.sigma2_replicas,
        derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 1),
        cfg.simulation.settings(record_candidates=False), exp.sigma2_tol, workers,
    )
    if est.stderr > exp.sigma2_tol:
        raise AcceptanceFailure(
            f"sigma2 estimate {est.sigma2:.6g} has stderr {est.stderr:.3g} above tolerance {exp.sigma2_tol:.3g} "
            f"({est.replicas} replicas on [{exp.sigma2_burn_in}, {exp.sigma2_horizon}])"
        )
    return est


# ---------------------------------------------------------------------------
# Replica cells (top level so they pickle)
# ---------------------------------------------------------------------------
def _increments_cell(args) -> List[np.ndarray]:
    """Increment vectors Delta F^(T) for every (T, n) pair of one replica."""
    model, pairs, master_seed, replica, settings, quad_step = args
    horizon = max(T for T, _ in pairs)
    path = simulate_path(model, horizon, settings.replica_field(master_seed, replica, model), settings)
    return [rescale(path, model, T, n, quad_step).deltas for T, n in pairs]


def _simulate_increments(cfg, model, pairs, workers) -> List[np.ndarray]:
    settings = cfg.simulation.settings(record_candidates=False)
    cells = [(model, pairs, cfg.master_seed, r, settings, cfg.experiment.quad_step)
             for r in range(cfg.experiment.replicas)]
    per_replica = run_replicas(_increments_cell, cells, workers=workers, desc="replicas")
    return [np.stack([rep[k] for rep in per_replica]) for k in range(len(pairs))]


def _bootstrap_stderr(samples: np.ndarray, var: float, draws: int, seed: int, index: int) -> float:
    if draws < 2:
        return 0.0
    rng = generator(seed, PURPOSE_BOOTSTRAP, index)
    stats = [w1_vs_gaussian_1d(rng.choice(samples, size=samples.size, replace=True), 0.0, var) for _ in range(draws)]
    return float(np.std(stats, ddof=1))


def _gaussian_control(cfg: ExperimentConfig, sigma_tilde2: float) -> ControlRow:
    count = cfg.experiment.replicas
    draws = generator(cfg.master_seed, PURPOSE_REFERENCE, 0).normal(0.0, math.sqrt(sigma_tilde2), count)
    value = w1_vs_gaussian_1d(draws, 0.0, sigma_tilde2)
    tol = AcceptanceGate.CONTROL_W1_FACTOR * math.sqrt(sigma_tilde2 / count)
    return ControlRow(cell="control_gaussian_marginal", value=value, tolerance=tol, passed=value <= tol)


# ---------------------------------------------------------------------------
# Marginal and functional convergence
# ---------------------------------------------------------------------------
def run_marginal_convergence(cfg: ExperimentConfig, workers: int = 1) -> Report:
    model = cfg.model()
    sig = resolve_sigma2(cfg, model, workers)
    st2 = model.sigma_tilde2(sig.sigma2)
    sensitivity = sigma_tilde_sensitivity(st2, model.sigma_tilde2(sig.stderr))
    report = Report("converge-marginal")
    report.controls.append(_gaussian_control(cfg, st2))
    report.enforce_controls()

    t_grid = cfg.experiment.t_grid
    incs = _simulate_increments(cfg, model, [(T, 1) for T in t_grid], workers)
    distances, errs = [], []
    for k, (T, inc) in enumerate(zip(t_grid, incs)):
        terminal = inc[:, 0]
        distances.append(w1_vs_gaussian_1d(terminal, 0.0, st2))
        boot = _bootstrap_stderr(terminal, st2, cfg.experiment.bootstrap, cfg.master_seed, k)
        errs.append(math.hypot(boot, sensitivity))
        logger.info("T=%g: W1 = %.5f (+/- %.5f)", T, distances[-1], errs[-1])

    slope = _log_slope(t_grid, distances)
    envelopes = [rate_envelope(T) for T in t_grid]
    fitted_c = max(d / e for d, e in zip(distances, envelopes))
    report.tables["convergence"] = rows_to_frame(
        ConvergenceRow(T=T, n=1, marginal_w1=d, marginal_stderr=e, envelope=env, fitted_C=fitted_c, slope=slope)
        for T, d, e, env in zip(t_grid, distances, errs, envelopes)
    )
    if len(t_grid) > 1:
        report.checks.append(_decreasing_row("marginal_w1_decreasing", distances, errs))
        band = AcceptanceGate.Z_BAND * _log_slope_stderr(t_grid, distances, errs)
        if slope is not None:
            report.checks.append(ControlRow(cell="marginal_w1_slope", value=slope, tolerance=band,
                                            passed=slope <= band))
    report.summary.update(
        sigma2=sig.sigma2, sigma2_stderr=sig.stderr, sigma_tilde2=st2, slope=slope, fitted_C=fitted_c,
        decreasing=bool(all(b < a for a, b in zip(distances, distances[1:]))),
    )
    return report


def _reference_control(cfg: ExperimentConfig, st2: float, n: int, family: TestFunctionalFamily) -> ControlRow:
    count = max(cfg.experiment.replicas, MIN_PATHS)
    ref = GaussianReference(st2, n)
    a = ref.sample_paths(count, derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 2))
    b = ref.sample_paths(count, derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 3))
    table = functional_w1_lower_bound(a, ref, family, reference_paths=b).table
    z = float((table["gap"] / table["stderr"]).max())
    return ControlRow(cell="control_reference_vs_reference", value=z, tolerance=AcceptanceGate.Z_BAND,
                      passed=z <= AcceptanceGate.Z_BAND)


def run_functional_convergence(cfg: ExperimentConfig, workers: int = 1) -> Report:
    if cfg.experiment.replicas < MIN_PATHS:
        raise ConfigurationError(f"functional convergence needs experiment.replicas >= {MIN_PATHS}")
    model = cfg.model()
    sig = resolve_sigma2(cfg, model, workers)
    st2 = model.sigma_tilde2(sig.sigma2)
    sensitivity = sigma_tilde_sensitivity(st2, model.sigma_tilde2(sig.stderr), path_space=True)
    family = TestFunctionalFamily()
    t_grid = cfg.experiment.t_grid
    ns = [cfg.experiment.n_for(T) for T in t_grid]

    report = Report("converge-functional")
    report.controls.append(_reference_control(cfg, st2, ns[0], family))
    report.enforce_controls()

    incs = _simulate_increments(cfg, model, list(zip(t_grid, ns)), workers)
    # one reference stream for every T
    ref_seed = derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 100)
    rows, functional_rows = [], []
    marginals, bounds, increment_bounds, stderrs = [], [], [], []
    for T, n, inc in zip(t_grid, ns, incs):
        ref = GaussianReference(st2, n)
        ref_inc = ref.sample_increments(inc.shape[0], ref_seed)
        paths = chi_knots(inc)
        path_bound = functional_w1_lower_bound(paths, ref, family, reference_paths=chi_knots(ref_inc))
        inc_bound = increment_vector_w1_lower_bound(inc, ref, family, reference_increments=ref_inc)
        marginals.append(w1_vs_gaussian_1d(paths[:, -1], 0.0, st2))
        bounds.append(path_bound.bound)
        increment_bounds.append(inc_bound.bound)
        stderrs.append(math.hypot(path_bound.stderr, sensitivity))
        for geometry, result in (("path", path_bound), ("increments", inc_bound)):
            functional_rows.extend(
                FunctionalRow(T=T, n=n, geometry=geometry, functional=r.functional, estimate=r.estimate, stderr=r.stderr)
                for r in result.table.itertuples()
            )
        report.checks.append(ControlRow(
            cell=f"chi_consistency_T{T:g}", value=abs(path_bound.bound - inc_bound.bound),
            tolerance=0.0, passed=path_bound.bound == inc_bound.bound,
        ))
        logger.info("T=%g n=%d: functional lower bound %.5f (+/- %.5f)", T, n, path_bound.bound, stderrs[-1])

    envelopes = [rate_envelope(T) for T in t_grid]
    marginal_c = max(m / e for m, e in zip(marginals, envelopes))
    ratios = [b / e for b, e in zip(bounds, envelopes)]
    fitted_c = max(ratios)
    slope = _log_slope(t_grid, bounds)
    excess = []
    for T, n, m, b, ib, se, env in zip(t_grid, ns, marginals, bounds, increment_bounds, stderrs, envelopes):
        over = b - marginal_c * env - AcceptanceGate.Z_BAND * se
        excess.append(over)
        rows.append(ConvergenceRow(
            T=T, n=n, marginal_w1=m, marginal_stderr=0.0, functional_lb=b, functional_stderr=se,
            increment_lb=ib, envelope=env, fitted_C=fitted_c, slope=slope,
            pi_shape=pi_bound_shape(T, n), below_envelope=over <= 0.0,
        ))
    report.tables["convergence"] = rows_to_frame(rows)
    report.tables["functionals"] = rows_to_frame(functional_rows)
    report.checks.append(ControlRow(cell="functional_lb_below_envelope", value=max(excess), tolerance=0.0,
                                    passed=max(excess) <= 0.0))
    if len(t_grid) > 1:
        report.checks.append(_decreasing_row("functional_lb_decreasing", bounds, stderrs))
        report.checks.append(_spread_row("functional_ratio_spread", ratios))
    report.summary.update(
        sigma_tilde2=st2, fitted_C=fitted_c, slope=slope,
        ratio_spread=AcceptanceGate.spread(ratios),
        decreasing=bool(all(b < a for a, b in zip(bounds, bounds[1:]))),
    )
    return report


# ---------------------------------------------------------------------------
# Cell-integral bounds
# ---------------------------------------------------------------------------
def _cell_integrals(path: PathRecord, T: float, n: int, quad_step) -> np.ndarray:
    """I_i = int over [t_i T, t_{i+1} T] of lambda."""
    return np.diff(compensator_at(path, knots(n) * T, quad_step))


def _lemma_values(I: np.ndarray, T: float, n: int, sigma2: float) -> Tuple[float, float]:
    square = float(np.sum(I * I)) / (T * T)
    deviation = float(np.sum(np.abs(sigma2 / n - I / T)))
    return square, deviation


def _lemma_cell(args) -> np.ndarray:
    model, pairs, sigma2, master_seed, replica, settings, quad_step = args
    horizon = max(T for T, _ in pairs)
    path = simulate_path(model, horizon, settings.replica_field(master_seed, replica, model), settings)
    return np.array([_lemma_values(_cell_integrals(path, T, n, quad_step), T, n, sigma2) for T, n in pairs])


def run_lemma_checks(cfg: ExperimentConfig, workers: int = 1) -> Report:
    model = cfg.model()
    exp = cfg.experiment
    sig = resolve_sigma2(cfg, model, workers)
    settings = cfg.simulation.settings(record_candidates=False)
    report = Report("lemmas")

    # deterministic intensity: square sum = h(mu)^2 / n, deviation sum = 0
    twin = _zero_kernel_twin(model)
    T0, n0 = exp.t_grid[0], exp.n_grid[0]
    twin_path = simulate_path(twin, T0, settings.field(cfg.master_seed, twin), settings)
    square, deviation = _lemma_values(_cell_integrals(twin_path, T0, n0, exp.quad_step), T0, n0, twin.h_mu)
    target = twin.h_mu**2 / n0
    report.controls.append(ControlRow(cell="control_cell_square_deterministic", value=square, tolerance=target,
                                      passed=AcceptanceGate.exact(square, target)))
    report.controls.append(ControlRow(cell="control_cell_deviation_deterministic", value=deviation, tolerance=0.0,
                                      passed=AcceptanceGate.exact(deviation, 0.0)))
    report.enforce_controls()

    pairs = [(T, n) for T in exp.t_grid for n in exp.n_grid]
    cells = [(model, pairs, sig.sigma2, cfg.master_seed, r, settings, exp.quad_step) for r in range(exp.replicas)]
    values = np.stack(run_replicas(_lemma_cell, cells, workers=workers, desc="lemmas"))
    means = values.mean(axis=0)
    errs = values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])

    rho = model.rho
    square_const = (model.h_mu / (1.0 - rho)) ** 2
    coupling_const = (model.alpha * model.marks.m_b1 / (1.0 - rho)) ** 2 * model.h_mu \
        * model.kernel.l1_norm * model.kernel.first_moment
    rows = []
    for k, (T, n) in enumerate(pairs):
        for j, (name, shape, const) in enumerate((
            ("cell_integral_square", 1.0 / T + 1.0 / n, square_const),
            ("cell_integral_deviation", 1.0 / T + math.sqrt(n / T), coupling_const),
        )):
            rows.append(LemmaRow(lemma=name, T=T, n=n, lhs=means[k, j], stderr=errs[k, j], shape=shape,
                                 ratio=means[k, j] / shape, constant=const))
    frame = rows_to_frame(rows)
    report.tables["lemmas"] = frame
    for name, group in frame.groupby("lemma", sort=False):
        ratios = group["ratio"].to_numpy()
        report.summary[f"{name}_ratio_spread"] = AcceptanceGate.spread(ratios)
        report.summary[f"{name}_fitted_C"] = float(ratios.max())
        if len(ratios) > 1:
            report.checks.append(_spread_row(f"{name}_ratio_bounded", ratios))
    return report


# ---------------------------------------------------------------------------
# Discretization error
# ---------------------------------------------------------------------------
def run_discretization(cfg: ExperimentConfig, workers: int = 1) -> Report:
    model = cfg.model()
    exp = cfg.experiment
    if exp.audit_step is not None and exp.audit_step > 1.0 / (10 * max(exp.n_grid)):
        raise ConfigurationError(f"experiment.audit_step must be <= 1/(10n) = {1.0 / (10 * max(exp.n_grid)):g}")
    sig = resolve_sigma2(cfg, model, workers)
    st2 = model.sigma_tilde2(sig.sigma2)
    settings = cfg.simulation.settings(record_candidates=False)
    report = Report("discretize-error")

    # event-free path: F is the linear ramp -m_g1 h(mu) sqrt(T) t, gap = m_g1 h(mu) sqrt(T) / n
    twin = _zero_kernel_twin(model)
    T0, n0 = exp.t_grid[0], exp.n_grid[0]
    empty = PathRecord(model=twin, horizon=T0, event_times=np.empty(0), event_thetas=np.empty(0),
                       event_marks=np.empty(0))
    gap = sup_gap(rescale(empty, twin, T0, n0))
    target = twin.marks.m_g1 * twin.h_mu * math.sqrt(T0) / n0
    report.controls.append(ControlRow(cell="control_event_free_sawtooth", value=gap, tolerance=target,
                                      passed=AcceptanceGate.exact(gap, target)))
    report.enforce_controls()

    paths = simulate_replicas(model, max(exp.t_grid), cfg.master_seed, exp.replicas, settings, workers)
    rows = []
    pairs = [(T, n) for T in exp.t_grid for n in exp.n_grid]
    for k, (T, n) in enumerate(pairs):
        err = discretization_error(paths, T, n, model, exp.audit_step, quad_step=exp.quad_step, workers=workers)
        report.checks.append(ControlRow(cell=f"breakpoint_sup_T{T:g}_n{n}", value=err.audit_excess,
                                        tolerance=1e-9, passed=err.audit_ok))
        brownian = brownian_discretization_error(st2, n, exp.replicas, derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 200 + k))
        rows.append(DiscretizationRow(
            T=T, n=n, mean_sup_gap=err.mean_sup_gap, stderr=err.stderr, fourth_moment=err.fourth_moment,
            grid_mean_sup_gap=err.grid_mean_sup_gap, brownian_gap=brownian.mean_sup_gap,
        ))
    frame = rows_to_frame(rows)
    lo, hi = AcceptanceGate.DISCRETIZATION_SLOPE
    for T in exp.t_grid:
        group = frame[frame["T"] == T].sort_values("n")
        if len(group) < 2:
            continue
        ns, gaps, errs = group["n"].to_numpy(), group["mean_sup_gap"].to_numpy(), group["stderr"].to_numpy()
        slope = _log_slope(ns, gaps)
        frame.loc[frame["T"] == T, "slope"] = slope
        report.checks.append(_decreasing_row(f"discretization_non_increasing_T{T:g}", gaps, errs))
        band = AcceptanceGate.Z_BAND * _log_slope_stderr(ns, gaps, errs)
        report.checks.append(ControlRow(
            cell=f"discretization_slope_T{T:g}", value=math.nan if slope is None else slope, tolerance=band,
            passed=slope is not None and lo - band <= slope <= hi + band,
        ))
    report.tables["discretization"] = frame
    return report


# ---------------------------------------------------------------------------
# sigma^2, Malliavin probe, constants, raw paths
# ---------------------------------------------------------------------------
def _event_rate_control(cfg: ExperimentConfig, model: HawkesModel, horizon: float) -> ControlRow:
    """Without memory H_T is Poisson(h(mu) T)."""
    twin = _zero_kernel_twin(model)
    settings = cfg.simulation.settings(record_candidates=False)
    path = simulate_path(twin, horizon, settings.field(derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 5), twin),
                         settings)
    expected = twin.h_mu * horizon
    return ControlRow(cell="control_zero_kernel_event_rate", value=float(path.n_events),
                      tolerance=AcceptanceGate.Z_BAND * math.sqrt(expected),
                      passed=AcceptanceGate.within_band(path.n_events, expected, math.sqrt(expected)))


def _linear_sigma2_control(cfg: ExperimentConfig, workers: int) -> ControlRow:
    exp = cfg.experiment
    est = stationary_sigma2(
        _linear_reference(), None, exp.sigma2_horizon, exp.sigma2_replicas,
        derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 4),
        cfg.simulation.settings(record_candidates=False), exp.sigma2_tol, workers,
    )
    return ControlRow(cell="control_sigma2_linear_twin", value=est.sigma2,
                      tolerance=AcceptanceGate.Z_BAND * est.stderr,
                      passed=AcceptanceGate.within_band(est.sigma2, 2.0, est.stderr))


def run_sigma2(cfg: ExperimentConfig, workers: int = 1) -> Report:
    model = cfg.model()
    exp = cfg.experiment
    report = Report("sigma2")
    report.controls.append(_event_rate_control(cfg, model, exp.sigma2_horizon))
    if model.sigma2_closed_form() is None:
        report.controls.append(_linear_sigma2_control(cfg, workers))
    report.enforce_controls()

    burn_in = model.burn_in() if exp.sigma2_burn_in is None else exp.sigma2_burn_in
    est = stationary_sigma2(
        model, burn_in, exp.sigma2_horizon, exp.sigma2_replicas,
        derive_seed(cfg.master_seed, PURPOSE_REFERENCE, 1),
        cfg.simulation.settings(record_candidates=False), exp.sigma2_tol, workers,
    )
    bound = model.mean_intensity_bound()
    report.tables["sigma2"] = rows_to_frame([Sigma2Row(
        sigma2=est.sigma2, stderr=est.stderr, closed_form=est.closed_form, mean_intensity_bound=bound,
        sigma_tilde2=model.sigma_tilde2(est.sigma2), replicas=est.replicas, burn_in=burn_in, horizon=exp.sigma2_horizon,
    )])
    band = AcceptanceGate.Z_BAND * est.stderr
    report.checks.append(ControlRow(cell="sigma2_below_mean_intensity_bound", value=est.sigma2,
                                    tolerance=bound + band, passed=est.sigma2 <= bound + band + AcceptanceGate.EXACT_ATOL))
    if est.closed_form is not None:
        report.checks.append(ControlRow(cell="sigma2_matches_closed_form", value=est.sigma2, tolerance=band,
                                        passed=AcceptanceGate.within_band(est.sigma2, est.closed_form, est.stderr)))
    report.summary.update(sigma2=est.sigma2, stderr=est.stderr, bound=bound, closed_form=est.closed_form)
    return report


def _dichotomy_control(cfg: ExperimentConfig, model: HawkesModel) -> List[ControlRow]:
    twin = _zero_kernel_twin(model)
    settings = cfg.simulation.settings()
    u = cfg.malliavin.u
    field_ = settings.field(derive_seed(cfg.master_seed, PURPOSE_PROBE, 1), twin)
    base = simulate_path(twin, u + 1.0, field_, settings)
    rows = []
    if twin.h_mu > 0.0:
        below = shift_and_resolve(base, ShiftSpec(u, 0.5 * twin.h_mu, cfg.malliavin.x), field_, settings).d_H
        rows.append(ControlRow(cell="control_shift_below_intensity", value=below, tolerance=0.0, passed=below == 1))
    else:
        logger.info("h(mu) = 0: no level lies below the intensity, skipping the accepted-shift control")
    above = shift_and_resolve(base, ShiftSpec(u, 2.0 * twin.h_mu + 1.0, cfg.malliavin.x), field_, settings).d_H
    rows.append(ControlRow(cell="control_shift_above_intensity", value=above, tolerance=0.0, passed=above == 0))
    return rows


def run_malliavin(cfg: ExperimentConfig, workers: int = 1) -> Report:
    model = cfg.model()
    mall = cfg.malliavin
    settings = cfg.simulation.settings()
    report = Report("malliavin")
    report.controls.extend(_dichotomy_control(cfg, model))
    report.enforce_controls()

    t_grid = mall.u + np.asarray(mall.lags, dtype=float)
    table = derivative_bound_check(
        model, mall.u, mall.x, t_grid, mall.replicas, cfg.master_seed, settings,
        cfg.experiment.resolvent_step, AcceptanceGate.Z_BAND, workers,
    )
    report.tables["malliavin"] = table
    report.checks.append(ControlRow(cell="derivative_bound", value=float((~table["ok"]).sum()), tolerance=0.0,
                                    passed=bool(table["ok"].all())))

    horizon = float(t_grid.max())
    field_ = settings.replica_field(cfg.master_seed, 0, model)
    base = simulate_path(model, horizon, field_, settings)
    rng = generator(cfg.master_seed, PURPOSE_PROBE, 2)
    failures = 0
    for _ in range(mall.pairs):
        u = float(rng.uniform(0.0, horizon))
        lam = intensity_at(u, base, model)
        rho2 = float(rng.uniform(0.0, lam)) if lam > 0.0 else 0.0
        x = float(model.marks.distribution.sample(rng, 1)[0])
        failures += not theta_irrelevance_check(base, u, 0.0, rho2, x, field_, settings)
    report.checks.append(ControlRow(cell="theta_irrelevance", value=failures, tolerance=0.0, passed=failures == 0))

    if model.is_linear:
        progeny = progeny_check(model, mall.u, mall.x, mall.u + mall.progeny_horizon,
                                min(mall.replicas, 1000), cfg.master_seed, settings, workers)
        report.summary.update(progeny_mean=progeny.mean, progeny_stderr=progeny.stderr,
                              progeny_expected=progeny.expected)
    report.summary.update(points=len(table), satisfied=int(table["ok"].sum()), theta_pairs=mall.pairs)
    return report


def _resolvent_control() -> ControlRow:
    """phi = 0.5 e^{-t} with unit marks: psi = 0.5 e^{-t/2}."""
    psi = build_resolvent(Kernel.exponential(0.5, 1.0), 1.0, 1.0, step=1e-3, horizon=20.0)
    err = float(np.max(np.abs(psi.values - 0.5 * np.exp(-0.5 * psi.grid))))
    return ControlRow(cell="control_resolvent_closed_form", value=err, tolerance=RESOLVENT_CONTROL_TOL,
                      passed=err <= RESOLVENT_CONTROL_TOL)


def run_constants(cfg: ExperimentConfig) -> Report:
    model = cfg.model()
    exp = cfg.experiment
    report = Report("constants")
    report.controls.append(_resolvent_control())
    report.enforce_controls()

    described = model.describe()
    if not model.kernel.is_zero:
        psi = model.resolvent(exp.resolvent_step, exp.resolvent_tail_tol)
        described.update(
            psi_truncation_order=psi.truncation_order,
            psi_tail_bound=psi.tail_bound,
            psi_grid_l1=psi.grid_l1_norm,
            renewal_residual=renewal_residual(psi, model.kernel, model.alpha, model.marks.m_b1),
        )
    report.tables["constants"] = pd.DataFrame({"constant": list(described), "value": [str(v) for v in described.values()]})
    report.summary.update(described)
    report.checks.append(ControlRow(cell="nonlinearity_lipschitz_probe", value=model.alpha, tolerance=0.0,
                                    passed=model.probe()))
    majorant_ok = verify_majorant(model.kernel)
    report.checks.append(ControlRow(cell="kernel_majorant", value=float(not majorant_ok), tolerance=0.0,
                                    passed=majorant_ok))
    return report


def _constant_intensity_compensator(cfg: ExperimentConfig, model: HawkesModel, horizon: float) -> ControlRow:
    twin = _zero_kernel_twin(model)
    settings = cfg.simulation.settings(record_candidates=False)
    path = simulate_path(twin, horizon, settings.field(cfg.master_seed, twin), settings)
    gap = compensator_refinement_gap(path, cfg.experiment.quad_step)
    return ControlRow(cell="control_constant_intensity_compensator", value=gap, tolerance=AcceptanceGate.EXACT_RTOL,
                      passed=gap <= AcceptanceGate.EXACT_RTOL)


def run_simulate(cfg: ExperimentConfig, horizon: Optional[float] = None, replicas: int = 1) -> Report:
    model = cfg.model()
    horizon = horizon or cfg.experiment.t_grid[-1]
    quad_step = cfg.experiment.quad_step
    settings = cfg.simulation.settings()
    report = Report("simulate")
    report.controls.append(_constant_intensity_compensator(cfg, model, horizon))
    report.enforce_controls()

    checkpoints = np.linspace(0.0, horizon, 101)
    n = cfg.experiment.n_for(horizon)
    paths, summary_rows = [], []
    for r in range(replicas):
        path = simulate_path(model, horizon, settings.replica_field(cfg.master_seed, r, model), settings)
        paths.append(path)
        report.tables[f"path_{r:04d}"] = path.to_frame()
        report.tables[f"path_{r:04d}_compensator"] = path.compensator_checkpoints(checkpoints, quad_step)
        report.tables[f"path_{r:04d}_rescaled"] = rescale(path, model, horizon, n, quad_step).to_frame()
        ok = dominance_audit(path)
        report.checks.append(ControlRow(cell=f"dominance_path_{r:04d}", value=float(not ok), tolerance=0.0, passed=ok))
        gap = compensator_refinement_gap(path, quad_step)
        report.checks.append(ControlRow(cell=f"compensator_refinement_{r:04d}", value=gap,
                                        tolerance=AcceptanceGate.COMPENSATOR_RTOL,
                                        passed=gap <= AcceptanceGate.COMPENSATOR_RTOL))
        summary_rows.append({"replica": r, "events": path.n_events, "L_T": float(path.event_g.sum()),
                             "Lambda_T": float(compensator_at(path, [horizon], quad_step)[0])})
    report.tables["summary"] = pd.DataFrame(summary_rows)

    if any(p.n_events for p in paths):
        ks = time_rescaling_ks(paths)
        report.checks.append(ControlRow(cell="time_rescaling_ks", value=ks.pvalue, tolerance=AcceptanceGate.KS_LEVEL,
                                        passed=ks.pvalue >= AcceptanceGate.KS_LEVEL))
        report.summary.update(ks_statistic=ks.statistic, ks_pvalue=ks.pvalue, ks_count=ks.count)
    if replicas >= MARTINGALE_MIN_REPLICAS:
        table = martingale_check(paths, knots(n) * horizon, AcceptanceGate.Z_BAND, quad_step)
        report.tables["martingale"] = table
        report.checks.append(ControlRow(cell="martingale_knots", value=float((~table["ok"]).sum()), tolerance=0.0,
                                        passed=bool(table["ok"].all())))
    return report
