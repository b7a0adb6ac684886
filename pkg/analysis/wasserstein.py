"""
Empirical 1-Wasserstein distances.

* exact 1-D distance between two empirical measures (sorted coupling)
* quantile coupling of a sample against a Gaussian law
* lower bounds of the path-space distance to sigma_tilde * B through a
  family of 1-Lipschitz (sup-norm) test functionals
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp, ndtri

from analysis.rescaler import IncrementVector, RescaledPath, chi_knots
from utils.errors import DomainError
from utils.seeding import PURPOSE_PROBE, PURPOSE_REFERENCE, generator

logger = logging.getLogger(__name__)

MIN_PATHS = 1000
LIPSCHITZ_ROUNDING = 1e-12


@dataclass(frozen=True)
class GaussianReference:
    """Increments of sigma_tilde * B on t_i = i/n: i.i.d. N(0, sigma_tilde2 / n)."""

    sigma_tilde2: float
    n: int

    def __post_init__(self):
        if not self.sigma_tilde2 > 0.0:
            raise DomainError(f"sigma_tilde2 must be > 0, got {self.sigma_tilde2}")
        if self.n < 1:
            raise DomainError("reference dimension n must be >= 1")

    def sample_increments(self, count: int, seed: int) -> np.ndarray:
        rng = generator(seed, PURPOSE_REFERENCE, self.n, count)
        return rng.normal(0.0, math.sqrt(self.sigma_tilde2 / self.n), size=(count, self.n))

    def sample_paths(self, count: int, seed: int) -> np.ndarray:
        """Knot values (count, n + 1) of the discretized Brownian reference."""
        return chi_knots(self.sample_increments(count, seed))


# ---------------------------------------------------------------------------
# Test functionals on knot arrays (N, n + 1) of step paths
# ---------------------------------------------------------------------------
def _at(t0: float) -> Callable[[np.ndarray], np.ndarray]:
    def value(paths: np.ndarray) -> np.ndarray:
        n = paths.shape[1] - 1
        idx = min(int(math.floor(t0 * n)), n)
        return paths[:, idx]

    return value


def _soft_sup(temperature: float) -> Callable[[np.ndarray], np.ndarray]:
    def value(paths: np.ndarray) -> np.ndarray:
        return temperature * (logsumexp(paths / temperature, axis=1) - math.log(paths.shape[1]))

    return value


FUNCTIONALS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "terminal": lambda p: p[:, -1],
    "sup": lambda p: p.max(axis=1),
    "sup_abs": lambda p: np.abs(p).max(axis=1),
    "neg_inf": lambda p: -p.min(axis=1),
    "at_0.25": _at(0.25),
    "at_0.5": _at(0.5),
    "at_0.75": _at(0.75),
    # integral over [0, 1] of the step path
    "mean": lambda p: p[:, :-1].mean(axis=1),
    "clipped_terminal": lambda p: np.clip(p[:, -1], -1.0, 1.0),
    "soft_sup": _soft_sup(0.1),
}


@dataclass(frozen=True)
class TestFunctionalFamily:
    names: Tuple[str, ...] = tuple(FUNCTIONALS)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        unknown = [n for n in self.names if n not in FUNCTIONALS]
        if unknown:
            raise DomainError(f"unknown test functionals: {unknown}")

    def __len__(self) -> int:
        return len(self.names)

    def evaluate(self, paths: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: FUNCTIONALS[name](paths) for name in self.names}


def verify_family_lipschitz(family: TestFunctionalFamily, n: int, pairs: int = 10_000, seed: int = 0) -> bool:
    """|f(x) - f(y)| <= max_t |x_t - y_t| on random path pairs (up to float rounding)."""
    rng = generator(seed, PURPOSE_PROBE, n, pairs)
    x = np.cumsum(rng.normal(0.0, 1.0, size=(pairs, n + 1)), axis=1)
    y = x + rng.normal(0.0, rng.uniform(1e-6, 2.0, size=(pairs, 1)), size=(pairs, n + 1))
    dist = np.max(np.abs(x - y), axis=1)
    fx, fy = family.evaluate(x), family.evaluate(y)
    scale = 1.0 + np.maximum(np.max(np.abs(x), axis=1), np.max(np.abs(y), axis=1))
    return all(bool(np.all(np.abs(fx[k] - fy[k]) <= dist + LIPSCHITZ_ROUNDING * scale)) for k in family.names)


# ---------------------------------------------------------------------------
# 1-D distances
# ---------------------------------------------------------------------------
def _match_sizes(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted samples of equal size; the larger one is thinned by order statistics."""
    a, b = np.sort(a), np.sort(b)
    if a.size == b.size:
        return a, b
    small, large = (a, b) if a.size < b.size else (b, a)
    idx = np.floor((np.arange(small.size) + 0.5) * large.size / small.size).astype(np.int64)
    thinned = large[idx]
    return (small, thinned) if a.size < b.size else (thinned, small)


def w1_empirical_1d(samples_a, samples_b) -> float:
    """(1/N) sum |a_(i) - b_(i)|."""
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("w1_empirical_1d: empty sample")
    a, b = _match_sizes(a, b)
    return float(np.mean(np.abs(a - b)))


def w1_vs_gaussian_1d(samples, mean: float, var: float) -> float:
    """Quantile coupling of the sample against N(mean, var)."""
    if not var > 0.0:
        raise DomainError(f"w1_vs_gaussian_1d: variance must be > 0, got {var}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("w1_vs_gaussian_1d: empty sample")
    q = ndtri((np.arange(1, x.size + 1) - 0.5) / x.size)
    return float(np.mean(np.abs(x - (mean + math.sqrt(var) * q))))


# ---------------------------------------------------------------------------
# Path-space lower bounds
# ---------------------------------------------------------------------------
class FunctionalBound(NamedTuple):
    bound: float
    table: pd.DataFrame

    @property
    def stderr(self) -> float:
        """Standard error of the functional attaining the bound."""
        if self.table.empty:
            return 0.0
        return float(self.table.loc[self.table["gap"].idxmax(), "stderr"])


def _stack_paths(paths) -> np.ndarray:
    if isinstance(paths, np.ndarray):
        return np.atleast_2d(paths.astype(float))
    return np.stack([p.values if isinstance(p, RescaledPath) else np.asarray(p, dtype=float) for p in paths])


def functional_w1_lower_bound(
    paths,
    reference: GaussianReference,
    family: Optional[TestFunctionalFamily] = None,
    reference_paths: Optional[np.ndarray] = None,
    seed: int = 0,
    min_paths: int = MIN_PATHS,
) -> FunctionalBound:
    """max_f |mean f(F) - mean f(sigma_tilde B)| over the family, with per-functional stderr."""
    family = TestFunctionalFamily() if family is None else family
    if len(family) == 0:
        raise DomainError("functional_w1_lower_bound: empty test family")
    f_paths = _stack_paths(paths)
    if reference_paths is None:
        reference_paths = reference.sample_paths(max(f_paths.shape[0], min_paths), seed)
    b_paths = np.atleast_2d(np.asarray(reference_paths, dtype=float))
    if f_paths.shape[1] != reference.n + 1 or b_paths.shape[1] != reference.n + 1:
        raise DomainError(f"path dimension does not match the reference (n = {reference.n})")
    if f_paths.shape[0] < min_paths or b_paths.shape[0] < min_paths:
        raise DomainError(f"functional_w1_lower_bound: need >= {min_paths} paths on each side")

    fa, fb = family.evaluate(f_paths), family.evaluate(b_paths)
    rows = []
    for name in family.names:
        a, b = fa[name], fb[name]
        diff = float(a.mean() - b.mean())
        stderr = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        rows.append({"functional": name, "estimate": diff, "stderr": stderr, "gap": abs(diff)})
    table = pd.DataFrame(rows)
    best = table.loc[table["gap"].idxmax()]
    logger.debug("functional lower bound %.6g attained by %s (%d vs %d paths)",
                 best["gap"], best["functional"], f_paths.shape[0], b_paths.shape[0])
    return FunctionalBound(float(best["gap"]), table)


def increment_vector_w1_lower_bound(
    increments,
    reference: GaussianReference,
    family: Optional[TestFunctionalFamily] = None,
    reference_increments: Optional[np.ndarray] = None,
    seed: int = 0,
    min_paths: int = MIN_PATHS,
) -> FunctionalBound:
    """Same bound in the (inf, 1) geometry: functionals act on chi(Delta F)."""
    if isinstance(increments, np.ndarray):
        inc = np.atleast_2d(increments.astype(float))
    else:
        inc = np.stack([v.deltas if isinstance(v, IncrementVector) else np.asarray(v, dtype=float) for v in increments])
    if inc.shape[1] != reference.n:
        raise DomainError(f"increment dimension {inc.shape[1]} does not match the reference (n = {reference.n})")
    ref_paths = None
    if reference_increments is not None:
        ref = np.atleast_2d(np.asarray(reference_increments, dtype=float))
        if ref.shape[1] != reference.n:
            raise DomainError("reference increment dimension mismatch")
        ref_paths = chi_knots(ref)
    return functional_w1_lower_bound(chi_knots(inc), reference, family, ref_paths, seed, min_paths)


def pi_bound_shape(T: float, n: int) -> float:
    """n^2/T + n/sqrt(T) + (n/sqrt(T)) ln(T/n) + sqrt(n)/T."""
    if T <= 0.0 or n < 1:
        raise DomainError("pi_bound_shape: need T > 0 and n >= 1")
    root = math.sqrt(T)
    return n * n / T + n / root + n / root * math.log(T / n) + math.sqrt(n) / T


def rate_envelope(T: float) -> float:
    """ln(T) / T^{1/10}, the shape of the functional convergence rate."""
    return math.log(T) / T**0.1


E_ABS_GAUSSIAN = math.sqrt(2.0 / math.pi)
E_SUP_ABS_BROWNIAN = math.sqrt(math.pi / 2.0)  # E sup_{[0,1]} |B_t|


def sigma_tilde_sensitivity(sigma_tilde2: float, stderr2: float, path_space: bool = False) -> float:
    """Shift of a distance to sigma_tilde * B when sigma_tilde2 moves by one standard error.

    Rescaling the reference from s to s' moves a 1-Lipschitz functional of the
    terminal value by at most |s - s'| E|Z|, and a sup-norm functional of the
    path by at most |s - s'| E sup |B|.
    """
    if sigma_tilde2 <= 0.0:
        raise DomainError(f"sigma_tilde2 must be > 0, got {sigma_tilde2}")
    if stderr2 <= 0.0:
        return 0.0
    shift = math.sqrt(sigma_tilde2 + stderr2) - math.sqrt(sigma_tilde2)
    return shift * (E_SUP_ABS_BROWNIAN if path_space else E_ABS_GAUSSIAN)
