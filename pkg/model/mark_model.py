"""
Mark distribution, impact function b, claim function g and the nonlinearity h.

Moments follow the convention m_{f,k} = E|f(X)|^k with X ~ mark distribution.
Closed forms cover every (distribution, function) pair of the menu except
AffineClamp on continuous marks, which falls back to a fixed-seed Monte Carlo
estimate with a reported standard error.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from model.kernel_toolkit import Kernel
from utils.errors import DomainError, ModelValidationError, StabilityViolation
from utils.seeding import PURPOSE_MOMENTS, generator

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MC_MOMENT_DRAWS = 1_000_000
MC_MOMENT_SEED = 20240917
PROBS_TOL = 1e-12


# ---------------------------------------------------------------------------
# Mark distribution
# ---------------------------------------------------------------------------
class MarkFamily(str, Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class MarkDistribution:
    family: MarkFamily
    c: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    rate: float = 1.0
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()

    @classmethod
    def constant(cls, c: float) -> "MarkDistribution":
        return cls(MarkFamily.CONSTANT, c=float(c))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "MarkDistribution":
        if not hi > lo:
            raise ModelValidationError(f"uniform marks need lo < hi, got ({lo}, {hi})")
        return cls(MarkFamily.UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def exponential(cls, rate: float) -> "MarkDistribution":
        if not rate > 0.0:
            raise ModelValidationError(f"exponential marks need rate > 0, got {rate}")
        return cls(MarkFamily.EXPONENTIAL, rate=float(rate))

    @classmethod
    def discrete(cls, values, probs) -> "MarkDistribution":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if not values or len(values) != len(probs):
            raise ModelValidationError("discrete marks need matching, nonempty values and probs")
        if any(p < 0.0 for p in probs):
            raise ModelValidationError("discrete mark probabilities must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > PROBS_TOL:
            raise ModelValidationError(f"discrete mark probabilities sum to {math.fsum(probs)!r}, not 1")
        return cls(MarkFamily.DISCRETE, values=values, probs=probs)

    @property
    def support(self) -> Tuple[float, float]:
        if self.family is MarkFamily.CONSTANT:
            return self.c, self.c
        if self.family is MarkFamily.UNIFORM:
            return self.lo, self.hi
        if self.family is MarkFamily.EXPONENTIAL:
            return 0.0, math.inf
        return min(self.values), max(self.values)

    @property
    def is_atomic(self) -> bool:
        return self.family in (MarkFamily.CONSTANT, MarkFamily.DISCRETE)

    def atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.family is MarkFamily.CONSTANT:
            return np.array([self.c]), np.array([1.0])
        if self.family is MarkFamily.DISCRETE:
            return np.asarray(self.values), np.asarray(self.probs)
        raise DomainError(f"{self.family.value} marks have no atoms")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family is MarkFamily.CONSTANT:
            return np.full(size, self.c)
        if self.family is MarkFamily.UNIFORM:
            return rng.uniform(self.lo, self.hi, size)
        if self.family is MarkFamily.EXPONENTIAL:
            return rng.exponential(1.0 / self.rate, size)
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))

    def abs_moment(self, p: int) -> float:
        """E|X|^p in closed form."""
        if self.family is MarkFamily.CONSTANT:
            return abs(self.c) ** p
        if self.family is MarkFamily.UNIFORM:
            # antiderivative of |x|^p is sign(x)|x|^{p+1}/(p+1)
            def anti(x: float) -> float:
                return math.copysign(abs(x) ** (p + 1), x) / (p + 1)

            return (anti(self.hi) - anti(self.lo)) / (self.hi - self.lo)
        if self.family is MarkFamily.EXPONENTIAL:
            return math.factorial(p) / self.rate**p
        return math.fsum(q * abs(v) ** p for v, q in zip(self.values, self.probs))

    def describe(self) -> str:
        if self.family is MarkFamily.CONSTANT:
            return f"constant({self.c:g})"
        if self.family is MarkFamily.UNIFORM:
            return f"uniform({self.lo:g}, {self.hi:g})"
        if self.family is MarkFamily.EXPONENTIAL:
            return f"exponential(rate={self.rate:g})"
        return f"discrete({len(self.values)} atoms)"


# ---------------------------------------------------------------------------
# Mark functions b and g
# ---------------------------------------------------------------------------
class MarkFunctionKind(str, Enum):
    ONE = "one"
    IDENTITY = "identity"
    SQUARE = "square"
    AFFINE_CLAMP = "affine_clamp"


@dataclass(frozen=True)
class MarkFunction:
    kind: MarkFunctionKind
    slope: float = 1.0
    intercept: float = 0.0
    cap: Optional[float] = None

    @classmethod
    def one(cls) -> "MarkFunction":
        return cls(MarkFunctionKind.ONE)

    @classmethod
    def identity(cls) -> "MarkFunction":
        return cls(MarkFunctionKind.IDENTITY)

    @classmethod
    def square(cls) -> "MarkFunction":
        return cls(MarkFunctionKind.SQUARE)

    @classmethod
    def affine_clamp(cls, slope: float, intercept: float, cap: Optional[float] = None) -> "MarkFunction":
        """x -> min(max(slope * x + intercept, 0), cap)."""
        if cap is not None and cap < 0.0:
            raise ModelValidationError("affine_clamp cap must be nonnegative")
        return cls(MarkFunctionKind.AFFINE_CLAMP, float(slope), float(intercept), cap)

    def __call__(self, x: ArrayLike) -> ArrayLike:
        if self.kind is MarkFunctionKind.ONE:
            return np.ones_like(x, dtype=float) if np.ndim(x) else 1.0
        if self.kind is MarkFunctionKind.IDENTITY:
            return x
        if self.kind is MarkFunctionKind.SQUARE:
            return x * x
        out = np.maximum(self.slope * np.asarray(x, dtype=float) + self.intercept, 0.0)
        if self.cap is not None:
            out = np.minimum(out, self.cap)
        return float(out) if np.ndim(out) == 0 else out

    def nonnegative_on(self, support: Tuple[float, float]) -> bool:
        if self.kind is MarkFunctionKind.IDENTITY:
            return support[0] >= 0.0
        return True

    def describe(self) -> str:
        if self.kind is MarkFunctionKind.AFFINE_CLAMP:
            cap = "" if self.cap is None else f", cap={self.cap:g}"
            return f"affine_clamp({self.slope:g}, {self.intercept:g}{cap})"
        return self.kind.value


@dataclass(frozen=True)
class MomentTable:
    m_b: np.ndarray
    m_g: np.ndarray
    m_b_stderr: np.ndarray
    m_g_stderr: np.ndarray

    @property
    def monte_carlo(self) -> bool:
        return bool(np.any(self.m_b_stderr > 0.0) or np.any(self.m_g_stderr > 0.0))


def _function_moments(dist: MarkDistribution, fn: MarkFunction, orders: int) -> Tuple[np.ndarray, np.ndarray]:
    """(E|f(X)|^k for k = 1..orders, standard errors)."""
    ks = np.arange(1, orders + 1)
    zeros = np.zeros(orders)
    if fn.kind is MarkFunctionKind.ONE:
        return np.ones(orders), zeros
    if fn.kind is MarkFunctionKind.IDENTITY:
        return np.array([dist.abs_moment(int(k)) for k in ks]), zeros
    if fn.kind is MarkFunctionKind.SQUARE:
        return np.array([dist.abs_moment(2 * int(k)) for k in ks]), zeros
    if dist.is_atomic:
        atoms, weights = dist.atoms()
        vals = np.abs(np.asarray(fn(atoms), dtype=float))
        return np.array([float(np.dot(weights, vals**k)) for k in ks]), zeros

    logger.info("no closed form for %s on %s marks, using %d Monte Carlo draws",
                fn.describe(), dist.describe(), MC_MOMENT_DRAWS)
    draws = dist.sample(generator(MC_MOMENT_SEED, PURPOSE_MOMENTS), MC_MOMENT_DRAWS)
    vals = np.abs(np.asarray(fn(draws), dtype=float))
    est = np.empty(orders)
    err = np.empty(orders)
    for i, k in enumerate(ks):
        powered = vals**k
        est[i] = powered.mean()
        err[i] = powered.std(ddof=1) / math.sqrt(powered.size)
    return est, err


@dataclass(frozen=True)
class MarkModel:
    """Mark law with its impact function b and nonnegative claim function g."""

    distribution: MarkDistribution
    b_fn: MarkFunction = field(default_factory=MarkFunction.one)
    g_fn: MarkFunction = field(default_factory=MarkFunction.one)

    def __post_init__(self):
        if not self.g_fn.nonnegative_on(self.distribution.support):
            raise ModelValidationError(
                f"g = {self.g_fn.describe()} takes negative values on the mark support {self.distribution.support}"
            )
        table = self.moment_table
        if not (np.all(np.isfinite(table.m_b)) and np.all(np.isfinite(table.m_g))):
            raise ModelValidationError("mark moments are not finite")

    @cached_property
    def moment_table(self) -> MomentTable:
        m_b, e_b = _function_moments(self.distribution, self.b_fn, 2)
        m_g, e_g = _function_moments(self.distribution, self.g_fn, 4)
        return MomentTable(m_b=m_b, m_g=m_g, m_b_stderr=e_b, m_g_stderr=e_g)

    @property
    def m_b1(self) -> float:
        return float(self.moment_table.m_b[0])

    @property
    def m_g1(self) -> float:
        return float(self.moment_table.m_g[0])

    @property
    def m_g2(self) -> float:
        return float(self.moment_table.m_g[1])

    @property
    def b_nonnegative(self) -> bool:
        return self.b_fn.nonnegative_on(self.distribution.support)

    def b(self, x: ArrayLike) -> ArrayLike:
        return self.b_fn(x)

    def g(self, x: ArrayLike) -> ArrayLike:
        return self.g_fn(x)


def moments(model: MarkModel) -> Tuple[np.ndarray, np.ndarray]:
    """(m_b[1..2], m_g[1..4])."""
    table = model.moment_table
    return table.m_b.copy(), table.m_g.copy()


# ---------------------------------------------------------------------------
# Nonlinearity h
# ---------------------------------------------------------------------------
class NonlinearityFamily(str, Enum):
    LINEAR = "linear"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"


@dataclass(frozen=True)
class Nonlinearity:
    """h together with the baseline mu it is evaluated at.

    * linear    h(z) = z (admissible only with phi >= 0, b >= 0 and mu > 0)
    * relu      h(z) = max(z, epsilon)
    * sigmoid   h(z) = level / (1 + e^{-z})
    * softplus  h(z) = scale * log(1 + e^z)
    """

    family: NonlinearityFamily
    mu: float
    epsilon: float = 0.0
    level: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ModelValidationError("mu must be finite")
        if self.family is NonlinearityFamily.RELU and self.epsilon < 0.0:
            raise ModelValidationError("relu floor epsilon must be >= 0")
        if self.family is NonlinearityFamily.SIGMOID and not self.level > 0.0:
            raise ModelValidationError("sigmoid level must be > 0")
        if self.family is NonlinearityFamily.SOFTPLUS and not self.scale > 0.0:
            raise ModelValidationError("softplus scale must be > 0")

    @property
    def lipschitz_alpha(self) -> float:
        if self.family is NonlinearityFamily.SIGMOID:
            return self.level / 4.0
        if self.family is NonlinearityFamily.SOFTPLUS:
            return self.scale
        return 1.0

    @property
    def h_mu(self) -> float:
        return self.scalar(self.mu)

    def scalar(self, z: float) -> float:
        """h on a Python float (used inside the thinning loop)."""
        if self.family is NonlinearityFamily.LINEAR:
            return z
        if self.family is NonlinearityFamily.RELU:
            return z if z > self.epsilon else self.epsilon
        if self.family is NonlinearityFamily.SIGMOID:
            if z >= 0.0:
                return self.level / (1.0 + math.exp(-z))
            e = math.exp(z)
            return self.level * e / (1.0 + e)
        return self.scale * (max(z, 0.0) + math.log1p(math.exp(-abs(z))))

    def __call__(self, z: ArrayLike) -> ArrayLike:
        z = np.asarray(z, dtype=float)
        if self.family is NonlinearityFamily.LINEAR:
            out = z
        elif self.family is NonlinearityFamily.RELU:
            out = np.maximum(z, self.epsilon)
        elif self.family is NonlinearityFamily.SIGMOID:
            out = self.level * expit(z)
        else:
            out = self.scale * np.logaddexp(0.0, z)
        return float(out) if np.ndim(out) == 0 else out

    def describe(self) -> str:
        extra = {
            NonlinearityFamily.LINEAR: "",
            NonlinearityFamily.RELU: f", eps={self.epsilon:g}",
            NonlinearityFamily.SIGMOID: f", L={self.level:g}",
            NonlinearityFamily.SOFTPLUS: f", scale={self.scale:g}",
        }[self.family]
        return f"{self.family.value}(mu={self.mu:g}{extra})"


def verify_nonlinearity(h: Nonlinearity, pairs: int = 10_000, seed: int = 0, spread: float = 50.0) -> bool:
    """Probe positivity and the alpha-Lipschitz bound on random pairs around mu.

    Linear h is only probed on [mu, mu + spread]: with nonnegative excitation its
    argument never drops below mu.
    """
    rng = generator(seed, PURPOSE_MOMENTS, pairs)
    lo = h.mu if h.family is NonlinearityFamily.LINEAR else h.mu - spread
    z1 = rng.uniform(lo, h.mu + spread, pairs)
    z2 = np.where(rng.random(pairs) < 0.5, z1 + rng.normal(0.0, 1e-3, pairs), rng.uniform(lo, h.mu + spread, pairs))
    z2 = np.maximum(z2, lo)
    h1, h2 = np.asarray(h(z1)), np.asarray(h(z2))

    # rounding slack scales with |h|: at large z the difference is a few ulps of h
    slack = 1e-12 * (1.0 + np.abs(h1) + np.abs(h2))
    lipschitz = np.abs(h1 - h2) <= h.lipschitz_alpha * np.abs(z1 - z2) * (1.0 + 1e-12) + slack
    if h.family is NonlinearityFamily.RELU and h.epsilon == 0.0:
        positive = np.all(h1 >= 0.0) and np.all(h2 >= 0.0)
    else:
        positive = np.all(h1 > 0.0) and np.all(h2 > 0.0)
    ok = bool(np.all(lipschitz) and positive)
    if not ok:
        logger.warning("nonlinearity probe failed for %s", h.describe())
    return ok


# ---------------------------------------------------------------------------
# Model-level constants
# ---------------------------------------------------------------------------
def stability_margin(kernel: Kernel, model: MarkModel, h: Nonlinearity) -> float:
    """rho = alpha * m_b1 * ||phi||_1 (rejecting rho >= 1 is the caller's job)."""
    return h.lipschitz_alpha * model.m_b1 * kernel.l1_norm


def mean_intensity_bound(h: Nonlinearity, rho: float) -> float:
    """h(mu) (1 + rho / (1 - rho)) = h(mu) / (1 - rho)."""
    if rho >= 1.0:
        raise StabilityViolation(rho)
    return h.h_mu / (1.0 - rho)
