"""
Memory kernel phi, its derived scalars and the Volterra resolvent psi^(alpha,b).

Three kernel families are supported:

* ``exponential``  phi(t) = a * exp(-beta t)
* ``erlang``       phi(t) = a * t * exp(-beta t)
* ``tabulated``    linear interpolation of values on a uniform grid

Signed kernels are allowed. Every L1 / resolvent quantity uses |phi|.

The mean-intensity bound is h(mu)(1 + ||psi||_1) = h(mu) / (1 - rho), since
1 + rho/(1 - rho) = 1/(1 - rho) (see mark_model.mean_intensity_bound).
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.signal import fftconvolve

from utils.errors import DomainError, ModelValidationError, StabilityViolation

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_TAIL_TOL = 1e-8
DEFAULT_RESOLVENT_TAIL_TOL = 1e-8


class KernelFamily(str, Enum):
    EXPONENTIAL = "exponential"
    ERLANG = "erlang"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class Kernel:
    """Memory kernel with its L1 norm, first absolute moment and majorant.

    Build instances through the ``exponential`` / ``erlang`` / ``tabulated`` /
    ``from_csv`` constructors; they compute the support cutoff and the
    recorded tail mass.
    """

    family: KernelFamily
    a: float = 0.0
    beta: float = 1.0
    step: float = 0.0
    table: Optional[np.ndarray] = field(default=None, repr=False)
    t_max: float = 0.0
    tail_mass: float = 0.0
    l1_norm: float = 0.0
    first_moment: float = 0.0
    _suffix_max: Optional[np.ndarray] = field(default=None, repr=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def exponential(cls, a: float, beta: float, tail_tol: float = DEFAULT_TAIL_TOL) -> "Kernel":
        a, beta = float(a), float(beta)
        _check_rate(beta)
        amp = abs(a)
        if amp == 0.0:
            t_max, tail = 0.0, 0.0
        else:
            # int_t^inf |a| e^{-beta s} ds = |a|/beta e^{-beta t}
            t_max = max(0.0, math.log(amp / (beta * tail_tol)) / beta)
            tail = amp / beta * math.exp(-beta * t_max)
        return cls(
            family=KernelFamily.EXPONENTIAL,
            a=a,
            beta=beta,
            t_max=t_max,
            tail_mass=tail,
            l1_norm=amp / beta,
            first_moment=amp / beta**2,
        )

    @classmethod
    def erlang(cls, a: float, beta: float, tail_tol: float = DEFAULT_TAIL_TOL) -> "Kernel":
        a, beta = float(a), float(beta)
        _check_rate(beta)
        amp = abs(a)

        def tail(t: float) -> float:
            return amp * math.exp(-beta * t) * (t / beta + 1.0 / beta**2)

        if amp == 0.0:
            t_max = 0.0
        elif tail(0.0) <= tail_tol:
            t_max = 0.0
        else:
            hi = 1.0 / beta
            while tail(hi) > tail_tol:
                hi *= 2.0
            t_max = brentq(lambda t: tail(t) - tail_tol, 0.0, hi, xtol=1e-12)
        return cls(
            family=KernelFamily.ERLANG,
            a=a,
            beta=beta,
            t_max=t_max,
            tail_mass=tail(t_max) if amp else 0.0,
            l1_norm=amp / beta**2,
            first_moment=2.0 * amp / beta**3,
        )

    @classmethod
    def tabulated(
        cls,
        step: float,
        values,
        tail_tol: float = DEFAULT_TAIL_TOL,
        tail_mass: float = 0.0,
    ) -> "Kernel":
        """Kernel from values on t_k = k * step, k = 0..K (t_max = K * step).

        ``tail_mass`` is the caller's bound on int_{t_max}^inf |phi|; it must not
        exceed ``tail_tol`` and the last tabulated value must already be below
        ``tail_tol``, otherwise the table is treated as cut mid-mass.
        """
        step = float(step)
        values = np.asarray(values, dtype=float).copy()
        if step <= 0.0:
            raise ModelValidationError(f"tabulated kernel step must be positive, got {step}")
        if values.ndim != 1 or values.size < 2:
            raise ModelValidationError("tabulated kernel needs at least two values")
        if not np.all(np.isfinite(values)):
            raise ModelValidationError("tabulated kernel contains non-finite values")
        if tail_mass < 0.0 or tail_mass > tail_tol:
            raise ModelValidationError(
                f"declared tail mass {tail_mass:.3g} above tolerance {tail_tol:.3g}"
            )
        if abs(values[-1]) > tail_tol:
            raise ModelValidationError(
                f"tabulated kernel is not integrable within tolerance: |phi(t_max)| = "
                f"{abs(values[-1]):.3g} > {tail_tol:.3g}"
            )
        values.setflags(write=False)
        grid = np.arange(values.size) * step
        absv = np.abs(values)
        t_max = float(grid[-1])
        suffix = np.maximum.accumulate(absv[::-1])[::-1].copy()
        suffix.setflags(write=False)
        return cls(
            family=KernelFamily.TABULATED,
            step=step,
            table=values,
            t_max=t_max,
            tail_mass=float(tail_mass),
            l1_norm=float(np.trapezoid(absv, dx=step)) + tail_mass,
            first_moment=float(np.trapezoid(grid * absv, dx=step)) + t_max * tail_mass,
            _suffix_max=suffix,
        )

    @classmethod
    def from_csv(
        cls, path: Union[str, Path], tail_tol: float = DEFAULT_TAIL_TOL, tail_mass: float = 0.0
    ) -> "Kernel":
        """Two-column CSV (t, phi(t)) with uniform step starting at t = 0."""
        path = Path(path)
        if not path.exists():
            raise ModelValidationError(f"kernel table {path} not found")
        frame = pd.read_csv(path, header=None, comment="#").apply(pd.to_numeric, errors="coerce")
        frame = frame.dropna()
        if frame.shape[1] < 2 or len(frame) < 2:
            raise ModelValidationError(f"{path}: expected two numeric columns (t, phi)")
        t = frame.iloc[:, 0].to_numpy(dtype=float)
        phi = frame.iloc[:, 1].to_numpy(dtype=float)
        steps = np.diff(t)
        step = float(steps[0])
        if t[0] != 0.0 or not np.allclose(steps, step, rtol=1e-9, atol=0.0):
            raise ModelValidationError(f"{path}: grid must start at 0 with a uniform step")
        logger.info("loaded tabulated kernel from %s (%d points, step %g)", path, t.size, step)
        return cls.tabulated(step, phi, tail_tol=tail_tol, tail_mass=tail_mass)

    # -------------------------------------------------------------- queries
    @property
    def is_zero(self) -> bool:
        if self.family is KernelFamily.TABULATED:
            return not np.any(self.table)
        return self.a == 0.0

    @property
    def is_exponential(self) -> bool:
        return self.family is KernelFamily.EXPONENTIAL

    @property
    def nonnegative(self) -> bool:
        if self.family is KernelFamily.TABULATED:
            return bool(np.all(self.table >= 0.0))
        return self.a >= 0.0

    def evaluate(self, t: ArrayLike) -> ArrayLike:
        """phi(t) without argument checks (see ``kernel_eval``)."""
        t_arr = np.asarray(t, dtype=float)
        if self.family is KernelFamily.EXPONENTIAL:
            out = self.a * np.exp(-self.beta * t_arr)
        elif self.family is KernelFamily.ERLANG:
            out = np.where(t_arr <= self.t_max, self.a * t_arr * np.exp(-self.beta * t_arr), 0.0)
        else:
            grid_idx = t_arr / self.step
            out = np.interp(grid_idx, np.arange(self.table.size), self.table, right=0.0)
            out = np.where(t_arr <= self.t_max, out, 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def majorant(self, t: ArrayLike) -> ArrayLike:
        """Non-increasing envelope phi_bar(t) >= |phi(t)|."""
        t_arr = np.asarray(t, dtype=float)
        amp = abs(self.a)
        if self.family is KernelFamily.EXPONENTIAL:
            out = amp * np.exp(-self.beta * t_arr)
        elif self.family is KernelFamily.ERLANG:
            peak_at = 1.0 / self.beta
            peak = amp * peak_at * math.exp(-1.0)
            out = np.where(t_arr < peak_at, peak, amp * t_arr * np.exp(-self.beta * t_arr))
            out = np.where(t_arr <= self.t_max, out, 0.0)
        else:
            idx = np.clip(np.floor(t_arr / self.step).astype(np.int64), 0, self.table.size - 1)
            out = np.where(t_arr <= self.t_max, self._suffix_max[idx], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def grid(self, step: float, horizon: Optional[float] = None) -> np.ndarray:
        horizon = self.t_max if horizon is None else horizon
        count = int(math.ceil(horizon / step - 1e-9)) + 1
        return np.arange(max(count, 1)) * step

    def describe(self) -> str:
        if self.family is KernelFamily.TABULATED:
            return f"tabulated(step={self.step:g}, points={self.table.size})"
        return f"{self.family.value}(a={self.a:g}, beta={self.beta:g})"


def _check_rate(beta: float) -> None:
    if not beta > 0.0 or not math.isfinite(beta):
        raise ModelValidationError(f"kernel decay rate must be positive and finite, got {beta}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------
def kernel_eval(kernel: Kernel, t: ArrayLike) -> ArrayLike:
    """phi(t) for t >= 0; linear interpolation for tabulated kernels, 0 past t_max."""
    if np.any(np.asarray(t) < 0.0):
        raise DomainError("kernel_eval: t must be >= 0")
    return kernel.evaluate(t)


def kernel_l1_and_moment(kernel: Kernel) -> Tuple[float, float]:
    """(||phi||_1, int t |phi(t)| dt); validated when the kernel was built."""
    return kernel.l1_norm, kernel.first_moment


def verify_majorant(kernel: Kernel, step: Optional[float] = None) -> bool:
    """Majorant is non-increasing and dominates |phi| on the grid."""
    if kernel.t_max == 0.0:
        return True
    step = step or (kernel.step if kernel.family is KernelFamily.TABULATED else kernel.t_max / 4096)
    grid = kernel.grid(step)
    maj = np.asarray(kernel.majorant(grid))
    vals = np.abs(np.asarray(kernel.evaluate(grid)))
    return bool(np.all(np.diff(maj) <= 0.0) and np.all(maj >= vals))


def _trapezoid_convolve(f: np.ndarray, g: np.ndarray, step: float, size: Optional[int] = None) -> np.ndarray:
    """Trapezoid rule for (f*g)(t_m) = int_0^{t_m} f(t_m - s) g(s) ds on a shared grid."""
    full = fftconvolve(f, g)
    size = full.size if size is None else size
    full = full[:size]
    m = np.arange(size)
    f_end = np.where(m < f.size, f[np.minimum(m, f.size - 1)], 0.0)
    g_end = np.where(m < g.size, g[np.minimum(m, g.size - 1)], 0.0)
    out = step * (full - 0.5 * (f_end * g[0] + f[0] * g_end))
    out[0] = 0.0
    return np.maximum(out, 0.0)


def iterated_convolution(kernel: Kernel, k: int, step: float) -> np.ndarray:
    """Grid values of |phi|^{*k} on [0, k * t_max]."""
    if k < 1:
        raise DomainError("iterated_convolution: k must be >= 1 (the resolvent series starts at k=1)")
    if step <= 0.0:
        raise DomainError("iterated_convolution: step must be positive")
    base = np.abs(np.asarray(kernel.evaluate(kernel.grid(step)), dtype=float))
    out = base
    for _ in range(k - 1):
        out = _trapezoid_convolve(out, base, step)
    return out


@dataclass(frozen=True, eq=False)
class Resolvent:
    """psi^(alpha,b)(k * step) on [0, horizon]."""

    step: float
    values: np.ndarray = field(repr=False)
    l1_norm: float
    truncation_order: int
    tail_bound: float
    rho: float

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.step

    @property
    def grid_l1_norm(self) -> float:
        return float(np.trapezoid(self.values, dx=self.step))

    def __call__(self, t: ArrayLike) -> ArrayLike:
        out = np.interp(np.asarray(t, dtype=float) / self.step, np.arange(self.values.size), self.values, right=0.0)
        return float(out) if np.ndim(out) == 0 else out


def resolvent_l1_closed_form(alpha: float, m_b1: float, l1: float) -> float:
    rho = alpha * m_b1 * l1
    if rho >= 1.0:
        raise StabilityViolation(rho)
    return rho / (1.0 - rho)


def build_resolvent(
    kernel: Kernel,
    alpha: float,
    m_b1: float,
    step: float,
    tail_tol: float = DEFAULT_RESOLVENT_TAIL_TOL,
    horizon: Optional[float] = None,
) -> Resolvent:
    """Sum psi = sum_{k=1..K} (alpha m_b1)^k |phi|^{*k} on a grid.

    K is the smallest order with rho^{K+1}/(1-rho) <= tail_tol. The grid covers
    [0, horizon], by default t_max / (1 - rho); convolutions are causal so the
    truncation does not perturb values on the grid. ``l1_norm`` is the exact
    L1 norm of the truncated series, sum_{k<=K} rho^k.
    """
    if step <= 0.0:
        raise DomainError("build_resolvent: step must be positive")
    rho = alpha * m_b1 * kernel.l1_norm
    if rho >= 1.0:
        raise StabilityViolation(rho)

    if horizon is None:
        horizon = max(kernel.t_max, 1.0) / (1.0 - rho)
    size = int(math.ceil(horizon / step - 1e-9)) + 1

    if rho == 0.0:
        return Resolvent(step, np.zeros(size), 0.0, 0, 0.0, 0.0)

    order = 1
    while rho ** (order + 1) / (1.0 - rho) > tail_tol:
        order += 1

    scale = alpha * m_b1
    base = scale * np.abs(np.asarray(kernel.evaluate(np.arange(size) * step), dtype=float))
    term = base
    total = base.copy()
    for _ in range(order - 1):
        term = _trapezoid_convolve(term, base, step, size)
        total += term

    l1 = sum(rho**k for k in range(1, order + 1))
    logger.debug("resolvent: rho=%.4g order=%d grid=%d", rho, order, size)
    return Resolvent(
        step=step,
        values=total,
        l1_norm=l1,
        truncation_order=order,
        tail_bound=rho ** (order + 1) / (1.0 - rho),
        rho=rho,
    )


def renewal_residual(resolvent: Resolvent, kernel: Kernel, alpha: float, m_b1: float) -> float:
    """sup_grid |psi - c|phi| - c|phi| * psi| with c = alpha * m_b1."""
    size = resolvent.values.size
    base = alpha * m_b1 * np.abs(np.asarray(kernel.evaluate(resolvent.grid), dtype=float))
    rhs = base + _trapezoid_convolve(base, resolvent.values, resolvent.step, size)
    return float(np.max(np.abs(resolvent.values - rhs)))
