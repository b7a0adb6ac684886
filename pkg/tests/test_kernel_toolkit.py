import math

import numpy as np
import pytest

from model.kernel_toolkit import (
    Kernel,
    build_resolvent,
    iterated_convolution,
    kernel_eval,
    kernel_l1_and_moment,
    renewal_residual,
    resolvent_l1_closed_form,
    verify_majorant,
)
from utils.errors import DomainError, ModelValidationError, StabilityViolation


def test_exponential_values():
    kernel = Kernel.exponential(0.5, 1.0)
    assert kernel_eval(kernel, 0.0) == pytest.approx(0.5)
    assert kernel_eval(kernel, 200.0) == pytest.approx(0.0, abs=1e-80)


def test_erlang_value():
    kernel = Kernel.erlang(1.0, 2.0)
    assert kernel_eval(kernel, 0.5) == pytest.approx(0.5 * math.exp(-1.0), rel=1e-12)
    assert kernel_eval(kernel, 0.5) == pytest.approx(0.18394, abs=1e-5)


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        kernel_eval(Kernel.exponential(0.5, 1.0), -0.1)


def test_l1_and_moment():
    assert kernel_l1_and_moment(Kernel.exponential(0.5, 1.0)) == pytest.approx((0.5, 0.5))
    assert kernel_l1_and_moment(Kernel.exponential(0.0, 1.0)) == (0.0, 0.0)
    assert kernel_l1_and_moment(Kernel.erlang(1.0, 2.0)) == pytest.approx((0.25, 0.25))


def test_signed_kernel_uses_absolute_values():
    kernel = Kernel.exponential(-0.4, 2.0)
    assert not kernel.nonnegative
    assert kernel.l1_norm == pytest.approx(0.2)
    assert kernel_eval(kernel, 0.0) == pytest.approx(-0.4)


def test_tabulated_matches_exponential():
    step = 1e-3
    grid = np.arange(0, 30001) * step
    kernel = Kernel.tabulated(step, 0.5 * np.exp(-grid), tail_tol=1e-8, tail_mass=1e-9)
    assert kernel.l1_norm == pytest.approx(0.5, rel=1e-6)
    assert kernel_eval(kernel, 1.2345) == pytest.approx(0.5 * math.exp(-1.2345), rel=1e-6)
    assert kernel_eval(kernel, 31.0) == 0.0


def test_tabulated_cut_mid_mass_rejected():
    with pytest.raises(ModelValidationError, match="not integrable"):
        Kernel.tabulated(0.1, [1.0, 0.9, 0.8])


def test_from_csv(tmp_path):
    step = 0.01
    grid = np.arange(0, 2501) * step
    target = tmp_path / "kernel.csv"
    target.write_text("".join(f"{t:.6f},{0.3 * math.exp(-t):.17g}\n" for t in grid))
    kernel = Kernel.from_csv(target, tail_tol=1e-8, tail_mass=0.0)
    assert kernel.l1_norm == pytest.approx(0.3, rel=1e-4)


def test_from_csv_missing_file(tmp_path):
    with pytest.raises(ModelValidationError):
        Kernel.from_csv(tmp_path / "absent.csv")


@pytest.mark.parametrize("kernel", [Kernel.exponential(0.5, 1.0), Kernel.erlang(2.0, 2.0), Kernel.exponential(-0.3, 1.0)])
def test_majorant_dominates(kernel):
    assert verify_majorant(kernel)


def test_iterated_convolution_base_case():
    kernel = Kernel.exponential(0.5, 1.0)
    step = 1e-2
    out = iterated_convolution(kernel, 1, step)
    assert np.allclose(out, 0.5 * np.exp(-np.arange(out.size) * step))


def test_iterated_convolution_exponential_square():
    kernel = Kernel.exponential(0.5, 1.0)
    step = 1e-3
    out = iterated_convolution(kernel, 2, step)
    grid = np.arange(out.size) * step
    assert np.max(np.abs(out - 0.25 * grid * np.exp(-grid))) < 1e-6
    assert np.trapezoid(out, dx=step) == pytest.approx(0.25, rel=1e-4)


def test_iterated_convolution_needs_positive_order():
    with pytest.raises(DomainError):
        iterated_convolution(Kernel.exponential(0.5, 1.0), 0, 1e-3)


def test_resolvent_exponential_closed_form():
    psi = build_resolvent(Kernel.exponential(0.5, 1.0), alpha=1.0, m_b1=1.0, step=1e-3, horizon=20.0)
    exact = 0.5 * np.exp(-0.5 * psi.grid)
    assert np.max(np.abs(psi.values - exact)) < 1e-6
    assert psi.l1_norm == pytest.approx(1.0, abs=1e-8)
    assert psi(2.0) == pytest.approx(0.5 * math.exp(-1.0), abs=1e-6)


def test_resolvent_renewal_residual_small():
    kernel = Kernel.erlang(2.0, 2.0)
    psi = build_resolvent(kernel, alpha=1.0, m_b1=1.0, step=1e-3)
    assert renewal_residual(psi, kernel, 1.0, 1.0) < 1e-6


def test_zero_kernel_resolvent():
    psi = build_resolvent(Kernel.exponential(0.0, 1.0), 1.0, 1.0, 1e-2)
    assert psi.l1_norm == 0.0
    assert not np.any(psi.values)


def test_resolvent_rejects_critical():
    with pytest.raises(StabilityViolation):
        build_resolvent(Kernel.exponential(0.5, 1.0), alpha=2.0, m_b1=1.0, step=1e-3)


@pytest.mark.parametrize("rho,expected", [(0.5, 1.0), (0.0, 0.0), (0.8, 4.0)])
def test_resolvent_l1_closed_form(rho, expected):
    assert resolvent_l1_closed_form(1.0, 1.0, rho) == pytest.approx(expected)
