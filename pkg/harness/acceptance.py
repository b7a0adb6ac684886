"""
Acceptance gate for experiment reports.

Control cells have a known answer; a failing control means the machinery is
broken and the model cells of the same report cannot be trusted.
"""
import logging
import math
from typing import Dict, List, Sequence

from harness.schemas import ControlRow
from utils.errors import AcceptanceFailure

logger = logging.getLogger(__name__)


class AcceptanceGate:
    """Severity grading of control and check rows."""

    # Thresholds
    #
    # Monte Carlo checks are judged in standard errors; deterministic checks
    # (closed forms) only absorb float rounding.
    Z_BAND = 4.0
    CONTROL_W1_FACTOR = 5.0  # w1(N Gaussian draws, Gaussian) <= factor * sqrt(var / N)
    EXACT_RTOL = 1e-9
    EXACT_ATOL = 1e-12
    RATIO_SPREAD_MAX = 5.0  # max / min of observed-to-shape ratios across a grid
    DISCRETIZATION_SLOPE = (-0.6, -0.15)  # log-log slope of E sup|F - Pi_n F| in n
    KS_LEVEL = 1e-3
    COMPENSATOR_RTOL = 1e-6

    @staticmethod
    def within_band(value: float, target: float, stderr: float) -> bool:
        return abs(value - target) <= AcceptanceGate.Z_BAND * stderr + AcceptanceGate.EXACT_ATOL

    @staticmethod
    def exact(value: float, target: float) -> bool:
        return abs(value - target) <= AcceptanceGate.EXACT_RTOL * abs(target) + AcceptanceGate.EXACT_ATOL

    @staticmethod
    def worst_increase(values: Sequence[float], stderrs: Sequence[float]) -> float:
        """Largest step up between successive values, in combined standard errors."""
        worst = -math.inf
        for a, b, sa, sb in zip(values, values[1:], stderrs, stderrs[1:]):
            scale = math.hypot(sa, sb)
            if scale > 0.0:
                z = (b - a) / scale
            else:
                z = math.inf if b - a > AcceptanceGate.EXACT_ATOL else 0.0
            worst = max(worst, z)
        return worst

    @staticmethod
    def spread(ratios: Sequence[float]) -> float:
        """max / min of nonnegative ratios; 1 when all vanish, inf when only some do."""
        high, low = max(ratios), min(ratios)
        if high <= AcceptanceGate.EXACT_ATOL:
            return 1.0
        return high / low if low > 0.0 else math.inf

    @staticmethod
    def detect_failures(rows: Sequence[ControlRow]) -> List[Dict]:
        """Failed rows as dicts with type, severity and description."""
        failures = []
        for row in rows:
            if row.passed:
                continue
            control = row.cell.startswith("control")
            failures.append({
                "type": row.cell,
                "severity": "CRITICAL" if control else "HIGH",
                "description": f"{row.cell}: value {row.value:.6g} outside tolerance {row.tolerance:.6g}",
            })
        return failures

    @staticmethod
    def analyze(rows: Sequence[ControlRow]) -> Dict:
        failures = AcceptanceGate.detect_failures(rows)
        if any(f["severity"] == "CRITICAL" for f in failures):
            status = "ABORTED"
        elif failures:
            status = "FAILED"
        else:
            status = "PASSED"
        return {"status": status, "failures": failures, "checked": len(rows)}

    @staticmethod
    def enforce(rows: Sequence[ControlRow]) -> Dict:
        """Raise AcceptanceFailure unless every row passed."""
        summary = AcceptanceGate.analyze(rows)
        for failure in summary["failures"]:
            logger.error("%s [%s]", failure["description"], failure["severity"])
        if summary["status"] != "PASSED":
            raise AcceptanceFailure(
                f"acceptance {summary['status'].lower()}: "
                + "; ".join(f["description"] for f in summary["failures"])
            )
        return summary
