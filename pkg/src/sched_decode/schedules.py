"""Progress-scheduled confidence thresholds.

The threshold is a nonincreasing function of decode progress p = t/T,
interpolating from tau_high down toward tau_low:

    linear       tau_high + (tau_low - tau_high) * p
    cosine       tau_low + 0.5 * (tau_high - tau_low) * (1 + cos(pi * p))
    exponential  tau_low + (tau_high - tau_low) * exp(-k * p), k > 0

All three start at tau_high; linear and cosine reach tau_low at p = 1,
while exponential ends at tau_low + (tau_high - tau_low) * exp(-k) by
design (it never fully reaches tau_low). The degenerate flat schedule
tau_high == tau_low is a constant for every family; a flat schedule at
+inf therefore disables the trigger outright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Family(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class ThresholdSchedule:
    family: Family
    tau_high: float
    tau_low: float
    k: float | None = None

    @classmethod
    def linear(cls, tau_high: float, tau_low: float) -> "ThresholdSchedule":
        return cls(Family.LINEAR, tau_high, tau_low)

    @classmethod
    def cosine(cls, tau_high: float, tau_low: float) -> "ThresholdSchedule":
        return cls(Family.COSINE, tau_high, tau_low)

    @classmethod
    def exponential(cls, tau_high: float, tau_low: float, k: float) -> "ThresholdSchedule":
        return cls(Family.EXPONENTIAL, tau_high, tau_low, k)

    def label(self) -> str:
        base = self.family.value if self.family is not Family.EXPONENTIAL else f"exp-k{self.k:g}"
        return f"{base}({self.tau_high:g},{self.tau_low:g})"


def validate(schedule: ThresholdSchedule) -> None:
    """Raise ValueError unless the schedule is well formed."""
    if not isinstance(schedule.family, Family):
        raise ValueError(f"unknown schedule family {schedule.family!r}")
    if math.isnan(schedule.tau_high) or math.isnan(schedule.tau_low):
        raise ValueError("thresholds must not be NaN")
    if not schedule.tau_high >= schedule.tau_low:
        raise ValueError(
            f"tau_high must be >= tau_low, got {schedule.tau_high} < {schedule.tau_low}"
        )
    if schedule.family is Family.EXPONENTIAL:
        if schedule.k is None or not schedule.k > 0:
            raise ValueError(f"exponential schedule needs decay k > 0, got {schedule.k}")


def threshold(schedule: ThresholdSchedule, p: float) -> float:
    """Threshold at progress p in [0, 1].

    Boundary values are exact: threshold(0) == tau_high for every family
    and threshold(1) == tau_low for linear and cosine. Interior values are
    clamped into [tau_low, tau_high] so monotonicity survives rounding.
    """
    validate(schedule)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {p}")
    hi, lo = schedule.tau_high, schedule.tau_low
    if hi == lo:
        return hi
    if p == 0.0:
        return hi
    if schedule.family is Family.LINEAR:
        if p == 1.0:
            return lo
        return _clamp(hi + (lo - hi) * p, lo, hi)
    if schedule.family is Family.COSINE:
        if p == 1.0:
            return lo
        return _clamp(lo + 0.5 * (hi - lo) * (1.0 + math.cos(math.pi * p)), lo, hi)
    return min(hi, lo + (hi - lo) * math.exp(-schedule.k * p))


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))
