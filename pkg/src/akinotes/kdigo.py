"""KDIGO serum-creatinine AKI labeling over the first 72 ICU hours.

An AKI event happens at time ``t2`` when either

* a measurement rises at least ``abs_rise`` mg/dL above any measurement
  taken within the preceding ``window_hours`` (absolute rise), or
* a measurement reaches ``rel_factor`` times the baseline (relative rise),

where the baseline is the lowest value in the first ``day1_hours``.  The
earliest such ``t2`` is the event time.  Events on day 1 exclude the stay;
later events up to ``horizon_hours`` make it positive.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

# Tolerance for threshold comparisons so 1.3 - 1.0 and 1.2 - 0.9 behave alike.
THRESHOLD_EPS = 1e-9


class AkiStatus(str, enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    EXCLUDED_DAY1_AKI = "ExcludedDay1Aki"
    INSUFFICIENT_DATA = "InsufficientData"


class Criterion(str, enum.Enum):
    ABSOLUTE_RISE = "AbsoluteRise"
    RELATIVE_RISE = "RelativeRise"


class InsufficientData(ValueError):
    """No creatinine measurement in the baseline window."""


@dataclass(frozen=True)
class KdigoConfig:
    abs_rise: float = 0.3
    rel_factor: float = 1.5
    window_hours: float = 48.0
    day1_hours: float = 24.0
    horizon_hours: float = 72.0


DEFAULT = KdigoConfig()


@dataclass(frozen=True)
class CreatinineSeries:
    """Time-ordered ``(hours since ICU admission, mg/dL)`` measurements."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        for (t0, _), (t1, _) in zip(pts, pts[1:]):
            if not t1 > t0:
                raise ValueError("creatinine times must be strictly increasing")
        for t, v in pts:
            if not (0.0 <= t <= DEFAULT.horizon_hours) or not math.isfinite(t):
                raise ValueError(f"time {t} outside [0, {DEFAULT.horizon_hours}] h")
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"creatinine {v} must be positive")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_unsorted(cls, points: Sequence[tuple[float, float]]) -> "CreatinineSeries":
        """Sort by time; for duplicate times keep the later-listed value."""
        by_time: dict[float, float] = {}
        for t, v in points:
            by_time[float(t)] = float(v)
        return cls(tuple(sorted(by_time.items())))

    def __len__(self):
        return len(self.points)

    @property
    def times(self):
        return [t for t, _ in self.points]

    @property
    def values(self):
        return [v for _, v in self.points]


@dataclass(frozen=True)
class AkiAssessment:
    status: AkiStatus
    baseline_mg_dl: float
    onset_hours: Optional[float] = None
    criterion: Optional[Criterion] = None


def baseline_creatinine(series: CreatinineSeries, config: KdigoConfig = DEFAULT) -> float:
    """Lowest creatinine in the first ``day1_hours``."""
    window = [v for t, v in series.points if t <= config.day1_hours]
    if not window:
        raise InsufficientData("no creatinine measurement in the baseline window")
    return min(window)


def _absolute_rise_flags(series: CreatinineSeries, config: KdigoConfig) -> list[bool]:
    # Sliding minimum over the preceding window_hours (monotone deque).
    flags = []
    window: deque[tuple[float, float]] = deque()
    for t, v in series.points:
        while window and t - window[0][0] > config.window_hours:
            window.popleft()
        flags.append(bool(window) and v - window[0][1] >= config.abs_rise - THRESHOLD_EPS)
        while window and window[-1][1] >= v:
            window.pop()
        window.append((t, v))
    return flags


def _relative_rise_flags(series: CreatinineSeries, baseline: float, config: KdigoConfig) -> list[bool]:
    limit = config.rel_factor * baseline - THRESHOLD_EPS
    return [v >= limit for _, v in series.points]


def assess(series: CreatinineSeries, config: KdigoConfig = DEFAULT) -> AkiAssessment:
    """Classify a stay's creatinine trajectory.

    A stay without a day-1 event and without any measurement after day 1
    is ``InsufficientData``; callers decide whether that means negative.
    """
    try:
        baseline = baseline_creatinine(series, config)
    except InsufficientData:
        return AkiAssessment(AkiStatus.INSUFFICIENT_DATA, math.nan)

    absolute = _absolute_rise_flags(series, config)
    relative = _relative_rise_flags(series, baseline, config)
    for (t, _), a, r in zip(series.points, absolute, relative):
        if not (a or r):
            continue
        if t > config.horizon_hours:
            break
        if t <= config.day1_hours:
            return AkiAssessment(AkiStatus.EXCLUDED_DAY1_AKI, baseline)
        crit = Criterion.ABSOLUTE_RISE if a else Criterion.RELATIVE_RISE
        return AkiAssessment(AkiStatus.POSITIVE, baseline, t, crit)

    if not any(t > config.day1_hours for t in series.times):
        return AkiAssessment(AkiStatus.INSUFFICIENT_DATA, baseline)
    return AkiAssessment(AkiStatus.NEGATIVE, baseline)


def has_absolute_rise(series: CreatinineSeries, config: KdigoConfig = DEFAULT) -> bool:
    return any(_absolute_rise_flags(series, config))
