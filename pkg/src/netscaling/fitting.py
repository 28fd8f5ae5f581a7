"""Least-squares fits of sweep output against the expected scaling laws."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np


class Law(str, enum.Enum):
    PowerLaw = "power"              # log dE = slope * log eps + intercept
    PowerTimesLog = "power_log"     # dE = slope * eps |log eps|, intercept forced to 0
    SqrtTimesLog = "sqrt_log"       # dE / sqrt(eps) = slope * |log eps| + intercept


@dataclass(frozen=True)
class FitResult:
    law: Law
    slope: float
    intercept: float
    r2: float
    residual_max: float
    points: int
    ratio_min: float | None = None
    ratio_max: float | None = None
    log_convention: str = "natural"

    @property
    def ratio_band(self) -> float | None:
        if self.ratio_min is None or self.ratio_min <= 0:
            return None
        return self.ratio_max / self.ratio_min

    def to_dict(self) -> dict:
        d = asdict(self)
        d["law"] = self.law.value
        d["ratio_band"] = self.ratio_band
        return d


def _r2(y: np.ndarray, pred: np.ndarray, centred: bool = True) -> float:
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2)) if centred else float(np.sum(y ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return min(1.0, max(0.0, 1.0 - ss_res / ss_tot))


def _linear(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    return float(slope), float(intercept), pred


def fit_power_law(eps, excess) -> FitResult:
    x, y = np.log(np.asarray(eps, float)), np.log(np.asarray(excess, float))
    slope, intercept, pred = _linear(x, y)
    return FitResult(Law.PowerLaw, slope, intercept, _r2(y, pred),
                     float(np.max(np.abs(y - pred))), len(x))


def fit_sqrt_log(eps, excess) -> FitResult:
    eps = np.asarray(eps, float)
    x = np.abs(np.log(eps))
    y = np.asarray(excess, float) / np.sqrt(eps)
    slope, intercept, pred = _linear(x, y)
    return FitResult(Law.SqrtTimesLog, slope, intercept, _r2(y, pred),
                     float(np.max(np.abs(y - pred))), len(x))


def fit_power_log(eps, excess) -> FitResult:
    """Zero-intercept fit of dE against eps |log eps|, plus the band of the ratio."""
    eps = np.asarray(eps, float)
    x = eps * np.abs(np.log(eps))
    y = np.asarray(excess, float)
    slope = float(np.dot(x, y) / np.dot(x, x))
    pred = slope * x
    ratio = y / x
    return FitResult(Law.PowerTimesLog, slope, 0.0, _r2(y, pred, centred=False),
                     float(np.max(np.abs(y - pred))), len(x),
                     float(ratio.min()), float(ratio.max()))


def law_for(model: str, n: int) -> Law:
    if model == "bt":
        return Law.PowerTimesLog
    return Law.SqrtTimesLog if n == 3 else Law.PowerLaw


def target_slope(model: str, n: int) -> float | None:
    if model == "bt" or n == 3:
        return None
    return 2 / 3 if n == 2 else 1 / (n - 1)


def fit(law: Law, eps, excess) -> FitResult:
    return {Law.PowerLaw: fit_power_law,
            Law.SqrtTimesLog: fit_sqrt_log,
            Law.PowerTimesLog: fit_power_log}[Law(law)](eps, excess)
