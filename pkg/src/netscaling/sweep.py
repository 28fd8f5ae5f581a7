"""Parameter sweeps over geometric epsilon grids, with CSV output and scaling fits."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constructions import Regime, excess_energy, plan, regime_envelope
from .core import Model, ModelParams
from .errors import AdmissibilityError, InfeasiblePlanError
from .fitting import FitResult, fit, law_for

log = logging.getLogger(__name__)

CSV_HEADER = ("model", "n", "eps", "a", "ell", "regime", "K", "w1", "excess", "envelope", "ratio")
MIN_FIT_POINTS = 4


def geometric_grid(start: float, stop: float, points: int) -> np.ndarray:
    """``points`` log-evenly spaced values between ``start`` and ``stop``, largest first."""
    if points < 1:
        return np.empty(0)
    if start <= 0 or stop <= 0:
        raise ValueError("grid endpoints must be positive")
    grid = np.geomspace(start, stop, points)
    return np.sort(grid)[::-1]


def parse_grid(spec: str) -> tuple[float, float, int]:
    """Parse ``start:stop:points``."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected start:stop:points, got {spec!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


@dataclass(frozen=True)
class SweepConfig:
    model: str = "up"
    n: int = 2
    ell: float = 1.0
    a: tuple[float, ...] = (2.0,)
    eps_start: float = 1e-7
    eps_stop: float = 1e-3
    eps_points: int = 17
    regime: str | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model).value)
        a = self.a if isinstance(self.a, (tuple, list)) else (self.a,)
        object.__setattr__(self, "a", tuple(float(x) for x in a))
        if self.model == "bt":
            object.__setattr__(self, "a", (float("nan"),))

    @property
    def grid(self) -> np.ndarray:
        return geometric_grid(self.eps_start, self.eps_stop, self.eps_points)


@dataclass(frozen=True)
class SweepRow:
    model: str
    n: int
    eps: float
    a: float
    ell: float
    regime: str
    K: int
    w1: float
    excess: float
    envelope: float

    @property
    def ratio(self) -> float:
        return self.excess / self.envelope

    def cells(self) -> list[str]:
        num = lambda x: format(x, ".16e")
        a = "" if math.isnan(self.a) else num(self.a)
        return [self.model, str(self.n), num(self.eps), a, num(self.ell), self.regime, str(self.K),
                num(self.w1), num(self.excess), num(self.envelope), num(self.ratio)]


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]
    skipped: list[tuple[float, float, str]] = field(default_factory=list)
    fits: dict[float, FitResult] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow(row.cells())
        return buf.getvalue()

    def fit_report(self) -> dict:
        return {
            "law": law_for(self.config.model, self.config.n).value,
            "fits": [dict(a=None if math.isnan(a) else a, **f.to_dict()) for a, f in self.fits.items()],
            "skipped": [{"eps": e, "a": None if math.isnan(a) else a, "reason": r}
                        for e, a, r in self.skipped],
            "notices": self.notices,
            "log_convention": "natural",
        }


def _point(cfg: SweepConfig, a: float, eps: float):
    kw = dict(model=cfg.model, epsilon=float(eps), n=cfg.n, ell=cfg.ell)
    if cfg.model == "up":
        kw["a"] = a
    params = ModelParams(**kw)
    try:
        pl = plan(params, Regime(cfg.regime) if cfg.regime else None)
    except (AdmissibilityError, InfeasiblePlanError) as err:
        return None, str(err)
    rep = excess_energy(pl)
    return SweepRow(cfg.model, cfg.n, float(eps), a, cfg.ell, pl.regime.value, pl.K, pl.w1,
                    rep.excess, regime_envelope(params)), None


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Evaluate every (a, eps) point; rows come out by a ascending, then eps descending."""
    tasks = [(a, float(e)) for a in cfg.a for e in cfg.grid]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(lambda t: _point(cfg, *t), tasks))
    else:
        outcomes = [_point(cfg, *t) for t in tasks]

    result = SweepResult(cfg, [])
    for (a, eps), (row, why) in zip(tasks, outcomes):
        if row is None:
            log.info("skipping eps=%g a=%g: %s", eps, a, why)
            result.skipped.append((eps, a, why))
        else:
            result.rows.append(row)
    result.rows.sort(key=lambda r: (0.0 if math.isnan(r.a) else r.a, -r.eps))

    law = law_for(cfg.model, cfg.n)
    for a in cfg.a:
        rows = [r for r in result.rows if r.a == a or (math.isnan(a) and math.isnan(r.a))]
        label = "" if math.isnan(a) else f" at a={a:g}"
        if len(rows) < MIN_FIT_POINTS:
            result.notices.append(f"fit skipped{label}: {len(rows)} admissible points "
                                  f"(need {MIN_FIT_POINTS})")
            continue
        result.fits[a] = fit(law, [r.eps for r in rows], [r.excess for r in rows])
    return result
