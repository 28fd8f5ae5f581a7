"""Acceptance checks, grouped into suites that the CLI and the test-suite both run."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import bounds, oracle
from .constructions import Regime, excess_energy, instantiate, plan
from .core import CellKind, CellSpec, ModelParams, elementary_cell_energy, network_energy
from .sweep import SweepConfig, run_sweep

SEED = 20240611


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget_seconds: float | None = None
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.criterion:2d} {self.name}: {self.detail} ({self.seconds:.2f}s)"

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(criterion: int, name: str, budget: float | None):
    def wrap(fn: Callable[[], tuple[bool, str, dict]]):
        def run() -> CheckResult:
            t0 = time.perf_counter()
            ok, detail, values = fn()
            dt = time.perf_counter() - t0
            if budget is not None and dt > budget:
                ok = False
                detail += f"; runtime {dt:.2f}s exceeds {budget:g}s"
            return CheckResult(criterion, name, bool(ok), detail, dt, budget, values)
        run.criterion = criterion
        return run
    return wrap


# 1 ---------------------------------------------------------------------------

def random_cells(count: int = 100, seed: int = SEED):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.choice([2, 3, 4]))
        model = "up" if rng.random() < 0.5 else "bt"
        eps = float(rng.uniform(1e-4, 0.9))
        a = float(rng.uniform(1.05, 5.0))
        params = ModelParams(model, eps, a if model == "up" else 2.0, n)
        base = tuple(rng.uniform(-1, 1, n).tolist())
        cell = CellSpec(base, float(rng.uniform(1e-3, 2)), float(rng.uniform(0, 2)),
                        float(rng.uniform(1e-4, 1)), CellKind.Elementary)
        yield cell, params


@_timed(1, "cell identities", 10.0)
def check_cells():
    worst = 0.0
    for cell, params in random_cells():
        closed = elementary_cell_energy(cell, params)
        quad = oracle.cell_energy_quadrature(cell, params, tol=1e-13)
        worst = max(worst, abs(closed - quad) / abs(closed))
    return worst <= 1e-10, f"max relative deviation {worst:.3e} over 100 cells (limit 1e-10)", {"max_rel": worst}


# 2 ---------------------------------------------------------------------------

DUAL_PATH_MATRIX = (
    (ModelParams("up", 1e-2, 2.0, 2), Regime.UP2D, 0),
    (ModelParams("up", 1e-3, 2.0, 2), Regime.UP2D, 0),
    (ModelParams("up", 1e-4, 1.5, 3), Regime.UP3DSmallA, 0),
    (ModelParams("bt", 1e-3, n=2), Regime.BT, 4),
)


def dual_path_gap(params: ModelParams, regime: Regime, max_layers: int):
    pl = plan(params, regime)
    analytic = excess_energy(pl)
    net = instantiate(pl, max_layers)
    rep = network_energy(net, params)
    graph_excess = rep.excess + net.truncation_energy
    return abs(graph_excess - analytic.excess) / abs(analytic.excess), net


@_timed(2, "dual-path equality", 60.0)
def check_dual_path():
    gaps = {}
    for params, regime, layers in DUAL_PATH_MATRIX:
        gap, _ = dual_path_gap(params, regime, layers)
        gaps[f"{regime.value} eps={params.epsilon:g}"] = gap
    worst = max(gaps.values())
    return worst <= 1e-9, f"max relative gap {worst:.3e} over {len(gaps)} plans (limit 1e-9)", gaps


# 3-6 -------------------------------------------------------------------------

SCALING_2D = SweepConfig("up", 2, a=2.0, eps_start=1e-7, eps_stop=1e-3, eps_points=17)
SCALING_4D = SweepConfig("up", 4, a=1.5, eps_start=1e-7, eps_stop=1e-3, eps_points=17,
                         regime=Regime.UPnDSmallA.value)
SCALING_3D = SweepConfig("up", 3, a=1.5, eps_start=1e-7, eps_stop=1e-3, eps_points=17)
SCALING_BT = SweepConfig("bt", 2, eps_start=1e-6, eps_stop=1e-3, eps_points=13)


def _single_fit(cfg: SweepConfig):
    res = run_sweep(cfg)
    if not res.fits:
        return None, res
    return next(iter(res.fits.values())), res


@_timed(3, "2D urban planning scaling", 10.0)
def check_scaling_2d():
    f, res = _single_fit(SCALING_2D)
    ok = f is not None and abs(f.slope - 2 / 3) <= 0.05 and f.r2 >= 0.995
    return ok, f"slope {f.slope:.5f} (target 2/3 +- 0.05), R^2 {f.r2:.6f} (>= 0.995), {f.points} points", f.to_dict()


@_timed(4, "4D urban planning scaling", None)
def check_scaling_nd():
    f, res = _single_fit(SCALING_4D)
    ok = f is not None and abs(f.slope - 1 / 3) <= 0.05
    return ok, f"slope {f.slope:.5f} (target 1/3 +- 0.05), {f.points} admissible points at a=1.5", f.to_dict()


@_timed(5, "3D logarithmic refinement", None)
def check_scaling_3d():
    f, res = _single_fit(SCALING_3D)
    ok = f is not None and f.r2 >= 0.98 and f.slope > 0
    return ok, (f"dE/sqrt(eps) vs |log eps|: slope {f.slope:.5f} (> 0), R^2 {f.r2:.5f} (>= 0.98), "
                f"{f.points} points at a=1.5"), f.to_dict()


@_timed(6, "branched transport scaling", None)
def check_scaling_bt():
    f, res = _single_fit(SCALING_BT)
    band = f.ratio_band
    ok = band is not None and band <= 3
    return ok, f"ratio dE/(eps|log eps|) in [{f.ratio_min:.4f}, {f.ratio_max:.4f}], max/min {band:.4f} (<= 3)", f.to_dict()


# 7 ---------------------------------------------------------------------------

@_timed(7, "weak duality", 5.0)
def check_duality(samples: int = 1000, seed: int = SEED):
    rng = np.random.default_rng(seed)
    violations = 0
    checked = 0
    worst_touch = 0.0
    min_gap = math.inf
    while checked < samples:
        m = float(rng.uniform(0.05, 1.0))
        D = float(rng.uniform(0.01, 3.0))
        n = int(rng.integers(2, 7))
        atoms = bounds._sample_atoms(rng, m, D, int(rng.integers(1, 6)))
        if atoms is None:
            continue
        inst = bounds.ConvexProgramInstance(m, D, n, atoms)
        value, feasible = bounds.convex_program_primal(inst)
        if not feasible:
            continue
        checked += 1
        dual = float(bounds.convex_program_dual(inst))
        min_gap = min(min_gap, value - dual)
        violations += value < dual - 1e-12 * max(1.0, dual)
        touch = bounds.ConvexProgramInstance(m, D, n, bounds.touching_atoms(m, D))
        tv, tf = bounds.convex_program_primal(touch)
        worst_touch = max(worst_touch, abs(tv - dual) if tf else math.inf)
    ok = violations == 0 and worst_touch <= 1e-9
    return ok, (f"{checked} feasible instances, {violations} violations, min gap {min_gap:.3e}; "
                f"touching atom max |primal - dual| {worst_touch:.2e}"), \
        {"violations": violations, "min_gap": min_gap, "touching": worst_touch}


# 8 ---------------------------------------------------------------------------

def random_w1_instances(count: int = 1000, seed: int = SEED):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        k = int(rng.integers(1, 6))
        density = float(rng.uniform(0.2, 3.0))
        xs = rng.uniform(-2, 2, k)
        ms = rng.uniform(0.01, 1.0, k)
        t = 0.0 if rng.random() < 0.05 else float(rng.uniform(0.0, 2.0))
        yield xs, ms, t, density


@_timed(8, "W1 bound dominance", None)
def check_w1():
    worst = math.inf
    for xs, ms, t, density in random_w1_instances():
        exact = oracle.w1_segment_to_atoms_exact(xs, ms, t, density)
        bound = bounds.w1_atom_lower_bound(bounds.AtomBoundInstance(density, float(ms.sum()), len(xs), t))
        worst = min(worst, exact - bound)
    exact = oracle.w1_segment_to_atoms_exact([0.0], [0.2], 0.5, 1.0)
    bound = bounds.w1_atom_lower_bound(bounds.AtomBoundInstance(1.0, 0.2, 1, 0.5))
    worked = abs(exact - 0.1006628) <= 1e-6 and abs(bound - 0.1002981) <= 1e-6 and exact >= bound
    ok = worst >= -1e-12 and worked
    return ok, (f"min(oracle - bound) {worst:.3e} over 1000 instances; worked instance "
                f"oracle {exact:.7f}, bound {bound:.7f}"), {"min_margin": worst, "oracle": exact, "bound": bound}


# 9 ---------------------------------------------------------------------------

def closure_plans():
    for eps in (1e-2, 1e-4, 1e-6, 1e-8):
        yield plan(ModelParams("up", eps, 2.0, 2))
        yield plan(ModelParams("bt", eps, n=2))
        yield plan(ModelParams("bt", eps, n=3))
    for eps in (1e-4, 1e-6, 1e-8):
        yield plan(ModelParams("up", eps, 1.5, 3), Regime.UP3DSmallA)
        yield plan(ModelParams("up", eps, 10.0, 3), Regime.UP3DLargeA)
        yield plan(ModelParams("up", eps, 1.5, 4), Regime.UPnDSmallA)
        yield plan(ModelParams("up", eps, 10.0, 4), Regime.UPnDLargeA)
        yield plan(ModelParams("up", eps, 1.5, 5), Regime.UPnDSmallA)


@_timed(9, "height closure and conservation", None)
def check_closure():
    worst_h = max(abs(pl.height_closure() - 1.0) for pl in closure_plans())
    worst_k = 0.0
    for params, regime, layers in DUAL_PATH_MATRIX:
        net = instantiate(plan(params, regime), layers)
        worst_k = max(worst_k, net.conservation_defect())
    ok = worst_h <= 1e-12 and worst_k <= 1e-12
    return ok, f"max |2(sum h + H) - 1| {worst_h:.2e}; max Kirchhoff defect {worst_k:.2e}", \
        {"closure": worst_h, "kirchhoff": worst_k}


# 10 --------------------------------------------------------------------------

def cell_instance(eps: float) -> tuple[oracle.SmallInstance, CellSpec, ModelParams]:
    params = ModelParams("bt", eps, n=2)
    cell = CellSpec((0.0, 0.0), 1.0, 1.0, 0.5)
    sinks = tuple((tuple(p.tolist()), 0.5) for p in cell.branch_endpoints())
    return oracle.SmallInstance(((0.0, 0.0), 1.0), sinks, params), cell, params


@_timed(10, "oracle dominance", None)
def check_oracle():
    margins = {}
    for eps in (0.0, 0.1, 0.3, 0.5, 0.9):
        inst, cell, params = cell_instance(eps)
        margins[eps] = elementary_cell_energy(cell, params) - oracle.bt_bruteforce(inst).energy
    inst, _, _ = cell_instance(0.0)
    flat = oracle.bt_bruteforce(inst).energy
    ok = min(margins.values()) >= -1e-12 and abs(flat - 1.0307764064044151) <= 1e-9
    return ok, (f"min(cell - brute force) {min(margins.values()):.3e}; eps=0 brute force {flat:.10f} "
                f"(straight line 1.0307764064)"), {"margins": {str(k): v for k, v in margins.items()}, "eps0": flat}


CHECKS = (check_cells, check_dual_path, check_scaling_2d, check_scaling_nd, check_scaling_3d,
          check_scaling_bt, check_duality, check_w1, check_closure, check_oracle)

SUITES = {
    "cells": (check_cells,),
    "dualpath": (check_dual_path,),
    "scaling": (check_scaling_2d, check_scaling_nd, check_scaling_3d, check_scaling_bt),
    "duality": (check_duality,),
    "w1": (check_w1,),
    "closure": (check_closure,),
    "oracle": (check_oracle,),
    "all": CHECKS,
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return [check() for check in SUITES[name]]
