"""Lower-bound certificates: the Wasserstein atom bound and the entropy-constrained convex program."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ENTROPY_ATOL = 1e-9
MASS_ATOL = 1e-9


def ball_volume(k: int) -> float:
    """Lebesgue volume of the unit ball in R^k."""
    if k == 1:
        return 2.0
    if k == 2:
        return math.pi
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass(frozen=True)
class AtomBoundInstance:
    density_cap: float
    atom_total_mass: float
    atom_count: int
    separation: float
    n: int = 2

    def __post_init__(self):
        if self.density_cap <= 0 or self.atom_total_mass <= 0:
            raise ValueError("density cap and atom mass must be positive")
        if self.atom_count < 1:
            raise ValueError("need at least one atom")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if self.n < 2:
            raise ValueError("dimension must be >= 2")

    @property
    def omega(self) -> float:
        return ball_volume(self.n - 1)

    @property
    def radius(self) -> float:
        per_atom = self.atom_total_mass / (self.density_cap * self.atom_count * self.omega)
        return per_atom ** (1.0 / (self.n - 1))


def near_constant(n: int) -> float:
    """Branch constant used when R <= 2t."""
    return (n - 1) / (math.sqrt(5) * (2 * n + 2))


def far_constant(n: int) -> float:
    """Branch constant used when R > 2t (and always at t = 0)."""
    return (1 + (n - 2) * 2 ** (n - 1)) / (2 ** n * math.sqrt(2) * n)


def w1_atom_lower_bound(inst: AtomBoundInstance) -> float:
    t, M, R = inst.separation, inst.atom_total_mass, inst.radius
    if t > 0 and R <= 2 * t:
        return t * M + near_constant(inst.n) * M * R * R / t
    return t * M + far_constant(inst.n) * M * R


@dataclass(frozen=True)
class ConvexProgramInstance:
    """Mass budget, entropy budget and an optional atomic candidate N = sum weight_i delta_{c_i}."""

    total_mass: float
    entropy_budget: float
    n: int = 3
    atoms: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not self.total_mass > 0 or not self.entropy_budget > 0:
            raise ValueError("total mass and entropy budget must be positive")
        if self.n < 2:
            raise ValueError("dimension must be >= 2")
        if self.atoms is not None:
            object.__setattr__(self, "atoms", tuple((float(c), float(w)) for c, w in self.atoms))


class DualCertificate(float):
    """The dual value, carrying the optimal multipliers as attributes."""

    lam: float
    kappa: float

    def __new__(cls, value: float, lam: float, kappa: float):
        obj = super().__new__(cls, value)
        obj.lam = lam
        obj.kappa = kappa
        return obj


def convex_program_dual(inst: ConvexProgramInstance) -> DualCertificate:
    m, D, n = inst.total_mass, inst.entropy_budget, inst.n
    s = 2 * D / (m * (n - 1))
    e = math.exp(-s)
    lam = e * (s + 1)
    kappa = -(2 / (n - 1)) * e
    return DualCertificate(m * e, lam, kappa)


def touching_atoms(total_mass: float, entropy_budget: float) -> tuple[tuple[float, float]]:
    """The single-atom measure (m/c*) delta_{c*}, c* = exp(-D/m), that attains the dual."""
    c_star = math.exp(-entropy_budget / total_mass)
    return ((c_star, total_mass / c_star),)


def convex_program_primal(inst: ConvexProgramInstance) -> tuple[float, bool]:
    if inst.atoms is None:
        raise ValueError("primal evaluation needs atoms")
    if not inst.atoms:
        return 0.0, False
    c = np.array([p[0] for p in inst.atoms])
    w = np.array([p[1] for p in inst.atoms])
    expo = (inst.n + 1) / (inst.n - 1)
    value = float(np.sum(w * c ** expo))
    in_range = bool(np.all(c > 0) and np.all(c <= inst.total_mass + MASS_ATOL) and np.all(w >= 0))
    mass_ok = abs(float(np.dot(c, w)) - inst.total_mass) <= MASS_ATOL
    entropy = float(np.sum(-w * c * np.log(np.where(c > 0, c, 1.0))))
    return value, bool(in_range and mass_ok and entropy <= inst.entropy_budget + ENTROPY_ATOL)


@dataclass
class GapReport:
    samples: int
    dual: float
    min_primal: float | None
    min_gap: float | None
    violations: int
    notice: str = ""
    log_convention: str = "natural"

    @property
    def ok(self) -> bool:
        return self.samples > 0 and self.violations == 0


def _sample_atoms(rng: np.random.Generator, m: float, D: float, k: int, tries: int = 1000):
    """Rejection-sample k atoms in (0, m] whose mass is m and whose entropy fits in D.

    Mass proportions pi are Dirichlet and the weight of atom i is pi_i * m / c_i,
    so sum c_i w_i = m exactly. The entropy equals m * sum pi_i (-log c_i), which
    is at least -m log m, so only the slack s = D/m + log m is available: atom
    sizes are drawn as c = m exp(-s v) with v uniform on [0, 2], and about half
    of the draws survive the entropy test.
    """
    slack = D / m + math.log(m)
    if slack < 0:
        return None  # even a single atom of size m is too spread out
    for _ in range(tries):
        props = rng.dirichlet(np.ones(k))
        c = m * np.exp(-np.minimum(slack * rng.uniform(0.0, 2.0, size=k), 600.0))
        w = props * m / c
        if float(np.sum(-w * c * np.log(c))) <= D:
            return tuple(zip(c.tolist(), w.tolist()))
    return None


def dual_gap_scan(m: float, D: float, n: int, samples: int = 1000, seed: int = 0,
                  atoms_per_sample: Sequence[int] = (1, 2, 3, 4, 5),
                  include_touching: bool = False) -> GapReport:
    dual = float(convex_program_dual(ConvexProgramInstance(m, D, n)))
    streams = np.random.SeedSequence(seed).spawn(max(samples, 0))
    values = []
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        atoms = _sample_atoms(rng, m, D, atoms_per_sample[i % len(atoms_per_sample)])
        if atoms is None:
            continue
        value, feasible = convex_program_primal(ConvexProgramInstance(m, D, n, atoms))
        if feasible:
            values.append(value)
    if include_touching:
        value, feasible = convex_program_primal(ConvexProgramInstance(m, D, n, touching_atoms(m, D)))
        if feasible:
            values.append(value)
    if not values:
        return GapReport(0, dual, None, None, 0, notice="no samples")
    arr = np.array(values)
    tol = 1e-12 * max(1.0, dual)
    return GapReport(len(values), dual, float(arr.min()), float(arr.min() - dual),
                     int(np.sum(arr < dual - tol)))
