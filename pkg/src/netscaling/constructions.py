"""Hierarchical layer schedules and their excess energies.

Layer ``k`` is an array of ``N_k^{n-1}`` identical elementary cells of width
``w_k = 2^{1-k} w_1`` and height ``h_k = c w_k^alpha eps^beta a^gamma (a-1)^delta``.
The upper half runs from x_n = 1/2 to 1 and is mirrored below. Urban planning
discharges through a top layer of Wasserstein cells of height ``H``; branched
transport refines forever with flat cells beyond layer ``K``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (CellKind, CellSpec, EnergyReport, FluxNetwork, LayerEnergy, Model, ModelParams,
                   edge_cost, elementary_cell_excess, orthant_signs, series, union,
                   wasserstein_cell_energy)
from .errors import AdmissibilityError, BudgetExceededError, InfeasiblePlanError

DEFAULT_BUDGET = 10 ** 7
LOG_CONVENTION = "envelopes: natural log; layer counts: log2"


class Regime(str, enum.Enum):
    UP2D = "UP2D"
    UP3DSmallA = "UP3DSmallA"
    UP3DLargeA = "UP3DLargeA"
    UPnDSmallA = "UPnDSmallA"
    UPnDLargeA = "UPnDLargeA"
    BT = "BT"


@dataclass(frozen=True)
class Layer:
    k: int
    width: float
    count: int  # N_k, cells per axis
    flux: float
    height: float
    z: float  # x_n of the layer's base points in the upper half


@dataclass(frozen=True)
class ConstructionPlan:
    params: ModelParams
    regime: Regime
    alpha: float
    beta: float
    gamma: float
    delta: float
    w1: float
    N1: int
    c_tilde: float
    c: float
    K: int
    K_S: int | None
    H: float
    layers: tuple[Layer, ...] = field(repr=False)

    def layer(self, k: int) -> Layer:
        """Geometry of layer ``k`` (1-based); layers past ``K`` are flat."""
        if k <= len(self.layers):
            return self.layers[k - 1]
        return _make_layer(self.params, self.N1, self.w1, k, 0.0, self.top)

    @property
    def top(self) -> float:
        return self.layers[-1].z + self.layers[-1].height

    @property
    def c_hat(self) -> float | None:
        """BT only: the factor in w_K = eps / (2 c_hat), which lies in (1/2, 1]."""
        if self.regime is not Regime.BT:
            return None
        return self.params.epsilon / (2 * self.layers[-1].width)

    def height_closure(self) -> float:
        """2 (sum h_k + H); equals 1 for a valid plan."""
        return 2.0 * (math.fsum(l.height for l in self.layers) + self.H)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"model": p.model.value, "epsilon": p.epsilon,
                       "a": p.a if p.is_up else None, "n": p.n, "ell": p.ell, "density": p.density},
            "regime": self.regime.value,
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "delta": self.delta,
            "w1": self.w1, "N1": self.N1, "c_tilde": self.c_tilde, "c": self.c,
            "c_hat": self.c_hat, "K": self.K, "K_S": self.K_S, "H": self.H,
            "log_convention": LOG_CONVENTION,
            "layers": [{"k": l.k, "w": l.width, "N": l.count, "f": l.flux, "h": l.height, "z": l.z}
                       for l in self.layers],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# --- plan ---------------------------------------------------------------------

def _make_layer(params: ModelParams, N1: int, w1: float, k: int, h: float, z: float) -> Layer:
    w = w1 / 2 ** (k - 1)
    return Layer(k, w, N1 * 2 ** (k - 1), params.density * (w / 2) ** (params.n - 1), h, z)


def _coarse_count(ell: float, target_width: float) -> int:
    """N_1 = ceil(ell / target), robust to round-off when the ratio is an integer."""
    ratio = ell / target_width
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-9 * ratio:
        return int(nearest)
    return math.ceil(ratio)


def _floor_log2(x: float) -> int:
    """floor(log2(x)) that does not lose exact powers of two to round-off."""
    k = math.floor(math.log2(x))
    if 2.0 ** (k + 1) <= x * (1 + 1e-12):
        k += 1
    return k


def _require(ok: bool, condition: str, detail: str = ""):
    if not ok:
        raise AdmissibilityError(condition, detail)


def _check_regime(params: ModelParams, regime: Regime) -> None:
    eps, a, n, ell = params.epsilon, params.a, params.n, params.ell
    _require(eps > 0, "ε > 0")
    if regime is Regime.BT:
        _require(params.model is Model.BranchedTransport, "regime BT needs the branched transport model")
        _require(eps < min(1 / (2 * (n - 1)), ell ** 2), "ε < min{1/(2(n−1)), ℓ²}",
                 f"eps={eps}, n={n}, ell={ell}")
        return
    _require(params.is_up, f"regime {regime.value} needs the urban planning model")
    if regime is Regime.UP2D:
        _require(n == 2, "n = 2")
        _require(eps < min(1.0, ell ** 3), "ε < min{1, ℓ³}", f"eps={eps}, ell={ell}")
    elif regime is Regime.UP3DSmallA:
        _require(n == 3, "n = 3")
        _require(a <= 2, "a ≤ 2", f"a={a}")
        _require(eps <= min(a ** 2 * (a - 1) ** 2 / 64, ell ** 4), "ε ≤ min{a²(a−1)²/64, ℓ⁴}",
                 f"eps={eps}, a={a}, ell={ell}")
    elif regime is Regime.UP3DLargeA:
        _require(n == 3, "n = 3")
        _require(eps <= min(1.0, ell ** 4), "ε ≤ min{1, ℓ⁴}", f"eps={eps}, ell={ell}")
    elif regime is Regime.UPnDSmallA:
        _require(n > 3, "n > 3")
        _require(a <= 2, "a ≤ 2", f"a={a}")
        limit = min(1.0,
                    math.sqrt(a * (a - 1)) ** (n + 1) / math.sqrt(2) ** (n * n - 1),
                    math.sqrt((a - 1) ** (n + 1) / ((2 * (n - 1)) ** (n - 1) * a ** (n - 3))),
                    ell ** (n + 1))
        _require(eps <= limit,
                 "ε ≤ min{1, √(a(a−1))^(n+1)/√2^(n²−1), √((a−1)^(n+1)/((2(n−1))^(n−1) a^(n−3))), ℓ^(n+1)}",
                 f"eps={eps}, limit={limit}")
    elif regime is Regime.UPnDLargeA:
        _require(n > 3, "n > 3")
        _require(a >= 2, "a ≥ 2", f"a={a}")
        _require(eps <= min(1.0, ell ** (n + 1)), "ε ≤ min{1, ℓ^(n+1)}", f"eps={eps}, ell={ell}")


def select_regime(params: ModelParams) -> Regime:
    """Pick the construction whose hypotheses hold; small-a wins where both apply."""
    if params.model is Model.BranchedTransport:
        return Regime.BT
    if params.n == 2:
        return Regime.UP2D
    small, large = ((Regime.UP3DSmallA, Regime.UP3DLargeA) if params.n == 3
                    else (Regime.UPnDSmallA, Regime.UPnDLargeA))
    try:
        _check_regime(params, small)
        return small
    except AdmissibilityError as err:
        if params.a <= 2 and params.n > 3:
            raise err
    return large


_EXPONENTS = {
    Regime.UP2D: lambda n: (1.5, -0.5, 0.0, 0.0),
    Regime.UP3DSmallA: lambda n: (2.0, -0.5, 0.0, 0.0),
    Regime.UP3DLargeA: lambda n: (2.0, -0.5, 0.0, 0.0),
    Regime.UPnDSmallA: lambda n: ((n + 1) / 2, -0.5, 0.0, 0.0),
    Regime.UPnDLargeA: lambda n: ((n + 1) / 2, -0.5, 0.25, 0.25),
    Regime.BT: lambda n: (2.0, -1.0, 0.0, 0.0),
}


def plan(params: ModelParams, regime_hint: Regime | str | None = None) -> ConstructionPlan:
    """Fully determined layer schedule for ``params``."""
    regime = Regime(regime_hint) if regime_hint is not None else select_regime(params)
    _check_regime(params, regime)
    eps, n, ell = params.epsilon, params.n, params.ell
    a = params.a if params.is_up else 2.0  # a^0 (a-1)^0 for BT
    alpha, beta, gamma, delta = _EXPONENTS[regime](n)
    if not alpha > 0:
        raise InfeasiblePlanError("alpha must be positive")

    target = eps ** (-beta / alpha) * a ** (-gamma / alpha) * (a - 1) ** (-delta / alpha)
    _require(target <= ell * (1 + 1e-12), "w₁ ≤ ℓ (ε ≤ a^(−γ/β)(a−1)^(−δ/β) ℓ^(−α/β))",
             f"coarse width {target} exceeds ell={ell}")
    N1 = _coarse_count(ell, target)
    w1 = ell / N1
    c_tilde = w1 / target

    K_S = None
    H = 0.0
    if regime is Regime.UP2D:
        K = _floor_log2(4 * w1 * eps ** (beta / (alpha - 1)))
    elif regime is Regime.UP3DSmallA:
        K = _floor_log2(math.sqrt(a * (a - 1)) / eps ** 0.25)
    elif regime is Regime.UP3DLargeA:
        K_S = _floor_log2(4 * eps ** -0.25)
        K = K_S + _floor_log2(math.sqrt(a))
    elif regime is Regime.UPnDSmallA:
        K = _floor_log2((a * (a - 1)) ** (1 / (n - 1)) * eps ** (-2 / (n * n - 1)))
    elif regime is Regime.UPnDLargeA:
        K = _floor_log2(2 * c_tilde * math.sqrt(n - 1) * (a * (a - 1)) ** (1 / (n * n - 1))
                        * eps ** (-2 / (n * n - 1)))
    else:
        K = 1 + _floor_log2(2 * c_tilde * eps ** (beta / (alpha * (alpha - 1))))
    if K < 1:
        raise InfeasiblePlanError(f"number of branching layers K={K} < 1")
    if K_S is not None and K_S < 1:
        raise InfeasiblePlanError(f"K_S={K_S} < 1")

    w_top = w1 / 2 ** K  # width of the Wasserstein layer K+1
    if regime is Regime.UP3DSmallA:
        H = math.sqrt(a / (a - 1)) * w_top / 4
    elif regime in (Regime.UPnDSmallA, Regime.UPnDLargeA):
        H = math.sqrt((n - 1) * a / (32 * (a - 1))) * w_top
    if H > 0.25:
        raise InfeasiblePlanError(f"Wasserstein layer height H={H} > 1/4")

    vertical = K_S if K_S is not None else K
    c = (1 - 2 * H) / (2 * c_tilde ** alpha) * (1 - 2 ** -alpha) / (1 - 2 ** (-vertical * alpha))
    scale = eps ** beta * a ** gamma * (a - 1) ** delta
    layers = []
    z = 0.5
    for k in range(1, K + 1):
        w = w1 / 2 ** (k - 1)
        h = c * w ** alpha * scale if k <= vertical else 0.0
        layers.append(_make_layer(params, N1, w1, k, h, z))
        z += h
    return ConstructionPlan(params, regime, alpha, beta, gamma, delta, w1, N1, c_tilde, c,
                            K, K_S, H, tuple(layers))


# --- analytic energy --------------------------------------------------------

def _layer_cell(plan_: ConstructionPlan, layer: Layer) -> CellSpec:
    base = (0.0,) * (plan_.params.n - 1) + (layer.z,)
    return CellSpec(base, layer.width, layer.height, layer.flux)


def _wasserstein_layer(plan_: ConstructionPlan) -> tuple[Layer, CellSpec]:
    top = plan_.layer(plan_.K + 1)
    cell = CellSpec((0.0,) * (plan_.params.n - 1) + (plan_.top,), top.width, plan_.H, top.flux,
                    CellKind.Wasserstein)
    return top, cell


def _tail_term(plan_: ConstructionPlan, k: int) -> float:
    """Energy of flat layer ``k`` in one half (all its cells)."""
    p = plan_.params
    lay = plan_.layer(k)
    l = math.sqrt(p.n - 1) / 4 * lay.width
    return lay.count ** (p.n - 1) * 2 ** (p.n - 1) * float(edge_cost(lay.flux, p)) * l


def tail_energy(plan_: ConstructionPlan, first: int) -> float:
    """Energy of all flat BT layers ``k >= first`` in both halves, in closed form.

    Consecutive flat layers differ by the factor 2^{-(1 - eps (n-1))}, so the
    series is geometric.
    """
    p = plan_.params
    q = 1.0 - p.epsilon * (p.n - 1)
    if q <= 0:
        raise InfeasiblePlanError("infinite refinement diverges for eps >= 1/(n-1)")
    return 2.0 * _tail_term(plan_, first) / (1.0 - 2.0 ** -q)


def excess_energy(plan_: ConstructionPlan, quadrature_tol: float = 1e-13) -> EnergyReport:
    """Excess energy of the mirrored construction by closed-form layer summation.

    ``per_layer`` lists ``N_k^{n-1}`` cells per half; layer energies cover both halves.
    """
    p = plan_.params
    reference = p.density * p.ell ** (p.n - 1)
    per_layer = []
    for lay in plan_.layers:
        cell = _layer_cell(plan_, lay)
        cells = lay.count ** (p.n - 1)
        e_cell = 2 ** (p.n - 1) * float(edge_cost(lay.flux, p)) * cell.tube_length
        per_layer.append(LayerEnergy(lay.k, cells, e_cell, 2 * cells * e_cell,
                                     2 * cells * elementary_cell_excess(cell, p)))
    tail = 0.0
    tail_excess = 0.0
    if p.is_up:
        top, cell = _wasserstein_layer(plan_)
        cells = top.count ** (p.n - 1)
        e_cell = wasserstein_cell_energy(cell, p, quadrature_tol).exact
        per_layer.append(LayerEnergy(top.k, cells, e_cell, 2 * cells * e_cell,
                                     2 * cells * (e_cell - cell.total_flux * cell.height)))
    else:
        tail = tail_excess = tail_energy(plan_, plan_.K + 1)
    excess = math.fsum([l.excess for l in per_layer] + [tail_excess])
    meta = {"regime": plan_.regime.value, "log_convention": LOG_CONVENTION}
    return EnergyReport(reference + excess, reference, excess, tuple(per_layer), tail, meta)


def regime_envelope(params: ModelParams) -> float:
    """Scaling rate of the optimal excess energy (natural logarithms)."""
    eps, n = params.epsilon, params.n
    if params.model is Model.BranchedTransport:
        return eps * abs(math.log(eps))
    a = params.a
    if n == 2:
        f = eps ** (2 / 3)
    elif n == 3:
        f = (math.sqrt(a) + abs(math.log((a - 1) / math.sqrt(eps)))) * math.sqrt(eps)
    else:
        f = math.sqrt(a) * math.sqrt(a - 1) ** ((n - 3) / (n - 1)) * eps ** (1 / (n - 1))
    return min(a - 1, f)


# --- explicit networks -------------------------------------------------------

def _grid(count: int, width: float, d: int) -> np.ndarray:
    """Cell centres (i + 1/2) w for multi-indices in lexicographic order."""
    axis = (np.arange(count) + 0.5) * width
    if d == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _flat_index(idx: np.ndarray, count: int) -> np.ndarray:
    out = np.zeros(len(idx), dtype=np.int64)
    for j in range(idx.shape[1]):
        out = out * count + idx[:, j]
    return out


def layer_network(params: ModelParams, lay: Layer) -> FluxNetwork:
    """All cells of one layer as an explicit network; node order is base points then leaves."""
    d = params.n - 1
    bases = _grid(lay.count, lay.width, d)
    M = len(bases)
    signs = orthant_signs(d)
    B = len(signs)
    base_pos = np.column_stack([bases, np.full(M, lay.z)])
    leaves = (bases[:, None, :] + signs[None, :, :] * lay.width / 4).reshape(-1, d)
    leaf_pos = np.column_stack([leaves, np.full(M * B, lay.z + lay.height)])
    leaf_ids = M + np.arange(M * B)
    tails = np.repeat(np.arange(M), B)
    return FluxNetwork(np.vstack([base_pos, leaf_pos]),
                       edges=np.column_stack([tails, leaf_ids]),
                       flux=np.full(M * B, lay.flux), edge_layer=np.full(M * B, lay.k),
                       sources=np.arange(M), source_mass=np.full(M, B * lay.flux),
                       sinks=leaf_ids, sink_mass=np.full(M * B, lay.flux))


def _leaf_to_child(count: int, d: int) -> np.ndarray:
    """Index in layer k+1 of each leaf of layer k (cells lexicographic, orthants lexicographic)."""
    cells = np.stack(np.meshgrid(*([np.arange(count)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    offs = ((orthant_signs(d) + 1) // 2).astype(np.int64)
    child = (2 * cells[:, None, :] + offs[None, :, :]).reshape(-1, d)
    return _flat_index(child, 2 * count)


def _cell_budget(plan_: ConstructionPlan, levels: int, diffuse: bool) -> int:
    d = plan_.params.n - 1
    total = sum(plan_.layer(k).count ** d for k in range(1, levels + 1))
    if diffuse:
        total += plan_.layer(levels + 1).count ** d
    return 2 * total


def instantiate(plan_: ConstructionPlan, max_layers: int = 0, budget: int = DEFAULT_BUDGET) -> FluxNetwork:
    """Explicit mirrored network of ``plan_``.

    Urban planning plans are instantiated completely. For branched transport
    ``max_layers`` flat layers beyond ``K`` are built; the energy of the
    remaining infinite tail is stored in ``truncation_energy``.
    """
    p = plan_.params
    d = p.n - 1
    levels = plan_.K if p.is_up else plan_.K + max(0, int(max_layers))
    cells = _cell_budget(plan_, levels, p.is_up)
    if cells > budget:
        raise BudgetExceededError(f"instantiation needs {cells} cells (budget {budget}); "
                                  "use excess_energy for the analytic path")

    upper = None
    for k in range(1, levels + 1):
        lay = plan_.layer(k)
        net = layer_network(p, lay)
        if upper is None:
            upper = net
            continue
        prev = plan_.layer(k - 1)
        # leaves of the previous layer are the trailing sinks of ``upper``
        leaf_ids = upper.sinks
        child = _leaf_to_child(prev.count, d)
        upper = series(upper, net, np.vstack([leaf_ids, child]))

    truncation = 0.0
    if p.is_up:
        top, cell = _wasserstein_layer(plan_)
        leaf_ids = upper.sinks
        M = len(leaf_ids)
        # leaves of layer K are ordered like the layer-(K+1) grid only after remapping
        order = np.argsort(_leaf_to_child(plan_.layer(plan_.K).count, d), kind="stable")
        leaf_ids = leaf_ids[order]
        upper = FluxNetwork(upper.positions, edges=upper.edges, flux=upper.flux, edge_layer=upper.edge_layer,
                            sources=upper.sources, source_mass=upper.source_mass,
                            diffuse_node=leaf_ids, diffuse_width=np.full(M, cell.width),
                            diffuse_height=np.full(M, cell.height), diffuse_flux=np.full(M, cell.flux),
                            diffuse_orientation=np.ones(M, dtype=np.int64),
                            diffuse_layer=np.full(M, top.k))
    else:
        truncation = tail_energy(plan_, levels + 1)

    lower = upper.reflected(0.5)
    trunk = upper.sources
    full = series(lower, upper, np.vstack([trunk, trunk]))
    return FluxNetwork(full.positions, edges=full.edges, flux=full.flux, edge_layer=full.edge_layer,
                       sources=full.sources, source_mass=full.source_mass,
                       sinks=full.sinks, sink_mass=full.sink_mass,
                       diffuse_node=full.diffuse_node, diffuse_width=full.diffuse_width,
                       diffuse_height=full.diffuse_height, diffuse_flux=full.diffuse_flux,
                       diffuse_orientation=full.diffuse_orientation, diffuse_layer=full.diffuse_layer,
                       truncation_energy=truncation)
