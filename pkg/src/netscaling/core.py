"""Domain types, cost functionals and composition of discrete flux networks.

An irrigation pattern built from straight segments of constant flux is
represented by a directed graph: every pipe edge carries mass ``f`` along a
segment, so the pattern cost collapses to ``sum(f * rate(f) * length)``.
Terminal "diffuse" edges stand for Wasserstein cells, which spread an atom
uniformly onto a hyperface (or gather it from one).
"""

from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .errors import ConservationError, GlueError, ModelError
from .quadrature import sqrt_antiderivative

FLUX_RTOL = 1e-12
GLUE_ATOL = 1e-9


class Model(str, enum.Enum):
    UrbanPlanning = "up"
    BranchedTransport = "bt"


class CellKind(str, enum.Enum):
    Elementary = "elementary"
    Wasserstein = "wasserstein"


@dataclass(frozen=True)
class ModelParams:
    """Which functional is evaluated and on what geometry.

    ``a`` is only meaningful for urban planning. ``epsilon = 0`` is accepted
    because it is the reference functional against which excess is measured;
    constructions reject it.
    """

    model: Model
    epsilon: float
    a: float = 2.0
    n: int = 2
    ell: float = 1.0
    density: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.model is Model.UrbanPlanning and not self.a > 1:
            raise ValueError(f"urban planning needs a > 1, got {self.a}")
        if self.model is Model.BranchedTransport and self.epsilon > 1:
            raise ValueError(f"branched transport needs epsilon <= 1, got {self.epsilon}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"dimension n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not self.ell > 0:
            raise ValueError("side length ell must be positive")
        if not self.density > 0:
            raise ValueError("density must be positive")

    @property
    def is_up(self) -> bool:
        return self.model is Model.UrbanPlanning


class MeasureKind(str, enum.Enum):
    UniformHyperface = "uniform_hyperface"
    Atoms = "atoms"


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """Either ``density * H^{n-1}`` on ``[0, side]^{n-1} x {height}`` or a sum of atoms."""

    kind: MeasureKind
    n: int
    side: float = 0.0
    height: float = 0.0
    density: float = 0.0
    positions: np.ndarray | None = None
    masses: np.ndarray | None = None

    @classmethod
    def uniform_hyperface(cls, side: float, height: float, density: float, n: int = 2) -> "MeasureSpec":
        if side <= 0 or density <= 0:
            raise ValueError("uniform hyperface needs positive side and density")
        return cls(MeasureKind.UniformHyperface, n, side=side, height=height, density=density)

    @classmethod
    def atoms(cls, positions, masses) -> "MeasureSpec":
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        m = np.asarray(masses, dtype=float).reshape(-1)
        if len(pos) != len(m) or len(m) == 0:
            raise ValueError("need one mass per atom and at least one atom")
        if np.any(m <= 0):
            raise ValueError("atom masses must be strictly positive")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("atom positions must be distinct")
        return cls(MeasureKind.Atoms, pos.shape[1], positions=pos, masses=m)

    @property
    def total_mass(self) -> float:
        if self.kind is MeasureKind.Atoms:
            return float(self.masses.sum())
        return self.density * self.side ** (self.n - 1)


def orthant_signs(d: int) -> np.ndarray:
    """All sign vectors in {-1, +1}^d in lexicographic order."""
    if d == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((-1.0, 1.0), repeat=d)))


@dataclass(frozen=True)
class CellSpec:
    base: tuple[float, ...]
    width: float
    height: float
    flux: float
    kind: CellKind = CellKind.Elementary

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(x) for x in self.base))
        object.__setattr__(self, "kind", CellKind(self.kind))
        if len(self.base) < 2:
            raise ValueError("cell base point must live in R^n with n >= 2")
        if self.width < 0 or self.height < 0:
            raise ValueError("cell width and height must be non-negative")
        if not self.flux > 0:
            raise ValueError("cell flux must be positive")

    @property
    def n(self) -> int:
        return len(self.base)

    @property
    def tube_length(self) -> float:
        return math.sqrt((self.n - 1) * self.width ** 2 / 16 + self.height ** 2)

    @property
    def total_flux(self) -> float:
        return 2 ** (self.n - 1) * self.flux

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(self.base)
        half = np.full(self.n, self.width / 2)
        half[-1] = 0.0
        lo, hi = x - half, x + half
        hi[-1] += self.height
        return lo, hi

    def branch_endpoints(self) -> np.ndarray:
        """Leaf positions of an elementary cell, one row per orthant."""
        signs = orthant_signs(self.n - 1)
        ends = np.tile(np.asarray(self.base), (len(signs), 1))
        ends[:, :-1] += signs * self.width / 4
        ends[:, -1] += self.height
        return ends


# --- cost densities -------------------------------------------------------

def up_cost_rate(m: float, epsilon: float, a: float) -> float:
    """Urban planning cost per unit length and unit mass, min{1 + eps/m, a}."""
    if m <= 0:
        return a
    return min(1.0 + epsilon / m, a)


def bt_cost_rate(m: float, epsilon: float) -> float:
    """Branched transport cost per unit length and unit mass; inf off the network."""
    if m <= 0:
        return math.inf
    return m ** (-epsilon)


def edge_cost(flux, params: ModelParams):
    """Per-length cost ``flux * rate(flux)`` of pipes, vectorised over ``flux``."""
    f = np.asarray(flux, dtype=float)
    if params.is_up:
        return np.minimum(params.a * f, f + params.epsilon)
    return f ** (1.0 - params.epsilon)


def _edge_surcharge(flux, params: ModelParams):
    """``flux * rate(flux) - flux``, computed without cancellation."""
    f = np.asarray(flux, dtype=float)
    if params.is_up:
        return np.minimum((params.a - 1.0) * f, params.epsilon)
    return f * np.expm1(-params.epsilon * np.log(f))


# --- unit cells -------------------------------------------------------------

def elementary_cell_energy(cell: CellSpec, params: ModelParams) -> float:
    if cell.kind is not CellKind.Elementary:
        raise ValueError("elementary_cell_energy needs an elementary cell")
    if cell.n != params.n:
        raise ValueError(f"cell lives in R^{cell.n} but params have n={params.n}")
    return 2 ** (cell.n - 1) * float(edge_cost(cell.flux, params)) * cell.tube_length


def elementary_cell_excess(cell: CellSpec, params: ModelParams) -> float:
    """Cell energy minus its share ``2^{n-1} f h`` of the reference energy."""
    f, h = cell.flux, cell.height
    l = cell.tube_length
    horiz = (cell.n - 1) * cell.width ** 2 / 16
    stretch = horiz / (l + h) if l + h > 0 else 0.0
    return 2 ** (cell.n - 1) * (f * stretch + float(_edge_surcharge(f, params)) * l)


class WassersteinCost(NamedTuple):
    exact: float
    bound: float


def _cube_sqrt_integral(d: int, beta: float, tol: float) -> float:
    """Integral of sqrt(|p|^2 + beta^2) over [-1, 1]^d."""

    def inner(*outer):
        b = math.sqrt(beta * beta + sum(p * p for p in outer))
        return 2.0 * sqrt_antiderivative(1.0, b)

    if d == 1:
        return inner()
    # integrate the remaining d-1 coordinates over [0, 1] and use symmetry
    ranges = [(0.0, 1.0)] * (d - 1)
    scale = 2 ** (d - 1)
    opts = {"epsabs": tol / scale, "epsrel": 1e-13, "limit": 200}
    if d == 2:
        val, _ = integrate.quad(lambda p: inner(p), 0.0, 1.0, **opts)
    else:
        val, _ = integrate.nquad(lambda *p: inner(*p), ranges, opts=opts)
    return scale * val


@functools.lru_cache(maxsize=4096)
def _wasserstein_exact(n: int, w: float, h: float, f: float, eps: float, a: float, tol: float) -> float:
    if n == 2 and h == 0.0:
        half = w / 2
        if half == 0.0:
            return 0.0
        # mass profile m(d) = f (1 - d / half) at distance d from the apex
        kink = []
        if a > 1 and eps / (a - 1) < f:
            kink = [half * (1.0 - eps / ((a - 1) * f))]

        def density(d):
            m = f * (1.0 - d / half)
            return min(a * m, m + eps)

        val, _ = integrate.quad(density, 0.0, half, points=kink or None,
                                epsabs=tol / 2, epsrel=1e-14, limit=200)
        return 2.0 * val
    if w == 0.0:
        return a * f * 2 ** (n - 1) * h
    s = w / 2
    inner_tol = tol / (a * f * s) if a * f * s > 0 else tol
    return a * f * s * _cube_sqrt_integral(n - 1, h / s, inner_tol)


def wasserstein_cell_energy(cell: CellSpec, params: ModelParams, quadrature_tol: float = 1e-12) -> WassersteinCost:
    """Urban planning cost of a Wasserstein cell: quadrature value and closed-form bound.

    Off the apex the mass flux vanishes (except for n = 2, h = 0, where the
    fibres overlap along the segment), so the cost density is ``a`` there.
    """
    if not params.is_up:
        raise ModelError("Wasserstein cells exist only for urban planning; "
                         "branched transport mass cannot leave the network")
    if quadrature_tol <= 0:
        raise ValueError("quadrature_tol must be positive")
    n, w, h, f = params.n, cell.width, cell.height, cell.flux
    if cell.n != n:
        raise ValueError(f"cell lives in R^{cell.n} but params have n={n}")
    if n == 2 and h == 0.0:
        bound = min(params.a * f, f + params.epsilon) * w
    else:
        bound = 2 ** (n - 1) * params.a * f * math.sqrt((n - 1) * w * w / 4 + h * h)
    exact = _wasserstein_exact(n, float(w), float(h), float(f), float(params.epsilon),
                               float(params.a), float(quadrature_tol))
    return WassersteinCost(exact, bound)


# --- flux networks ---------------------------------------------------------

def _frozen(arr, dtype, shape_tail=()) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    if out.size == 0:
        out = out.reshape((0, *shape_tail))
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FluxNetwork:
    """Directed graph of straight pipes with constant flux, plus diffuse terminals.

    ``diffuse_orientation`` is +1 when a Wasserstein cell spreads the node's
    mass onto the face at height ``z + h`` and -1 when it gathers mass from the
    face at ``z - h`` into the node. Each diffuse edge carries ``2^{n-1} f``.
    """

    positions: np.ndarray
    edges: np.ndarray = None
    flux: np.ndarray = None
    sources: np.ndarray = None
    source_mass: np.ndarray = None
    sinks: np.ndarray = None
    sink_mass: np.ndarray = None
    diffuse_node: np.ndarray = None
    diffuse_width: np.ndarray = None
    diffuse_height: np.ndarray = None
    diffuse_flux: np.ndarray = None
    diffuse_orientation: np.ndarray = None
    edge_layer: np.ndarray = None
    diffuse_layer: np.ndarray = None
    truncation_energy: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] < 2:
            raise ValueError("positions must be an (N, n) array with n >= 2")
        n = pos.shape[1]
        set_ = functools.partial(object.__setattr__, self)
        set_("positions", _frozen(pos, float, (n,)))
        empty_i = np.zeros(0, dtype=np.int64)
        empty_f = np.zeros(0)
        set_("edges", _frozen(self.edges if self.edges is not None else np.zeros((0, 2)), np.int64, (2,)))
        E = len(self.edges)
        set_("flux", _frozen(self.flux if self.flux is not None else empty_f, float))
        for name, dt in (("sources", np.int64), ("source_mass", float), ("sinks", np.int64),
                         ("sink_mass", float), ("diffuse_node", np.int64), ("diffuse_width", float),
                         ("diffuse_height", float), ("diffuse_flux", float),
                         ("diffuse_orientation", np.int64)):
            val = getattr(self, name)
            set_(name, _frozen(val if val is not None else (empty_i if dt is np.int64 else empty_f), dt))
        D = len(self.diffuse_node)
        set_("edge_layer", _frozen(self.edge_layer if self.edge_layer is not None else np.full(E, -1), np.int64))
        set_("diffuse_layer", _frozen(self.diffuse_layer if self.diffuse_layer is not None else np.full(D, -1), np.int64))
        if self.edges.shape != (E, 2) or self.flux.shape != (E,) or self.edge_layer.shape != (E,):
            raise ValueError("edges, flux and edge_layer must have matching lengths")
        if len(self.sources) != len(self.source_mass) or len(self.sinks) != len(self.sink_mass):
            raise ValueError("every source/sink mark needs a mass")
        for name in ("diffuse_width", "diffuse_height", "diffuse_flux", "diffuse_orientation", "diffuse_layer"):
            if len(getattr(self, name)) != D:
                raise ValueError("diffuse edge arrays must have matching lengths")
        N = len(pos)
        for ids in (self.edges.reshape(-1), self.sources, self.sinks, self.diffuse_node):
            if ids.size and (ids.min() < 0 or ids.max() >= N):
                raise ValueError("node id out of range")
        if E and np.any(self.flux <= 0):
            raise ValueError("pipe fluxes must be positive")
        if D and not np.all(np.isin(self.diffuse_orientation, (-1, 1))):
            raise ValueError("diffuse orientation must be +1 or -1")

    @classmethod
    def empty(cls, n: int = 2) -> "FluxNetwork":
        return cls(np.zeros((0, n)))

    @classmethod
    def from_cell(cls, cell: CellSpec, layer: int = -1) -> "FluxNetwork":
        """Explicit graph of a single cell (elementary: 2^{n-1} pipes; Wasserstein: one diffuse edge)."""
        base = np.asarray(cell.base)[None, :]
        if cell.kind is CellKind.Wasserstein:
            return cls(base, sources=[0], source_mass=[cell.total_flux],
                       diffuse_node=[0], diffuse_width=[cell.width], diffuse_height=[cell.height],
                       diffuse_flux=[cell.flux], diffuse_orientation=[1], diffuse_layer=[layer])
        ends = cell.branch_endpoints()
        k = len(ends)
        leaves = np.arange(1, k + 1)
        return cls(np.vstack([base, ends]),
                   edges=np.column_stack([np.zeros(k, dtype=np.int64), leaves]),
                   flux=np.full(k, cell.flux), edge_layer=np.full(k, layer),
                   sources=[0], source_mass=[cell.total_flux],
                   sinks=leaves, sink_mass=np.full(k, cell.flux))

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def diffuse_mass(self) -> np.ndarray:
        return 2.0 ** (self.n - 1) * self.diffuse_flux

    def total_source_mass(self) -> float:
        inbound = self.diffuse_mass[self.diffuse_orientation < 0].sum()
        return float(self.source_mass.sum() + inbound)

    def total_sink_mass(self) -> float:
        outbound = self.diffuse_mass[self.diffuse_orientation > 0].sum()
        return float(self.sink_mass.sum() + outbound)

    def diffuse_cell(self, i: int) -> CellSpec:
        return CellSpec(self.positions[self.diffuse_node[i]], self.diffuse_width[i],
                        self.diffuse_height[i], self.diffuse_flux[i], CellKind.Wasserstein)

    def node_flows(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node (inflow, outflow), counting marks and diffuse edges."""
        N = self.num_nodes
        tail, head = self.edges[:, 0], self.edges[:, 1]
        inflow = np.bincount(head, self.flux, N) + np.bincount(self.sources, self.source_mass, N)
        outflow = np.bincount(tail, self.flux, N) + np.bincount(self.sinks, self.sink_mass, N)
        dm = self.diffuse_mass
        out = self.diffuse_orientation > 0
        outflow += np.bincount(self.diffuse_node[out], dm[out], N)
        inflow += np.bincount(self.diffuse_node[~out], dm[~out], N)
        return inflow, outflow

    def conservation_defect(self) -> float:
        """Largest |inflow - outflow| / inflow over all nodes (0 for an empty net)."""
        if self.num_nodes == 0:
            return 0.0
        inflow, outflow = self.node_flows()
        scale = np.maximum(np.maximum(inflow, outflow), np.finfo(float).tiny)
        return float(np.max(np.abs(inflow - outflow) / scale))

    def check_conservation(self, rtol: float = FLUX_RTOL) -> None:
        defect = self.conservation_defect()
        if defect > rtol:
            inflow, outflow = self.node_flows()
            bad = int(np.argmax(np.abs(inflow - outflow)))
            raise ConservationError(f"Kirchhoff violated at node {bad}: in={inflow[bad]!r} "
                                    f"out={outflow[bad]!r} (relative defect {defect:.3e})")
        src, snk = self.total_source_mass(), self.total_sink_mass()
        if abs(src - snk) > rtol * max(src, snk, np.finfo(float).tiny):
            raise ConservationError(f"source mass {src!r} != sink mass {snk!r}")

    def check_monotone(self, atol: float = 1e-12) -> None:
        """Raise unless x_n is nondecreasing along every pipe."""
        if not self.num_edges:
            return
        dz = self.positions[self.edges[:, 1], -1] - self.positions[self.edges[:, 0], -1]
        if np.any(dz < -atol):
            bad = int(np.argmin(dz))
            raise ConservationError(f"edge {bad} runs against the transport direction (dz={dz[bad]!r})")

    def reflected(self, plane: float = 0.5) -> "FluxNetwork":
        """Mirror image across x_n = plane with every flow reversed."""
        pos = np.array(self.positions)
        pos[:, -1] = 2 * plane - pos[:, -1]
        return FluxNetwork(pos, edges=self.edges[:, ::-1], flux=self.flux,
                           sources=self.sinks, source_mass=self.sink_mass,
                           sinks=self.sources, sink_mass=self.source_mass,
                           diffuse_node=self.diffuse_node, diffuse_width=self.diffuse_width,
                           diffuse_height=self.diffuse_height, diffuse_flux=self.diffuse_flux,
                           diffuse_orientation=-self.diffuse_orientation,
                           edge_layer=self.edge_layer, diffuse_layer=self.diffuse_layer,
                           truncation_energy=self.truncation_energy)

    def _shifted(self, offset: int, remap: np.ndarray | None = None) -> dict:
        m = (lambda ids: remap[ids]) if remap is not None else (lambda ids: ids + offset)
        return dict(edges=m(self.edges), sources=m(self.sources), sinks=m(self.sinks),
                    diffuse_node=m(self.diffuse_node))


_PARTS = ("flux", "source_mass", "sink_mass", "diffuse_width", "diffuse_height",
          "diffuse_flux", "diffuse_orientation", "edge_layer", "diffuse_layer")


def _concat(nets: Sequence[FluxNetwork], renumbered: Sequence[dict], positions: np.ndarray) -> FluxNetwork:
    kw = {}
    for key in ("edges", "sources", "sinks", "diffuse_node"):
        kw[key] = np.concatenate([r[key] for r in renumbered]) if renumbered else None
    for key in _PARTS:
        kw[key] = np.concatenate([getattr(net, key) for net in nets]) if nets else None
    return FluxNetwork(positions, truncation_energy=sum(net.truncation_energy for net in nets), **kw)


def union(nets: Iterable[FluxNetwork], n: int = 2) -> FluxNetwork:
    """Disjoint union: node ids of later networks are shifted past earlier ones."""
    nets = list(nets)
    if not nets:
        return FluxNetwork.empty(n)
    dims = {net.n for net in nets}
    if len(dims) != 1:
        raise ValueError(f"cannot unite networks of different dimensions {sorted(dims)}")
    offsets = np.cumsum([0] + [net.num_nodes for net in nets[:-1]])
    renumbered = [net._shifted(int(off)) for net, off in zip(nets, offsets)]
    return _concat(nets, renumbered, np.vstack([net.positions for net in nets]))


def _glue_pairs(gluing) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(gluing, Mapping):
        keys = np.fromiter(gluing.keys(), dtype=np.int64, count=len(gluing))
        vals = np.fromiter(gluing.values(), dtype=np.int64, count=len(gluing))
        return keys, vals
    arr = np.asarray(gluing, dtype=np.int64)
    if arr.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if arr.ndim != 2 or arr.shape[0] != 2:
        raise ValueError("gluing must be a mapping or a (2, G) array of (sink ids, source ids)")
    return arr[0], arr[1]


def series(first: FluxNetwork, second: FluxNetwork, gluing, coalesce_nodes: bool = False) -> FluxNetwork:
    """Compose two networks: mass leaving ``first`` at glued sinks enters ``second``.

    ``gluing`` maps sink ids of ``first`` to source ids of ``second``; it is a
    dict or a ``(2, G)`` array. Glued nodes are identified and both marks are
    dropped. With ``coalesce_nodes`` coincident nodes and parallel pipes are
    merged afterwards, which is where the cost becomes strictly subadditive.
    """
    if first.n != second.n:
        raise ValueError("cannot compose networks of different dimensions")
    sink_ids, src_ids = _glue_pairs(gluing)
    if len(np.unique(sink_ids)) != len(sink_ids) or len(np.unique(src_ids)) != len(src_ids):
        raise ValueError("gluing must be one-to-one")
    sink_lookup = dict(zip(first.sinks.tolist(), range(len(first.sinks))))
    src_lookup = dict(zip(second.sources.tolist(), range(len(second.sources))))
    sink_rows = np.empty(len(sink_ids), np.int64)
    src_rows = np.empty(len(src_ids), np.int64)
    for i, (s, t) in enumerate(zip(sink_ids.tolist(), src_ids.tolist())):
        if s not in sink_lookup:
            raise GlueError(s, t, "first node is not a sink")
        if t not in src_lookup:
            raise GlueError(s, t, "second node is not a source")
        sink_rows[i] = sink_lookup[s]
        src_rows[i] = src_lookup[t]
    if len(sink_ids):
        gap = np.max(np.abs(first.positions[sink_ids] - second.positions[src_ids]), axis=1)
        bad = np.flatnonzero(gap > GLUE_ATOL)
        if bad.size:
            i = bad[0]
            raise GlueError(sink_ids[i], src_ids[i], f"positions differ by {gap[i]:.3e}")
        ms, mt = first.sink_mass[sink_rows], second.source_mass[src_rows]
        bad = np.flatnonzero(np.abs(ms - mt) > FLUX_RTOL * np.maximum(ms, mt))
        if bad.size:
            i = bad[0]
            raise GlueError(sink_ids[i], src_ids[i], f"masses differ ({ms[i]!r} vs {mt[i]!r})")

    N1, N2 = first.num_nodes, second.num_nodes
    glued = np.zeros(N2, bool)
    glued[src_ids] = True
    remap = np.empty(N2, np.int64)
    remap[~glued] = N1 + np.arange(N2 - len(src_ids))
    remap[src_ids] = sink_ids
    positions = np.vstack([first.positions, second.positions[~glued]])

    keep_sink = np.ones(len(first.sinks), bool)
    keep_sink[sink_rows] = False
    keep_src = np.ones(len(second.sources), bool)
    keep_src[src_rows] = False
    r1 = first._shifted(0)
    r2 = second._shifted(0, remap)
    kw = dict(
        edges=np.vstack([r1["edges"], r2["edges"]]),
        flux=np.concatenate([first.flux, second.flux]),
        sources=np.concatenate([first.sources, r2["sources"][keep_src]]),
        source_mass=np.concatenate([first.source_mass, second.source_mass[keep_src]]),
        sinks=np.concatenate([first.sinks[keep_sink], r2["sinks"]]),
        sink_mass=np.concatenate([first.sink_mass[keep_sink], second.sink_mass]),
        diffuse_node=np.concatenate([first.diffuse_node, r2["diffuse_node"]]),
        edge_layer=np.concatenate([first.edge_layer, second.edge_layer]),
    )
    for key in ("diffuse_width", "diffuse_height", "diffuse_flux", "diffuse_orientation", "diffuse_layer"):
        kw[key] = np.concatenate([getattr(first, key), getattr(second, key)])
    out = FluxNetwork(positions, truncation_energy=first.truncation_energy + second.truncation_energy, **kw)
    return coalesce(out) if coalesce_nodes else out


def coalesce(net: FluxNetwork, decimals: int = 12) -> FluxNetwork:
    """Merge nodes at identical positions and sum the flux of parallel pipes.

    Marks at a merged node are summed; a node that ends up both source and
    sink keeps only the net mark.
    """
    if net.num_nodes == 0:
        return net
    keys = np.round(net.positions, decimals)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep the first occurrence's exact coordinates
    first_idx = np.full(len(uniq), len(inverse))
    np.minimum.at(first_idx, inverse, np.arange(len(inverse)))
    positions = net.positions[first_idx]
    M = len(uniq)

    edges = inverse[net.edges]
    loop = edges[:, 0] == edges[:, 1]
    edges, flux, layer = edges[~loop], net.flux[~loop], net.edge_layer[~loop]
    if len(edges):
        pair, e_inv = np.unique(edges, axis=0, return_inverse=True)
        e_inv = e_inv.reshape(-1)
        flux = np.bincount(e_inv, flux, len(pair))
        lay = np.full(len(pair), np.iinfo(np.int64).max)
        np.minimum.at(lay, e_inv, layer)
        edges, layer = pair, lay
    net_mark = np.bincount(inverse[net.sources], net.source_mass, M) - np.bincount(inverse[net.sinks], net.sink_mass, M)
    scale = np.bincount(inverse[net.sources], net.source_mass, M) + np.bincount(inverse[net.sinks], net.sink_mass, M)
    tiny = np.abs(net_mark) <= FLUX_RTOL * np.maximum(scale, np.finfo(float).tiny)
    src = np.flatnonzero((net_mark > 0) & ~tiny)
    snk = np.flatnonzero((net_mark < 0) & ~tiny)
    return FluxNetwork(positions, edges=edges, flux=flux, edge_layer=layer,
                       sources=src, source_mass=net_mark[src], sinks=snk, sink_mass=-net_mark[snk],
                       diffuse_node=inverse[net.diffuse_node], diffuse_width=net.diffuse_width,
                       diffuse_height=net.diffuse_height, diffuse_flux=net.diffuse_flux,
                       diffuse_orientation=net.diffuse_orientation, diffuse_layer=net.diffuse_layer,
                       truncation_energy=net.truncation_energy)


# --- energies ---------------------------------------------------------------

@dataclass(frozen=True)
class LayerEnergy:
    k: int
    cells: int
    per_cell: float
    energy: float
    excess: float


@dataclass(frozen=True)
class EnergyReport:
    """``total = reference + excess``; layer energies plus ``tail`` sum to ``total``."""

    total: float
    reference: float
    excess: float
    per_layer: tuple[LayerEnergy, ...] = ()
    tail: float = 0.0
    metadata: Mapping[str, object] = field(default_factory=dict)


def network_energy(net: FluxNetwork, params: ModelParams, quadrature_tol: float = 1e-12) -> EnergyReport:
    """Energy of an explicit network under ``params``.

    The reference energy is the vertical work ``sum(sink mass * x_n) -
    sum(source mass * x_n)`` of the boundary data; the excess is accumulated
    edge by edge as ``f (len - dz) + (rate(f) f - f) len`` so it stays accurate
    when it is many orders below the total.
    """
    if net.n != params.n:
        raise ValueError(f"network lives in R^{net.n} but params have n={params.n}")
    if len(net.diffuse_node) and not params.is_up:
        raise ModelError("branched transport cannot evaluate diffuse (Wasserstein) edges")
    if net.num_nodes == 0:
        return EnergyReport(0.0, 0.0, 0.0)
    net.check_conservation()

    pos = net.positions
    vec = pos[net.edges[:, 1]] - pos[net.edges[:, 0]]
    horiz2 = np.einsum("ij,ij->i", vec[:, :-1], vec[:, :-1])
    dz = vec[:, -1]
    length = np.sqrt(horiz2 + dz * dz)
    f = net.flux
    cost = edge_cost(f, params) * length
    denom = length + dz
    stretch = np.where(dz >= 0,
                       np.divide(horiz2, denom, out=np.zeros_like(denom), where=denom > 0),
                       length - dz)
    edge_excess = f * stretch + _edge_surcharge(f, params) * length

    d_cost = np.zeros(len(net.diffuse_node))
    d_excess = np.zeros(len(net.diffuse_node))
    for i in range(len(net.diffuse_node)):
        cell = net.diffuse_cell(i)
        exact = wasserstein_cell_energy(cell, params, quadrature_tol).exact
        d_cost[i] = exact
        d_excess[i] = exact - cell.total_flux * cell.height

    z = pos[:, -1]
    reference = float(np.dot(net.sink_mass, z[net.sinks]) - np.dot(net.source_mass, z[net.sources]))
    # diffuse faces are boundary: outbound ones deliver at z + h, inbound ones collect at z - h
    face_z = z[net.diffuse_node] + net.diffuse_orientation * net.diffuse_height
    reference += float(np.dot(net.diffuse_orientation * net.diffuse_mass, face_z))
    excess = float(math.fsum(edge_excess) + math.fsum(d_excess))

    per_layer = []
    branches = 2 ** (net.n - 1)
    layers = np.union1d(net.edge_layer, net.diffuse_layer)
    for k in layers.tolist():
        e_sel = net.edge_layer == k
        d_sel = net.diffuse_layer == k
        cells = int(e_sel.sum()) // branches + int(d_sel.sum())
        energy = math.fsum(cost[e_sel]) + math.fsum(d_cost[d_sel])
        layer_excess = math.fsum(edge_excess[e_sel]) + math.fsum(d_excess[d_sel])
        per_layer.append(LayerEnergy(k, cells, energy / cells if cells else 0.0, energy, layer_excess))
    return EnergyReport(reference + excess, reference, excess, tuple(per_layer))


def extract_network(net: FluxNetwork, epsilon: float, a: float) -> np.ndarray:
    """Indices of pipes carrying flux strictly above eps / (a - 1)."""
    if not a > 1:
        raise ValueError("extraction threshold needs a > 1")
    return np.flatnonzero(net.flux > epsilon / (a - 1))


def nondimensionalize(params: ModelParams, L: float) -> tuple[ModelParams, float]:
    """Map a problem of height ``L`` and density ``m`` to unit height and density.

    Returns the rescaled parameters (side ``ell / L``, density 1) and the factor
    by which energies of the rescaled problem must be multiplied.
    """
    if not L > 0:
        raise ValueError("height L must be positive")
    n, m = params.n, params.density
    mass_scale = L ** (n - 1) * m
    if params.is_up:
        eps = params.epsilon / mass_scale
        scale = L * mass_scale
    else:
        eps = params.epsilon
        scale = mass_scale ** (1.0 - eps) * L
    scaled = ModelParams(params.model, eps, params.a, n, params.ell / L, 1.0)
    return scaled, scale
