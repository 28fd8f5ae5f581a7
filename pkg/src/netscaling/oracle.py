"""Independent oracles for small instances.

Nothing here reuses the closed forms of :mod:`netscaling.core`; energies are
rebuilt from particle paths and quadrature, W1 from the monotone coupling, and
branched transport trees by exhaustive topology search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core import CellKind, CellSpec, Model, ModelParams
from .errors import ModelError
from .quadrature import adaptive_simpson, composite_simpson, sqrt_antiderivative

MAX_SINKS = 4


# --- W1 between a uniform segment and atoms -------------------------------

def _block_cost(lo: float, xs: np.ndarray, lengths: np.ndarray, t: float, density: float) -> float:
    """Cost of sending consecutive sub-intervals starting at ``lo`` to the atoms ``xs``."""
    ends = lo + np.concatenate(([0.0], np.cumsum(lengths)))
    total = 0.0
    for x, u, v in zip(xs, ends[:-1], ends[1:]):
        total += sqrt_antiderivative(v - x, t) - sqrt_antiderivative(u - x, t)
    return density * total


def w1_segment_to_atoms(start: float, positions: Sequence[float], masses: Sequence[float],
                        offset: float, density: float = 1.0) -> float:
    """W1 from density ``density`` on [start, start + M/density] to atoms at height ``offset``.

    The segment is fixed; atoms are served in left-to-right order, which is the
    monotone coupling and optimal for a cost convex in horizontal displacement.
    """
    xs = np.asarray(positions, float)
    ms = np.asarray(masses, float)
    if np.any(ms <= 0):
        raise ValueError("atom masses must be positive")
    order = np.argsort(xs, kind="stable")
    return _block_cost(start, xs[order], ms[order] / density, abs(offset), density)


def _optimal_start(xs, lengths, t, density):
    span = float(lengths.sum())
    lo_guess = float(xs.min()) - span
    hi_guess = float(xs.max())
    res = minimize_scalar(_block_cost, bounds=(lo_guess, hi_guess), method="bounded",
                          args=(xs, lengths, t, density), options={"xatol": 1e-13})
    return float(res.x)


def w1_segment_to_atoms_exact(positions: Sequence[float], masses: Sequence[float], offset: float,
                              density: float = 1.0, segment_mass: float | None = None,
                              return_plan: bool = False):
    """Smallest W1 from any measure of density at most ``density`` on a line to the atoms.

    Every atom needs a preimage of length mass/density. The best preimages are
    centred on their atoms unless they collide; colliding blocks are merged and
    the merged block is re-placed by a convex 1D search (pool-adjacent-violators).
    """
    xs = np.asarray(positions, float)
    ms = np.asarray(masses, float)
    if xs.shape != ms.shape or xs.size == 0:
        raise ValueError("need matching, non-empty positions and masses")
    if np.any(ms <= 0):
        raise ValueError("atom masses must be positive")
    if segment_mass is not None and not math.isclose(segment_mass, ms.sum(), rel_tol=1e-12):
        raise ValueError(f"mass mismatch: segment {segment_mass} vs atoms {ms.sum()}")
    t = abs(float(offset))
    order = np.argsort(xs, kind="stable")
    xs, lengths = xs[order], ms[order] / density

    blocks: list[list] = []  # [first index, last index, start]
    for i in range(xs.size):
        blocks.append([i, i, xs[i] - lengths[i] / 2])
        while len(blocks) > 1:
            prev, cur = blocks[-2], blocks[-1]
            prev_end = prev[2] + lengths[prev[0]:prev[1] + 1].sum()
            if prev_end <= cur[2] + 1e-15:
                break
            lo, hi = prev[0], cur[1]
            blocks[-2:] = [[lo, hi, _optimal_start(xs[lo:hi + 1], lengths[lo:hi + 1], t, density)]]
    value = sum(_block_cost(b[2], xs[b[0]:b[1] + 1], lengths[b[0]:b[1] + 1], t, density) for b in blocks)
    if return_plan:
        return value, [(b[2], b[2] + lengths[b[0]:b[1] + 1].sum()) for b in blocks]
    return value


def w1_discrete_assignment(sources: np.ndarray, targets: np.ndarray) -> float:
    """Brute-force W1 between two equal-size equal-weight point clouds in the plane."""
    from scipy.optimize import linear_sum_assignment

    cost = np.linalg.norm(sources[:, None, :] - targets[None, :, :], axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum()) / len(sources)


# --- branched transport brute force -----------------------------------------

@dataclass(frozen=True)
class SmallInstance:
    source: tuple[tuple[float, ...], float]
    sinks: tuple[tuple[tuple[float, ...], float], ...]
    params: ModelParams

    def __post_init__(self):
        pos, mass = self.source
        object.__setattr__(self, "source", (tuple(map(float, pos)), float(mass)))
        object.__setattr__(self, "sinks", tuple((tuple(map(float, p)), float(m)) for p, m in self.sinks))
        if not self.sinks:
            raise ValueError("need at least one sink")
        if any(m <= 0 for _, m in self.sinks) or mass <= 0:
            raise ValueError("masses must be positive")
        total = sum(m for _, m in self.sinks)
        if not math.isclose(total, float(mass), rel_tol=1e-12):
            raise ValueError(f"sink masses sum to {total}, source has {mass}")


def rooted_topologies(labels: Sequence[int]):
    """All rooted full binary trees with the given leaf labels, as nested tuples."""
    labels = list(labels)
    if len(labels) == 1:
        yield labels[0]
        return
    first, rest = labels[0], labels[1:]
    # split so that the part containing ``first`` is the left subtree: no duplicates
    for r in range(0, len(rest)):
        for combo in itertools.combinations(rest, r):
            left = [first, *combo]
            right = [x for x in rest if x not in combo]
            for lt in rooted_topologies(left):
                for rt in rooted_topologies(right):
                    yield (lt, rt)


def _topology_code(tree) -> str:
    if isinstance(tree, int):
        return str(tree)
    return "(" + _topology_code(tree[0]) + "," + _topology_code(tree[1]) + ")"


@dataclass
class TreeResult:
    energy: float
    topology: str
    nodes: np.ndarray  # 0 = source, 1..k = sinks, then branch points
    edges: list[tuple[int, int, float]]  # (parent, child, flux)
    iterations: int


def _fermat_point(points: np.ndarray, weights: np.ndarray, start: np.ndarray,
                  tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, int]:
    """Weighted geometric median by Weiszfeld, with the vertex optimality test."""
    for j in range(len(points)):
        diff = points[j] - np.delete(points, j, axis=0)
        dist = np.linalg.norm(diff, axis=1)
        keep = dist > 1e-14
        pull = (np.delete(weights, j)[keep, None] * diff[keep] / dist[keep, None]).sum(axis=0)
        if np.linalg.norm(pull) <= weights[j]:
            return points[j].copy(), 0
    y = start.copy()
    for it in range(1, max_iter + 1):
        d = np.maximum(np.linalg.norm(points - y, axis=1), 1e-14)
        coef = weights / d
        y_new = (coef[:, None] * points).sum(axis=0) / coef.sum()
        if np.linalg.norm(y_new - y) <= tol:
            return y_new, it
        y = y_new
    return y, max_iter


def _tree_energy(pos, edges, expo):
    return sum(f ** expo * float(np.linalg.norm(pos[u] - pos[v])) for u, v, f in edges)


def _build_edges(tree, masses, k):
    """Edges of a rooted topology; branch points are numbered from k + 1."""
    edges = []
    counter = [k + 1]

    def visit(node):
        if isinstance(node, int):
            return node, masses[node - 1]
        me = counter[0]
        counter[0] += 1
        flux = 0.0
        for child in node:
            cid, cf = visit(child)
            edges.append((me, cid, cf))
            flux += cf
        return me, flux

    root, total = visit(tree)
    edges.append((0, root, total))
    return edges, counter[0]


def _joint_reweighting(pos, edges, expo, steiner, tol, max_iter):
    """Move all branch points at once by majorise-minimise on a smoothed energy.

    For a fixed topology the energy is a convex sum of weighted norms, but
    coordinate-wise Weiszfeld can stall at a kink where two or more pieces
    meet. Replacing |d| by sqrt(|d|^2 + delta^2) gives a smooth convex
    problem whose quadratic majoriser is a weighted Laplacian solve; delta is
    shrunk geometrically so the iterate tracks the nonsmooth minimiser. The
    result only seeds the coordinate sweeps, so each stage is capped.
    """
    index = {v: i for i, v in enumerate(steiner)}
    m = len(steiner)
    delta = 1e-2 * max(1.0, float(np.ptp(pos, axis=0).max()))
    while delta > 1e-13:
        for _ in range(min(max_iter, 200)):
            lap = np.zeros((m, m))
            rhs = np.zeros((m, pos.shape[1]))
            for u, v, f in edges:
                c = f ** expo / math.sqrt(float(np.sum((pos[u] - pos[v]) ** 2)) + delta * delta)
                for a, b in ((u, v), (v, u)):
                    if a in index:
                        lap[index[a], index[a]] += c
                        if b in index:
                            lap[index[a], index[b]] -= c
                        else:
                            rhs[index[a]] += c * pos[b]
            new = np.linalg.solve(lap, rhs)
            step = float(np.abs(new - pos[steiner]).max())
            pos[steiner] = new
            if step <= max(tol, delta * 1e-2):
                break
        delta *= 0.1
    return pos


def _optimise_tree(tree, inst: SmallInstance, tol: float, max_iter: int) -> TreeResult:
    k = len(inst.sinks)
    masses = [m for _, m in inst.sinks]
    edges, count = _build_edges(tree, masses, k)
    expo = 1.0 - inst.params.epsilon
    pos = np.zeros((count, len(inst.source[0])))
    pos[0] = inst.source[0]
    for i, (p, _) in enumerate(inst.sinks, start=1):
        pos[i] = p
    nbrs: dict[int, list[tuple[int, float]]] = {v: [] for v in range(k + 1, count)}
    leaves_under: dict[int, list[int]] = {}
    for u, v, f in edges:
        w = f ** expo
        if u in nbrs:
            nbrs[u].append((v, w))
        if v in nbrs:
            nbrs[v].append((u, w))

    def collect(v):
        if v <= k:
            return [v]
        if v not in leaves_under:
            leaves_under[v] = [x for u, c, _ in edges if u == v for x in collect(c)]
        return leaves_under[v]

    steiner = list(range(k + 1, count))
    for v in steiner:  # start halfway between the source and the subtree centroid
        pos[v] = 0.5 * (pos[0] + pos[collect(v)].mean(axis=0))

    pos = _joint_reweighting(pos, edges, expo, steiner, tol, max_iter)
    energy = _tree_energy(pos, edges, expo)
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        for v in steiner:
            pts = np.array([pos[u] for u, _ in nbrs[v]])
            ws = np.array([w for _, w in nbrs[v]])
            pos[v], _ = _fermat_point(pts, ws, pos[v], tol, max_iter)
        # move clusters of coincident branch points together; a single-node
        # move cannot leave a point where two branch points are stuck on each other
        for v in steiner:
            cluster = {v} | {u for u in steiner if np.linalg.norm(pos[u] - pos[v]) <= 1e-12}
            if len(cluster) == 1:
                continue
            ext = [(u, f ** expo) for a, b, f in edges for x, u in ((a, b), (b, a))
                   if x in cluster and u not in cluster]
            pts = np.array([pos[u] for u, _ in ext])
            ws = np.array([w for _, w in ext])
            new, _ = _fermat_point(pts, ws, pos[v], tol, max_iter)
            for u in cluster:
                pos[u] = new
        new_energy = _tree_energy(pos, edges, expo)
        if energy - new_energy <= tol * max(1.0, new_energy):
            energy = min(energy, new_energy)
            break
        energy = new_energy
    return TreeResult(energy, _topology_code(tree), pos, edges, sweeps)


def bt_bruteforce(inst: SmallInstance, tol: float = 1e-10, max_iter: int = 10_000) -> TreeResult:
    """Best branched transport tree from one source to at most four sinks."""
    if inst.params.model is not Model.BranchedTransport:
        raise ModelError("bt_bruteforce evaluates the branched transport functional only")
    if not 0 <= inst.params.epsilon < 1:
        raise ValueError("need 0 <= epsilon < 1")
    k = len(inst.sinks)
    if k > MAX_SINKS:
        raise ValueError(f"at most {MAX_SINKS} sinks supported, got {k}")
    if k == 1:
        pos = np.array([inst.source[0], inst.sinks[0][0]], float)
        f = inst.sinks[0][1]
        e = f ** (1 - inst.params.epsilon) * float(np.linalg.norm(pos[1] - pos[0]))
        return TreeResult(e, "1", pos, [(0, 1, f)], 0)
    best = None
    for tree in rooted_topologies(range(1, k + 1)):
        res = _optimise_tree(tree, inst, tol, max_iter)
        if best is None or (res.energy, res.topology) < (best.energy, best.topology):
            best = res
    return best


def straight_line_cost(inst: SmallInstance) -> float:
    src = np.asarray(inst.source[0])
    return sum(m * float(np.linalg.norm(np.asarray(p) - src)) for p, m in inst.sinks)


# --- cell energies by per-fiber quadrature ---------------------------------

def _rate(m: float, params: ModelParams) -> float:
    if params.model is Model.UrbanPlanning:
        return min(params.a * m, m + params.epsilon)
    return m ** (1.0 - params.epsilon) if m > 0 else 0.0


def _price(m: float, params: ModelParams) -> float:
    """Urban planning cost per unit mass and length, a once the flux has dropped to zero."""
    return params.a if m <= 0 else min(params.a, 1.0 + params.epsilon / m)


def _integrate(g, lo, hi, tol, panels, breakpoints=()):
    if panels is None:
        return adaptive_simpson(g, lo, hi, tol=tol, breakpoints=breakpoints)
    return composite_simpson(g, lo, hi, panels)


def _elementary_by_fibers(cell: CellSpec, params: ModelParams, tol: float, panels) -> float:
    n = cell.n
    base = np.asarray(cell.base, float)
    total = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=n - 1):
        tip = base.copy()
        tip[:-1] += np.asarray(signs) * cell.width / 4
        tip[-1] += cell.height

        velocity = tip - base  # gamma(s) = base + s * velocity on s in [0, 1]
        speed = float(np.sqrt(np.dot(velocity, velocity)))
        total += _integrate(lambda s, v=speed: _rate(cell.flux, params) * v, 0.0, 1.0, tol, panels)
    return total


def _wasserstein_flat_2d(cell: CellSpec, params: ModelParams, tol: float, panels) -> float:
    """Particles spread from the atom along the face; the flux at x counts those still beyond x."""
    half = cell.width / 2
    rho = 2 * cell.flux / cell.width  # total mass 2f on a face of width w

    def flux_at(x):
        return rho * (half - abs(x))

    kink = []
    if params.a > 1 and params.epsilon > 0:
        m_star = params.epsilon / (params.a - 1)
        if m_star < rho * half:
            kink = [half - m_star / rho]

    inner_tol = tol * 1e-3

    def path_cost(y):
        # cost per unit mass of a particle landing at |y| = y
        return _integrate(lambda x: _price(flux_at(x), params),
                          0.0, y, inner_tol, panels, [p for p in kink if p < y])

    one_side = _integrate(lambda y: rho * path_cost(y), 0.0, half, tol, panels, kink)
    return 2 * one_side


def _wasserstein_lifted(cell: CellSpec, params: ModelParams, tol: float, panels) -> float:
    """Every particle flies straight from the atom to its landing point at off-network price a."""
    d = cell.n - 1
    if d > 2:
        raise ValueError("lifted Wasserstein oracle supports n <= 3")
    half = cell.width / 2
    rho = 2 ** d * cell.flux / cell.width ** d
    a = params.a

    if d == 1:
        return 2 * _integrate(lambda y: rho * a * math.hypot(y, cell.height), 0.0, half, tol, panels)
    inner = lambda y1: _integrate(lambda y2: math.sqrt(y1 * y1 + y2 * y2 + cell.height ** 2),
                                  0.0, half, tol * 1e-3, panels)
    return 4 * rho * a * _integrate(inner, 0.0, half, tol, panels)


def cell_energy_quadrature(cell: CellSpec, params: ModelParams, tol: float = 1e-12,
                           panels: int | None = None) -> float:
    """Cell energy from the particle picture; ``panels`` switches to fixed-step Simpson."""
    if cell.width == 0 and cell.height == 0:
        return 0.0
    if cell.kind is CellKind.Elementary:
        return _elementary_by_fibers(cell, params, tol, panels)
    if params.model is not Model.UrbanPlanning:
        raise ModelError("Wasserstein cells exist only for urban planning")
    if cell.n == 2 and cell.height == 0:
        return _wasserstein_flat_2d(cell, params, tol, panels)
    return _wasserstein_lifted(cell, params, tol, panels)
