import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netscaling.core import (CellKind, CellSpec, FluxNetwork, MeasureSpec, ModelParams, bt_cost_rate,
                             coalesce, elementary_cell_energy, extract_network, network_energy,
                             nondimensionalize, series, union, up_cost_rate, wasserstein_cell_energy)
from netscaling.errors import ConservationError, GlueError, ModelError

UP = ModelParams("up", 0.1, 2.0, 2)
BT = ModelParams("bt", 0.1, n=2)


def pipe(z0=0.0, z1=1.0, mass=1.0, x=0.0, n=2):
    lo = [x] + [0.0] * (n - 2) + [z0]
    hi = [x] + [0.0] * (n - 2) + [z1]
    return FluxNetwork(np.array([lo, hi]), edges=[[0, 1]], flux=[mass],
                       sources=[0], source_mass=[mass], sinks=[1], sink_mass=[mass])


# cost densities ----------------------------------------------------------------

@pytest.mark.parametrize("m, expected", [(0.5, 1.2), (0.0, 2.0), (0.01, 2.0)])
def test_up_cost_rate_examples(m, expected):
    assert up_cost_rate(m, 0.1, 2.0) == pytest.approx(expected, rel=1e-15)


def test_bt_cost_rate_examples():
    assert bt_cost_rate(1.0, 0.3) == 1.0
    assert bt_cost_rate(0.5, 0.1) == pytest.approx(math.exp(0.1 * math.log(2)), rel=1e-15)
    assert bt_cost_rate(0.5, 0.1) == pytest.approx(1.0718, abs=1e-4)
    assert bt_cost_rate(0.0, 0.1) == math.inf


@given(st.floats(1e-9, 10), st.floats(1e-9, 10), st.floats(1e-6, 1), st.floats(1.0001, 50))
def test_up_rate_monotone_and_consistent(m1, m2, eps, a):
    lo, hi = sorted((m1, m2))
    assert up_cost_rate(hi, eps, a) <= up_cost_rate(lo, eps, a)
    assert m1 * up_cost_rate(m1, eps, a) == pytest.approx(min(a * m1, m1 + eps), rel=1e-12)


@given(st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(1e-3, 1))
def test_bt_rate_strictly_decreasing(m1, m2, eps):
    if abs(m1 - m2) < 1e-6 * max(m1, m2):
        return
    lo, hi = sorted((m1, m2))
    assert bt_cost_rate(hi, eps) < bt_cost_rate(lo, eps)


# params --------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams("up", 0.1, 1.0)
    with pytest.raises(ValueError):
        ModelParams("bt", 1.5)
    with pytest.raises(ValueError):
        ModelParams("up", -0.1)
    with pytest.raises(ValueError):
        ModelParams("up", 0.1, n=1)
    assert ModelParams("bt", 0.2, a=0.5).a == 0.5  # ignored, not validated


def test_measure_spec():
    m = MeasureSpec.uniform_hyperface(2.0, 0.0, 0.5, n=3)
    assert m.total_mass == pytest.approx(2.0)
    atoms = MeasureSpec.atoms([[0, 1], [1, 1]], [0.2, 0.3])
    assert atoms.total_mass == pytest.approx(0.5)
    with pytest.raises(ValueError):
        MeasureSpec.atoms([[0, 1], [0, 1]], [0.2, 0.3])
    with pytest.raises(ValueError):
        MeasureSpec.atoms([[0, 1]], [0.0])


# cells -----------------------------------------------------------------------

def test_elementary_cell_examples():
    cell = CellSpec((0.0, 0.0), 1.0, 1.0, 0.5)
    assert elementary_cell_energy(cell, UP) == pytest.approx(2 * 0.6 * math.sqrt(17) / 4, rel=1e-14)
    assert elementary_cell_energy(cell, UP) == pytest.approx(1.23693, abs=1e-5)
    assert elementary_cell_energy(cell, BT) == pytest.approx(2 * 0.5 ** 0.9 * math.sqrt(17) / 4, rel=1e-14)
    assert elementary_cell_energy(cell, BT) == pytest.approx(1.10476, abs=1e-5)
    straight = CellSpec((0.0, 0.0), 0.0, 1.0, 0.5)
    assert elementary_cell_energy(straight, ModelParams("bt", 0.0)) == pytest.approx(1.0, rel=1e-15)


def test_cell_geometry():
    cell = CellSpec((0.5, 0.5, 0.2), 0.4, 0.3, 0.1)
    assert cell.tube_length == pytest.approx(math.sqrt(2 * 0.16 / 16 + 0.09))
    lo, hi = cell.box()
    ends = cell.branch_endpoints()
    assert len(ends) == 4
    assert np.all(ends >= lo - 1e-15) and np.all(ends <= hi + 1e-15)
    with pytest.raises(ValueError):
        CellSpec((0.0,), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        elementary_cell_energy(cell, UP)  # dimension mismatch


def test_wasserstein_examples():
    flat = CellSpec((0.0, 0.0), 1.0, 0.0, 0.5, CellKind.Wasserstein)
    res = wasserstein_cell_energy(flat, UP)
    assert res.bound == pytest.approx(0.6, rel=1e-14)
    assert res.exact == pytest.approx(0.34, rel=1e-11)
    lifted = CellSpec((0.0, 0.0, 0.0), 0.5, 0.25, 0.1, CellKind.Wasserstein)
    res3 = wasserstein_cell_energy(lifted, ModelParams("up", 0.1, 2.0, 3))
    assert res3.bound == pytest.approx(0.8 * math.sqrt(0.1875), rel=1e-14)
    assert res3.bound == pytest.approx(0.34641, abs=1e-5)
    assert res3.exact <= res3.bound + 1e-12
    huge = wasserstein_cell_energy(flat, ModelParams("up", 0.1, 1 + 1e9, 2))
    assert huge.exact == pytest.approx(0.35, rel=1e-8)


def test_wasserstein_rejects_bt():
    cell = CellSpec((0.0, 0.0), 1.0, 0.0, 0.5, CellKind.Wasserstein)
    with pytest.raises(ModelError):
        wasserstein_cell_energy(cell, BT)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.floats(0.01, 2), st.floats(0.0, 1), st.floats(0.01, 1), st.floats(1e-4, 1))
def test_wasserstein_exact_below_bound(n, w, h, f, eps):
    cell = CellSpec((0.0,) * n, w, h, f, CellKind.Wasserstein)
    res = wasserstein_cell_energy(cell, ModelParams("up", eps, 1.7, n))
    assert res.exact <= res.bound + 1e-12


# networks --------------------------------------------------------------------

def test_single_pipe_energy():
    rep = network_energy(pipe(), UP)
    assert rep.total == pytest.approx(1.1, rel=1e-15)
    assert rep.excess == pytest.approx(0.1, rel=1e-14)
    assert rep.reference == pytest.approx(1.0)
    assert network_energy(FluxNetwork.empty(2), UP).total == 0.0


def test_closed_form_matches_graph_for_random_cells():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.choice([2, 3, 4]))
        params = ModelParams("up" if rng.random() < 0.5 else "bt", float(rng.uniform(0.01, 0.9)),
                             float(rng.uniform(1.1, 4)), n)
        cell = CellSpec(rng.uniform(-1, 1, n), rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1))
        rep = network_energy(FluxNetwork.from_cell(cell), params)
        assert rep.total == pytest.approx(elementary_cell_energy(cell, params), rel=1e-12)
        assert rep.total == pytest.approx(rep.reference + rep.excess, rel=1e-12)


def test_kirchhoff_violation_detected():
    bad = FluxNetwork(np.array([[0, 0], [0, 1.0]]), edges=[[0, 1]], flux=[1.0],
                      sources=[0], source_mass=[1.0], sinks=[1], sink_mass=[0.9])
    with pytest.raises(ConservationError):
        bad.check_conservation()
    with pytest.raises(ConservationError):
        network_energy(bad, UP)


def test_bt_with_diffuse_edge_rejected():
    net = FluxNetwork.from_cell(CellSpec((0.0, 0.0), 1.0, 0.0, 0.5, CellKind.Wasserstein))
    with pytest.raises(ModelError):
        network_energy(net, BT)


def test_union_examples():
    assert network_energy(union([]), UP).total == 0.0
    a, b = pipe(mass=1.0), pipe(x=1.0, mass=0.5)
    e = network_energy(union([a, b]), UP).total
    assert e == pytest.approx(network_energy(a, UP).total + network_energy(b, UP).total, rel=1e-14)
    cell = CellSpec((0.0, 0.0), 0.25, 0.5, 0.1)
    copies = [FluxNetwork.from_cell(CellSpec((0.25 * i, 0.0), 0.25, 0.5, 0.1)) for i in range(8)]
    assert network_energy(union(copies), BT).total == pytest.approx(8 * elementary_cell_energy(cell, BT), rel=1e-13)


def test_series_stacked_pipes():
    params = ModelParams("bt", 0.0)
    joined = series(pipe(0.0, 0.5), pipe(0.5, 1.0), {1: 0})
    assert network_energy(joined, params).total == pytest.approx(1.0, rel=1e-15)
    joined.check_conservation()


def test_series_glue_errors():
    with pytest.raises(GlueError) as err:
        series(pipe(0.0, 0.5), pipe(0.5, 1.0, mass=0.9), {1: 0})
    assert err.value.first_node == 1 and err.value.second_node == 0
    with pytest.raises(GlueError):
        series(pipe(0.0, 0.5), pipe(0.6, 1.0), {1: 0})
    with pytest.raises(GlueError):
        series(pipe(0.0, 0.5), pipe(0.5, 1.0), {0: 0})


def test_series_subadditive_both_cases():
    # supports meet only at the glue node: equality
    first, second = pipe(0.0, 0.5), pipe(0.5, 1.0)
    glued = series(first, second, {1: 0})
    e1, e2 = (network_energy(x, UP).total for x in (first, second))
    assert network_energy(glued, UP).total == pytest.approx(e1 + e2, rel=1e-15)

    # two parallel half-mass pipes stacked on a splitter: shared segment merges, strict inequality
    split = FluxNetwork(np.array([[0, 0], [0, 0.5], [0, 0.5]]), edges=[[0, 1], [0, 2]], flux=[0.5, 0.5],
                        sources=[0], source_mass=[1.0], sinks=[1, 2], sink_mass=[0.5, 0.5])
    top = FluxNetwork(np.array([[0, 0.5], [0, 0.5], [0, 1.0]]), edges=[[0, 2], [1, 2]], flux=[0.5, 0.5],
                      sources=[0, 1], source_mass=[0.5, 0.5], sinks=[2], sink_mass=[1.0])
    merged = series(split, top, {1: 0, 2: 1}, coalesce_nodes=True)
    separate = network_energy(split, UP).total + network_energy(top, UP).total
    assert network_energy(merged, UP).total < separate - 1e-3


def test_coalesce_merges_parallel_pipes():
    net = union([pipe(), pipe()])
    c = coalesce(net)
    assert c.num_nodes == 2 and c.num_edges == 1
    assert c.flux[0] == pytest.approx(2.0)
    c.check_conservation()


def test_reflection_reverses_flow():
    net = FluxNetwork.from_cell(CellSpec((0.5, 0.5), 0.5, 0.25, 0.2))
    mirror = net.reflected()
    assert np.allclose(mirror.positions[:, -1], 1.0 - net.positions[:, -1])
    assert np.array_equal(mirror.sources, net.sinks)
    mirror.check_conservation()
    assert network_energy(mirror, UP).total == pytest.approx(network_energy(net, UP).total, rel=1e-14)


def test_extract_network_threshold():
    net = FluxNetwork(np.array([[0, 0], [0, 1.0], [1, 0], [1, 1.0], [2, 0], [2, 1.0]]),
                      edges=[[0, 1], [2, 3], [4, 5]], flux=[0.5, 0.05, 0.1],
                      sources=[0, 2, 4], source_mass=[0.5, 0.05, 0.1],
                      sinks=[1, 3, 5], sink_mass=[0.5, 0.05, 0.1])
    assert extract_network(net, 0.1, 2.0).tolist() == [0]  # 0.1 == threshold is excluded


def test_nondimensionalize_examples():
    p, s = nondimensionalize(ModelParams("up", 0.1, 2.0, 2), 1.0)
    assert (p.epsilon, s) == (0.1, 1.0)
    p, s = nondimensionalize(ModelParams("up", 0.1, 2.0, 2, ell=2.0), 2.0)
    assert p.epsilon == pytest.approx(0.05) and s == pytest.approx(4.0) and p.ell == 1.0
    p, s = nondimensionalize(ModelParams("bt", 0.1, n=2, ell=2.0), 2.0)
    assert p.epsilon == 0.1 and s == pytest.approx(2 ** 0.9 * 2, rel=1e-14)
    assert s == pytest.approx(3.7321, abs=1e-4)


@pytest.mark.parametrize("model", ["up", "bt"])
@pytest.mark.parametrize("n", [2, 3])
def test_nondimensionalize_invariance(model, n):
    L, m = 2.5, 0.7
    params = ModelParams(model, 0.2, 1.8, n, ell=3.0, density=m)
    cell = CellSpec((0.3,) * (n - 1) + (0.4,), 0.8, 0.9, 0.6)
    big = FluxNetwork.from_cell(cell)
    scaled_params, scale = nondimensionalize(params, L)
    mass = L ** (n - 1) * m
    small = FluxNetwork(big.positions / L, edges=big.edges, flux=big.flux / mass,
                        sources=big.sources, source_mass=big.source_mass / mass,
                        sinks=big.sinks, sink_mass=big.sink_mass / mass)
    assert network_energy(big, params).total == pytest.approx(
        scale * network_energy(small, scaled_params).total, rel=1e-13)
