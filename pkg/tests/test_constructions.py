import json
import math
from pathlib import Path

import numpy as np
import pytest

from netscaling.constructions import (DEFAULT_BUDGET, Regime, excess_energy, instantiate, layer_network,
                                      plan, regime_envelope, select_regime, tail_energy)
from netscaling.core import ModelParams, network_energy
from netscaling.errors import AdmissibilityError, BudgetExceededError, InfeasiblePlanError

GOLDEN = Path(__file__).parent / "golden"


def up(eps, a=2.0, n=2, **kw):
    return ModelParams("up", eps, a, n, **kw)


def bt(eps, n=2, **kw):
    return ModelParams("bt", eps, n=n, **kw)


# plan ------------------------------------------------------------------------

def test_plan_up2d_example():
    pl = plan(up(1e-6))
    assert pl.regime is Regime.UP2D
    assert pl.w1 == pytest.approx(0.01, rel=1e-12) and pl.c_tilde == pytest.approx(1.0)
    assert pl.K == 15 == math.floor(2 + math.log2(0.01 * 1e6))
    assert (pl.alpha, pl.beta, pl.gamma, pl.delta, pl.H) == (1.5, -0.5, 0.0, 0.0, 0.0)


def test_plan_up3d_small_a_example():
    pl = plan(up(1e-6, 1.5, 3))
    assert pl.regime is Regime.UP3DSmallA
    assert pl.w1 == pytest.approx(1 / 32, rel=1e-14)
    assert pl.c_tilde == pytest.approx(0.988, abs=1e-3)
    assert pl.K == 4
    assert pl.H == pytest.approx(math.sqrt(1.5 / 0.5) * pl.w1 / 2 ** 4 / 4, rel=1e-14)


def test_plan_bt_example():
    pl = plan(bt(1e-4))
    assert pl.w1 == pytest.approx(0.01) and pl.K == 8 == 1 + math.floor(math.log2(200))
    w_K = pl.layers[-1].width
    assert w_K == pytest.approx(7.8125e-5, rel=1e-12)
    assert 1e-4 / 2 <= w_K < 1e-4
    assert 0.5 < pl.c_hat <= 1


def test_plan_large_a_regimes():
    pl = plan(up(1e-6, 10.0, 3))
    assert pl.regime is Regime.UP3DLargeA
    assert pl.K_S == math.floor(math.log2(4 * 1e-6 ** -0.25))
    assert pl.K == pl.K_S + math.floor(math.log2(math.sqrt(10.0)))
    assert all(l.height == 0 for l in pl.layers[pl.K_S:]) and pl.H == 0
    pl4 = plan(up(1e-6, 10.0, 4))
    assert pl4.regime is Regime.UPnDLargeA and pl4.gamma == pl4.delta == 0.25
    assert pl4.alpha == 2.5


def test_small_a_preferred_at_boundary():
    assert select_regime(up(1e-6, 2.0, 3)) is Regime.UP3DSmallA
    assert select_regime(up(1e-6, 2.0, 4)) is Regime.UPnDSmallA
    # small-a admissibility fails once eps > a^2(a-1)^2/64 = 1/16 -> large-a
    assert select_regime(up(0.05, 2.0, 3)) is Regime.UP3DSmallA
    assert select_regime(up(0.08, 2.0, 3)) is Regime.UP3DLargeA


def test_admissibility_errors_name_condition():
    with pytest.raises(AdmissibilityError) as err:
        plan(up(2.0))
    assert err.value.condition == "ε < min{1, ℓ³}"
    with pytest.raises(AdmissibilityError) as err:
        plan(up(0.05, 1.5, 3), Regime.UP3DSmallA)
    assert "a²(a−1)²/64" in err.value.condition
    with pytest.raises(AdmissibilityError):
        plan(bt(0.6))
    with pytest.raises(AdmissibilityError):
        plan(up(1e-6, 3.0, 3), Regime.UP3DSmallA)


def test_infeasible_k():
    # admissible, but c_tilde ~ 0.536 makes the layer count formula round down to 0
    with pytest.raises(InfeasiblePlanError, match="K=0"):
        plan(up(1.0, 2.0, 4), Regime.UPnDLargeA)


ALL_PLANS = [
    (up(1e-2), None), (up(1e-6), None), (up(1e-9), None),
    (up(1e-4, 1.5, 3), None), (up(1e-7, 1.2, 3), None), (up(1e-6, 10.0, 3), None),
    (up(1e-6, 1.5, 4), Regime.UPnDSmallA), (up(1e-6, 10.0, 4), None), (up(1e-8, 1.5, 5), None),
    (bt(1e-3), None), (bt(1e-6), None), (bt(1e-5, 3), None),
]


@pytest.mark.parametrize("params, regime", ALL_PLANS)
def test_plan_invariants(params, regime):
    pl = plan(params, regime)
    assert abs(pl.height_closure() - 1.0) <= 1e-12
    assert 0.5 < pl.c_tilde <= 1.0
    assert pl.K >= 1 and pl.H <= 0.25 and pl.alpha > 0
    assert pl.N1 * pl.w1 == pytest.approx(params.ell, rel=1e-15)
    for prev, nxt in zip(pl.layers, pl.layers[1:]):
        assert nxt.width == prev.width / 2
        assert nxt.count == 2 * prev.count
        assert nxt.z == pytest.approx(prev.z + prev.height, rel=1e-15)
    for lay in pl.layers:
        assert lay.count * lay.width == pytest.approx(params.ell, rel=1e-14)
        assert lay.flux == pytest.approx((lay.width / 2) ** (params.n - 1), rel=1e-14)
    if params.is_up:
        assert (1 - 2 ** -pl.alpha) / 4 <= pl.c <= 2 ** (pl.alpha - 1)


def test_golden_plan_json():
    doc = json.loads(plan(up(1e-2)).to_json())
    golden = json.loads((GOLDEN / "plan_up2d_eps1e-2.json").read_text())
    assert doc.keys() == golden.keys()
    for key in ("regime", "K", "K_S", "N1", "alpha", "beta", "gamma", "delta"):
        assert doc[key] == golden[key]
    for key in ("w1", "c", "c_tilde", "H"):
        assert doc[key] == pytest.approx(golden[key], rel=1e-14, abs=1e-300)
    assert len(doc["layers"]) == len(golden["layers"])
    for got, want in zip(doc["layers"], golden["layers"]):
        for key in want:
            assert got[key] == pytest.approx(want[key], rel=1e-13)
    assert doc["log_convention"]


# excess energy ---------------------------------------------------------------

def _flat_wasserstein_2d(w, f, eps, a):
    """Closed form of the flat 2D Wasserstein cell, by integrating over the mass variable."""
    m_star = eps / (a - 1)
    if f <= m_star:
        g = a * f * f / 2
    else:
        g = a * m_star ** 2 / 2 + (f * f - m_star ** 2) / 2 + eps * (f - m_star)
    return 2 * (w / 2) / f * g


def _hand_sum_up2d(pl):
    p = pl.params
    total = 0.0
    for lay in pl.layers:
        per_cell = 2 * min(p.a * lay.flux, lay.flux + p.epsilon) * math.hypot(lay.width / 4, lay.height)
        total += 2 * lay.count * per_cell
    top = pl.layer(pl.K + 1)
    total += 2 * top.count * _flat_wasserstein_2d(top.width, top.flux, p.epsilon, p.a)
    return total - p.ell


def test_up2d_excess_golden_and_hand_sum():
    pl = plan(up(1e-6))
    rep = excess_energy(pl)
    assert rep.excess == pytest.approx(0.0005047098227999711, rel=1e-12)
    assert rep.excess == pytest.approx(_hand_sum_up2d(pl), rel=1e-9)
    assert 0.1 <= rep.excess / 1e-6 ** (2 / 3) <= 100
    assert rep.total == pytest.approx(rep.reference + rep.excess, rel=1e-12)
    assert math.fsum(l.energy for l in rep.per_layer) + rep.tail == pytest.approx(rep.total, rel=1e-10)


@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-8])
def test_up2d_hand_sum(eps):
    pl = plan(up(eps, 3.0))
    assert excess_energy(pl).excess == pytest.approx(_hand_sum_up2d(pl), rel=1e-9)


def test_regression_values():
    assert excess_energy(plan(bt(1e-4))).excess == pytest.approx(0.0007224109309279937, rel=1e-12)
    assert excess_energy(plan(up(1e-4, 1.5, 3))).excess == pytest.approx(0.10715884438449978, rel=1e-10)


def test_bt_single_layer_plus_tail():
    params = bt(0.35, ell=0.6)
    pl = plan(params)
    assert pl.K == 1
    eps = params.epsilon
    w1, N1 = pl.w1, pl.N1
    f1 = w1 / 2
    layer1 = 2 * N1 * 2 * f1 ** (1 - eps) * math.hypot(w1 / 4, 0.5)
    f2, w2 = w1 / 4, w1 / 2
    first_flat = 2 * (2 * N1) * 2 * f2 ** (1 - eps) * (w2 / 4)
    tail = first_flat / (1 - 2 ** -(1 - eps))
    rep = excess_energy(pl)
    assert rep.excess == pytest.approx(layer1 + tail - params.ell, rel=1e-12)
    assert rep.tail == pytest.approx(tail, rel=1e-12)


@pytest.mark.parametrize("params, regime", ALL_PLANS)
def test_report_consistency(params, regime):
    rep = excess_energy(plan(params, regime))
    assert rep.total == pytest.approx(rep.reference + rep.excess, rel=1e-12)
    assert math.fsum(l.energy for l in rep.per_layer) + rep.tail == pytest.approx(rep.total, rel=1e-10)
    assert rep.reference == params.density * params.ell ** (params.n - 1)
    assert rep.excess > 0


# envelopes -------------------------------------------------------------------

def test_regime_envelope_examples():
    assert regime_envelope(up(1e-6)) == pytest.approx(1e-4, rel=1e-12)
    assert regime_envelope(up(1e-6, 2.0, 3)) == pytest.approx(1e-3 * (math.sqrt(2) + math.log(1e3)), rel=1e-12)
    assert regime_envelope(up(1e-6, 2.0, 3)) == pytest.approx(8.3220e-3, abs=1e-7)
    assert regime_envelope(bt(1e-4)) == pytest.approx(9.2103e-4, abs=1e-8)
    assert regime_envelope(up(0.5, 1.01)) == pytest.approx(0.01)  # min with a-1


ENVELOPE_CASES = [
    (up, dict(a=2.0, n=2), None), (up, dict(a=1.5, n=3), None), (up, dict(a=10.0, n=3), None),
    (up, dict(a=1.5, n=4), Regime.UPnDSmallA), (up, dict(a=10.0, n=4), None),
    (bt, dict(n=2), None), (bt, dict(n=3), None),
]


@pytest.mark.parametrize("make, kw, regime", ENVELOPE_CASES)
def test_envelope_sandwich(make, kw, regime):
    ratios = []
    for eps in np.geomspace(1e-4, 1e-6, 9):
        params = make(float(eps), **kw)
        ratios.append(excess_energy(plan(params, regime)).excess / regime_envelope(params))
    assert min(ratios) > 0
    assert max(ratios) / min(ratios) <= 10


# instantiation ---------------------------------------------------------------

@pytest.mark.parametrize("params, regime, layers", [
    (up(1e-2), None, 0), (up(1e-3), None, 0), (up(1e-4, 1.5, 3), Regime.UP3DSmallA, 0),
    (bt(1e-3), None, 0), (bt(1e-3), None, 3), (up(1e-3, 10.0, 3), None, 0), (up(1e-3, 1.5, 4), None, 0),
])
def test_dual_path(params, regime, layers):
    pl = plan(params, regime)
    net = instantiate(pl, layers)
    assert net.conservation_defect() <= 1e-12
    graph = network_energy(net, params)
    analytic = excess_energy(pl)
    assert graph.excess + net.truncation_energy == pytest.approx(analytic.excess, rel=1e-9)


def test_bt_truncation_is_closed_form_tail():
    pl = plan(bt(1e-3))
    net0 = instantiate(pl, 0)
    assert net0.truncation_energy == pytest.approx(tail_energy(pl, pl.K + 1), rel=1e-15)
    assert net0.truncation_energy == pytest.approx(excess_energy(pl).tail, rel=1e-15)
    net2 = instantiate(pl, 2)
    assert net2.truncation_energy == pytest.approx(tail_energy(pl, pl.K + 3), rel=1e-15)
    assert net2.truncation_energy < net0.truncation_energy


def test_mirror_symmetry():
    net = instantiate(plan(up(1e-2)))
    sources = np.sort(net.positions[net.sources], axis=0)
    sinks = np.sort(net.positions[net.sinks], axis=0)
    # UP networks end in diffuse cells; their anchors mirror each other
    lo = net.positions[net.diffuse_node[net.diffuse_orientation < 0]]
    hi = net.positions[net.diffuse_node[net.diffuse_orientation > 0]]
    mirrored = hi.copy()
    mirrored[:, -1] = 1 - mirrored[:, -1]
    assert np.allclose(np.sort(lo, axis=0), np.sort(mirrored, axis=0), atol=1e-12)
    assert len(sources) == len(sinks) == 0
    btnet = instantiate(plan(bt(1e-3)), 1)
    src = btnet.positions[btnet.sources]
    snk = btnet.positions[btnet.sinks].copy()
    snk[:, -1] = 1 - snk[:, -1]
    assert np.allclose(np.sort(src, axis=0), np.sort(snk, axis=0), atol=1e-12)


def test_layer_leaves_match_next_bases():
    pl = plan(up(1e-3))
    d = pl.params.n - 1
    for k in range(1, pl.K):
        a, b = layer_network(pl.params, pl.layer(k)), layer_network(pl.params, pl.layer(k + 1))
        assert len(a.sinks) == 2 ** d * pl.layer(k).count ** d == len(b.sources)
        leaves = np.round(a.positions[a.sinks], 12)
        bases = np.round(b.positions[b.sources], 12)
        assert {tuple(x) for x in leaves} == {tuple(x) for x in bases}


def test_instantiated_cells_stay_in_boxes():
    pl = plan(up(1e-2, 1.5, 3))
    net = instantiate(pl)
    vec = net.positions[net.edges[:, 1]] - net.positions[net.edges[:, 0]]
    for k in range(1, pl.K + 1):
        lay = pl.layer(k)
        sel = net.edge_layer == k
        assert np.all(np.abs(vec[sel, :-1]) <= lay.width / 2 + 1e-15)
        assert np.allclose(np.abs(vec[sel, -1]), lay.height)


def test_budget_exceeded():
    with pytest.raises(BudgetExceededError):
        instantiate(plan(up(1e-8)), budget=1000)
    assert DEFAULT_BUDGET == 10 ** 7
