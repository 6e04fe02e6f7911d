import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopf.admm import AdmmConfig, run_admm
from dopf.diagnostics import (assemble_point, dumps, evaluate_centralized_feasibility, kkt_delta_epsilon,
                              objective_value, point_from_voltages, relative_objective)
from dopf.local import initialize_zhat
from dopf.network import CostPoly, Line, Network, build_admittance

from conftest import CASE9_REFERENCE_10000, bundled, one_bus, random_net_voltages, two_bus


def fake_lps(n_bus, sizes):
    return [SimpleNamespace(e_map=np.arange(s) % n_bus, size=s) for s in sizes]


# ---------------------------------------------------------------- (delta, epsilon)

def test_perfect_consensus_gives_zero(case9_lps, rng):
    v = random_net_voltages(rng, 9)
    copies = [np.concatenate([v[:9][lp.e_map], v[9:][lp.e_map]]) for lp in case9_lps]
    r = kkt_delta_epsilon(case9_lps, copies, v, 1e6)
    assert r.delta == 0.0 and r.epsilon == 0.0


def test_kkt_arithmetic_example():
    # two buses of five entries each: a = 20; z lengths 45 + 45 plus 2N = 10 gives b = 100
    lps = fake_lps(5, [5, 5])
    v = np.ones(10)
    copies = [np.ones(10), np.ones(10)]
    copies[1][3] += 1e-2
    r = kkt_delta_epsilon(lps, copies, v, 10.0, z_lengths=[45, 45])
    assert (r.a, r.b) == (20, 100)
    assert r.delta_bar == pytest.approx(1e-4, rel=1e-12)
    assert r.delta == pytest.approx(5e-6, rel=1e-12)
    assert r.epsilon == pytest.approx(1e-4, rel=1e-12)
    assert np.allclose(r.per_bus_delta, [0.0, 1e-4], rtol=1e-12, atol=0)


def test_default_lengths_count_the_local_layout(case9_lps):
    v = np.zeros(18)
    copies = [np.zeros(2 * lp.size) for lp in case9_lps]
    r = kkt_delta_epsilon(case9_lps, copies, v, 1.0)
    assert r.a == sum(2 * lp.size for lp in case9_lps)
    assert r.b == sum(6 + 2 * lp.size + 4 * (lp.size - 1) for lp in case9_lps) + 18


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 10.0, 1e3, 1e6]))
def test_ratio_identity(seed, rho):
    rng = np.random.default_rng(seed)
    lps = fake_lps(4, [3, 4, 2, 3])
    v = rng.standard_normal(8)
    copies = [rng.standard_normal(2 * lp.size) for lp in lps]
    r = kkt_delta_epsilon(lps, copies, v, rho)
    assert r.delta >= 0 and r.epsilon >= 0
    assert r.epsilon / r.delta == pytest.approx(rho * rho * r.a / r.b, rel=1e-14)


def test_internal_delta_matches_independent_path(case9, case9_lps):
    rep = run_admm(case9, AdmmConfig(max_admm_iters=20, timing=False))
    again = kkt_delta_epsilon(case9_lps, [z.v for z in rep.z], rep.v, 1e6,
                              z_lengths=[z.z.size for z in rep.z])
    assert abs(rep.delta_internal - again.delta) <= 1e-12
    assert again.delta == pytest.approx(rep.kkt.delta, rel=1e-14)
    assert again.epsilon == pytest.approx(rep.kkt.epsilon, rel=1e-14)


def test_kkt_report_serialises(case9_lps, rng):
    v = random_net_voltages(rng, 9)
    copies = [rng.standard_normal(2 * lp.size) for lp in case9_lps]
    r = kkt_delta_epsilon(case9_lps, copies, v, 1e6)
    d = json.loads(json.dumps(r.to_dict()))
    assert d["delta"] == r.delta and d["epsilon"] == r.epsilon
    assert d["per_bus_delta"] == list(r.per_bus_delta)


# ---------------------------------------------------------------- feasibility

@pytest.mark.parametrize("name", ["toy2", "case9", "case14", "case30"])
def test_forward_computed_point_satisfies_physics(name, rng):
    net = bundled(name)
    for _ in range(10):
        pt = point_from_voltages(net, random_net_voltages(rng, net.n_bus))
        rep = evaluate_centralized_feasibility(net, None, pt)
        assert rep.physics_max() <= 1e-12
        assert all(x >= 0 for x in rep.families().values())


def test_initial_linearisation_points_satisfy_physics(case9, case9_lps, rng):
    y = build_admittance(case9)
    for _ in range(10):
        v = random_net_voltages(rng, 9)
        zs = [initialize_zhat(lp, v) for lp in case9_lps]
        rep = evaluate_centralized_feasibility(case9, y, assemble_point(case9, v, zs, y))
        assert rep.physics_max() <= 1e-12


def test_voltage_violation_is_on_squared_magnitude():
    net = one_bus(shunt=0j)
    pt = point_from_voltages(net, np.array([1.2, 0.0]))
    rep = evaluate_centralized_feasibility(net, None, pt)
    assert rep.voltage_upper == pytest.approx(0.23, abs=1e-14)
    assert rep.voltage_lower == 0.0
    assert rep.worst["voltage_upper_bus"] == 0


def test_generation_bound_violation():
    net = one_bus()
    pt = point_from_voltages(net, np.array([1.0, 0.0]), pg=np.array([2.5]), qg=np.array([0.0]))
    rep = evaluate_centralized_feasibility(net, None, pt)
    assert rep.pg_bounds == pytest.approx(0.5)
    # pg no longer matches the load, which shows up as a balance residual
    assert rep.power_balance == pytest.approx(1.5)


def test_line_limit_families():
    net = two_bus()
    v = np.array([1.0, 0.95, 0.0, -0.05])
    pt = point_from_voltages(net, v)
    free = evaluate_centralized_feasibility(net, None, pt)
    assert free.line_current_limit == free.line_apparent_limit == free.line_real_limit == 0.0
    ln = net.lines[0]
    tight = Network(net.buses, (Line(0, 1, ln.y, i_max=0.01, s_max=0.01, p_max=0.01),), net.base_mva)
    rep = evaluate_centralized_feasibility(tight, None, point_from_voltages(tight, v))
    cur = abs(ln.y * complex(v[0] - v[1], v[2] - v[3]))
    assert rep.line_current_limit == pytest.approx(cur ** 2 - 1e-4, rel=1e-12)
    assert rep.line_apparent_limit > 0 and rep.line_real_limit > 0


def test_feasibility_report_json(case9, rng):
    rep = evaluate_centralized_feasibility(case9, None, point_from_voltages(case9, random_net_voltages(rng, 9)))
    back = json.loads(rep.to_json())
    assert back["voltage_upper"] == rep.voltage_upper
    assert set(back) == set(rep.families()) | {"worst"}


# ---------------------------------------------------------------- objective

def test_objective_examples():
    net = one_bus(cost=CostPoly(0.0, 0.0, 0.0))
    assert objective_value(net, [1.0]) == 0.0
    assert objective_value(one_bus(), [3.0]) == 9.0
    assert objective_value(one_bus(base=100.0), [300.0], unit="mw") == 90000.0
    assert objective_value(one_bus(base=100.0), [3.0]) == 90000.0
    with pytest.raises(ValueError):
        objective_value(one_bus(), [1.0], unit="kw")


def test_relative_objective():
    assert relative_objective(6141.3, 6135.2) == pytest.approx(6.1 / 6135.2)
    assert relative_objective(10.0, 10.0) == 0.0
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            relative_objective(1.0, bad)


def test_dumps_handles_numpy():
    s = dumps({"a": np.arange(3), "b": np.float64(0.1), "c": np.int64(2)}, indent=None)
    assert json.loads(s) == {"a": [0, 1, 2], "b": 0.1, "c": 2}
    with pytest.raises(TypeError):
        dumps({"x": object()})


# ---------------------------------------------------------------- end to end

@pytest.mark.slow
def test_final_case9_point_is_feasible(case9, case9_long):
    rep = case9_long.report
    feas = evaluate_centralized_feasibility(case9, None, assemble_point(case9, rep.v, rep.z))
    assert feas.max() <= 1e-4, feas.families()
    assert relative_objective(rep.objective, CASE9_REFERENCE_10000) <= 1e-3
