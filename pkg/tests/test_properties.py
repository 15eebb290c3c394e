"""Invariant suites over randomised small plants."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from vppfra.datagen import generate_history
from vppfra.dispatch import build_lp, dispatch, solve_lp
from vppfra.errors import SolverError
from vppfra.fra import assess_region
from vppfra.inverse import ParameterVector, build_inverse_step, derive_kkt, solve_inverse_step
from vppfra.inverse.step import scale_big_m
from vppfra.synthetic import random_small_vpp

from conftest import mine_record

SUITE = settings(max_examples=100, deadline=None, derandomize=True,
                 suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(min_value=0, max_value=10**6)


def _tol(x):
    return 1e-6 * (1.0 + np.max(np.abs(x)))


@SUITE
@given(seeds)
def test_storage_conservation(seed):
    vpp = random_small_vpp(seed)
    mine = vpp.mines[0]
    sol = dispatch(mine)
    dt = mine.time.interval_hours
    for silo in mine.silos:
        m = sol[f"m_silo.{silo.node_id}"]
        inflow = sum(sol[f"sigma.{bc.id}"] for bc in mine.bc_links if bc.to_node == silo.node_id)
        outflow = sum(sol[f"sigma.{bc.id}"] for bc in mine.bc_links if bc.from_node == silo.node_id)
        np.testing.assert_allclose(np.diff(m), inflow - outflow, atol=_tol(m))
        assert m[0] == pytest.approx(silo.level_start) and m[-1] == pytest.approx(silo.level_end)
        assert np.all(m >= silo.capacity_min - 1e-7) and np.all(m <= silo.capacity_max + 1e-7)
    for st_, e, c, d in ((mine.phs, "e_phs", "p_phsc", "p_phsd"), (mine.tst, "e_tst", "h_tstc", "h_tstd")):
        E = sol[e]
        expect = st_.retention * E[:-1] + st_.efficiency * dt * (sol[c] - sol[d])
        np.testing.assert_allclose(E[1:], expect, atol=_tol(E))
        assert E[0] == pytest.approx(st_.energy_start) and E[-1] == pytest.approx(st_.energy_end)
    # all coal demanded reaches the plant
    to_cpp = [bc for bc in mine.bc_links if bc.to_node == "cpp"]
    delivered = dt * sum(sol[f"q_bc.{bc.id}"].sum() for bc in to_cpp)
    assert delivered == pytest.approx(mine.profiles.cpp_demand, rel=1e-7, abs=1e-6)


@SUITE
@given(seeds)
def test_energy_balance_residuals(seed):
    vpp = random_small_vpp(seed)
    mine = vpp.mines[0]
    sol = dispatch(mine)
    prof = mine.profiles
    supply = sol["p_g"] + sol["p_pv"] + sol["p_wt"] + sol["p_phsd"] + sol["p_chp"]
    demand = np.asarray(prof.elec_load) + sol["p_phsc"] + sol["p_wshp"]
    demand = demand + sum(sol[f"p_bc.{bc.id}"] for bc in mine.bc_links)
    np.testing.assert_allclose(supply, demand, atol=_tol(demand))
    heat = sol["h_chp"] + sol["h_wshp"] + sol["h_tstd"] - sol["h_tstc"]
    np.testing.assert_allclose(heat, prof.heat_load, atol=_tol(heat))
    for bc in mine.bc_links:
        p = sol[f"p_bc.{bc.id}"]
        law = bc.cof * (bc.theta2 * bc.speed + (bc.theta4 + bc.speed / 3.6) * sol[f"q_bc.{bc.id}"])
        np.testing.assert_allclose(p, law, atol=_tol(p))
    r = sol.solution.residuals(sol.lp)
    assert max(r.values()) <= 1e-6 * (1 + abs(sol.objective_value))


@SUITE
@given(seeds)
def test_true_region_envelopes_records(seed):
    vpp = random_small_vpp(seed)
    ds = generate_history(vpp, n=2, seed=seed, spread=0.3)
    region = assess_region(vpp)
    for rec in ds.records:
        bc, grid = rec.bc_total_obs["r"], rec.grid_obs["r"]
        tol = _tol(region.grid_max)
        assert np.all(bc <= region.bc_max + tol) and np.all(bc >= region.bc_min - tol)
        assert np.all(grid <= region.grid_max + tol) and np.all(grid >= region.grid_min - tol)
    assert np.all(region.bc_min <= region.bc_max) and np.all(region.grid_min <= region.grid_max)


@SUITE
@given(seeds, st.integers(min_value=0, max_value=9), st.floats(min_value=1.0, max_value=200.0))
def test_support_monotone_under_box_enlargement(seed, which, amount):
    vpp = random_small_vpp(seed)
    truth = ParameterVector.from_vpp(vpp)
    bounds = [n for n in truth.names if "theta2" not in n]
    name = bounds[which % len(bounds)]
    wider = truth.copy()
    wider.values[wider.index(name)] += amount if name.endswith("max") or "_max." in name else -amount
    a, b = assess_region(vpp, truth), assess_region(vpp, wider)
    tol = 1e-6 * (1 + np.abs(a.grid_max).max())
    assert np.all(b.bc_max >= a.bc_max - tol) and np.all(b.grid_max >= a.grid_max - tol)
    assert np.all(b.bc_min <= a.bc_min + tol) and np.all(b.grid_min <= a.grid_min + tol)


@SUITE
@given(seeds)
def test_big_m_constants_never_bind(seed):
    """Slacks and multipliers of optimal dispatches across the box stay strictly below their constants."""
    vpp = random_small_vpp(seed)
    truth = ParameterVector.from_vpp(vpp)
    kkt = derive_kkt(build_lp(vpp.mines[0]), truth.lo, truth.hi)
    rng = np.random.default_rng(seed)
    for xi in [truth.values, *rng.uniform(truth.lo, truth.hi, size=(3, len(truth)))]:
        lp = kkt.lp.with_rhs(kkt.b0 + kkt.Bx @ xi, kkt.h0 + kkt.Hx @ xi)
        try:
            sol = solve_lp(lp)
        except SolverError:
            continue
        slack = lp.ineq_rhs - lp.ineq_matrix @ sol.primal
        assert np.all(slack < kkt.primal_m / 2)
        assert np.all(sol.ineq_duals < kkt.dual_m(lp.objective) / 2)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_doubling_big_m_on_random_plants(seed):
    vpp = random_small_vpp(seed, horizon=3)
    truth = ParameterVector.from_vpp(vpp)
    kkt = derive_kkt(build_lp(vpp.mines[0]), truth.lo, truth.hi)
    ds = generate_history(vpp, n=1, seed=seed, spread=0.3)
    prog = build_inverse_step(kkt, mine_record(ds, 0, "r"), truth.midpoint().values, 1.0)
    a = solve_inverse_step(prog, method="milp", time_limit=120)
    b = solve_inverse_step(scale_big_m(prog, 2.0), method="milp", time_limit=120)
    assert a.certified and b.certified
    assert abs(a.objective - b.objective) <= 1e-6 * max(1.0, abs(a.objective))
