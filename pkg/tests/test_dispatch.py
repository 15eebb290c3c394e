import csv
from dataclasses import replace

import numpy as np
import pytest

from vppfra.dispatch import (
    aggregate_observables,
    build_lp,
    dispatch,
    feas_tol,
    mine_param_values,
    solve_lp,
)
from vppfra.errors import Infeasible, InfeasibleStructure
from vppfra.synthetic import tiny_fixture


def test_tiny_cost_matches_hand_computation(tiny):
    # price 0.1 and conveyor O&M 0.01 per kWh; PV (20 kW) is free so always used.
    # Coal totals are fixed (silo start = end, 270 t delivered), so conveyor
    # energy is 30 + 135 for bc1 and 30 + 2 * 270 for bc2 whatever the schedule.
    sol = dispatch(tiny.mines[0])
    conveyor_kwh = (30 + 135) + (30 + 2 * 270)
    expected = 0.11 * conveyor_kwh + 0.1 * 3 * (50 - 20)
    assert sol.objective_value == pytest.approx(expected, abs=1e-7)


def test_primal_dual_solution_satisfies_optimality(tiny, default):
    for mine in (*tiny.mines, *default.mines):
        lp = build_lp(mine)
        sol = solve_lp(lp)
        r = sol.residuals(lp)
        assert max(r.values()) <= 1e-6 * (1 + abs(sol.objective_value))
        assert np.all(sol.ineq_duals >= -feas_tol(lp))


def test_aggregates_are_sums_of_named_series(tiny):
    sol = dispatch(tiny.mines[0])
    bc, grid = aggregate_observables(sol)
    np.testing.assert_allclose(bc, sol["p_bc.bc1"] + sol["p_bc.bc2"])
    np.testing.assert_allclose(grid, sol["p_g"])


def test_csv_has_canonical_header_and_one_row_per_interval(tiny, tmp_path):
    sol = dispatch(tiny.mines[0])
    path = tmp_path / "d.csv"
    sol.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "t"
    assert {"p_bc.bc1", "q_bc.bc2", "p_g", "m_silo.ms1"} <= set(rows[0])
    assert len(rows) == 1 + tiny.time.horizon_length
    col = rows[0].index("m_silo.ms1")
    # storage columns hold end-of-interval levels; the last one is the end boundary
    assert float(rows[-1][col]) == pytest.approx(10.0)


def test_excess_coal_demand_names_the_culprit_family(tiny):
    mine = tiny.mines[0]
    big = replace(mine, profiles=replace(mine.profiles, cpp_demand=1e5))
    with pytest.raises(Infeasible) as e:
        dispatch(big)
    assert "cpp_delivery" in e.value.families


def test_override_with_min_above_max_is_structural(tiny):
    with pytest.raises(InfeasibleStructure):
        build_lp(tiny.mines[0], {"bc_power_min.bc1": 100.0, "bc_power_max.bc1": 50.0})


def test_overrides_accept_prefixed_names(tiny):
    a = build_lp(tiny.mines[0], {"grid_max": 321.0})
    b = build_lp(tiny.mines[0], {"tiny.grid_max": 321.0})
    np.testing.assert_array_equal(a.ineq_rhs, b.ineq_rhs)


@pytest.mark.parametrize("delta", [-3.5, 0.25, 40.0])
def test_every_hook_moves_its_rhs_by_exactly_delta(default, delta):
    mine = default.mines[0]
    base = build_lp(mine)
    vals = mine_param_values(mine)
    for name, hooks in base.param_hooks.items():
        bumped = build_lp(mine, {name: vals[name] + delta})
        d_eq = bumped.eq_rhs - base.eq_rhs
        d_in = bumped.ineq_rhs - base.ineq_rhs
        expect_eq, expect_in = np.zeros_like(d_eq), np.zeros_like(d_in)
        for hk in hooks:
            (expect_eq if hk.kind == "eq" else expect_in)[hk.row] += hk.coef * delta
        np.testing.assert_allclose(d_eq, expect_eq, atol=1e-9)
        np.testing.assert_allclose(d_in, expect_in, atol=1e-9)
        # coefficients never depend on parameters
        assert (bumped.ineq_matrix != base.ineq_matrix).nnz == 0
        assert (bumped.eq_matrix != base.eq_matrix).nnz == 0


def test_rhs_parts_reassemble_rhs(default):
    lp = build_lp(default.mines[1])
    b0, h0, Bx, Hx, names = lp.rhs_parts()
    xi = np.array([lp.param_values[n] for n in names])
    np.testing.assert_allclose(b0 + Bx @ xi, lp.eq_rhs)
    np.testing.assert_allclose(h0 + Hx @ xi, lp.ineq_rhs)


def test_interval_length_scales_costs():
    half = tiny_fixture()
    mine = half.mines[0]
    lp1 = build_lp(mine)
    lp2 = build_lp(replace(mine, time=replace(mine.time, interval_hours=0.5)))
    np.testing.assert_allclose(lp2.objective, 0.5 * lp1.objective)
