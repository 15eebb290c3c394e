import numpy as np
import pytest

from vppfra.inverse import MineRecord, build_inverse_step, solve_inverse_step
from vppfra.inverse.step import scale_big_m, warm_start

from conftest import mine_record


@pytest.fixture(scope="module")
def record(tiny_data):
    return mine_record(tiny_data, 0, "tiny")


def test_truth_plugged_in_gives_zero_objective(tiny_kkt, tiny_truth, record):
    prog = build_inverse_step(tiny_kkt, record, tiny_truth.values, 0.0)
    v = warm_start(prog, tiny_truth.values)
    assert v is not None
    assert prog.true_objective(v) <= 1e-6


def test_rho_zero_step_reaches_zero_loss(tiny_kkt, tiny_truth, record):
    prog = build_inverse_step(tiny_kkt, record, 0.5 * (tiny_truth.lo + tiny_truth.hi), 0.0)
    res = solve_inverse_step(prog, method="milp")
    assert res.certified
    assert res.loss <= 1e-5
    assert np.all(res.xi >= tiny_truth.lo) and np.all(res.xi <= tiny_truth.hi)


def test_huge_rho_keeps_previous_parameters(tiny_kkt, tiny_truth, record):
    prev = 0.5 * (tiny_truth.lo + tiny_truth.hi)
    prog = build_inverse_step(tiny_kkt, record, prev, 1e9)
    res = solve_inverse_step(prog, method="milp")
    np.testing.assert_allclose(res.xi, prev, atol=1e-3 * np.max(tiny_truth.hi - tiny_truth.lo))


def test_unreachable_observations_leave_a_positive_loss(tiny_kkt, tiny_truth, record):
    scaled = MineRecord(record.price, 10 * record.bc_obs, 10 * record.grid_obs)
    prog = build_inverse_step(tiny_kkt, scaled, tiny_truth.values, 0.0)
    res = solve_inverse_step(prog, method="milp")
    assert res.loss > 1.0
    r = tiny_kkt.residuals(res.x, res.lam, res.mu, res.xi, prog.objective)
    assert r["primal_eq"] <= 1e-6 and r["primal_ineq"] <= 1e-6


def test_milp_solution_is_an_optimal_dispatch(tiny_kkt, tiny_truth, tiny_data):
    prog = build_inverse_step(tiny_kkt, mine_record(tiny_data, 1, "tiny"), tiny_truth.midpoint().values, 1.0)
    res = solve_inverse_step(prog, method="milp")
    assert tiny_kkt.strong_duality_gap(res.x, res.lam, res.mu, res.xi, prog.objective) <= 1e-5


def test_doubling_big_m_does_not_change_the_optimum(tiny_kkt, tiny_truth, tiny_data):
    prog = build_inverse_step(tiny_kkt, mine_record(tiny_data, 2, "tiny"), tiny_truth.midpoint().values, 1.0)
    a = solve_inverse_step(prog, method="milp")
    b = solve_inverse_step(scale_big_m(prog, 2.0), method="milp")
    assert abs(a.objective - b.objective) <= 1e-6 * max(1.0, abs(a.objective)) + 1e-6


def test_local_method_matches_branch_and_bound_on_tiny(tiny_kkt, tiny_truth, tiny_data):
    for r in range(3):
        prog = build_inverse_step(tiny_kkt, mine_record(tiny_data, r, "tiny"), tiny_truth.midpoint().values, 1.0)
        start = prog.true_objective(warm_start(prog, prog.xi_prev))
        exact = solve_inverse_step(prog, method="milp")
        local = solve_inverse_step(prog, method="local")
        assert local.method == "local"
        # same data fit; only the proximal part may be slightly larger
        assert local.loss <= exact.loss + 1e-5
        assert local.objective - exact.objective <= 1e-3 * start
        # the local point is a certified optimal dispatch at its parameters
        assert tiny_kkt.strong_duality_gap(local.x, local.lam, local.mu, local.xi, prog.objective) <= 1e-5


def test_auto_uses_branch_and_bound_on_small_programs(tiny_kkt, tiny_truth, record):
    prog = build_inverse_step(tiny_kkt, record, tiny_truth.values, 1.0)
    assert solve_inverse_step(prog).method == "milp"


def test_horizon_mismatch_is_rejected(tiny_kkt, tiny_truth):
    bad = MineRecord(np.ones(2), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        build_inverse_step(tiny_kkt, bad, tiny_truth.values, 1.0)
