import numpy as np
import pytest
import scipy.sparse as sp

from vppfra.datagen import generate_history
from vppfra.dispatch import Hook, LpProblem, build_lp, solve_lp
from vppfra.errors import HookViolation
from vppfra.inverse import derive_kkt
from vppfra.inverse.kkt import variable_bounds


def test_true_optimum_satisfies_every_condition(tiny, default):
    for mine in (*tiny.mines, *default.mines):
        lp = build_lp(mine)
        kkt = derive_kkt(lp)
        sol = solve_lp(lp)
        xi = np.array([lp.param_values[n] for n in kkt.param_names])
        r = kkt.residuals(sol.primal, sol.eq_duals, sol.ineq_duals, xi)
        assert max(r.values()) <= 1e-6
        gap = kkt.strong_duality_gap(sol.primal, sol.eq_duals, sol.ineq_duals, xi)
        assert gap <= 1e-6 * (1 + abs(sol.objective_value))


def test_multiplier_on_slack_row_breaks_complementarity(tiny):
    lp = build_lp(tiny.mines[0])
    kkt = derive_kkt(lp)
    sol = solve_lp(lp)
    xi = np.array([lp.param_values[n] for n in kkt.param_names])
    slack = lp.ineq_rhs - lp.ineq_matrix @ sol.primal
    i = int(np.argmax(slack))
    assert slack[i] > 1e-3
    mu = sol.ineq_duals.copy()
    mu[i] = 0.1
    assert list(kkt.complementarity_violations(sol.primal, mu, xi)) == [i]


def _equality_only_lp():
    # min x0 + 2 x1  s.t.  x0 + x1 = 5 + xi
    A = sp.csr_matrix(np.array([[1.0, 1.0]]))
    return LpProblem(
        objective=np.array([1.0, 2.0]),
        eq_matrix=A,
        eq_rhs=np.array([5.0]),
        ineq_matrix=sp.csr_matrix((0, 2)),
        ineq_rhs=np.zeros(0),
        var_index={"x": np.array([0, 1])},
        param_hooks={"xi": [Hook("eq", 0, 1.0)]},
        param_values={"xi": 0.0},
        horizon=1,
    )


def test_no_inequalities_means_no_binaries():
    kkt = derive_kkt(_equality_only_lp())
    assert kkt.n_binaries == 0
    assert kkt.stationarity_rows().shape == (2, 1)


def test_hook_in_matrix_cell_is_rejected():
    lp = _equality_only_lp()
    lp.param_hooks["xi"] = [Hook("matrix", 0, 1.0)]
    with pytest.raises(HookViolation, match="right-hand-side"):
        derive_kkt(lp)


def test_hook_outside_block_is_rejected():
    lp = _equality_only_lp()
    lp.param_hooks["xi"] = [Hook("eq", 3, 1.0)]
    with pytest.raises(HookViolation):
        derive_kkt(lp)


def test_variable_bounds_contain_dispatches_over_the_box(tiny, tiny_truth):
    lp = build_lp(tiny.mines[0])
    lo, hi = variable_bounds(lp, tiny_truth.lo, tiny_truth.hi)
    rng = np.random.default_rng(0)
    for _ in range(10):
        xi = rng.uniform(tiny_truth.lo, tiny_truth.hi)
        params = dict(zip(lp.param_values, xi))
        try:
            sol = solve_lp(build_lp(tiny.mines[0], params))
        except Exception:
            continue
        assert np.all(sol.primal >= lo - 1e-6) and np.all(sol.primal <= hi + 1e-6)


def test_primal_big_m_bounds_every_slack_over_the_box(tiny, tiny_truth, tiny_kkt):
    rng = np.random.default_rng(1)
    for _ in range(10):
        xi = rng.uniform(tiny_truth.lo, tiny_truth.hi)
        lp = tiny_kkt.lp.with_rhs(tiny_kkt.b0 + tiny_kkt.Bx @ xi, tiny_kkt.h0 + tiny_kkt.Hx @ xi)
        try:
            sol = solve_lp(lp)
        except Exception:
            continue
        slack = lp.ineq_rhs - lp.ineq_matrix @ sol.primal
        assert np.all(slack <= tiny_kkt.primal_m)
        assert np.all(sol.ineq_duals <= tiny_kkt.dual_m(lp.objective))
