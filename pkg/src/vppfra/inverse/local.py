"""Local solver for the proximal step on mines too large for branch and bound.

The step asks for parameters ``xi`` and a dispatch ``x`` that is optimal for
the LP at ``xi``. Optimality of ``x`` is equivalent to a zero duality gap

    c'x - phi(xi) <= 0,    phi(xi) = max_v  -(b0 + Bx xi)'lam_v - (h0 + Hx xi)'mu_v,

where ``phi`` is the optimal value function (convex, piecewise linear in
``xi``). Replacing ``phi`` by its tangent at the current iterate, which is
given by the current optimal duals, yields a convex restriction of the step.
A penalised version lets the gap open during early iterations (penalty
convex-concave procedure); the penalty grows geometrically so that late
iterates are optimal dispatches again.

Every accepted point is certified by a forward LP solve, so the returned
``x`` satisfies the optimality conditions at the returned ``xi`` and is a
feasible point of the mixed-integer program of the step.
"""

from __future__ import annotations

import logging
import time

import clarabel
import numpy as np
import scipy.sparse as sp

from ..dispatch import solve_lp
from ..errors import SolverError
from .step import InverseProgram, StepResult

log = logging.getLogger(__name__)


def _forward(prog: InverseProgram, xi: np.ndarray):
    kkt = prog.kkt
    lp = kkt.lp.with_rhs(kkt.b0 + kkt.Bx @ xi, kkt.h0 + kkt.Hx @ xi)
    return solve_lp(lp, objective=prog.objective)


class _ConvexModel:
    """Conic data shared by every convex subproblem of one step.

    Columns are ``[x, xi, t_bc, t_g, gap]``. The conic form is
    ``A v + s = b`` with ``s`` in a product of cones, as Clarabel expects.
    """

    def __init__(self, prog: InverseProgram):
        kkt, lp = prog.kkt, prog.kkt.lp
        self.prog = prog
        n, k, T = lp.n_vars, len(kkt.param_names), lp.horizon
        self.n, self.k, self.T = n, k, T
        self.N = n + k + 3
        self.A_eq = sp.hstack([lp.eq_matrix, -kkt.Bx, sp.csr_matrix((lp.eq_rhs.size, 3))], format="csr")
        self.G_in = sp.hstack([lp.ineq_matrix, -kkt.Hx, sp.csr_matrix((lp.ineq_rhs.size, 3))], format="csr")
        I = sp.identity(k, format="csr")
        z = sp.csr_matrix((k, n))
        pad = sp.csr_matrix((k, 3))
        self.box = sp.vstack([sp.hstack([z, I, pad]), sp.hstack([z, -I, pad])], format="csr")
        self.box_rhs = np.concatenate([kkt.xi_hi, -kkt.xi_lo])
        soc, soc_rhs = [], []
        for j, (M, obs) in enumerate(((prog.Mbc, prog.record.bc_obs), (prog.Mg, prog.record.grid_obs))):
            head = sp.csr_matrix(([-1.0], ([0], [n + k + j])), shape=(1, self.N))
            body = sp.hstack([-M, sp.csr_matrix((T, k + 3))], format="csr")
            soc.append(sp.vstack([head, body], format="csr"))
            soc_rhs.append(np.concatenate([[0.0], -np.asarray(obs, dtype=float)]))
        self.soc = soc
        self.soc_rhs = soc_rhs
        w2 = 1.0 / prog.xi_scale**2
        P = sp.diags(np.concatenate([np.zeros(n), prog.rho * w2, np.zeros(3)]), format="csc")
        self.P = P
        self.q_base = np.zeros(self.N)
        self.q_base[n : n + k] = -prog.rho * w2 * prog.xi_prev
        self.q_base[n + k : n + k + 2] = 1.0

    def _solve(self, blocks, rhs, cones, q):
        A = sp.vstack(blocks, format="csc")
        b = np.concatenate(rhs)
        st = clarabel.DefaultSettings()
        st.verbose = False
        st.max_iter = 400
        solver = clarabel.DefaultSolver(self.P, q, A, b, cones, st)
        res = solver.solve()
        status = str(res.status)
        if status not in ("Solved", "AlmostSolved"):
            return None, None, status
        return np.asarray(res.x), np.asarray(res.z), status

    def penalised(self, lam: np.ndarray, mu: np.ndarray, tau: float):
        """Convex step with the duality gap linearised at ``(lam, mu)``."""
        kkt = self.prog.kkt
        n, k = self.n, self.k
        w = kkt.Bx.T @ lam + kkt.Hx.T @ mu
        gap_row = np.zeros(self.N)
        gap_row[:n] = self.prog.objective
        gap_row[n : n + k] = w
        gap_row[-1] = -1.0
        gap_rhs = -(kkt.b0 @ lam + kkt.h0 @ mu)
        sign = np.zeros(self.N)
        sign[-1] = -1.0
        blocks = [self.A_eq, self.G_in, sp.csr_matrix(gap_row), sp.csr_matrix(sign), self.box, *self.soc]
        rhs = [kkt.b0, kkt.h0, [gap_rhs], [0.0], self.box_rhs, *self.soc_rhs]
        nn = kkt.h0.size + 2 + self.box_rhs.size
        cones = [
            clarabel.ZeroConeT(kkt.b0.size),
            clarabel.NonnegativeConeT(nn),
            clarabel.SecondOrderConeT(self.T + 1),
            clarabel.SecondOrderConeT(self.T + 1),
        ]
        q = self.q_base.copy()
        q[-1] = tau
        v, _, status = self._solve(blocks, rhs, cones, q)
        if v is None:
            return None, None, status
        return v[:n], v[n : n + k], status

    def restricted(self, active: np.ndarray):
        """Convex step with the rows in ``active`` held tight (exact optimality)."""
        kkt = self.prog.kkt
        n, k = self.n, self.k
        on = np.zeros(kkt.h0.size, dtype=bool)
        on[active] = True
        blocks = [self.A_eq, self.G_in[on], self.G_in[~on], self.box, *self.soc]
        rhs = [kkt.b0, kkt.h0[on], kkt.h0[~on], self.box_rhs, *self.soc_rhs]
        cones = [
            clarabel.ZeroConeT(kkt.b0.size + int(on.sum())),
            clarabel.NonnegativeConeT(int((~on).sum()) + self.box_rhs.size),
            clarabel.SecondOrderConeT(self.T + 1),
            clarabel.SecondOrderConeT(self.T + 1),
        ]
        q = self.q_base.copy()
        v, _, status = self._solve(blocks, rhs, cones, q)
        if v is None:
            return None, None, status
        return v[:n], v[n : n + k], status


def _tightest(kkt, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Move every bound-type parameter onto the nearest value that keeps ``x`` feasible.

    A parameter qualifies when it only enters inequality rows, all with the
    same sign; parameters of equality rows are left alone. Shrinking the
    feasible set around a feasible ``x`` can only shrink its duality gap.
    """
    out = xi.copy()
    act = kkt.lp.ineq_matrix @ x - kkt.h0
    H = kkt.Hx.tocsc()
    B = kkt.Bx.tocsc()
    for j in range(out.size):
        if B.indptr[j + 1] > B.indptr[j]:
            continue
        rows = H.indices[H.indptr[j] : H.indptr[j + 1]]
        coef = H.data[H.indptr[j] : H.indptr[j + 1]]
        if rows.size == 0 or not (np.all(coef > 0) or np.all(coef < 0)):
            continue
        need = act[rows] / coef
        out[j] = need.max() if coef[0] > 0 else need.min()
    return np.clip(out, kkt.xi_lo, kkt.xi_hi)


def _support(mu: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    return np.flatnonzero(mu > tol * (1.0 + np.abs(mu).max(initial=0.0)))


def _ccp(model, prog, xi, tau0, growth, max_iter, score):
    """Penalty convex-concave iterations from ``xi``.

    Returns the best certified ``(score, xi, forward_solution)``, the dispatch
    of the first convex subproblem and the number of iterations run.
    """
    kkt = prog.kkt
    sol = _forward(prog, xi)
    best = (score(xi, sol), xi, sol)
    first = None
    tau = tau0
    rounds = 0
    for rounds in range(1, max_iter + 1):
        x_new, xi_new, status = model.penalised(sol.eq_duals, sol.ineq_duals, tau)
        tau *= growth
        if xi_new is None:
            log.debug("penalised subproblem ended with %s", status)
            break
        if first is None:
            first = (x_new, xi_new)
        xi_new = np.clip(xi_new, kkt.xi_lo, kkt.xi_hi)
        try:
            sol_new = _forward(prog, xi_new)
        except SolverError:
            break
        f = score(xi_new, sol_new)
        if f < best[0]:
            best = (f, xi_new, sol_new)
        moved = np.max(np.abs(xi_new - xi) / prog.xi_scale)
        xi, sol = xi_new, sol_new
        if moved < 1e-7:
            break
    return best, first, rounds


def solve_step_local(
    prog: InverseProgram,
    max_iter: int = 8,
    tau0: float | None = None,
    growth: float = 4.0,
    kkt_tol: float = 1e-6,
    tighten: bool = True,
) -> StepResult:
    """Locally optimal proximal step; every returned point is KKT-certified.

    Args:
        prog: program from ``build_inverse_step``.
        max_iter: penalised convex subproblems per start.
        tau0: initial weight on the duality gap; defaults to the reciprocal
            of the mean energy price, i.e. one kWh of cost is worth one kW of
            misfit.
        growth: factor applied to the gap weight after every iteration.
        kkt_tol: tolerance used when accepting the final polished point.
        tighten: also start from the bounds pulled tight around the first
            data-fitting dispatch. This lets bounds that are slack at the
            previous iterate, where the value function is flat in them,
            move onto the observations.

    Raises:
        SolverError: the forward LP at the previous iterate cannot be solved.
    """
    t0 = time.perf_counter()
    kkt = prog.kkt
    model = _ConvexModel(prog)
    if tau0 is None:
        tau0 = 1.0 / max(float(np.mean(np.abs(prog.record.price))), 1e-9)

    def score(xi_, sol_):
        lb, lg = prog.loss(sol_.primal)
        return lb + lg + prog.prox(xi_)

    xi = np.clip(prog.xi_prev, kkt.xi_lo, kkt.xi_hi)
    best, first, rounds = _ccp(model, prog, xi, tau0, growth, max_iter, score)
    if tighten and first is not None:
        probe = _tightest(kkt, first[0], np.clip(first[1], kkt.xi_lo, kkt.xi_hi))
        try:
            other, _, r2 = _ccp(model, prog, probe, tau0, growth, max_iter, score)
        except SolverError:
            other, r2 = None, 0
        rounds += r2
        if other is not None and other[0] < best[0]:
            best = other

    f_best, xi_best, sol_best = best
    x_best, lam, mu = sol_best.primal, sol_best.eq_duals, sol_best.ineq_duals
    # polish: best fit on the optimal face certified by the current duals
    active = _support(mu)
    x_p, xi_p, _ = model.restricted(active)
    if x_p is not None:
        xi_p = np.clip(xi_p, kkt.xi_lo, kkt.xi_hi)
        r = kkt.residuals(x_p, lam, mu, xi_p, prog.objective)
        lb, lg = prog.loss(x_p)
        f_p = lb + lg + prog.prox(xi_p)
        scale = 1.0 + np.abs(x_p).max()
        ok = r["primal_eq"] <= kkt_tol * scale and r["primal_ineq"] <= kkt_tol * scale
        ok = ok and kkt.strong_duality_gap(x_p, lam, mu, xi_p, prog.objective) <= kkt_tol * (1 + abs(prog.objective @ x_p))
        if ok and f_p < f_best:
            f_best, xi_best, x_best = f_p, xi_p, x_p
    lb, lg = prog.loss(x_best)
    h = kkt.h0 + kkt.Hx @ xi_best
    slack = h - kkt.lp.ineq_matrix @ x_best
    z = (slack <= 1e-7 * (1 + np.abs(h))).astype(float)
    return StepResult(
        xi=xi_best,
        loss=lb + lg,
        objective=f_best,
        bound=-np.inf,
        x=x_best,
        lam=lam,
        mu=mu,
        z=z,
        oa_rounds=rounds,
        seconds=time.perf_counter() - t0,
        method="local",
    )
