"""One proximal inverse-optimisation step for one mine and one data record.

The program, over ``(x, xi, lam, mu, z)``, is

    min  ||bc(x) - bc_obs||_2 + ||grid(x) - grid_obs||_2 + rho/2 ||xi - xi_prev||_2^2
    s.t. KKT conditions of the dispatch LP at parameters xi,
         complementarity through binaries z and big-M constants,
         xi inside its box.

HiGHS solves mixed-integer *linear* programs only, so the two norms and the
quadratic proximal term are handled by outer approximation: every convex
term gets an epigraph variable bounded below by tangent cuts, and cuts are
added at each incumbent until the true objective and the MILP bound agree.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import highspy
import numpy as np
import scipy.sparse as sp

from ..dispatch import observable_maps, solve_lp
from ..errors import Infeasible, MipTimeout, SolverError
from .kkt import KktSystem

log = logging.getLogger(__name__)

MIP_GAP = 1e-6


@dataclass
class MineRecord:
    """Observations of one mine in one historical record."""

    price: np.ndarray
    bc_obs: np.ndarray
    grid_obs: np.ndarray


@dataclass
class InverseProgram:
    kkt: KktSystem
    record: MineRecord
    xi_prev: np.ndarray
    rho: float
    objective: np.ndarray  # dispatch cost vector for this record's price
    matrix: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    integrality: np.ndarray
    cost: np.ndarray
    layout: dict[str, slice]
    Mbc: sp.csr_matrix
    Mg: sp.csr_matrix
    dual_m: np.ndarray
    cuts: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)

    @property
    def n_cols(self) -> int:
        return self.cost.size

    def split(self, v: np.ndarray) -> dict[str, np.ndarray]:
        return {k: v[s] for k, s in self.layout.items()}

    def loss(self, x: np.ndarray) -> tuple[float, float]:
        r_bc = self.Mbc @ x - self.record.bc_obs
        r_g = self.Mg @ x - self.record.grid_obs
        return float(np.linalg.norm(r_bc)), float(np.linalg.norm(r_g))

    @property
    def xi_scale(self) -> np.ndarray:
        """Box widths; the proximal term measures moves in these units."""
        w = self.kkt.xi_hi - self.kkt.xi_lo
        return np.where(w > 0, w, 1.0)

    def prox(self, xi: np.ndarray) -> float:
        d = (xi - self.xi_prev) / self.xi_scale
        return 0.5 * self.rho * float(d @ d)

    def true_objective(self, v: np.ndarray) -> float:
        parts = self.split(v)
        lb, lg = self.loss(parts["x"])
        return lb + lg + self.prox(parts["xi"])


def record_objective(kkt: KktSystem, price: np.ndarray) -> np.ndarray:
    """Dispatch cost vector of ``kkt.lp`` with the grid price replaced."""
    lp = kkt.lp
    c = lp.objective.copy()
    g = lp.var_index["p_g"]
    dt = lp.interval_hours
    c[g] = dt * np.asarray(price, dtype=float)
    return c


def build_inverse_step(kkt: KktSystem, record: MineRecord, xi_prev: np.ndarray, rho: float) -> InverseProgram:
    """Assemble the mixed-integer program of one proximal step.

    The strong-duality equation is not imposed: for an LP it follows from the
    other conditions, and with parameters on the right-hand side it would be
    bilinear. It is checked on the solution instead.
    """
    lp = kkt.lp
    T = lp.horizon
    if len(record.bc_obs) != T or len(record.grid_obs) != T or len(record.price) != T:
        raise ValueError("record and dispatch model have different horizons")
    n, k = lp.n_vars, len(kkt.param_names)
    me, mi = lp.eq_rhs.size, lp.ineq_rhs.size
    c = record_objective(kkt, record.price)
    dual_m = kkt.dual_m(c)

    sizes = [("x", n), ("xi", k), ("lam", me), ("mu", mi), ("z", mi), ("tau_bc", 1), ("tau_g", 1), ("s", k)]
    layout, off = {}, 0
    for name, size in sizes:
        layout[name] = slice(off, off + size)
        off += size
    N = off

    def place(block: sp.spmatrix, name: str, nrows: int) -> sp.csr_matrix:
        s = layout[name]
        block = sp.csr_matrix(block)
        pre = sp.csr_matrix((nrows, s.start))
        post = sp.csr_matrix((nrows, N - s.stop))
        return sp.hstack([pre, block, post], format="csr")

    A, G = lp.eq_matrix, lp.ineq_matrix
    blocks, lo, hi = [], [], []
    # stationarity
    blocks.append(place(A.T, "lam", n) + place(G.T, "mu", n))
    lo.append(-c), hi.append(-c)
    # primal equalities
    blocks.append(place(A, "x", me) - place(kkt.Bx, "xi", me))
    lo.append(kkt.b0), hi.append(kkt.b0)
    # primal inequalities
    blocks.append(place(G, "x", mi) - place(kkt.Hx, "xi", mi))
    lo.append(np.full(mi, -np.inf)), hi.append(kkt.h0)
    # slack <= M (1 - z)
    Mp = kkt.primal_m
    blocks.append(-place(G, "x", mi) + place(kkt.Hx, "xi", mi) + place(sp.diags(Mp), "z", mi))
    lo.append(np.full(mi, -np.inf)), hi.append(Mp - kkt.h0)
    # mu <= M z
    blocks.append(place(sp.identity(mi), "mu", mi) - place(sp.diags(dual_m), "z", mi))
    lo.append(np.full(mi, -np.inf)), hi.append(np.zeros(mi))

    matrix = sp.vstack(blocks, format="csr")
    col_lo = np.full(N, -np.inf)
    col_hi = np.full(N, np.inf)
    col_lo[layout["x"]] = kkt.x_lo
    col_hi[layout["x"]] = kkt.x_hi
    col_lo[layout["xi"]] = kkt.xi_lo
    col_hi[layout["xi"]] = kkt.xi_hi
    col_lo[layout["mu"]] = 0.0
    col_hi[layout["mu"]] = dual_m
    col_lo[layout["z"]] = 0.0
    col_hi[layout["z"]] = 1.0
    for name in ("tau_bc", "tau_g", "s"):
        col_lo[layout[name]] = 0.0
    integrality = np.zeros(N, dtype=np.int8)
    integrality[layout["z"]] = 1
    cost = np.zeros(N)
    cost[layout["tau_bc"]] = 1.0
    cost[layout["tau_g"]] = 1.0
    cost[layout["s"]] = 0.5 * rho
    Mbc, Mg = observable_maps(lp)
    prog = InverseProgram(
        kkt, record, np.asarray(xi_prev, dtype=float), float(rho), c, matrix,
        np.concatenate(lo), np.concatenate(hi), col_lo, col_hi, integrality, cost, layout, Mbc, Mg, dual_m,
    )
    _initial_cuts(prog)
    return prog


# ------------------------------------------------------------------ cuts


def _norm_cut(prog: InverseProgram, which: str, g: np.ndarray):
    """``tau >= g'(M x - obs)`` for a unit vector ``g``."""
    M = prog.Mbc if which == "bc" else prog.Mg
    obs = prog.record.bc_obs if which == "bc" else prog.record.grid_obs
    row = np.zeros(prog.n_cols)
    row[prog.layout["x"]] = -(M.T @ g)
    row[prog.layout[f"tau_{which}"]] = 1.0
    return row, -float(g @ obs)


def _prox_cut(prog: InverseProgram, k: int, d_hat: float):
    """``s_k >= 2 d_hat u_k - d_hat^2`` with ``u_k = (xi_k - xi_prev_k) / w_k``."""
    w = prog.xi_scale[k]
    row = np.zeros(prog.n_cols)
    row[prog.layout["xi"].start + k] = -2.0 * d_hat / w
    row[prog.layout["s"].start + k] = 1.0
    return row, -2.0 * d_hat * prog.xi_prev[k] / w - d_hat * d_hat


def _initial_cuts(prog: InverseProgram) -> None:
    T = prog.kkt.lp.horizon
    rows = []
    for which in ("bc", "g"):
        for t in range(T):
            for sgn in (1.0, -1.0):
                g = np.zeros(T)
                g[t] = sgn
                rows.append(_norm_cut(prog, which, g))
    if prog.rho > 0:
        for k in range(prog.xi_prev.size):
            for frac in (-1.0, -0.5, -0.25, -0.1, -0.03, -0.01, 0.0, 0.01, 0.03, 0.1, 0.25, 0.5, 1.0):
                rows.append(_prox_cut(prog, k, frac))
    prog.cuts.extend((r, b, np.inf) for r, b in rows)


def _cuts_at(prog: InverseProgram, v: np.ndarray) -> list:
    parts = prog.split(v)
    x, xi = parts["x"], parts["xi"]
    out = []
    for which, M, obs in (("bc", prog.Mbc, prog.record.bc_obs), ("g", prog.Mg, prog.record.grid_obs)):
        r = M @ x - obs
        nr = np.linalg.norm(r)
        if nr > 1e-9 and parts[f"tau_{which}"][0] < nr * (1 - 1e-9):
            out.append(_norm_cut(prog, which, r / nr))
    if prog.rho > 0:
        d = (xi - prog.xi_prev) / prog.xi_scale
        s = parts["s"]
        for k in np.flatnonzero(s < d * d - 1e-12 * (1 + d * d)):
            out.append(_prox_cut(prog, int(k), float(d[k])))
    return [(r, b, np.inf) for r, b in out]


# ------------------------------------------------------------------ solving


@dataclass
class StepResult:
    xi: np.ndarray
    loss: float
    objective: float
    bound: float
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    oa_rounds: int
    seconds: float
    certified: bool = False  # proven optimal within the MIP gap
    method: str = "milp"


def _highs(prog: InverseProgram, time_limit: float, mip_gap: float) -> highspy.Highs:
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", mip_gap)
    h.setOptionValue("mip_abs_gap", 1e-9)
    h.setOptionValue("time_limit", float(time_limit))
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("mip_feasibility_tolerance", 1e-9)
    h.setOptionValue("primal_feasibility_tolerance", 1e-9)
    h.setOptionValue("dual_feasibility_tolerance", 1e-9)
    inf = highspy.kHighsInf
    lp = highspy.HighsLp()
    lp.num_col_ = prog.n_cols
    lp.num_row_ = prog.matrix.shape[0]
    lp.col_cost_ = prog.cost
    lp.col_lower_ = np.where(np.isfinite(prog.col_lo), prog.col_lo, -inf)
    lp.col_upper_ = np.where(np.isfinite(prog.col_hi), prog.col_hi, inf)
    lp.row_lower_ = np.where(np.isfinite(prog.row_lo), prog.row_lo, -inf)
    lp.row_upper_ = np.where(np.isfinite(prog.row_hi), prog.row_hi, inf)
    csc = prog.matrix.tocsc()
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = csc.indptr
    lp.a_matrix_.index_ = csc.indices
    lp.a_matrix_.value_ = csc.data
    lp.a_matrix_.num_col_ = prog.n_cols
    lp.a_matrix_.num_row_ = prog.matrix.shape[0]
    lp.integrality_ = [highspy.HighsVarType(int(i)) for i in prog.integrality]
    h.passModel(lp)
    _add_rows(h, prog.cuts)
    return h


def _add_rows(h: highspy.Highs, cuts) -> None:
    if not cuts:
        return
    M = sp.csr_matrix(np.vstack([r for r, _, _ in cuts]))
    lo = np.array([b for _, b, _ in cuts])
    hi = np.full(len(cuts), highspy.kHighsInf)
    h.addRows(len(cuts), lo, hi, M.nnz, M.indptr[:-1].astype(np.int32), M.indices.astype(np.int32), M.data)


def warm_start(prog: InverseProgram, xi: np.ndarray) -> np.ndarray | None:
    """A feasible point of ``prog`` built from a forward solve at ``xi``."""
    kkt = prog.kkt
    lp = kkt.lp
    b = kkt.b0 + kkt.Bx @ xi
    h = kkt.h0 + kkt.Hx @ xi
    fwd = lp.with_rhs(b, h)
    fwd.objective = prog.objective
    try:
        sol = solve_lp(fwd)
    except SolverError:
        return None
    slack = h - lp.ineq_matrix @ sol.primal
    z = (slack <= 1e-7 * (1 + np.abs(h))).astype(float)
    mu = np.where(z > 0, sol.ineq_duals, 0.0)
    if np.any(mu > prog.dual_m) or np.any(slack * (1 - z) > kkt.primal_m):
        return None
    v = np.zeros(prog.n_cols)
    L = prog.layout
    v[L["x"]] = np.clip(sol.primal, kkt.x_lo, kkt.x_hi)
    v[L["xi"]] = xi
    v[L["lam"]] = sol.eq_duals
    v[L["mu"]] = mu
    v[L["z"]] = z
    lb, lg = prog.loss(sol.primal)
    v[L["tau_bc"]] = lb
    v[L["tau_g"]] = lg
    d = (xi - prog.xi_prev) / prog.xi_scale
    v[L["s"]] = d * d
    return v


# branch and bound is used up to this many complementarity binaries
MILP_MAX_BINARIES = 400


def solve_inverse_step(
    prog: InverseProgram,
    method: str = "auto",
    mip_gap: float = MIP_GAP,
    time_limit: float = 120.0,
    max_rounds: int = 60,
    start_xi: np.ndarray | None = None,
) -> StepResult:
    """Solve one proximal step.

    ``method="milp"`` runs branch and bound on the big-M program and returns
    a point proven optimal within ``mip_gap``. ``method="local"`` runs the
    penalty convex-concave procedure of :mod:`vppfra.inverse.local`, whose
    result is a KKT-certified feasible point of the same program but carries
    no optimality proof. ``"auto"`` picks branch and bound when the program
    has at most ``MILP_MAX_BINARIES`` binaries.

    The returned ``loss`` is the pure data misfit (no proximal term).

    Raises:
        Infeasible: the MILP stays infeasible after one retry with every
            big-M constant multiplied by ten.
        MipTimeout: the time limit was hit; ``incumbent`` holds the best point.
    """
    if method == "auto":
        method = "milp" if prog.kkt.n_binaries <= MILP_MAX_BINARIES else "local"
    if method == "local":
        from .local import solve_step_local

        res = solve_step_local(prog)
        res.method = "local"
        return res
    if method != "milp":
        raise ValueError(f"unknown step method {method!r}")
    try:
        return _solve_milp(prog, mip_gap, time_limit, max_rounds, start_xi)
    except Infeasible:
        log.warning("inverse step infeasible; retrying with big-M constants x10")
        return _solve_milp(scale_big_m(prog, 10.0), mip_gap, time_limit, max_rounds, start_xi)


def scale_big_m(prog: InverseProgram, factor: float) -> InverseProgram:
    """The same step with every big-M constant multiplied by ``factor``."""
    kkt = replace(prog.kkt, primal_m=prog.kkt.primal_m * factor, big_m_scale=prog.kkt.big_m_scale * factor)
    return build_inverse_step(kkt, prog.record, prog.xi_prev, prog.rho)


def _solve_milp(
    prog: InverseProgram,
    mip_gap: float,
    time_limit: float,
    max_rounds: int,
    start_xi: np.ndarray | None,
) -> StepResult:
    t0 = time.perf_counter()
    h = _highs(prog, time_limit, mip_gap)
    best_v, best_f = None, np.inf
    for xi_try in (prog.xi_prev, start_xi):
        if xi_try is None:
            continue
        v0 = warm_start(prog, np.asarray(xi_try, dtype=float))
        if v0 is not None:
            f0 = prog.true_objective(v0)
            if f0 < best_f:
                best_v, best_f = v0, f0
    bound = -np.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        if best_v is not None:
            sol = highspy.HighsSolution()
            sol.col_value = list(best_v)
            sol.value_valid = True
            h.setSolution(sol)
        remaining = time_limit - (time.perf_counter() - t0)
        if remaining <= 0:
            raise MipTimeout("inverse step exceeded its time limit", best_v)
        h.setOptionValue("time_limit", remaining)
        h.run()
        status = h.getModelStatus()
        if status == highspy.HighsModelStatus.kInfeasible:
            raise Infeasible("inverse step MILP is infeasible (big-M constants too small?)")
        if status == highspy.HighsModelStatus.kTimeLimit:
            raise MipTimeout("inverse step exceeded its time limit", best_v)
        if status != highspy.HighsModelStatus.kOptimal:
            raise SolverError(f"inverse step MILP ended with status {h.modelStatusToString(status)}")
        v = np.asarray(h.getSolution().col_value)
        bound = max(bound, float(h.getInfo().mip_dual_bound))
        f = prog.true_objective(v)
        if f < best_f:
            best_v, best_f = v, f
        if best_f - bound <= mip_gap * max(1.0, abs(best_f)):
            break
        cuts = _cuts_at(prog, v)
        if not cuts:
            # the MILP point is already exact in the objective; the bound is the gap
            break
        _add_rows(h, cuts)
        prog.cuts.extend(cuts)
    parts = prog.split(best_v)
    lb, lg = prog.loss(parts["x"])
    return StepResult(
        xi=np.clip(parts["xi"], prog.kkt.xi_lo, prog.kkt.xi_hi),
        loss=lb + lg,
        objective=best_f,
        bound=bound,
        x=parts["x"],
        lam=parts["lam"],
        mu=parts["mu"],
        z=parts["z"],
        oa_rounds=rounds,
        seconds=time.perf_counter() - t0,
        certified=best_f - bound <= mip_gap * max(1.0, abs(best_f)),
        method="milp",
    )
