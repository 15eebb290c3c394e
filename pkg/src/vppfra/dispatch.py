"""Forward optimal-dispatch linear program for one coal mine.

The program is kept in the canonical form

    min c'x   s.t.   A x = b,   G x <= h

with every variable bound written as an explicit row of ``G``, so that each
inequality has its own multiplier. Unknown device parameters only ever enter
``b`` or ``h``; ``LpProblem.param_hooks`` records which cells they occupy.

Sign convention for multipliers: stationarity reads ``c + A'lam + G'mu = 0``
with ``mu >= 0``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import Infeasible, InfeasibleStructure, Unbounded
from .scenario import (
    CONSUMING_UNITS,
    MAIN_SILO,
    PREPARATION_PLANT,
    SHAFT_SILO,
    COAL_FACE,
    MineScenario,
)

log = logging.getLogger(__name__)

KKT_TOL = 1e-6
OPT_TOL = 1e-8


@dataclass(frozen=True)
class Hook:
    """One cell occupied by an unknown parameter: ``rhs[row] += coef * value``."""

    kind: str  # "eq" or "ineq"
    row: int
    coef: float


@dataclass
class LpProblem:
    objective: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    ineq_matrix: sp.csr_matrix
    ineq_rhs: np.ndarray
    var_index: dict[str, np.ndarray]
    param_hooks: dict[str, list[Hook]]
    param_values: dict[str, float]
    eq_family: list[str] = field(default_factory=list)
    ineq_family: list[str] = field(default_factory=list)
    horizon: int = 0
    mine_id: str = ""
    interval_hours: float = 1.0

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def col(self, name: str, t: int) -> int:
        return int(self.var_index[name][t])

    def series_names(self, prefix: str) -> list[str]:
        return [k for k in self.var_index if k.split(".")[0] == prefix]

    def rhs_parts(self) -> tuple[np.ndarray, np.ndarray, sp.csr_matrix, sp.csr_matrix, list[str]]:
        """Split both right-hand sides into a constant part and a parameter map.

        Returns ``(b0, h0, Bx, Hx, names)`` such that ``b = b0 + Bx @ xi`` and
        ``h = h0 + Hx @ xi`` with ``xi`` ordered as ``names``.
        """
        names = list(self.param_values)
        b_rows, b_cols, b_vals, h_rows, h_cols, h_vals = [], [], [], [], [], []
        for k, name in enumerate(names):
            for hk in self.param_hooks[name]:
                if hk.kind == "eq":
                    b_rows.append(hk.row), b_cols.append(k), b_vals.append(hk.coef)
                else:
                    h_rows.append(hk.row), h_cols.append(k), h_vals.append(hk.coef)
        Bx = sp.csr_matrix((b_vals, (b_rows, b_cols)), shape=(self.eq_rhs.size, len(names)))
        Hx = sp.csr_matrix((h_vals, (h_rows, h_cols)), shape=(self.ineq_rhs.size, len(names)))
        xi = np.array([self.param_values[n] for n in names])
        return self.eq_rhs - Bx @ xi, self.ineq_rhs - Hx @ xi, Bx, Hx, names

    def with_rhs(self, eq_rhs=None, ineq_rhs=None) -> LpProblem:
        return replace(
            self,
            eq_rhs=self.eq_rhs if eq_rhs is None else eq_rhs,
            ineq_rhs=self.ineq_rhs if ineq_rhs is None else ineq_rhs,
        )


class _Builder:
    def __init__(self):
        self.n = 0
        self.var_index: dict[str, np.ndarray] = {}
        self.cost: list[tuple[int, float]] = []
        self.eq: list[tuple[list[int], list[float], float, str]] = []
        self.ineq: list[tuple[list[int], list[float], float, str]] = []
        self.hooks: dict[str, list[Hook]] = {}
        self.values: dict[str, float] = {}

    def var(self, name: str, length: int) -> np.ndarray:
        cols = np.arange(self.n, self.n + length)
        self.n += length
        self.var_index[name] = cols
        return cols

    def add_eq(self, cols, coefs, rhs, family, hook=None) -> None:
        if hook is not None:
            self._hook(hook, "eq", len(self.eq))
        self.eq.append((list(cols), list(coefs), float(rhs), family))

    def add_le(self, cols, coefs, rhs, family, hook=None) -> None:
        if hook is not None:
            self._hook(hook, "ineq", len(self.ineq))
        self.ineq.append((list(cols), list(coefs), float(rhs), family))

    def box(self, col, lo, hi, family, lo_hook=None, hi_hook=None) -> None:
        self.add_le([col], [-1.0], -lo, family, None if lo_hook is None else (lo_hook, -1.0))
        self.add_le([col], [1.0], hi, family, None if hi_hook is None else (hi_hook, 1.0))

    def _hook(self, hook, kind, row) -> None:
        name, coef = hook
        self.hooks.setdefault(name, []).append(Hook(kind, row, coef))

    @staticmethod
    def _matrix(rows, n):
        r, c, v = [], [], []
        for i, (cols, coefs, _, _) in enumerate(rows):
            r.extend([i] * len(cols))
            c.extend(cols)
            v.extend(coefs)
        return sp.csr_matrix((v, (r, c)), shape=(len(rows), n))

    def build(self, horizon: int, mine_id: str, interval_hours: float) -> LpProblem:
        c = np.zeros(self.n)
        for col, v in self.cost:
            c[col] += v
        return LpProblem(
            objective=c,
            eq_matrix=self._matrix(self.eq, self.n),
            eq_rhs=np.array([row[2] for row in self.eq]),
            ineq_matrix=self._matrix(self.ineq, self.n),
            ineq_rhs=np.array([row[2] for row in self.ineq]),
            var_index=self.var_index,
            param_hooks=self.hooks,
            param_values=self.values,
            eq_family=[row[3] for row in self.eq],
            ineq_family=[row[3] for row in self.ineq],
            horizon=horizon,
            mine_id=mine_id,
            interval_hours=interval_hours,
        )


def mine_param_values(mine: MineScenario) -> dict[str, float]:
    """True values of the unknown parameters of one mine, keyed by local name."""
    vals: dict[str, float] = {}
    for bc in mine.bc_links:
        vals[f"bc_power_min.{bc.id}"] = bc.power_min
        vals[f"bc_power_max.{bc.id}"] = bc.power_max
    vals["grid_min"] = mine.grid_min
    vals["grid_max"] = mine.grid_max
    for bc in mine.bc_links:
        vals[f"theta2.{bc.id}"] = bc.theta2
    return vals


def build_lp(mine: MineScenario, params: Mapping[str, float] | None = None) -> LpProblem:
    """Assemble the dispatch LP of one mine.

    Args:
        mine: validated scenario (true parameters).
        params: optional overrides keyed by local parameter name
            (``bc_power_min.<bc>``, ``bc_power_max.<bc>``, ``grid_min``,
            ``grid_max``, ``theta2.<bc>``). Anything with a ``mine.`` prefix
            is also accepted as long as the prefix matches ``mine.id``.

    Raises:
        InfeasibleStructure: a power or grid box ends up with min > max.
    """
    vals = mine_param_values(mine)
    if params is not None:
        prefix = f"{mine.id}."
        for k, v in params.items():
            local = k[len(prefix):] if k.startswith(prefix) else k
            if local in vals:
                vals[local] = float(v)
    for bc in mine.bc_links:
        if vals[f"bc_power_min.{bc.id}"] > vals[f"bc_power_max.{bc.id}"]:
            raise InfeasibleStructure("bc power box has min > max", bc.id)
    if vals["grid_min"] > vals["grid_max"]:
        raise InfeasibleStructure("grid box has min > max", mine.id)

    T = mine.horizon
    dt = mine.time.interval_hours
    prof = mine.profiles
    om = mine.costs.om
    kinds = {n.id: n.kind for n in mine.ctn_nodes}
    b = _Builder()
    b.values = vals

    p_bc = {bc.id: b.var(f"p_bc.{bc.id}", T) for bc in mine.bc_links}
    q = {bc.id: b.var(f"q.{bc.id}", T) for bc in mine.bc_links}
    sig = {bc.id: b.var(f"sigma.{bc.id}", T) for bc in mine.bc_links}
    m_silo = {s.node_id: b.var(f"m_silo.{s.node_id}", T + 1) for s in mine.silos}
    h_unit = {u.kind: b.var(f"h_{u.kind.lower()}", T) for u in mine.units}
    p_unit = {u.kind: b.var(f"p_{u.kind.lower()}", T) for u in mine.units}
    e_phs, p_phsc, p_phsd = b.var("e_phs", T + 1), b.var("p_phsc", T), b.var("p_phsd", T)
    e_tst, h_tstc, h_tstd = b.var("e_tst", T + 1), b.var("h_tstc", T), b.var("h_tstd", T)
    p_pv, p_wt, p_g = b.var("p_pv", T), b.var("p_wt", T), b.var("p_g", T)

    # operating cost
    for t in range(T):
        b.cost.append((p_g[t], dt * prof.price[t]))
        b.cost.append((p_pv[t], dt * om["pv"]))
        b.cost.append((p_wt[t], dt * om["wt"]))
        b.cost.append((p_phsc[t], dt * om["phs"]))
        b.cost.append((p_phsd[t], dt * om["phs"]))
        b.cost.append((h_tstc[t], dt * om["tst"]))
        b.cost.append((h_tstd[t], dt * om["tst"]))
        for bc in mine.bc_links:
            b.cost.append((p_bc[bc.id][t], dt * om["bc"]))
        for u in mine.units:
            key = u.kind.lower()
            b.cost.append((p_unit[u.kind][t], dt * om[key]))
            if u.kind == "CHP":
                b.cost.append((p_unit[u.kind][t], dt * mine.costs.fuel_chp))

    # coal transport: mass/feed coupling, power law, feed boxes
    for bc in mine.bc_links:
        k_feed = (bc.theta4 + bc.speed / 3.6) / bc.speed
        for t in range(T):
            b.add_eq([sig[bc.id][t], q[bc.id][t]], [1.0, -1.0 / (3.6 * bc.speed)], 0.0, "sigma_coupling")
            # p / (cof V) - (theta4 + V/3.6)/V * q = theta2
            b.add_eq(
                [p_bc[bc.id][t], q[bc.id][t]],
                [1.0 / (bc.cof * bc.speed), -k_feed],
                vals[f"theta2.{bc.id}"],
                "bc_power",
                hook=(f"theta2.{bc.id}", 1.0),
            )
            b.box(q[bc.id][t], 0.0, bc.feed_max, "feed_box")
            b.box(
                p_bc[bc.id][t],
                vals[f"bc_power_min.{bc.id}"],
                vals[f"bc_power_max.{bc.id}"],
                "bc_power_box",
                lo_hook=f"bc_power_min.{bc.id}",
                hi_hook=f"bc_power_max.{bc.id}",
            )

    for bc in mine.links_of_kind(COAL_FACE):
        for t in range(1, T):
            cols = [sig[bc.id][t], sig[bc.id][t - 1]]
            b.add_le(cols, [1.0, -1.0], bc.ramp_max, "feed_ramp")
            b.add_le(cols, [-1.0, 1.0], -bc.ramp_min, "feed_ramp")

    # shaft silos pass on at least what they receive
    for node in (n for n in mine.ctn_nodes if n.kind == SHAFT_SILO):
        inbound = [bc for bc in mine.bc_links if bc.to_node == node.id]
        outbound = [bc for bc in mine.bc_links if bc.from_node == node.id]
        for t in range(T):
            cols = [sig[bc.id][t] for bc in inbound] + [sig[out.id][t] for out in outbound]
            coefs = [1.0] * len(inbound) + [-1.0] * len(outbound)
            b.add_le(cols, coefs, 0.0, "feed_dominance")

    # horizon coal ordering and delivery to the preparation plant
    to_cpp = [bc for bc in mine.bc_links if kinds[bc.to_node] == PREPARATION_PLANT]
    cpp_cols = [q[bc.id][t] for bc in to_cpp for t in range(T)]
    for bc in mine.links_of_kind(COAL_FACE):
        cols = [q[bc.id][t] for t in range(T)] + cpp_cols
        b.add_le(cols, [dt] * T + [-dt] * len(cpp_cols), 0.0, "coal_ordering")
    b.add_le(cpp_cols, [dt] * len(cpp_cols), prof.cpp_demand, "coal_ordering")
    b.add_eq(cpp_cols, [dt] * len(cpp_cols), prof.cpp_demand, "cpp_delivery")

    # silos as lossless mass stores
    for s in mine.silos:
        m = m_silo[s.node_id]
        inbound = [bc for bc in mine.bc_links if bc.to_node == s.node_id]
        outbound = [bc for bc in mine.bc_links if bc.from_node == s.node_id]
        for t in range(T):
            cols = [m[t + 1], m[t]] + [sig[bc.id][t] for bc in inbound] + [sig[bc.id][t] for bc in outbound]
            coefs = [1.0, -1.0] + [-1.0] * len(inbound) + [1.0] * len(outbound)
            b.add_eq(cols, coefs, 0.0, "silo_balance")
        b.add_eq([m[0]], [1.0], s.level_start, "silo_boundary")
        b.add_eq([m[T]], [1.0], s.level_end, "silo_boundary")
        for t in range(T + 1):
            b.box(m[t], s.capacity_min, s.capacity_max, "silo_box")

    # coupled electrical/thermal units
    for u in mine.units:
        for t in range(T):
            b.add_eq([p_unit[u.kind][t], h_unit[u.kind][t]], [1.0, -u.ehr], 0.0, "unit_ehr")
            b.box(h_unit[u.kind][t], u.heat_min, u.heat_max, "unit_heat_box")

    # storage
    for st, e, ch, dis, tag in ((mine.phs, e_phs, p_phsc, p_phsd, "phs"), (mine.tst, e_tst, h_tstc, h_tstd, "tst")):
        for t in range(T):
            b.add_eq(
                [e[t + 1], e[t], ch[t], dis[t]],
                [1.0, -st.retention, -st.efficiency * dt, st.efficiency * dt],
                0.0,
                f"{tag}_balance",
            )
            b.box(ch[t], st.charge_min, st.charge_max, f"{tag}_charge_box")
            b.box(dis[t], st.discharge_min, st.discharge_max, f"{tag}_discharge_box")
        b.add_eq([e[0]], [1.0], st.energy_start, f"{tag}_boundary")
        b.add_eq([e[T]], [1.0], st.energy_end, f"{tag}_boundary")
        for t in range(T + 1):
            b.box(e[t], st.energy_min, st.energy_max, f"{tag}_energy_box")

    # grid exchange, renewables, balances
    for t in range(T):
        b.box(p_g[t], vals["grid_min"], vals["grid_max"], "grid_box", lo_hook="grid_min", hi_hook="grid_max")
        b.box(p_pv[t], 0.0, prof.pv_avail[t], "pv_box")
        b.box(p_wt[t], 0.0, prof.wt_avail[t], "wt_box")
        cols = [p_g[t], p_pv[t], p_wt[t], p_phsd[t], p_phsc[t]]
        coefs = [1.0, 1.0, 1.0, 1.0, -1.0]
        for u in mine.units:
            cols.append(p_unit[u.kind][t])
            coefs.append(-1.0 if u.kind in CONSUMING_UNITS else 1.0)
        for bc in mine.bc_links:
            cols.append(p_bc[bc.id][t])
            coefs.append(-1.0)
        b.add_eq(cols, coefs, prof.elec_load[t], "power_balance")
        hcols = [h_unit[u.kind][t] for u in mine.units] + [h_tstd[t], h_tstc[t]]
        hcoefs = [1.0] * len(mine.units) + [1.0, -1.0]
        b.add_eq(hcols, hcoefs, prof.heat_load[t], "heat_balance")

    return b.build(T, mine.id, dt)


# ------------------------------------------------------------------ solving


@dataclass
class PrimalDualSolution:
    primal: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    objective_value: float

    def residuals(self, lp: LpProblem) -> dict[str, float]:
        """KKT residuals of this point for ``lp`` (all should be ~0)."""
        x, lam, mu = self.primal, self.eq_duals, self.ineq_duals
        slack = lp.ineq_matrix @ x - lp.ineq_rhs
        stat = lp.objective + lp.eq_matrix.T @ lam + lp.ineq_matrix.T @ mu
        dual_obj = -(lp.eq_rhs @ lam) - (lp.ineq_rhs @ mu)
        return {
            "primal_eq": float(np.max(np.abs(lp.eq_matrix @ x - lp.eq_rhs), initial=0.0)),
            "primal_ineq": float(np.max(slack, initial=0.0)),
            "dual_sign": float(max(0.0, -np.min(mu, initial=0.0))),
            "stationarity": float(np.max(np.abs(stat), initial=0.0)),
            "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
            "duality_gap": float(abs(lp.objective @ x - dual_obj)),
        }


def feas_tol(lp: LpProblem) -> float:
    scale = max(np.max(np.abs(lp.eq_rhs), initial=0.0), np.max(np.abs(lp.ineq_rhs), initial=0.0))
    return 1e-8 * (1.0 + scale)


_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


def _linprog(c, lp: LpProblem, keep_eq=None, keep_ineq=None):
    A, b, G, h = lp.eq_matrix, lp.eq_rhs, lp.ineq_matrix, lp.ineq_rhs
    if keep_eq is not None:
        A, b = A[keep_eq], b[keep_eq]
    if keep_ineq is not None:
        G, h = G[keep_ineq], h[keep_ineq]
    return linprog(
        c,
        A_ub=G if G.shape[0] else None,
        b_ub=h if G.shape[0] else None,
        A_eq=A if A.shape[0] else None,
        b_eq=b if A.shape[0] else None,
        bounds=(None, None),
        method="highs-ds",
        options=_HIGHS_OPTIONS,
    )


def _implicated_families(lp: LpProblem) -> list[str]:
    """Constraint families whose removal alone restores feasibility."""
    fams = sorted(set(lp.eq_family) | set(lp.ineq_family))
    eq_f, in_f = np.array(lp.eq_family, dtype=object), np.array(lp.ineq_family, dtype=object)
    zero = np.zeros(lp.n_vars)
    hits = []
    for fam in fams:
        res = _linprog(zero, lp, keep_eq=eq_f != fam, keep_ineq=in_f != fam)
        if res.status == 0:
            hits.append(fam)
    return hits


def _unbounded_families(lp: LpProblem) -> list[str]:
    """Families of variables whose cost direction has no finite bound."""
    names = []
    for name, cols in lp.var_index.items():
        for col in cols[:1]:
            c = np.zeros(lp.n_vars)
            c[col] = -1.0
            res = _linprog(c, lp)
            if res.status == 3:
                names.append(name.split(".")[0])
                break
    return sorted(set(names))


def solve_lp(lp: LpProblem, objective: np.ndarray | None = None) -> PrimalDualSolution:
    """Solve ``lp`` with a dual simplex and return primal and dual values.

    Args:
        lp: the program.
        objective: optional replacement cost vector (used for support bounds).

    Raises:
        Infeasible: no feasible point; ``families`` names the culprits.
        Unbounded: the objective is unbounded below.
    """
    c = lp.objective if objective is None else objective
    res = _linprog(c, lp)
    if res.status == 2:
        raise Infeasible(f"dispatch LP of mine '{lp.mine_id}' is infeasible", _implicated_families(lp))
    if res.status == 3:
        raise Unbounded(f"dispatch LP of mine '{lp.mine_id}' is unbounded", _unbounded_families(lp))
    if res.status != 0:
        raise Infeasible(f"LP solver failed on mine '{lp.mine_id}': {res.message}")
    lam = -np.asarray(res.eqlin.marginals) if lp.eq_rhs.size else np.zeros(0)
    mu = -np.asarray(res.ineqlin.marginals) if lp.ineq_rhs.size else np.zeros(0)
    return PrimalDualSolution(np.asarray(res.x), lam, np.maximum(mu, 0.0), float(c @ res.x))


# ---------------------------------------------------------- named view / io


@dataclass
class DispatchSolution:
    mine_id: str
    horizon: int
    series: dict[str, np.ndarray]
    lp: LpProblem
    solution: PrimalDualSolution

    @property
    def objective_value(self) -> float:
        return self.solution.objective_value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def to_csv(self, path: str | Path) -> None:
        """One row per interval; storage levels are end-of-interval values."""
        names = list(self.series)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for t in range(self.horizon):
                w.writerow([t] + [repr(float(self._at(n, t))) for n in names])

    def _at(self, name: str, t: int) -> float:
        s = self.series[name]
        return s[t + 1] if s.size == self.horizon + 1 else s[t]


def _canonical(name: str) -> str:
    return name.replace("q.", "q_bc.", 1) if name.startswith("q.") else name


def dispatch(mine: MineScenario, params: Mapping[str, float] | None = None) -> DispatchSolution:
    lp = build_lp(mine, params)
    sol = solve_lp(lp)
    series = {_canonical(k): sol.primal[cols] for k, cols in lp.var_index.items()}
    return DispatchSolution(mine.id, mine.horizon, series, lp, sol)


def aggregate_observables(sol: DispatchSolution) -> tuple[np.ndarray, np.ndarray]:
    """Total belt-conveyor load and grid exchange per interval (kW)."""
    bc = np.zeros(sol.horizon)
    for name, s in sol.series.items():
        if name.startswith("p_bc."):
            bc = bc + s
    return bc, sol.series["p_g"].copy()


def observable_maps(lp: LpProblem) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Linear maps from the primal vector to (bc_total, grid) series."""
    T = lp.horizon
    rows, cols = [], []
    for name in lp.series_names("p_bc"):
        for t, c in enumerate(lp.var_index[name]):
            rows.append(t)
            cols.append(c)
    Mbc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(T, lp.n_vars))
    g = lp.var_index["p_g"]
    Mg = sp.csr_matrix((np.ones(T), (np.arange(T), g)), shape=(T, lp.n_vars))
    return Mbc, Mg
