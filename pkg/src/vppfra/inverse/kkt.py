"""Optimality conditions of the dispatch LP with parameters left symbolic.

For ``min c'x s.t. A x = b0 + Bx xi, G x <= h0 + Hx xi`` the conditions are

* stationarity      ``c + A'lam + G'mu = 0``
* primal equality   ``A x - Bx xi = b0``
* primal inequality ``G x - Hx xi <= h0``
* dual sign         ``mu >= 0``
* complementarity   ``mu_i * (h0 + Hx xi - G x)_i = 0``

Stationarity does not involve ``xi`` because parameters only sit on the
right-hand side. Complementarity is linearised with one binary per
inequality row and per-row big-M constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..dispatch import LpProblem, PrimalDualSolution
from ..errors import HookViolation


@dataclass
class KktSystem:
    lp: LpProblem
    b0: np.ndarray
    h0: np.ndarray
    Bx: sp.csr_matrix
    Hx: sp.csr_matrix
    param_names: list[str]  # local names, column order of Bx / Hx
    xi_lo: np.ndarray
    xi_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    primal_m: np.ndarray  # bound on slack of each inequality row
    big_m_scale: float

    @property
    def n_binaries(self) -> int:
        return self.h0.size

    def stationarity_rows(self) -> sp.csr_matrix:
        """``[A' G']`` acting on ``(lam, mu)``."""
        return sp.hstack([self.lp.eq_matrix.T, self.lp.ineq_matrix.T], format="csr")

    def dual_m(self, objective: np.ndarray) -> np.ndarray:
        """Upper bound used for each inequality multiplier."""
        return np.full(self.h0.size, self.big_m_scale * (1.0 + np.abs(objective).sum()))

    def residuals(self, x, lam, mu, xi, objective: np.ndarray | None = None) -> dict[str, float]:
        c = self.lp.objective if objective is None else objective
        A, G = self.lp.eq_matrix, self.lp.ineq_matrix
        slack = self.h0 + self.Hx @ xi - G @ x
        return {
            "stationarity": float(np.max(np.abs(c + A.T @ lam + G.T @ mu), initial=0.0)),
            "primal_eq": float(np.max(np.abs(A @ x - self.b0 - self.Bx @ xi), initial=0.0)),
            "primal_ineq": float(max(0.0, -np.min(slack, initial=0.0))),
            "dual_sign": float(max(0.0, -np.min(mu, initial=0.0))),
            "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
        }

    def complementarity_violations(self, x, mu, xi, tol: float = 1e-6) -> np.ndarray:
        slack = self.h0 + self.Hx @ xi - self.lp.ineq_matrix @ x
        return np.flatnonzero(np.abs(mu * slack) > tol)

    def check(self, sol: PrimalDualSolution, xi, tol: float = 1e-6) -> bool:
        r = self.residuals(sol.primal, sol.eq_duals, sol.ineq_duals, xi)
        return all(v <= tol for v in r.values())

    def strong_duality_gap(self, x, lam, mu, xi, objective: np.ndarray | None = None) -> float:
        """|primal objective - dual objective|; zero at any KKT point."""
        c = self.lp.objective if objective is None else objective
        b = self.b0 + self.Bx @ xi
        h = self.h0 + self.Hx @ xi
        return float(abs(c @ x + b @ lam + h @ mu))


def _check_hooks(lp: LpProblem) -> None:
    for name, hooks in lp.param_hooks.items():
        if not hooks:
            raise HookViolation(f"parameter {name!r} occupies no cell")
        for hk in hooks:
            if hk.kind not in ("eq", "ineq"):
                raise HookViolation(
                    f"parameter {name!r} occupies a {hk.kind!r} cell; only right-hand-side cells keep stationarity linear"
                )
            size = lp.eq_rhs.size if hk.kind == "eq" else lp.ineq_rhs.size
            if not 0 <= hk.row < size:
                raise HookViolation(f"parameter {name!r} hooks row {hk.row} outside the {hk.kind} block")


def variable_bounds(lp: LpProblem, xi_lo, xi_hi, passes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Interval bounds on every primal variable over all parameters in the box.

    Single-variable inequality rows give initial bounds; equality rows then
    propagate them (feasibility-based bound tightening).
    """
    n = lp.n_vars
    lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    b0, h0, Bx, Hx, _ = lp.rhs_parts()
    h_hi = h0 + Hx.maximum(0) @ xi_hi + Hx.minimum(0) @ xi_lo
    G = lp.ineq_matrix.tocsr()
    for i in range(G.shape[0]):
        s, e = G.indptr[i], G.indptr[i + 1]
        if e - s != 1:
            continue
        j, a = G.indices[s], G.data[s]
        if a > 0:
            hi[j] = min(hi[j], h_hi[i] / a)
        else:
            lo[j] = max(lo[j], h_hi[i] / a)
    A = lp.eq_matrix.tocsr()
    b_lo = b0 + Bx.minimum(0) @ xi_hi + Bx.maximum(0) @ xi_lo
    b_hi = b0 + Bx.maximum(0) @ xi_hi + Bx.minimum(0) @ xi_lo
    for _ in range(passes):
        changed = False
        for i in range(A.shape[0]):
            s, e = A.indptr[i], A.indptr[i + 1]
            cols, coef = A.indices[s:e], A.data[s:e]
            # terms a_k x_k as intervals
            t_lo = np.where(coef > 0, coef * lo[cols], coef * hi[cols])
            t_hi = np.where(coef > 0, coef * hi[cols], coef * lo[cols])
            tot_lo, tot_hi = t_lo.sum(), t_hi.sum()
            for k, (j, a) in enumerate(zip(cols, coef)):
                rest_lo = tot_lo - t_lo[k] if np.isfinite(t_lo[k]) else _sum_excl(t_lo, k)
                rest_hi = tot_hi - t_hi[k] if np.isfinite(t_hi[k]) else _sum_excl(t_hi, k)
                # a x_j = r - rest, r in [b_lo, b_hi]
                v_lo, v_hi = b_lo[i] - rest_hi, b_hi[i] - rest_lo
                if a < 0:
                    v_lo, v_hi = v_hi / a, v_lo / a
                else:
                    v_lo, v_hi = v_lo / a, v_hi / a
                if v_lo > lo[j] + 1e-9 * (1 + abs(lo[j]) if np.isfinite(lo[j]) else 0):
                    lo[j], changed = v_lo, True
                if v_hi < hi[j] - 1e-9 * (1 + abs(hi[j]) if np.isfinite(hi[j]) else 0):
                    hi[j], changed = v_hi, True
        if not changed:
            break
    return lo, hi


def _sum_excl(v, k):
    return float(np.sum(np.delete(v, k)))


def derive_kkt(
    lp: LpProblem,
    xi_lo: np.ndarray | None = None,
    xi_hi: np.ndarray | None = None,
    big_m_scale: float = 10.0,
) -> KktSystem:
    """Derive the optimality system of ``lp`` over a parameter box.

    Args:
        lp: dispatch LP carrying parameter hooks.
        xi_lo, xi_hi: parameter box in the order of ``lp.param_hooks``;
            defaults to the values stored in ``lp`` (a degenerate box).
        big_m_scale: multiplier applied to every big-M constant.

    Raises:
        HookViolation: a parameter hook does not address a right-hand side.
    """
    _check_hooks(lp)
    b0, h0, Bx, Hx, names = lp.rhs_parts()
    xi0 = np.array([lp.param_values[n] for n in names])
    xi_lo = xi0 if xi_lo is None else np.asarray(xi_lo, dtype=float)
    xi_hi = xi0 if xi_hi is None else np.asarray(xi_hi, dtype=float)
    x_lo, x_hi = variable_bounds(lp, xi_lo, xi_hi)
    G = lp.ineq_matrix
    # largest slack: rhs at the box extreme that loosens the row, minus least activity
    h_hi = h0 + Hx.maximum(0) @ xi_hi + Hx.minimum(0) @ xi_lo
    Gp, Gn = G.maximum(0), G.minimum(0)
    with np.errstate(invalid="ignore"):
        act_lo = Gp @ np.where(np.isfinite(x_lo), x_lo, -1e12) + Gn @ np.where(np.isfinite(x_hi), x_hi, 1e12)
    slack_max = np.maximum(h_hi - act_lo, 0.0)
    primal_m = big_m_scale * (1.0 + slack_max) if h0.size else np.zeros(0)
    return KktSystem(lp, b0, h0, Bx, Hx, names, xi_lo, xi_hi, x_lo, x_hi, primal_m, big_m_scale)
