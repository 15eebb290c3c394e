"""Independent reference computations shared by several test modules."""

import numpy as np


def conveyor_power(bc, q):
    return bc.cof * (bc.theta2 * bc.speed + (bc.theta4 + bc.speed / 3.6) * q)


def brute_force_region(mine, step):
    """Exhaustive search over feed-rate schedules of the tiny fixture.

    The fixture has one coal-face conveyor into a silo and one conveyor from
    the silo to the plant. Feeds of all but the last interval are enumerated
    on a grid; the last feeds follow from the delivery total and the silo
    end level. Grid exchange at fixed conveyor load ranges over PV
    curtailment, clipped to the grid box.
    """
    b1, b2 = mine.bc_links
    silo = mine.silos[0]
    T = mine.horizon
    s1, s2 = 1 / (3.6 * b1.speed), 1 / (3.6 * b2.speed)
    tol = 1e-9
    g1 = np.arange(0.0, b1.feed_max + tol, step)
    g2 = np.arange(0.0, b2.feed_max + tol, step)
    Q1 = np.array(np.meshgrid(*[g1] * (T - 1), indexing="ij")).reshape(T - 1, -1).T
    Q2 = np.array(np.meshgrid(*[g2] * (T - 1), indexing="ij")).reshape(T - 1, -1).T
    q2_all = np.column_stack([Q2, mine.profiles.cpp_demand - Q2.sum(1)])
    q2_all = q2_all[(q2_all[:, -1] >= -tol) & (q2_all[:, -1] <= b2.feed_max + tol)]
    load = np.array(mine.profiles.elec_load)
    renew = np.array(mine.profiles.pv_avail) + np.array(mine.profiles.wt_avail)
    best = {"bc_max": -np.inf, "bc_min": np.inf, "grid_max": -np.inf, "grid_min": np.inf}
    best = {k: np.full(T, v) for k, v in best.items()}
    for q2 in q2_all:
        need = (silo.level_end - silo.level_start + s2 * q2.sum()) / s1
        q1 = np.column_stack([Q1, need - Q1.sum(1)])
        ok = (q1[:, -1] >= -tol) & (q1[:, -1] <= b1.feed_max + tol)
        ok &= np.all(np.abs(np.diff(q1 * s1, axis=1)) <= b1.ramp_max + tol, axis=1)
        level = silo.level_start + np.cumsum(q1 * s1 - q2 * s2, axis=1)
        ok &= np.all((level >= silo.capacity_min - tol) & (level <= silo.capacity_max + tol), axis=1)
        ok &= q1.sum(1) <= q2.sum() + tol
        p1 = conveyor_power(b1, q1[ok])
        p2 = conveyor_power(b2, q2)
        ok1 = np.all((p1 >= b1.power_min - tol) & (p1 <= b1.power_max + tol), axis=1)
        if not np.all((p2 >= b2.power_min - tol) & (p2 <= b2.power_max + tol)):
            continue
        bc = p1[ok1] + p2
        g_lo = np.maximum(load + bc - renew, mine.grid_min)
        g_hi = np.minimum(load + bc, mine.grid_max)
        feas = np.all(g_lo <= g_hi + tol, axis=1)
        if not feas.any():
            continue
        best["bc_max"] = np.maximum(best["bc_max"], bc[feas].max(0))
        best["bc_min"] = np.minimum(best["bc_min"], bc[feas].min(0))
        best["grid_max"] = np.maximum(best["grid_max"], g_hi[feas].max(0))
        best["grid_min"] = np.minimum(best["grid_min"], g_lo[feas].min(0))
    return best


def stable_brute_force(mine, steps=(10.0, 5.0, 2.5)):
    """Brute-force bounds refined until two successive grids agree, else None."""
    prev = brute_force_region(mine, steps[0])
    for step in steps[1:]:
        cur = brute_force_region(mine, step)
        if all(np.allclose(cur[k], prev[k], atol=1e-9) for k in cur):
            return cur
        prev = cur
    return None
