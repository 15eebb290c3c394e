"""
Dispatch of a small coal mine and its flexibility region
========================================================

The tiny fixture is one mine with a coal face, one silo and the preparation
plant, joined by two belt conveyors, over three one-hour intervals. We solve
its cost-minimising dispatch, then ask how far the aggregate conveyor load
and the grid exchange could move in each interval.
"""

from pathlib import Path

import numpy as np

from vppfra.dispatch import dispatch
from vppfra.fra import assess_region
from vppfra.scenario import load_scenario

vpp = load_scenario(Path(__file__).resolve().parent.parent / "fixtures" / "tiny.json")
mine = vpp.mines[0]

# optimal dispatch at the scenario's own prices
sol = dispatch(mine)
print(f"dispatch cost: {sol.objective_value:.2f}")
print("grid import per interval (kW):", np.round(sol["p_g"], 2))
for bc in mine.bc_links:
    print(f"conveyor {bc.id}: feed {np.round(sol[f'q_bc.{bc.id}'], 2)} t/h, "
          f"power {np.round(sol[f'p_bc.{bc.id}'], 2)} kW")

# every row of the dispatch CSV is one interval
sol.to_csv(Path("dispatch_tiny.csv"))

# per-interval extremes of the aggregate conveyor load and grid exchange
region = assess_region(vpp)
for t in range(region.horizon):
    print(f"t={t}: conveyors {region.bc_min[t]:7.1f} .. {region.bc_max[t]:7.1f} kW, "
          f"grid {region.grid_min[t]:7.1f} .. {region.grid_max[t]:7.1f} kW")
print(f"peak-valley span of the conveyor load: {region.peak_valley:.1f} kW")
