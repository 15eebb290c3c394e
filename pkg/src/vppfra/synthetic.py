"""Hand-built scenarios: a tiny test fixture and the default two-mine VPP.

All numbers are synthetic. The default scenario has two mines with seven
belt conveyors each (four coal-face feeders, two shaft-silo conveyors and
the main trunk to the preparation plant) over a 24-interval day.
"""

from __future__ import annotations

import numpy as np

from .scenario import (
    BcParams,
    CoupledUnitParams,
    CostCoefficients,
    CtnNode,
    ExogenousProfiles,
    MineScenario,
    SiloParams,
    StorageParams,
    TimeGrid,
    VppScenario,
    OM_KEYS,
)

# Time-of-use shape, currency/kWh.
BASE_PRICE = (
    0.060, 0.055, 0.052, 0.050, 0.052, 0.058, 0.075, 0.095,
    0.115, 0.125, 0.130, 0.120, 0.105, 0.100, 0.108, 0.118,
    0.128, 0.140, 0.150, 0.145, 0.125, 0.100, 0.080, 0.068,
)


def _idle_storage(kind: str) -> StorageParams:
    return StorageParams(kind, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def tiny_fixture(horizon: int = 3) -> VppScenario:
    """One mine: a coal face feeding a main silo that feeds the plant.

    Two conveyors, one silo, no coupled units and idle storage. Numbers are
    round so that extreme points fall on a coarse grid.
    """
    T = horizon
    nodes = (CtnNode("cf1", "CoalFace"), CtnNode("ms1", "MainSilo"), CtnNode("cpp", "PreparationPlant"))
    # speed 2.5 m/s: q/(3.6*2.5) = q/9; cof 1, theta4 + V/3.6 -> 0.5 + 0.69.. (kept exact via theta4)
    bc1 = BcParams("bc1", "cf1", "ms1", cof=1.0, theta2=4.0, theta4=1.0 - 2.5 / 3.6, speed=2.5,
                   feed_max=90.0, ramp_min=-5.0, ramp_max=5.0, power_min=10.0, power_max=80.0)
    bc2 = BcParams("bc2", "ms1", "cpp", cof=1.0, theta2=2.0, theta4=2.0 - 5.0 / 3.6, speed=5.0,
                   feed_max=180.0, ramp_min=-100.0, ramp_max=100.0, power_min=10.0, power_max=400.0)
    silo = SiloParams("ms1", capacity_min=0.0, capacity_max=30.0, level_start=10.0, level_end=10.0)
    om = dict.fromkeys(OM_KEYS, 0.0)
    om["bc"] = 0.01
    prof = ExogenousProfiles(
        price=(0.10,) * T,
        elec_load=(50.0,) * T,
        heat_load=(0.0,) * T,
        pv_avail=(20.0,) * T,
        wt_avail=(0.0,) * T,
        cpp_demand=90.0 * T,
    )
    mine = MineScenario(
        id="tiny",
        time=TimeGrid(T, 1.0),
        ctn_nodes=nodes,
        bc_links=(bc1, bc2),
        silos=(silo,),
        phs=_idle_storage("Electrical"),
        tst=_idle_storage("Thermal"),
        units=(),
        costs=CostCoefficients(0.0, om),
        profiles=prof,
        grid_min=0.0,
        grid_max=500.0,
        search_box={
            "bc_power_min.bc1": (0.0, 30.0), "bc_power_max.bc1": (40.0, 140.0),
            "bc_power_min.bc2": (0.0, 30.0), "bc_power_max.bc2": (200.0, 700.0),
            "grid_min": (-100.0, 60.0), "grid_max": (300.0, 900.0),
            "theta2.bc1": (2.0, 8.0), "theta2.bc2": (1.0, 4.0),
        },
    )
    vpp = VppScenario((mine,))
    vpp.validate()
    return vpp


# Sizing of the default mine; chosen so that every unknown bound binds in
# some record of the default dataset.
DESIGN = {
    "cof": (1.1, 1.15),
    "theta2": (20.0, 60.0),
    "theta4": (0.6, 0.65),
    "cf_speed": (2.8, 3.0),
    "ss_speed": (3.4, 3.6),
    "cf": dict(feed_max=320.0, q_min=30.0, q_cap=134.0, ramp=20.0),
    "ss": dict(feed_max=900.0, q_min=107.0, q_cap=383.0, ramp=1e4),
    "ms": dict(feed_max=1500.0, q_min=243.0, q_cap=923.0, ramp=1e4),
    "ss_silo": (0.0, 400.0, 250.0, 200.0),
    "ms_silo": (0.0, 600.0, 300.0, 300.0),
    "cpp_demand": 12385.0,
    "grid": (2484.0, 7640.0),
}


def _bc(rng, bid, src, dst, speed, feed_max, q_min, q_cap, ramp):
    cof = round(float(rng.uniform(*DESIGN["cof"])), 3)
    theta2 = round(float(rng.uniform(*DESIGN["theta2"])), 2)
    theta4 = round(float(rng.uniform(*DESIGN["theta4"])), 3)
    fixed = cof * theta2 * speed
    slope = cof * (theta4 + speed / 3.6)
    return BcParams(
        bid, src, dst, cof=cof, theta2=theta2, theta4=theta4, speed=speed, feed_max=feed_max,
        ramp_min=-ramp, ramp_max=ramp,
        power_min=round(fixed + slope * q_min, 2), power_max=round(fixed + slope * q_cap, 2),
    )


def _mine(rng: np.random.Generator, mid: str, scale: float) -> MineScenario:
    T = len(BASE_PRICE)
    nodes = tuple(
        [CtnNode(f"{mid}_cf{i}", "CoalFace") for i in range(1, 5)]
        + [CtnNode(f"{mid}_ss1", "ShaftSilo"), CtnNode(f"{mid}_ss2", "ShaftSilo")]
        + [CtnNode(f"{mid}_ms", "MainSilo"), CtnNode(f"{mid}_cpp", "PreparationPlant")]
    )
    links = []
    for i, ss in zip(range(1, 5), ("ss1", "ss1", "ss2", "ss2")):
        speed = round(float(rng.uniform(*DESIGN["cf_speed"])), 2)
        links.append(_bc(rng, f"{mid}_bc{i}", f"{mid}_cf{i}", f"{mid}_{ss}", speed, **DESIGN["cf"]))
    for i, ss in ((5, "ss1"), (6, "ss2")):
        speed = round(float(rng.uniform(*DESIGN["ss_speed"])), 2)
        links.append(_bc(rng, f"{mid}_bc{i}", f"{mid}_{ss}", f"{mid}_ms", speed, **DESIGN["ss"]))
    links.append(_bc(rng, f"{mid}_bc7", f"{mid}_ms", f"{mid}_cpp", 4.0, **DESIGN["ms"]))
    silos = (
        SiloParams(f"{mid}_ss1", *DESIGN["ss_silo"]),
        SiloParams(f"{mid}_ss2", *DESIGN["ss_silo"]),
        SiloParams(f"{mid}_ms", *DESIGN["ms_silo"]),
    )
    phs = StorageParams("Electrical", retention=0.998, efficiency=0.85, energy_min=500.0,
                        energy_max=6000.0 * scale, charge_min=0.0, charge_max=900.0 * scale,
                        discharge_min=0.0, discharge_max=900.0 * scale,
                        energy_start=2000.0 * scale, energy_end=2000.0 * scale)
    tst = StorageParams("Thermal", retention=0.99, efficiency=0.95, energy_min=0.0,
                        energy_max=3000.0, charge_min=0.0, charge_max=600.0,
                        discharge_min=0.0, discharge_max=600.0, energy_start=1000.0, energy_end=1000.0)
    units = (
        CoupledUnitParams("RTO", ehr=0.3, heat_min=300.0, heat_max=900.0),
        CoupledUnitParams("CHP", ehr=0.8, heat_min=0.0, heat_max=2600.0 * scale),
        CoupledUnitParams("GT", ehr=0.5, heat_min=0.0, heat_max=800.0),
        CoupledUnitParams("WSHP", ehr=0.25, heat_min=0.0, heat_max=2400.0),
    )
    om = {"pv": 0.004, "wt": 0.005, "gt": 0.012, "chp": 0.010, "rto": 0.003,
          "bc": 0.006, "phs": 0.004, "tst": 0.002, "wshp": 0.005}
    hours = np.arange(T)
    elec = scale * (3200.0 + 900.0 * np.sin((hours - 6) / 24 * 2 * np.pi).clip(min=0) + rng.uniform(-80, 80, T))
    heat = 1800.0 + 500.0 * np.cos(hours / 24 * 2 * np.pi) + rng.uniform(-50, 50, T)
    pv = 1500.0 * scale * np.clip(np.sin((hours - 6) / 12 * np.pi), 0, None)
    wt = 700.0 + 300.0 * np.sin(hours / 7.0) + rng.uniform(-60, 60, T)
    prof = ExogenousProfiles(
        price=BASE_PRICE,
        elec_load=tuple(round(float(v), 2) for v in elec),
        heat_load=tuple(round(float(v), 2) for v in heat),
        pv_avail=tuple(round(float(v), 2) for v in pv),
        wt_avail=tuple(round(float(v), 2) for v in wt),
        cpp_demand=DESIGN["cpp_demand"],
    )
    mine = MineScenario(
        id=mid,
        time=TimeGrid(T, 1.0),
        ctn_nodes=nodes,
        bc_links=tuple(links),
        silos=silos,
        phs=phs,
        tst=tst,
        units=units,
        costs=CostCoefficients(0.085, om),
        profiles=prof,
        grid_min=round(DESIGN["grid"][0] * scale, 1),
        grid_max=round(DESIGN["grid"][1] * scale, 1),
    )
    return mine


def prior_box(mine: MineScenario, rng: np.random.Generator, spread=(0.25, 0.6)) -> dict[str, tuple[float, float]]:
    """An asymmetric prior box around each true parameter.

    The lower and upper margins are drawn independently, so the box midpoint
    is generally not the true value.
    """
    from .dispatch import mine_param_values

    box = {}
    for name, v in mine_param_values(mine).items():
        width = max(abs(v), 100.0) if not name.startswith("theta2") else abs(v)
        lo = v - float(rng.uniform(*spread)) * width
        hi = v + float(rng.uniform(*spread)) * width
        if name.startswith(("theta2", "bc_power")):
            lo = max(lo, 0.0)
        box[name] = (round(lo, 3), round(hi, 3))
    return box


def default_vpp(seed: int = 7) -> VppScenario:
    """The default two-mine, fourteen-conveyor scenario."""
    rng = np.random.default_rng(seed)
    mines = []
    for mid, scale in (("m1", 1.0), ("m2", 0.85)):
        m = _mine(rng, mid, scale)
        from dataclasses import replace

        m = replace(m, search_box=prior_box(m, rng))
        mines.append(m)
    vpp = VppScenario(tuple(mines))
    vpp.validate()
    return vpp


def random_small_vpp(seed: int, horizon: int = 4) -> VppScenario:
    """A small random one-mine plant for property tests.

    Two coal faces feed a shaft silo, which feeds the main silo and the
    plant. Storage and coupled units are active. Draws are repeated until
    the dispatch LP is feasible, so the result depends on ``seed`` only.
    """
    from .dispatch import build_lp, solve_lp
    from .errors import Infeasible

    rng = np.random.default_rng(seed)
    T = horizon
    for _ in range(50):
        nodes = (
            CtnNode("cf1", "CoalFace"), CtnNode("cf2", "CoalFace"), CtnNode("ss", "ShaftSilo"),
            CtnNode("ms", "MainSilo"), CtnNode("cpp", "PreparationPlant"),
        )
        links = []
        for bid, src, dst, fmax in (("bc1", "cf1", "ss", 200.0), ("bc2", "cf2", "ss", 200.0),
                                    ("bc3", "ss", "ms", 500.0), ("bc4", "ms", "cpp", 600.0)):
            speed = float(rng.uniform(2.0, 4.0))
            cof = float(rng.uniform(1.0, 1.2))
            theta2 = float(rng.uniform(10.0, 50.0))
            theta4 = float(rng.uniform(0.3, 0.8))
            fixed, slope = cof * theta2 * speed, cof * (theta4 + speed / 3.6)
            ramp = float(rng.uniform(30.0, 200.0))
            links.append(BcParams(
                bid, src, dst, cof=cof, theta2=theta2, theta4=theta4, speed=speed, feed_max=fmax,
                ramp_min=-ramp, ramp_max=ramp,
                power_min=fixed + slope * float(rng.uniform(0.0, 0.1)) * fmax,
                power_max=fixed + slope * float(rng.uniform(0.5, 1.0)) * fmax,
            ))
        silos = (
            SiloParams("ss", 0.0, 100.0, 40.0, 40.0),
            SiloParams("ms", 0.0, float(rng.uniform(50.0, 200.0)), 30.0, 30.0),
        )
        phs = StorageParams("Electrical", float(rng.uniform(0.95, 1.0)), float(rng.uniform(0.7, 0.95)),
                            0.0, 2000.0, 0.0, 400.0, 0.0, 400.0, 800.0, 800.0)
        tst = StorageParams("Thermal", float(rng.uniform(0.95, 1.0)), float(rng.uniform(0.8, 1.0)),
                            0.0, 1000.0, 0.0, 300.0, 0.0, 300.0, 500.0, 500.0)
        units = (
            CoupledUnitParams("CHP", ehr=float(rng.uniform(0.5, 1.0)), heat_min=0.0, heat_max=1500.0),
            CoupledUnitParams("WSHP", ehr=float(rng.uniform(0.2, 0.4)), heat_min=0.0, heat_max=1500.0),
        )
        om = {k: float(rng.uniform(0.001, 0.01)) for k in OM_KEYS}
        prof = ExogenousProfiles(
            price=tuple(float(v) for v in rng.uniform(0.04, 0.16, T)),
            elec_load=tuple(float(v) for v in rng.uniform(500.0, 1500.0, T)),
            heat_load=tuple(float(v) for v in rng.uniform(200.0, 800.0, T)),
            pv_avail=tuple(float(v) for v in rng.uniform(0.0, 400.0, T)),
            wt_avail=tuple(float(v) for v in rng.uniform(0.0, 300.0, T)),
            cpp_demand=float(rng.uniform(0.2, 0.6)) * 200.0 * T,
        )
        mine = MineScenario(
            id="r", time=TimeGrid(T, 1.0), ctn_nodes=nodes, bc_links=tuple(links), silos=silos,
            phs=phs, tst=tst, units=units, costs=CostCoefficients(float(rng.uniform(0.03, 0.1)), om),
            profiles=prof, grid_min=float(rng.uniform(-500.0, 0.0)), grid_max=float(rng.uniform(2500.0, 5000.0)),
        )
        from dataclasses import replace

        mine = replace(mine, search_box=prior_box(mine, rng))
        try:
            solve_lp(build_lp(mine))
        except Infeasible:
            continue
        vpp = VppScenario((mine,))
        vpp.validate()
        return vpp
    raise RuntimeError(f"no feasible random scenario for seed {seed}")
