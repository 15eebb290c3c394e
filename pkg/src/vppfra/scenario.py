"""Domain types for a coal-mine energy system and its coal transportation network.

A scenario file is a JSON document with top-level keys ``time`` and ``mines``.
Every mine carries ``ctn`` (nodes and belt-conveyor links), ``devices``
(silos, pumped hydro, thermal tank, coupled units), ``costs``, ``profiles``
and ``grid``; an optional ``search_box`` gives the prior box for every
unknown parameter. See ``docs/scenario_schema.md`` for the field list.

Units are fixed package-wide: power kW, heat kW (thermal), energy kWh, coal
mass tonnes, feed rate t/h, one interval lasts ``interval_hours``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ParseError, ValidationError

COAL_FACE = "CoalFace"
SHAFT_SILO = "ShaftSilo"
MAIN_SILO = "MainSilo"
PREPARATION_PLANT = "PreparationPlant"
NODE_KINDS = (COAL_FACE, SHAFT_SILO, MAIN_SILO, PREPARATION_PLANT)
_LEVEL = {kind: i for i, kind in enumerate(NODE_KINDS)}

UNIT_KINDS = ("RTO", "CHP", "GT", "WSHP")
# Units whose electrical power appears on the consumption side of the balance.
CONSUMING_UNITS = frozenset({"WSHP"})
OM_KEYS = ("pv", "wt", "gt", "chp", "rto", "bc", "phs", "tst", "wshp")


@dataclass(frozen=True)
class TimeGrid:
    horizon_length: int
    interval_hours: float = 1.0

    def validate(self) -> None:
        if self.horizon_length < 2:
            raise ValidationError("horizon_length must be >= 2", "time")
        if not self.interval_hours > 0:
            raise ValidationError("interval_hours must be > 0", "time")


@dataclass(frozen=True)
class CtnNode:
    id: str
    kind: str

    @property
    def level(self) -> int:
        return _LEVEL[self.kind]


@dataclass(frozen=True)
class BcParams:
    """One belt conveyor carrying coal along a CTN link.

    Electrical power follows ``p = cof * (theta2 * speed + (theta4 + speed / 3.6) * q)``
    with ``q`` the feed rate in t/h.
    """

    id: str
    from_node: str
    to_node: str
    cof: float
    theta2: float
    theta4: float
    speed: float
    feed_max: float
    ramp_min: float
    ramp_max: float
    power_min: float
    power_max: float

    @property
    def fixed_power(self) -> float:
        """Power drawn at zero feed (kW)."""
        return self.cof * self.theta2 * self.speed

    @property
    def power_per_feed(self) -> float:
        """Marginal power per unit feed rate (kW per t/h)."""
        return self.cof * (self.theta4 + self.speed / 3.6)

    def validate(self) -> None:
        if self.power_min > self.power_max:
            raise ValidationError("power_min > power_max", self.id)
        if not self.ramp_min <= 0 <= self.ramp_max:
            raise ValidationError("ramp limits must satisfy ramp_min <= 0 <= ramp_max", self.id)
        if not self.speed > 0:
            raise ValidationError("speed must be > 0", self.id)
        if not self.feed_max > 0:
            raise ValidationError("feed_max must be > 0", self.id)


@dataclass(frozen=True)
class SiloParams:
    node_id: str
    capacity_min: float
    capacity_max: float
    level_start: float
    level_end: float

    def validate(self) -> None:
        for name in ("level_start", "level_end"):
            v = getattr(self, name)
            if not self.capacity_min <= v <= self.capacity_max:
                raise ValidationError(f"silo {name} outside [capacity_min, capacity_max]", self.node_id)


@dataclass(frozen=True)
class StorageParams:
    kind: str  # "Electrical" (pumped hydro) or "Thermal" (tank)
    retention: float
    efficiency: float
    energy_min: float
    energy_max: float
    charge_min: float
    charge_max: float
    discharge_min: float
    discharge_max: float
    energy_start: float
    energy_end: float

    def validate(self) -> None:
        tag = self.kind
        if self.kind not in ("Electrical", "Thermal"):
            raise ValidationError(f"unknown storage kind {self.kind!r}", tag)
        if not 0 < self.retention <= 1:
            raise ValidationError("retention must lie in (0, 1]", tag)
        if not 0 < self.efficiency <= 1:
            raise ValidationError("efficiency must lie in (0, 1]", tag)
        for name in ("energy_start", "energy_end"):
            if not self.energy_min <= getattr(self, name) <= self.energy_max:
                raise ValidationError(f"storage {name} outside [energy_min, energy_max]", tag)
        if self.charge_min > self.charge_max or self.discharge_min > self.discharge_max:
            raise ValidationError("storage power box has min > max", tag)


@dataclass(frozen=True)
class CoupledUnitParams:
    """Unit with electrical output tied to heat output by ``p = ehr * h``.

    ``ehr`` is the magnitude of the ratio; whether the unit generates or consumes
    electricity follows from ``kind`` (WSHP consumes).
    """

    kind: str
    ehr: float
    heat_min: float
    heat_max: float

    def validate(self) -> None:
        if self.kind not in UNIT_KINDS:
            raise ValidationError(f"unknown unit kind {self.kind!r}", self.kind)
        if self.heat_min > self.heat_max:
            raise ValidationError("heat_min > heat_max", self.kind)
        if not self.ehr > 0:
            raise ValidationError("ehr must be > 0", self.kind)


@dataclass(frozen=True)
class CostCoefficients:
    fuel_chp: float
    om: dict[str, float] = field(default_factory=lambda: dict.fromkeys(OM_KEYS, 0.0))

    def __hash__(self):
        return hash((self.fuel_chp, tuple(sorted(self.om.items()))))

    def validate(self) -> None:
        if self.fuel_chp < 0:
            raise ValidationError("fuel_chp must be >= 0", "costs")
        for k in OM_KEYS:
            if k not in self.om:
                raise ValidationError(f"missing om coefficient {k!r}", "costs")
            if self.om[k] < 0:
                raise ValidationError(f"om coefficient {k!r} must be >= 0", "costs")


@dataclass(frozen=True)
class ExogenousProfiles:
    price: tuple[float, ...]
    elec_load: tuple[float, ...]
    heat_load: tuple[float, ...]
    pv_avail: tuple[float, ...]
    wt_avail: tuple[float, ...]
    cpp_demand: float

    def validate(self, horizon: int) -> None:
        for name in ("price", "elec_load", "heat_load", "pv_avail", "wt_avail"):
            series = getattr(self, name)
            if len(series) != horizon:
                raise ValidationError(f"profile {name} has length {len(series)}, expected {horizon}", name)
            if name != "price" and min(series) < 0:
                raise ValidationError(f"profile {name} must be >= 0", name)
        if self.cpp_demand < 0:
            raise ValidationError("cpp_demand must be >= 0", "cpp_demand")


@dataclass(frozen=True)
class MineScenario:
    id: str
    time: TimeGrid
    ctn_nodes: tuple[CtnNode, ...]
    bc_links: tuple[BcParams, ...]
    silos: tuple[SiloParams, ...]
    phs: StorageParams
    tst: StorageParams
    units: tuple[CoupledUnitParams, ...]
    costs: CostCoefficients
    profiles: ExogenousProfiles
    grid_min: float
    grid_max: float
    # Prior box per unknown parameter: key -> (lo, hi); keys as in ParameterVector.
    search_box: dict[str, tuple[float, float]] | None = None

    def __hash__(self):
        return id(self)

    @property
    def horizon(self) -> int:
        return self.time.horizon_length

    def node(self, node_id: str) -> CtnNode:
        for n in self.ctn_nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def links_of_kind(self, src_kind: str, dst_kind: str | None = None) -> list[BcParams]:
        kinds = {n.id: n.kind for n in self.ctn_nodes}
        return [
            bc
            for bc in self.bc_links
            if kinds[bc.from_node] == src_kind and (dst_kind is None or kinds[bc.to_node] == dst_kind)
        ]

    def with_price(self, price) -> MineScenario:
        return replace(self, profiles=replace(self.profiles, price=tuple(float(p) for p in price)))

    def validate(self) -> None:
        self.time.validate()
        ids = [n.id for n in self.ctn_nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate CTN node id", self.id)
        for n in self.ctn_nodes:
            if n.kind not in NODE_KINDS:
                raise ValidationError(f"unknown node kind {n.kind!r}", n.id)
        bc_ids = [bc.id for bc in self.bc_links]
        if len(set(bc_ids)) != len(bc_ids):
            raise ValidationError("duplicate belt-conveyor id", self.id)
        for bc in self.bc_links:
            bc.validate()
        violations = validate_ctn(self)
        if violations:
            raise ValidationError(violations[0].message, violations[0].element)
        silo_nodes = {n.id for n in self.ctn_nodes if n.kind in (SHAFT_SILO, MAIN_SILO)}
        seen = set()
        for s in self.silos:
            if s.node_id not in silo_nodes:
                raise ValidationError("silo attached to a node that is not a silo", s.node_id)
            if s.node_id in seen:
                raise ValidationError("duplicate silo", s.node_id)
            seen.add(s.node_id)
            s.validate()
        if seen != silo_nodes:
            missing = sorted(silo_nodes - seen)
            raise ValidationError("silo node without SiloParams", missing[0])
        self.phs.validate()
        self.tst.validate()
        if self.phs.kind != "Electrical" or self.tst.kind != "Thermal":
            raise ValidationError("phs must be Electrical and tst Thermal", self.id)
        kinds = [u.kind for u in self.units]
        if len(set(kinds)) != len(kinds):
            raise ValidationError("duplicate coupled unit kind", self.id)
        for u in self.units:
            u.validate()
        self.costs.validate()
        self.profiles.validate(self.horizon)
        if self.grid_min > self.grid_max:
            raise ValidationError("grid_min > grid_max", self.id)


@dataclass(frozen=True)
class VppScenario:
    mines: tuple[MineScenario, ...]

    @property
    def time(self) -> TimeGrid:
        return self.mines[0].time

    @property
    def horizon(self) -> int:
        return self.time.horizon_length

    @property
    def price(self) -> np.ndarray:
        return np.asarray(self.mines[0].profiles.price, dtype=float)

    def with_price(self, price) -> VppScenario:
        return VppScenario(tuple(m.with_price(price) for m in self.mines))

    def mine(self, mine_id: str) -> MineScenario:
        for m in self.mines:
            if m.id == mine_id:
                return m
        raise KeyError(mine_id)

    def validate(self) -> None:
        if not self.mines:
            raise ValidationError("a VPP needs at least one mine")
        ids = [m.id for m in self.mines]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate mine id")
        for m in self.mines:
            m.validate()
            if m.time != self.mines[0].time:
                raise ValidationError("all mines must share the same time grid", m.id)
            if m.profiles.price != self.mines[0].profiles.price:
                raise ValidationError("all mines must face the same price series", m.id)


@dataclass(frozen=True)
class CtnViolation:
    rule: str
    message: str
    element: str | None = None


def validate_ctn(mine: MineScenario) -> list[CtnViolation]:
    """Check that the CTN is a radial CF -> SS -> MS -> CPP forest.

    Violations are returned, never raised. An empty list means: one
    preparation plant, at least one coal face, links strictly ascending in
    level, no cycles, one outbound link per non-plant node, at least one
    inbound link per shaft silo, and every coal face draining into the plant.
    """
    out: list[CtnViolation] = []
    kinds = {n.id: n.kind for n in mine.ctn_nodes}
    plants = [n for n, k in kinds.items() if k == PREPARATION_PLANT]
    if len(plants) != 1:
        out.append(CtnViolation("plant", f"expected exactly one PreparationPlant, found {len(plants)}", mine.id))
    if not any(k == COAL_FACE for k in kinds.values()):
        out.append(CtnViolation("coal_face", "no CoalFace node", mine.id))

    succ: dict[str, list[str]] = {n: [] for n in kinds}
    pred: dict[str, list[str]] = {n: [] for n in kinds}
    for bc in mine.bc_links:
        if bc.from_node not in kinds or bc.to_node not in kinds:
            out.append(CtnViolation("dangling", "link references an unknown node", bc.id))
            continue
        succ[bc.from_node].append(bc.to_node)
        pred[bc.to_node].append(bc.from_node)
        if _LEVEL[kinds[bc.to_node]] <= _LEVEL[kinds[bc.from_node]]:
            out.append(CtnViolation("direction", f"flow direction {kinds[bc.from_node]} -> {kinds[bc.to_node]}", bc.id))

    if _has_cycle(succ):
        out.append(CtnViolation("cycle", "cycle detected", mine.id))

    for n, k in kinds.items():
        if k == PREPARATION_PLANT:
            if succ[n]:
                out.append(CtnViolation("outbound", "PreparationPlant has outbound links", n))
            continue
        if len(succ[n]) > 1:
            out.append(CtnViolation("outbound", "multiple outbound links", n))
        elif not succ[n]:
            out.append(CtnViolation("outbound", "node has no outbound link", n))
        if k == SHAFT_SILO and not pred[n]:
            out.append(CtnViolation("inbound", "ShaftSilo has no inbound link", n))
        if k == MAIN_SILO and len(succ[n]) == 1 and kinds.get(succ[n][0]) != PREPARATION_PLANT:
            out.append(CtnViolation("main_silo", "MainSilo must link into the PreparationPlant", n))

    if not out:
        plant = plants[0]
        for n, k in kinds.items():
            if k == COAL_FACE and not _reaches(succ, n, plant):
                out.append(CtnViolation("reach", "CoalFace does not reach the PreparationPlant", n))
    return out


def _has_cycle(succ: dict[str, list[str]]) -> bool:
    state: dict[str, int] = {}
    for root in succ:
        if root in state:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                return True
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    return False


def _reaches(succ, start, goal) -> bool:
    seen = set()
    node = start
    while node != goal:
        if node in seen or not succ[node]:
            return False
        seen.add(node)
        node = succ[node][0]
    return True


# --------------------------------------------------------------------- I/O


def _num(d: dict, key: str, where: str) -> float:
    try:
        v = d[key]
    except KeyError:
        raise ParseError(f"missing field {key!r} in {where}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"field {key!r} in {where} must be numeric")
    v = float(v)
    if not math.isfinite(v):
        raise ParseError(f"field {key!r} in {where} must be finite")
    return v


def _series(d: dict, key: str, where: str) -> tuple[float, ...]:
    try:
        v = d[key]
    except KeyError:
        raise ParseError(f"missing series {key!r} in {where}") from None
    if not isinstance(v, list):
        raise ParseError(f"series {key!r} in {where} must be an array")
    return tuple(_num({key: x}, key, where) for x in v)


def _storage_from(d: dict, kind: str) -> StorageParams:
    names = [f.name for f in fields(StorageParams) if f.name != "kind"]
    return StorageParams(kind=kind, **{n: _num(d, n, kind) for n in names})


def _mine_from_dict(d: dict, time: TimeGrid) -> MineScenario:
    try:
        mid = str(d["id"])
        ctn, dev, costs, prof, grid = d["ctn"], d["devices"], d["costs"], d["profiles"], d["grid"]
    except KeyError as e:
        raise ParseError(f"mine entry missing key {e.args[0]!r}") from None
    nodes = tuple(CtnNode(str(n["id"]), str(n["kind"])) for n in ctn["nodes"])
    bc_fields = [f.name for f in fields(BcParams) if f.name not in ("id", "from_node", "to_node")]
    links = tuple(
        BcParams(
            id=str(b["id"]),
            from_node=str(b["from_node"]),
            to_node=str(b["to_node"]),
            **{n: _num(b, n, f"link {b.get('id')}") for n in bc_fields},
        )
        for b in ctn["links"]
    )
    silo_fields = [f.name for f in fields(SiloParams) if f.name != "node_id"]
    silos = tuple(
        SiloParams(node_id=str(s["node_id"]), **{n: _num(s, n, f"silo {s.get('node_id')}") for n in silo_fields})
        for s in dev.get("silos", [])
    )
    units = tuple(
        CoupledUnitParams(
            kind=str(u["kind"]),
            ehr=_num(u, "ehr", "unit"),
            heat_min=_num(u, "heat_min", "unit"),
            heat_max=_num(u, "heat_max", "unit"),
        )
        for u in dev.get("units", [])
    )
    om = costs.get("om", {})
    cost = CostCoefficients(
        fuel_chp=_num(costs, "fuel_chp", "costs"),
        om={k: _num(om, k, "costs.om") for k in OM_KEYS},
    )
    profiles = ExogenousProfiles(
        price=_series(prof, "price", "profiles"),
        elec_load=_series(prof, "elec_load", "profiles"),
        heat_load=_series(prof, "heat_load", "profiles"),
        pv_avail=_series(prof, "pv_avail", "profiles"),
        wt_avail=_series(prof, "wt_avail", "profiles"),
        cpp_demand=_num(prof, "cpp_demand", "profiles"),
    )
    box = None
    if "search_box" in d:
        box = {str(k): (float(v[0]), float(v[1])) for k, v in d["search_box"].items()}
    return MineScenario(
        id=mid,
        time=time,
        ctn_nodes=nodes,
        bc_links=links,
        silos=silos,
        phs=_storage_from(dev["phs"], "Electrical"),
        tst=_storage_from(dev["tst"], "Thermal"),
        units=units,
        costs=cost,
        profiles=profiles,
        grid_min=_num(grid, "min", "grid"),
        grid_max=_num(grid, "max", "grid"),
        search_box=box,
    )


def scenario_from_dict(doc: dict) -> VppScenario:
    """Build and validate a VppScenario from a parsed JSON document."""
    if not isinstance(doc, dict) or "time" not in doc or "mines" not in doc:
        raise ParseError("scenario document needs top-level keys 'time' and 'mines'")
    t = doc["time"]
    time = TimeGrid(int(_num(t, "horizon_length", "time")), _num(t, "interval_hours", "time") if "interval_hours" in t else 1.0)
    try:
        mines = tuple(_mine_from_dict(m, time) for m in doc["mines"])
    except (TypeError, AttributeError) as e:
        raise ParseError(f"malformed mine entry: {e}") from None
    vpp = VppScenario(mines)
    vpp.validate()
    return vpp


def load_scenario(path: str | Path) -> VppScenario:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read scenario file {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"scenario file {path} is not valid JSON: {e}") from None
    return scenario_from_dict(doc)


def _storage_to(s: StorageParams) -> dict:
    return {f.name: getattr(s, f.name) for f in fields(StorageParams) if f.name != "kind"}


def scenario_to_dict(vpp: VppScenario) -> dict[str, Any]:
    mines = []
    for m in vpp.mines:
        d = {
            "id": m.id,
            "ctn": {
                "nodes": [{"id": n.id, "kind": n.kind} for n in m.ctn_nodes],
                "links": [{f.name: getattr(b, f.name) for f in fields(BcParams)} for b in m.bc_links],
            },
            "devices": {
                "silos": [{f.name: getattr(s, f.name) for f in fields(SiloParams)} for s in m.silos],
                "phs": _storage_to(m.phs),
                "tst": _storage_to(m.tst),
                "units": [{f.name: getattr(u, f.name) for f in fields(CoupledUnitParams)} for u in m.units],
            },
            "costs": {"fuel_chp": m.costs.fuel_chp, "om": dict(m.costs.om)},
            "profiles": {
                "price": list(m.profiles.price),
                "elec_load": list(m.profiles.elec_load),
                "heat_load": list(m.profiles.heat_load),
                "pv_avail": list(m.profiles.pv_avail),
                "wt_avail": list(m.profiles.wt_avail),
                "cpp_demand": m.profiles.cpp_demand,
            },
            "grid": {"min": m.grid_min, "max": m.grid_max},
        }
        if m.search_box is not None:
            d["search_box"] = {k: list(v) for k, v in m.search_box.items()}
        mines.append(d)
    return {
        "time": {"horizon_length": vpp.time.horizon_length, "interval_hours": vpp.time.interval_hours},
        "mines": mines,
    }


def save_scenario(vpp: VppScenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(vpp), indent=2))
