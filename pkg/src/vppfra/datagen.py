"""Synthetic history of optimal dispatches under varied prices.

Each record holds one price series (shared by every mine) and, per mine, the
aggregate conveyor power and the grid exchange that the true model dispatches
at that price. Observation noise, when requested, is multiplicative.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispatch import build_lp, observable_maps, solve_lp
from .errors import HorizonMismatch, Infeasible, ParseError
from .scenario import VppScenario

log = logging.getLogger(__name__)

# fixed labels for independent random substreams
PRICE_STREAM = 0
NOISE_STREAM = 1


@dataclass
class DataRecord:
    price: np.ndarray
    bc_total_obs: dict[str, np.ndarray]
    grid_obs: dict[str, np.ndarray]


@dataclass
class Dataset:
    records: list[DataRecord]
    seed: int
    noise_sigma: float
    spread: float = 0.0
    skipped: int = 0
    coverage: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def horizon(self) -> int:
        return len(self.records[0].price)

    @property
    def mine_ids(self) -> list[str]:
        return list(self.records[0].bc_total_obs)

    def check_against(self, vpp: VppScenario) -> None:
        """Raise HorizonMismatch (or ValueError on mine ids) if ``vpp`` does not fit."""
        if self.horizon != vpp.time.horizon_length:
            raise HorizonMismatch(
                f"horizon mismatch: dataset has {self.horizon} intervals, scenario has {vpp.time.horizon_length}"
            )
        missing = sorted(set(m.id for m in vpp.mines) ^ set(self.mine_ids))
        if missing:
            raise ValueError(f"dataset and scenario disagree on mines: {missing}")

    def uncovered(self) -> list[str]:
        return [k for k, v in self.coverage.items() if v == 0]


def perturb_prices(base, n: int, seed: int, spread: float) -> list[np.ndarray]:
    """``n`` price series ``base * (1 + u)``, ``u`` uniform on ``[-spread, spread]``.

    Draws are i.i.d. per interval and per series and depend only on ``seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= spread < 1.0:
        raise ValueError("spread must lie in [0, 1)")
    base = np.asarray(base, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(PRICE_STREAM,)))
    u = rng.uniform(-spread, spread, size=(n, base.size))
    return [base * (1.0 + u[i]) for i in range(n)]


def _noise_rng(seed: int, record: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(NOISE_STREAM, record)))


def _solve_record(vpp: VppScenario, price: np.ndarray):
    """True dispatch of every mine at ``price``; per mine observables and active hooks."""
    bc, grid, active = {}, {}, {}
    for mine in vpp.mines:
        lp = build_lp(mine.with_price(price))
        sol = solve_lp(lp)
        Mbc, Mg = observable_maps(lp)
        bc[mine.id] = Mbc @ sol.primal
        grid[mine.id] = Mg @ sol.primal
        active[mine.id] = _binding_params(lp, sol)
    return bc, grid, active


def _binding_params(lp, sol, tol: float = 1e-7) -> list[str]:
    """Parameters with at least one hooked inequality that is tight with a positive multiplier.

    Parameters hooked only to equality rows count as binding.
    """
    slack = lp.ineq_rhs - lp.ineq_matrix @ sol.primal
    out = []
    for name, hooks in lp.param_hooks.items():
        for hk in hooks:
            if hk.kind == "eq":
                out.append(name)
                break
            scale = 1.0 + abs(lp.ineq_rhs[hk.row])
            if slack[hk.row] <= tol * scale and sol.ineq_duals[hk.row] > tol:
                out.append(name)
                break
    return out


def _record_task(args):
    vpp, price = args
    try:
        return _solve_record(vpp, price)
    except Infeasible as e:
        return e


def generate_history(
    vpp: VppScenario,
    n: int = 50,
    seed: int = 7,
    spread: float = 0.3,
    noise_sigma: float = 0.0,
    jobs: int = 1,
) -> Dataset:
    """Dispatch the true model under ``n`` perturbed price series.

    Records whose dispatch is infeasible are skipped with a warning and
    counted in ``Dataset.skipped``. ``Dataset.coverage`` maps each parameter
    name to the number of records in which it binds.
    """
    base = vpp.mines[0].profiles.price
    prices = perturb_prices(base, n, seed, spread)
    tasks = [(vpp, p) for p in prices]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_record_task, tasks))
    else:
        results = [_record_task(t) for t in tasks]
    records, skipped = [], 0
    coverage = {f"{m.id}.{k}": 0 for m in vpp.mines for k in build_lp(m).param_values}
    for i, (price, res) in enumerate(zip(prices, results)):
        if isinstance(res, Exception):
            log.warning("record %d skipped: %s", i, res)
            skipped += 1
            continue
        bc, grid, active = res
        if noise_sigma > 0:
            rng = _noise_rng(seed, i)
            for mid in bc:
                bc[mid] = bc[mid] * (1.0 + rng.normal(0.0, noise_sigma, bc[mid].size))
                grid[mid] = grid[mid] * (1.0 + rng.normal(0.0, noise_sigma, grid[mid].size))
        for mid, names in active.items():
            for name in names:
                coverage[f"{mid}.{name}"] += 1
        records.append(DataRecord(np.asarray(price), bc, grid))
    if not records:
        raise Infeasible("every record was infeasible", ["all"])
    ds = Dataset(records, seed, noise_sigma, spread, skipped, coverage)
    for name in ds.uncovered():
        log.info("parameter %s never binds in the dataset", name)
    return ds


def replay_observables(vpp: VppScenario, price) -> tuple[dict, dict]:
    """Noiseless observables of the true model at ``price``."""
    bc, grid, _ = _solve_record(vpp, np.asarray(price, dtype=float))
    return bc, grid


# ----------------------------------------------------------------------- io

COLUMNS = ("record", "t", "price", "mine", "bc_total", "grid")


def meta_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the long-format CSV and its metadata companion."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r, rec in enumerate(ds.records):
            for mid in rec.bc_total_obs:
                for t in range(rec.price.size):
                    w.writerow([r, t, repr(float(rec.price[t])), mid,
                                repr(float(rec.bc_total_obs[mid][t])), repr(float(rec.grid_obs[mid][t]))])
    meta = {
        "seed": ds.seed,
        "spread": ds.spread,
        "noise_sigma": ds.noise_sigma,
        "records": len(ds.records),
        "skipped": ds.skipped,
        "coverage": ds.coverage,
    }
    meta_path(path).write_text(json.dumps(meta, indent=2))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise ParseError(f"cannot read dataset {path}: {e}") from None
    if not rows or tuple(rows[0].keys()) != COLUMNS:
        raise ParseError(f"dataset {path} must have columns {','.join(COLUMNS)}")
    data: dict[int, dict] = {}
    try:
        for row in rows:
            r, t = int(row["record"]), int(row["t"])
            d = data.setdefault(r, {"price": {}, "bc": {}, "grid": {}})
            d["price"][t] = float(row["price"])
            d["bc"].setdefault(row["mine"], {})[t] = float(row["bc_total"])
            d["grid"].setdefault(row["mine"], {})[t] = float(row["grid"])
    except (ValueError, KeyError) as e:
        raise ParseError(f"malformed dataset row in {path}: {e}") from None

    def series(m: dict) -> np.ndarray:
        T = len(m)
        if sorted(m) != list(range(T)):
            raise ParseError(f"dataset {path} has gaps in the interval index")
        return np.array([m[t] for t in range(T)])

    records = []
    for r in sorted(data):
        d = data[r]
        rec = DataRecord(series(d["price"]), {k: series(v) for k, v in d["bc"].items()},
                         {k: series(v) for k, v in d["grid"].items()})
        lens = {rec.price.size} | {v.size for v in rec.bc_total_obs.values()} | {v.size for v in rec.grid_obs.values()}
        if len(lens) != 1:
            raise HorizonMismatch(f"record {r} in {path} mixes series lengths {sorted(lens)}")
        records.append(rec)
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        try:
            meta = json.loads(mp.read_text())
        except ValueError as e:
            raise ParseError(f"cannot read dataset metadata {mp}: {e}") from None
    return Dataset(records, int(meta.get("seed", 0)), float(meta.get("noise_sigma", 0.0)),
                   float(meta.get("spread", 0.0)), int(meta.get("skipped", 0)), dict(meta.get("coverage", {})))
