"""Feasible region of the aggregate: per-interval support bounds and their errors.

The region of the aggregated plant is represented by the extreme values each
aggregate series can take at each interval with every other quantity free.
Mines share no constraint, so each support value is a sum of per-mine LPs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .dispatch import build_lp, observable_maps, solve_lp
from .errors import HorizonMismatch, ParseError, ZeroTruth
from .scenario import VppScenario

TARGETS = ("bc_total", "grid")
SERIES = ("bc_max", "bc_min", "grid_max", "grid_min")


def _mine_params(params, mine_id: str) -> dict[str, float] | None:
    """Per-mine local parameter dict from a ParameterVector, a flat dict, or None."""
    if params is None:
        return None
    if hasattr(params, "local"):
        return params.local(mine_id)
    prefix = f"{mine_id}."
    return {k[len(prefix):]: float(v) for k, v in params.items() if k.startswith(prefix)}


def _direction(lp, target: str, t: int) -> np.ndarray:
    Mbc, Mg = observable_maps(lp)
    M = Mbc if target == "bc_total" else Mg
    return np.asarray(M[t].todense()).ravel()


def support_bound(vpp: VppScenario, params, target: str, t: int, sense: str) -> float:
    """Largest (``sense="max"``) or smallest aggregate value of ``target`` at ``t``.

    Args:
        vpp: the plant.
        params: parameter values (ParameterVector or ``{"<mine>.<local>": v}``);
            ``None`` uses the values stored in the scenario.
        target: ``"bc_total"`` or ``"grid"``.
        t: interval index.
        sense: ``"max"`` or ``"min"``.

    Raises:
        Infeasible: the constraint set of some mine is empty.
    """
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    if not 0 <= t < vpp.time.horizon_length:
        raise ValueError(f"interval {t} outside the horizon")
    sign = -1.0 if sense == "max" else 1.0
    total = 0.0
    for mine in vpp.mines:
        lp = build_lp(mine, _mine_params(params, mine.id))
        d = _direction(lp, target, t)
        total += float(d @ solve_lp(lp, objective=sign * d).primal)
    return total


@dataclass
class RegionBounds:
    bc_max: np.ndarray
    bc_min: np.ndarray
    grid_max: np.ndarray
    grid_min: np.ndarray
    provenance: str = "surrogate"

    @property
    def horizon(self) -> int:
        return self.bc_max.size

    @property
    def peak_valley(self) -> float:
        """Widest conveyor-load swing available across the horizon (kW)."""
        return float(self.bc_max.max() - self.bc_min.min())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *SERIES])
            for t in range(self.horizon):
                w.writerow([t, *(repr(float(getattr(self, s)[t])) for s in SERIES)])

    @classmethod
    def from_csv(cls, path: str | Path, provenance: str = "surrogate") -> RegionBounds:
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            if not rows or tuple(rows[0]) != ("t", *SERIES):
                raise ValueError(f"columns must be t,{','.join(SERIES)}")
            cols = {s: np.array([float(r[s]) for r in rows]) for s in SERIES}
        except (OSError, ValueError, KeyError) as e:
            raise ParseError(f"cannot read region file {path}: {e}") from None
        return cls(**cols, provenance=provenance)


def assess_region(vpp: VppScenario, params=None, provenance: str | None = None) -> RegionBounds:
    """All four support series over the horizon.

    Each mine LP is built once and re-solved with the objective of every
    query. ``provenance`` defaults to ``"true"`` when ``params`` is None.
    """
    T = vpp.time.horizon_length
    out = {s: np.zeros(T) for s in SERIES}
    for mine in vpp.mines:
        lp = build_lp(mine, _mine_params(params, mine.id))
        Mbc, Mg = observable_maps(lp)
        for target, M in (("bc", Mbc), ("grid", Mg)):
            for t in range(T):
                d = np.asarray(M[t].todense()).ravel()
                out[f"{target}_max"][t] += d @ solve_lp(lp, objective=-d).primal
                out[f"{target}_min"][t] += d @ solve_lp(lp, objective=d).primal
    if provenance is None:
        provenance = "true" if params is None else "surrogate"
    return RegionBounds(**out, provenance=provenance)


def random_direction_support(vpp: VppScenario, params, k: int, seed: int) -> np.ndarray:
    """Support values along ``k`` random unit directions in (bc_total, grid) space.

    Directions are drawn on the unit sphere of dimension ``2T`` with the
    conveyor block first; row ``i`` of the result is ``max d_i'(bc, grid)``.
    """
    T = vpp.time.horizon_length
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    D = rng.normal(size=(k, 2 * T))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    vals = np.zeros(k)
    for mine in vpp.mines:
        lp = build_lp(mine, _mine_params(params, mine.id))
        Mbc, Mg = observable_maps(lp)
        for i, d in enumerate(D):
            c = Mbc.T @ d[:T] + Mg.T @ d[T:]
            vals[i] += c @ solve_lp(lp, objective=-c).primal
    return vals


# ------------------------------------------------------------------ metrics


@dataclass
class SeriesError:
    rmse_pct: float
    mae_pct: float
    nan_flag: bool = False


@dataclass
class FraMetrics:
    series: dict[str, SeriesError] = field(default_factory=dict)

    def __getitem__(self, name: str) -> SeriesError:
        return self.series[name]

    def to_dict(self) -> dict:
        return {k: {kk: (None if isinstance(vv, float) and math.isnan(vv) else vv) for kk, vv in asdict(v).items()}
                for k, v in self.series.items()}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def relative_errors(est, truth) -> SeriesError:
    """Percentage RMSE and MAE; intervals where the truth is zero are skipped."""
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    keep = truth != 0
    if not keep.any():
        return SeriesError(float("nan"), float("nan"), True)
    rel = (est[keep] - truth[keep]) / truth[keep]
    return SeriesError(float(100 * np.sqrt(np.mean(rel**2))), float(100 * np.mean(np.abs(rel))))


def theta2_errors(xi_est: Mapping[str, float], xi_true: Mapping[str, float]) -> dict[str, float]:
    """Percentage error of every conveyor coefficient, keyed like the inputs.

    Raises:
        ZeroTruth: a true coefficient is zero.
        ValueError: the key sets differ.
    """
    if set(xi_est) != set(xi_true):
        raise ValueError("estimate and truth cover different conveyors")
    out = {}
    for k, v in xi_true.items():
        if v == 0:
            raise ZeroTruth(f"true coefficient of {k} is zero")
        out[k] = 100.0 * abs(xi_est[k] - v) / abs(v)
    return out


def compare_regions(est: RegionBounds, truth: RegionBounds, theta2: Mapping[str, float] | None = None) -> FraMetrics:
    """Percentage errors of every support series, plus the coefficient errors if given.

    ``theta2`` holds per-conveyor percentage errors from :func:`theta2_errors`;
    their RMSE and MAE form the ``theta2`` row.

    Raises:
        HorizonMismatch: the two regions cover different horizons.
    """
    if est.horizon != truth.horizon:
        raise HorizonMismatch(f"horizon mismatch: {est.horizon} vs {truth.horizon} intervals")
    m = FraMetrics({s: relative_errors(getattr(est, s), getattr(truth, s)) for s in SERIES})
    if theta2 is not None:
        e = np.array(list(theta2.values())) / 100.0
        m.series["theta2"] = SeriesError(float(100 * np.sqrt(np.mean(e**2))), float(100 * np.mean(np.abs(e))))
    return m
