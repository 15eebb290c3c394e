"""The vector of unknown device parameters and its prior box."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dispatch import mine_param_values
from ..errors import ParseError, ValidationError
from ..scenario import VppScenario


@dataclass
class ParameterVector:
    """Unknown parameters of every mine, flattened.

    Names are ``<mine>.<local>`` with ``<local>`` one of
    ``bc_power_min.<bc>``, ``bc_power_max.<bc>``, ``grid_min``, ``grid_max``
    and ``theta2.<bc>``.
    """

    names: list[str]
    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self._pos = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self._pos[name]])

    def index(self, name: str) -> int:
        return self._pos[name]

    def copy(self, values=None) -> ParameterVector:
        v = self.values.copy() if values is None else np.asarray(values, dtype=float).copy()
        return ParameterVector(list(self.names), v, self.lo.copy(), self.hi.copy())

    def midpoint(self) -> ParameterVector:
        return self.copy(0.5 * (self.lo + self.hi))

    def clip(self) -> ParameterVector:
        return self.copy(np.clip(self.values, self.lo, self.hi))

    def mine_slice(self, mine_id: str) -> np.ndarray:
        prefix = f"{mine_id}."
        return np.array([i for i, n in enumerate(self.names) if n.startswith(prefix)], dtype=int)

    def local(self, mine_id: str) -> dict[str, float]:
        """Values of one mine keyed by local name."""
        prefix = f"{mine_id}."
        return {n[len(prefix):]: float(v) for n, v in zip(self.names, self.values) if n.startswith(prefix)}

    def theta2(self) -> dict[str, float]:
        return {n.split(".theta2.")[1]: float(v) for n, v in zip(self.names, self.values) if ".theta2." in n}

    def validate(self) -> None:
        if np.any(self.lo > self.hi):
            i = int(np.argmax(self.lo > self.hi))
            raise ValidationError("search box has lo > hi", self.names[i])
        tol = 1e-9 * (1 + np.abs(self.values))
        bad = (self.values < self.lo - tol) | (self.values > self.hi + tol)
        if bad.any():
            raise ValidationError("parameter outside its search box", self.names[int(np.argmax(bad))])
        for n in self.names:
            if ".bc_power_min." in n:
                if self[n] > self[n.replace("bc_power_min", "bc_power_max")] + 1e-9:
                    raise ValidationError("bc_power_min > bc_power_max", n)
            if n.endswith(".grid_min") and self[n] > self[n[: -len("grid_min")] + "grid_max"] + 1e-9:
                raise ValidationError("grid_min > grid_max", n)

    # -------------------------------------------------------------- constructors

    @classmethod
    def from_vpp(cls, vpp: VppScenario, require_box: bool = True) -> ParameterVector:
        """True parameters of ``vpp`` with each mine's ``search_box`` attached.

        Without a search box the box collapses onto the values unless
        ``require_box`` is set, in which case a ValidationError is raised.
        """
        names, vals, lo, hi = [], [], [], []
        for m in vpp.mines:
            for local, v in mine_param_values(m).items():
                names.append(f"{m.id}.{local}")
                vals.append(v)
                if m.search_box is not None and local in m.search_box:
                    a, b = m.search_box[local]
                elif require_box:
                    raise ValidationError(f"mine has no search box for {local!r}", m.id)
                else:
                    a = b = v
                lo.append(a)
                hi.append(b)
        return cls(names, np.array(vals), np.array(lo), np.array(hi))

    # ------------------------------------------------------------------------ io

    def to_json(self, path: str | Path, identified: dict[str, str] | None = None) -> None:
        doc = {}
        for i, n in enumerate(self.names):
            doc[n] = {
                "estimate": float(self.values[i]),
                "box_lo": float(self.lo[i]),
                "box_hi": float(self.hi[i]),
                "identified": (identified or {}).get(n, "no"),
            }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False))

    @classmethod
    def from_json(cls, path: str | Path) -> ParameterVector:
        try:
            doc = json.loads(Path(path).read_text())
            names = list(doc)
            return cls(
                names,
                np.array([doc[n]["estimate"] for n in names], dtype=float),
                np.array([doc[n]["box_lo"] for n in names], dtype=float),
                np.array([doc[n]["box_hi"] for n in names], dtype=float),
            )
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ParseError(f"cannot read parameter file {path}: {e}") from None
