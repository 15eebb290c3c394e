"""Learning loop: proximal inverse steps per record, averaged per outer pass."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..datagen import Dataset
from ..dispatch import build_lp, observable_maps, solve_lp
from ..errors import MipTimeout, NoProgress, SolverError
from ..scenario import VppScenario
from .kkt import KktSystem, derive_kkt
from .params import ParameterVector
from .step import MineRecord, build_inverse_step, record_objective, solve_inverse_step

log = logging.getLogger(__name__)


@dataclass
class LfraConfig:
    """Settings of the learning loop.

    Attributes:
        rho: weight of the proximal term, measured in box-width units.
        eps: stop once the mean loss changes by less than ``eps`` times the
            initial loss (or ``eps`` absolute when the initial loss is < 1).
        max_outer: cap on outer passes.
        big_m_scale: multiplier of every big-M constant.
        batch_size: records per pass; ``None`` uses the whole dataset.
        seed: seed of the batch shuffle (only used when batching).
        step_method: ``"auto"``, ``"milp"`` or ``"local"``, see
            :func:`vppfra.inverse.step.solve_inverse_step`.
        mip_gap: relative gap for branch and bound.
        step_time_limit: seconds allowed per branch-and-bound step.
        jobs: worker processes for the independent steps of one pass.
    """

    rho: float = 1.0
    eps: float = 1e-4
    max_outer: int = 50
    big_m_scale: float = 10.0
    batch_size: int | None = None
    seed: int = 0
    step_method: str = "auto"
    mip_gap: float = 1e-6
    step_time_limit: float = 120.0
    jobs: int = 1

    def validate(self) -> None:
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class LfraTrace:
    names: list[str]
    initial_loss: float
    losses: list[float] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)
    step_losses: list[np.ndarray] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    uncertified_steps: list[int] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.losses)

    def to_csv(self, path) -> None:
        """Rows ``iter,loss,wall_ms`` followed by every parameter."""
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "wall_ms", *self.names])
            w.writerow([0, repr(self.initial_loss), 0.0, *[""] * len(self.names)])
            for i, (loss, xi, ms) in enumerate(zip(self.losses, self.iterates, self.wall_ms), start=1):
                w.writerow([i, repr(float(loss)), f"{ms:.1f}", *[repr(float(v)) for v in xi]])


# ------------------------------------------------------------ per-mine setup


@dataclass
class _MineModel:
    mine_id: str
    cols: np.ndarray  # positions of this mine in the full parameter vector
    kkt: KktSystem


def _mine_models(vpp: VppScenario, xi0: ParameterVector, big_m_scale: float) -> list[_MineModel]:
    out = []
    for mine in vpp.mines:
        cols = xi0.mine_slice(mine.id)
        lp = build_lp(mine)
        local = [xi0.names[i].split(".", 1)[1] for i in cols]
        if local != list(lp.param_values):
            raise ValueError(f"parameter vector does not match mine {mine.id!r}")
        kkt = derive_kkt(lp, xi0.lo[cols], xi0.hi[cols], big_m_scale)
        out.append(_MineModel(mine.id, cols, kkt))
    return out


def _mine_record(ds: Dataset, r: int, mine_id: str) -> MineRecord:
    rec = ds.records[r]
    return MineRecord(rec.price, rec.bc_total_obs[mine_id], rec.grid_obs[mine_id])


def replay_loss(kkt: KktSystem, record: MineRecord, xi: np.ndarray) -> float:
    """Misfit of the dispatch that the forward LP returns at ``xi``."""
    lp = kkt.lp.with_rhs(kkt.b0 + kkt.Bx @ xi, kkt.h0 + kkt.Hx @ xi)
    sol = solve_lp(lp, objective=record_objective(kkt, record.price))
    Mbc, Mg = observable_maps(kkt.lp)
    return float(np.linalg.norm(Mbc @ sol.primal - record.bc_obs) + np.linalg.norm(Mg @ sol.primal - record.grid_obs))


# ------------------------------------------------------------ step workers

_WORKER: dict = {}


def _init_worker(models, ds, cfg):
    _WORKER["models"] = models
    _WORKER["ds"] = ds
    _WORKER["cfg"] = cfg


def _step_task(args):
    r, m_idx, xi_prev = args
    models, ds, cfg = _WORKER["models"], _WORKER["ds"], _WORKER["cfg"]
    mm = models[m_idx]
    rec = _mine_record(ds, r, mm.mine_id)
    prog = build_inverse_step(mm.kkt, rec, xi_prev, cfg.rho)
    try:
        res = solve_inverse_step(prog, method=cfg.step_method, mip_gap=cfg.mip_gap, time_limit=cfg.step_time_limit)
        return res.xi, res.loss, res.certified or res.method == "local"
    except MipTimeout as e:
        if e.incumbent is None:
            raise
        parts = prog.split(e.incumbent)
        lb, lg = prog.loss(parts["x"])
        xi = np.clip(parts["xi"], mm.kkt.xi_lo, mm.kkt.xi_hi)
        return xi, lb + lg, False


def _replay_task(args):
    r, m_idx, xi = args
    models, ds = _WORKER["models"], _WORKER["ds"]
    mm = models[m_idx]
    try:
        return replay_loss(mm.kkt, _mine_record(ds, r, mm.mine_id), xi)
    except SolverError:
        return np.inf


class _Pool:
    """Serial or process-parallel map with identical results."""

    def __init__(self, models, ds, cfg):
        self.jobs = max(1, int(cfg.jobs))
        self.ex = None
        if self.jobs > 1:
            self.ex = ProcessPoolExecutor(self.jobs, initializer=_init_worker, initargs=(models, ds, cfg))
        else:
            _init_worker(models, ds, cfg)

    def map(self, fn, tasks):
        if self.ex is None:
            return [fn(t) for t in tasks]
        return list(self.ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * self.jobs))))

    def close(self):
        if self.ex is not None:
            self.ex.shutdown()


# ------------------------------------------------------------------- driver


def lfra_run(
    vpp: VppScenario,
    dataset: Dataset,
    xi0: ParameterVector,
    cfg: LfraConfig | None = None,
) -> tuple[ParameterVector, LfraTrace]:
    """Learn the unknown parameters from ``dataset``.

    Every outer pass solves one proximal step per record and mine, anchored
    at the previous average, and averages the step solutions record-wise.
    The pass loss is the mean over records of the step misfits summed over
    mines.

    Raises:
        NoProgress: ``max_outer`` passes ran without meeting the tolerance;
            the exception carries the best iterate and the trace.
    """
    cfg = cfg or LfraConfig()
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    dataset.check_against(vpp)
    models = _mine_models(vpp, xi0, cfg.big_m_scale)
    xi = np.clip(xi0.values, xi0.lo, xi0.hi)
    n_rec = len(dataset)
    batch = n_rec if cfg.batch_size is None else min(cfg.batch_size, n_rec)
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(n_rec)
    cursor = n_rec  # forces a shuffle on the first batched pass

    pool = _Pool(models, dataset, cfg)
    try:
        tasks = [(r, m, xi[mm.cols]) for r in range(n_rec) for m, mm in enumerate(models)]
        per = np.array(pool.map(_replay_task, tasks)).reshape(n_rec, len(models)).sum(axis=1)
        initial = float(np.mean(per))
        trace = LfraTrace(list(xi0.names), initial)
        tol = cfg.eps * max(initial, 1.0) if np.isfinite(initial) else cfg.eps
        prev_loss = initial
        best_xi, best_loss = xi.copy(), initial
        for it in range(1, cfg.max_outer + 1):
            t0 = time.perf_counter()
            if batch == n_rec:
                recs = np.arange(n_rec)
            else:
                if cursor + batch > n_rec:
                    order = rng.permutation(n_rec)
                    cursor = 0
                recs = np.sort(order[cursor : cursor + batch])
                cursor += batch
            tasks = [(int(r), m, xi[mm.cols]) for r in recs for m, mm in enumerate(models)]
            out = pool.map(_step_task, tasks)
            new = np.zeros((len(recs), xi.size))
            losses = np.zeros(len(recs))
            uncertified = 0
            for k, (step_xi, loss, certified) in enumerate(out):
                i, m = divmod(k, len(models))
                new[i, models[m].cols] = step_xi
                losses[i] += loss
                uncertified += 0 if certified else 1
            xi = np.clip(new.mean(axis=0), xi0.lo, xi0.hi)
            loss = float(losses.mean())
            trace.losses.append(loss)
            trace.iterates.append(xi.copy())
            trace.step_losses.append(losses)
            trace.uncertified_steps.append(uncertified)
            trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
            log.info("pass %d: loss %.6g (%.1f s)", it, loss, trace.wall_ms[-1] / 1e3)
            if loss < best_loss:
                best_xi, best_loss = xi.copy(), loss
            if abs(loss - prev_loss) < tol:
                trace.converged = True
                return xi0.copy(xi), trace
            prev_loss = loss
    finally:
        pool.close()
    raise NoProgress(
        f"no convergence within {cfg.max_outer} passes (last loss change {abs(trace.losses[-1] - (trace.losses[-2] if len(trace.losses) > 1 else initial)):.3g})",
        xi=xi0.copy(best_xi),
        trace=trace,
    )


def identification(vpp: VppScenario, dataset: Dataset, xi: ParameterVector, rel_tol: float = 1e-6) -> dict[str, str]:
    """Label each estimate ``yes``, ``no`` or ``boundary``.

    A bound entry is ``yes`` when its constraint binds with a positive
    multiplier in at least one record replayed at the estimate. A conveyor
    coefficient is ``yes`` only when it is the sole conveyor of its mine:
    shifting the coefficients of several conveyors while moving their power
    bounds along leaves every aggregate observation unchanged, so only their
    weighted sum is determined by the data. Entries stuck on the search box
    are ``boundary``.
    """
    from ..datagen import _binding_params

    labels: dict[str, str] = {}
    for mine in vpp.mines:
        cols = xi.mine_slice(mine.id)
        params = {xi.names[i].split(".", 1)[1]: float(xi.values[i]) for i in cols}
        hits: set[str] = set()
        for rec in dataset.records:
            lp = build_lp(mine.with_price(rec.price), params)
            try:
                sol = solve_lp(lp)
            except SolverError:
                continue
            hits.update(_binding_params(lp, sol))
        n_bc = len(mine.bc_links)
        for i in cols:
            name = xi.names[i]
            local = name.split(".", 1)[1]
            width = xi.hi[i] - xi.lo[i]
            on_edge = width > 0 and min(xi.values[i] - xi.lo[i], xi.hi[i] - xi.values[i]) <= rel_tol * width
            if local.startswith("theta2."):
                label = "yes" if n_bc == 1 else "no"
            else:
                label = "yes" if local in hits else "no"
            labels[name] = "boundary" if on_edge else label
    return labels
