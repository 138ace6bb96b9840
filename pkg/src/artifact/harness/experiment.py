"""Ensemble experiments: spin up, train one reservoir per member, predict, score the climate."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np

from ..dynamics import Trajectory, random_initial_state, simulate
from ..metrics import ClimateErrorSeries, gamma_metric
from ..observables import EventSeries
from ..reservoir import predict_closed_loop, save_model, train
from .analysis import extract_events, is_bounded, transition_time
from .config import ExperimentConfig

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class MemberSeeds:
    index: int
    initial: int
    simulation: int
    reservoir: int
    prediction: int

    def to_dict(self):
        return {"index": self.index, "initial": self.initial, "simulation": self.simulation,
                "reservoir": self.reservoir, "prediction": self.prediction}


def member_seeds(master: int, index: int) -> MemberSeeds:
    """Counter-based split: member ``index`` depends only on (master, index)."""
    words = np.random.SeedSequence([int(master), int(index)]).generate_state(4, dtype=np.uint64)
    # 63 bits keeps every seed a valid signed JSON integer
    s = [int(w) >> 1 for w in words]
    return MemberSeeds(index, *s)


@dataclass
class MemberResult:
    seeds: MemberSeeds
    scales: Optional[np.ndarray] = None
    truth: Optional[Trajectory] = None
    prediction: Optional[Trajectory] = None
    events_true: Optional[EventSeries] = None
    events_pred: Optional[EventSeries] = None
    true_transition: Optional[float] = None
    pred_transition: Optional[float] = None
    error: Optional[str] = None
    model: Any = field(default=None, repr=False)
    timings: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        return self.seeds.index

    @property
    def diverged(self) -> bool:
        return self.prediction is not None and self.prediction.diverged

    @property
    def usable(self) -> bool:
        return self.error is None and not self.diverged


def run_member(config: ExperimentConfig, index: int, keep_model: bool = False) -> MemberResult:
    """Simulate, train and predict one ensemble member.  Failures are captured, not raised."""
    seeds = member_seeds(config.seed, index)
    res = MemberResult(seeds)
    try:
        sys = config.build_system()
        hp = config.build_hyperparams()
        observed = config.observed
        t_start = -(observed + config.spinup_length)
        t_end = max(config.horizon, 0.0)
        tic = time.perf_counter()
        x0 = random_initial_state(sys, seeds.initial)
        full = simulate(sys, x0, t_start, t_end if t_end > t_start else 0.0, seeds.simulation)
        if full.diverged:
            raise RuntimeError("true trajectory diverged")
        res.timings["simulate"] = time.perf_counter() - tic
        obs = full.window(-observed, 0.0)
        res.scales = np.sqrt(np.mean(obs.states ** 2, axis=0))
        tic = time.perf_counter()
        model = train(full.window(-hp.train_length, 0.0), hp, seeds.reservoir, res.scales,
                      config.build_knowledge())
        res.timings["train"] = time.perf_counter() - tic
        if keep_model:
            res.model = model
        dt = full.dt
        n_steps = int(round(config.horizon / dt))
        res.truth = full.window(0.0, config.horizon)
        tic = time.perf_counter()
        sync = full.window(-config.sync_length, 0.0)
        res.prediction = predict_closed_loop(model, sync, n_steps, config.stochastic, seeds.prediction)
        res.timings["predict"] = time.perf_counter() - tic
        if n_steps > 0:
            res.events_true = extract_events(res.truth, res.scales, config.observable, sys)
            res.events_pred = extract_events(res.prediction, res.scales, config.observable, sys)
            span = (0.0, config.horizon)
            res.true_transition = transition_time(res.truth, res.events_true, config.transition, sys, span)
            res.pred_transition = transition_time(res.prediction, res.events_pred, config.transition, sys, span)
    except Exception as exc:  # member failures are recorded, not fatal
        log.warning("member %d failed: %s", index, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _member_job(args):
    return run_member(*args)


@dataclass
class EnsembleResult:
    config: ExperimentConfig
    members: List[MemberResult]
    gamma: Optional[ClimateErrorSeries]
    snapshots: dict
    bounded: List[bool]

    @property
    def used(self) -> List[MemberResult]:
        return [m for m in self.members if m.usable]

    def fraction_transitioned(self, source: str = "pred", among_used: bool = True) -> float:
        group = self.used if among_used else self.members
        if not group:
            return float("nan")
        attr = "pred_transition" if source == "pred" else "true_transition"
        return sum(getattr(m, attr) is not None for m in group) / len(group)


@dataclass
class RunManifest:
    kind: str
    name: str
    config_hash: str
    master_seed: int
    members: list
    files: list
    diverged: list
    failed: list
    used: int
    digest: str
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    result: Any = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "config_hash": self.config_hash,
                "master_seed": self.master_seed, "members": self.members, "files": self.files,
                "diverged": self.diverged, "failed": self.failed, "used": self.used,
                "digest": self.digest, "timings": self.timings, "extra": self.extra}

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        p = Path(path)
        if p.is_dir():
            p = p / MANIFEST_NAME
        if not p.is_file():
            raise FileNotFoundError(f"manifest {p} not found")
        return cls(**json.loads(p.read_text()))


def _hash_arrays(h, *arrays):
    for a in arrays:
        if a is None:
            h.update(b"-")
        else:
            a = np.ascontiguousarray(a, dtype="<f8")
            h.update(str(a.shape).encode())
            h.update(a.tobytes())


def _digest(config: ExperimentConfig, members: List[MemberResult], gamma) -> str:
    h = hashlib.sha256(config.canonical_json().encode())
    for m in members:
        h.update(json.dumps(m.seeds.to_dict(), sort_keys=True).encode())
        h.update((m.error or "").encode())
        _hash_arrays(h, m.scales,
                     None if m.truth is None else m.truth.states,
                     None if m.prediction is None else m.prediction.states,
                     None if m.events_true is None else m.events_true.values,
                     None if m.events_pred is None else m.events_pred.values)
    if gamma is not None:
        _hash_arrays(h, gamma.times, gamma.gamma)
    return h.hexdigest()


def _csv_lines(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def _write_outputs(result: EnsembleResult, out_dir: Path) -> List[str]:
    cfg = result.config
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "members").mkdir(exist_ok=True)
    files = []

    def add(path: Path):
        files.append(str(path.relative_to(out_dir)))

    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    add(cfg_path)
    for m, bounded in zip(result.members, result.bounded):
        stem = out_dir / "members" / f"m{m.index:04d}"
        if m.truth is not None:
            p = Path(f"{stem}_truth.dctr")
            m.truth.save(p)
            add(p)
        if m.prediction is not None:
            p = Path(f"{stem}_pred.dctr")
            m.prediction.save(p)
            add(p)
        for tag, ev in (("true", m.events_true), ("pred", m.events_pred)):
            if ev is not None:
                p = Path(f"{stem}_events_{tag}.csv")
                ev.to_csv(p)
                add(p)
        if m.model is not None:
            p = Path(f"{stem}_model.dcrm")
            save_model(m.model, p)
            add(p)
    p = out_dir / "transitions.csv"
    _csv_lines(p, "member,diverged,failed,true_transition,pred_transition,bounded",
               [(m.index, m.diverged, m.error is not None, m.true_transition, m.pred_transition, b)
                for m, b in zip(result.members, result.bounded)])
    add(p)
    if result.gamma is not None:
        p = out_dir / "gamma.csv"
        result.gamma.to_csv(p)
        add(p)
        for t, table in result.snapshots.items():
            p = out_dir / f"cdf_t{t:g}.csv"
            np.savetxt(p, table, delimiter=",", header="x,F_true,F_pred", comments="", fmt="%.17g")
            add(p)
    return files


def summarize(config: ExperimentConfig, members: List[MemberResult]) -> EnsembleResult:
    """Gamma(t), snapshot CDFs and boundedness from finished members."""
    ok = [m for m in members if m.error is None]
    gamma, snaps = None, {}
    if config.horizon > 0 and ok:
        true_ev = [m.events_true for m in ok if m.events_true is not None]
        pred_ev = [m.events_pred for m in ok if not m.diverged and m.events_pred is not None]
        if any(len(e) for e in true_ev):
            step = config.gamma_step or config.gamma_window
            times = np.arange(0.0, config.horizon - config.gamma_window + 1e-9, step)
            try:
                gamma = gamma_metric(true_ev, pred_ev, config.gamma_window, times,
                                     observable=config.observable.label)
                for t in config.snapshot_times:
                    g = gamma_metric(true_ev, pred_ev, config.gamma_window, [t], bounds=gamma.bounds)
                    snaps[t] = g.cdf_table(t)
            except ValueError as exc:
                log.warning("gamma not computed: %s", exc)
    limits = None
    if ok and ok[0].truth is not None:
        limits = np.max([np.max(np.abs(m.truth.states), axis=0) for m in ok], axis=0)
    bounded = [m.prediction is not None and limits is not None and is_bounded(m.prediction, limits)
               for m in members]
    return EnsembleResult(config, members, gamma, snaps, bounded)


def run_ensemble_experiment(config: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> RunManifest:
    """Run every member, score the ensemble and (optionally) write all outputs to ``out_dir``.

    The returned manifest carries the in-memory :class:`EnsembleResult` as
    ``manifest.result``.  Its digest covers the config and every produced
    array, so reruns of the same config give the same digest.
    """
    workers = config.workers if workers is None else workers
    keep_models = config.save_models or config.horizon == 0
    jobs = [(config, i, keep_models) for i in range(config.ensemble_size)]
    tic = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_member_job, jobs))
    else:
        members = []
        for job in jobs:
            members.append(_member_job(job))
            m = members[-1]
            log.info("member %d: %s", m.index, m.error or f"diverged={m.diverged} "
                     f"true={m.true_transition} pred={m.pred_transition}")
    return _finish(config, members, out_dir, time.perf_counter() - tic)


def _finish(config: ExperimentConfig, members: List[MemberResult], out_dir, elapsed: float) -> RunManifest:
    result = summarize(config, members)
    files = _write_outputs(result, Path(out_dir)) if out_dir is not None else []
    timings = {"total": elapsed, "members": {str(m.index): m.timings for m in members}}
    manifest = RunManifest(
        kind="ensemble", name=config.name, config_hash=config.digest(), master_seed=int(config.seed),
        members=[{**m.seeds.to_dict(), "scales": None if m.scales is None else [float(s) for s in m.scales]}
                 for m in members],
        files=files,
        diverged=[m.index for m in members if m.diverged],
        failed=[{"member": m.index, "error": m.error} for m in members if m.error is not None],
        used=len(result.used),
        digest=_digest(config, members, result.gamma),
        timings=timings,
        result=result,
    )
    if out_dir is not None:
        manifest.write(out_dir)
    return manifest


def rewrite_run(prior: RunManifest, config: ExperimentConfig, out_dir=None) -> RunManifest:
    """Re-label a finished in-memory run under ``config`` (same run key) and write it to ``out_dir``."""
    if prior.result is None:
        raise ValueError("prior run has no in-memory result")
    if prior.result.config.run_key() != config.run_key():
        raise ValueError("config does not match the finished run")
    return _finish(config, prior.result.members, out_dir, float(prior.timings.get("total", 0.0)))
