"""Stationary bifurcation and hysteresis sweeps at frozen parameter values."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from ..dynamics import IkedaParams, LorenzParams, Trajectory, frozen, random_initial_state, simulate
from ..observables import ks_section, lorenz_maxima_section, section_crossings, trajectory_maxima
from .analysis import lorenz_fixed_point_distance
from .config import ConfigError, build_system


def _maxima(traj, system, component):
    ev = trajectory_maxima(traj, component)
    # a fixed point has no maxima; report where the orbit sits
    return ev.values if len(ev) else traj.states[-1:, component]


def _lorenz_section(traj, system, component):
    ev = section_crossings(traj, lorenz_maxima_section(system.beta), component, "down")
    return ev.values if len(ev) else traj.states[-1:, component]


def _ks_section(traj, system, component):
    return section_crossings(traj, ks_section(0), component, "up").values


def _extent(traj, system, component):
    span = traj.states.max(axis=0) - traj.states.min(axis=0)
    return np.array([float(np.sqrt(np.sum(span ** 2)))])


def _fp_distance(traj, system, component):
    return lorenz_fixed_point_distance(traj, system)


def _state(traj, system, component):
    return traj.states[:, component]


SWEEP_OBSERVABLES = {
    "maxima": _maxima,
    "lorenz_section": _lorenz_section,
    "ks_section": _ks_section,
    "extent": _extent,
    "fp_distance": _fp_distance,
    "state": _state,
}


@dataclass
class SweepTable:
    parameters: np.ndarray
    values: List[np.ndarray]
    diverged: np.ndarray
    observable: str
    direction: str
    final_states: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.parameters.size

    def rows(self):
        """(parameter, value) pairs; a diverged row contributes (parameter, nan)."""
        for p, vals, div in zip(self.parameters, self.values, self.diverged):
            if div or vals.size == 0:
                yield float(p), float("nan")
            else:
                for v in vals:
                    yield float(p), float(v)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("parameter,value\n")
            for p, v in self.rows():
                fh.write(f"{p:.17g},{v:.17g}\n")

    def summary(self, reducer: Callable = np.max) -> np.ndarray:
        return np.array([reducer(v) if v.size and not d else np.nan for v, d in zip(self.values, self.diverged)])

    def digest(self) -> str:
        h = hashlib.sha256()
        for p, v in self.rows():
            h.update(np.array([p, v], dtype="<f8").tobytes())
        return h.hexdigest()


def _frozen_run(system, value, x0, transient, samples, seed, observable, component):
    sys = frozen(system, value)
    dt = 1.0 if isinstance(sys, IkedaParams) else sys.dt
    state = np.asarray(x0, dtype=float)
    if transient > 0:
        pre = simulate(sys, state, 0.0, transient, seed)
        if pre.diverged:
            return np.empty(0), True, pre.states[-1]
        state = pre.states[-1]
    traj = simulate(sys, state, 0.0, samples, seed + 1)
    if traj.diverged:
        return np.empty(0), True, traj.states[-1]
    fn = SWEEP_OBSERVABLES[observable]
    return np.asarray(fn(traj, sys, component), dtype=float), False, traj.states[-1]


def _independent_job(args):
    return _frozen_run(*args)


def stationary_sweep(system, parameters: Sequence[float], observable: str = "maxima", transient: float = 100.0,
                     samples: float = 100.0, direction: str = "up", component: int = 2, seed: int = 0,
                     x0=None, workers: int = 1) -> SweepTable:
    """Evolve at each frozen parameter value and record ``observable`` over ``samples`` time units.

    ``direction`` "up"/"down" walks the (sorted) parameter list in that
    order, seeding each run with the final state of the previous one, so
    coexisting attractors show hysteresis.  "independent" starts every
    value from its own random initial condition (or ``x0``) and may run in
    parallel.  Divergence is recorded per row.
    """
    params = np.asarray(parameters, dtype=float).ravel()
    if params.size == 0:
        raise ValueError("parameter list must be non-empty")
    if direction not in ("up", "down", "independent"):
        raise ValueError(f"direction must be up, down or independent, got {direction!r}")
    if observable not in SWEEP_OBSERVABLES:
        raise ValueError(f"unknown sweep observable {observable!r}; choose from {sorted(SWEEP_OBSERVABLES)}")
    if observable == "fp_distance" and not isinstance(system, LorenzParams):
        raise ValueError("fp_distance is defined for the Lorenz system only")
    if direction == "up":
        params = np.sort(params)
    elif direction == "down":
        params = np.sort(params)[::-1]

    values, diverged, finals = [], [], []
    if direction == "independent":
        jobs = []
        for i, p in enumerate(params):
            start = random_initial_state(system, seed + 7919 * i) if x0 is None else x0
            jobs.append((system, p, start, transient, samples, seed + 2 * i, observable, component))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                out = list(pool.map(_independent_job, jobs))
        else:
            out = [_independent_job(j) for j in jobs]
    else:
        out = []
        state = random_initial_state(system, seed) if x0 is None else np.asarray(x0, dtype=float)
        for i, p in enumerate(params):
            vals, div, last = _frozen_run(system, p, state, transient, samples, seed + 2 * i, observable, component)
            out.append((vals, div, last))
            if div:
                # continuation cannot go on from infinity; restart from a fresh draw
                state = random_initial_state(system, seed + 7919 * (i + 1))
            else:
                state = last
    for vals, div, last in out:
        values.append(vals)
        diverged.append(div)
        finals.append(last)
    return SweepTable(params, values, np.array(diverged), observable, direction, np.array(finals))


@dataclass(frozen=True)
class SweepConfig:
    name: str
    system: dict
    parameters: Union[list, dict]
    observable: str = "maxima"
    component: int = 2
    transient: float = 100.0
    samples: float = 100.0
    direction: str = "up"
    seed: int = 0
    x0: Optional[Union[list, str]] = None
    workers: int = 1
    notes: str = ""
    version: int = 1

    def parameter_values(self) -> np.ndarray:
        p = self.parameters
        if isinstance(p, dict):
            try:
                start, stop, step = float(p["start"]), float(p["stop"]), float(p["step"])
            except KeyError as exc:
                raise ConfigError(f"parameters range needs start/stop/step, missing {exc}") from None
            if step <= 0 or stop < start:
                raise ConfigError("parameters range needs step > 0 and stop >= start")
            n = int(round((stop - start) / step))
            return start + step * np.arange(n + 1)
        return np.asarray(p, dtype=float)

    def initial_state(self, system):
        if self.x0 is None:
            return None
        if self.x0 == "fixed_point":
            if not isinstance(system, LorenzParams):
                raise ConfigError("x0 = fixed_point is only defined for the Lorenz system")
            p = float(np.sort(self.parameter_values())[0 if self.direction != "down" else -1])
            q = np.sqrt(system.beta * (p - 1.0))
            # a small offset so an unstable point is left
            return np.array([q, q, p - 1.0]) + 1e-3
        return np.asarray(self.x0, dtype=float)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        data = dict(data)
        data.pop("kind", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        build_system(cfg.system)
        if cfg.observable not in SWEEP_OBSERVABLES:
            raise ConfigError(f"unknown sweep observable {cfg.observable!r}")
        if cfg.direction not in ("up", "down", "independent"):
            raise ConfigError(f"bad sweep direction {cfg.direction!r}")
        if cfg.parameter_values().size == 0:
            raise ConfigError("parameter list must be non-empty")
        return cfg

    def run(self, workers: Optional[int] = None, seed: Optional[int] = None) -> SweepTable:
        sys = build_system(self.system)
        return stationary_sweep(sys, self.parameter_values(), self.observable, self.transient, self.samples,
                                self.direction, self.component, self.seed if seed is None else seed,
                                self.initial_state(sys), workers or self.workers)


def write_sweep(cfg: SweepConfig, table: SweepTable, out_dir, seed: Optional[int] = None):
    from .experiment import RunManifest

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    table.to_csv(out / "sweep.csv")
    manifest = RunManifest(kind="sweep", name=cfg.name, config_hash=cfg.digest(),
                           master_seed=int(cfg.seed if seed is None else seed), members=[],
                           files=["config.json", "sweep.csv"],
                           diverged=[float(p) for p, d in zip(table.parameters, table.diverged) if d],
                           failed=[], used=int(np.count_nonzero(~table.diverged)),
                           digest=hashlib.sha256((cfg.digest() + table.digest()).encode()).hexdigest())
    manifest.write(out)
    return manifest
