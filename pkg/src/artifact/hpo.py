"""Two-horizon hyperparameter selection for non-stationary forecasting.

The observed record t <= 0 is split into a long validation set
[-T3, -T2), a training set [-T2, -T1] and a short validation set (-T1, 0].
Each candidate is trained once, scored by the median valid time over m1
short forecasts and by the mean Wasserstein distance of m2 long
forecasts, and the candidates are ranked by

    score = w * E_W / max(E_W) - t_v / max(t_v).
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dynamics import Trajectory
from .metrics import multivariate_wasserstein, valid_time
from .reservoir import HyperParams, KnowledgeModel, predict_closed_loop, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataPartition:
    T1: float
    T2: float
    T3: float
    long: Trajectory
    training: Trajectory
    short: Trajectory
    observed: Trajectory

    @property
    def train_length(self) -> float:
        return self.T2 - self.T1


def partition(data: Trajectory, T1: float, T2: float, T3: float) -> DataPartition:
    """Split ``data`` into long validation, training and short validation views."""
    if not 0 < T1 < T2 < T3:
        raise ValueError(f"need 0 < T1 < T2 < T3, got {T1}, {T2}, {T3}")
    eps = 1e-9 * max(1.0, T3)
    if data.t0 > -T3 + eps or data.t_end < -eps:
        raise ValueError(f"data span [{data.t0}, {data.t_end}] does not cover [-{T3}, 0]; "
                         f"need {T3} time units before t = 0")
    observed = data.window(-T3, 0.0)
    long = data.window(-T3, -T2, include_hi=False)
    training = data.window(-T2, -T1)
    short = data.window(-T1 + data.dt * 0.5, 0.0)
    return DataPartition(T1, T2, T3, long, training, short, observed)


@dataclass
class CandidateScore:
    hyperparams: HyperParams
    median_valid_time: float
    mean_wasserstein: float
    score: Optional[float] = None
    diverged: int = 0
    valid_times: List[float] = field(default_factory=list)
    wassersteins: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per hyperparameter, on top of ``base``."""

    values: Dict[str, list]
    base: HyperParams = HyperParams()
    m1: int = 8
    m2: int = 4
    seed: int = 0
    T1: float = 20.0
    long_length: float = 200.0
    sync_length: float = 1.0
    threshold: float = 0.4
    weight: float = 1.0

    def __post_init__(self):
        for name, vals in self.values.items():
            if not isinstance(vals, (list, tuple)) or len(vals) == 0:
                raise ValueError(f"grid entry {name!r} must be a non-empty list")
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("m1 and m2 must be >= 1")
        # validates names
        HyperParams.from_dict({**self.base.to_dict(), **{k: v[0] for k, v in self.values.items()}})

    def candidates(self) -> List[HyperParams]:
        names = list(self.values)
        out = []
        for combo in itertools.product(*(self.values[n] for n in names)):
            out.append(self.base.with_(**dict(zip(names, combo))))
        return out

    def required_span(self) -> float:
        return max(self.T1 + hp.train_length + self.long_length for hp in self.candidates())

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        data = dict(data)
        base = HyperParams.from_dict(data.pop("base", {}))
        values = data.pop("grid")
        return cls(values=values, base=base, **data)

    @classmethod
    def from_file(cls, path) -> "GridSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _start_times(rng, view: Trajectory, count: int, width: float) -> np.ndarray:
    # uniform over the first `width` of the view, snapped to samples
    n_choices = max(1, int(round(width / view.dt)))
    idx = rng.integers(n_choices, size=count)
    return view.t0 + idx * view.dt


def evaluate_candidate(hp: HyperParams, part: DataPartition, m1: int, m2: int, seed: int,
                       sync_length: float = 1.0, threshold: float = 0.4,
                       knowledge: Optional[KnowledgeModel] = None) -> CandidateScore:
    """Train on the training view and score short-horizon skill and long-horizon climate.

    Short forecasts start in the first quarter of the short view, sync for
    ``sync_length`` and run to t = 0.  Long forecasts start in an equally
    wide stretch at the beginning of the long view and run to -T2; each is
    compared with the true long-view states (normalized units) by the
    per-variable-averaged Wasserstein distance.  A diverged long forecast
    scores the mean width of the true ranges.
    """
    obs = part.observed
    scales = np.sqrt(np.mean(obs.states ** 2, axis=0))
    model = train(part.training, hp, seed, scales, knowledge)
    rng = np.random.default_rng([seed, 7])
    dt = obs.dt
    width = part.T1 / 4.0

    vts = []
    for i, t_s in enumerate(_start_times(rng, part.short, m1, width)):
        sync_end = min(t_s + sync_length, part.short.t_end - dt)
        sync = obs.window(t_s, sync_end)
        truth = obs.window(sync.t_end, 0.0)
        pred = predict_closed_loop(model, sync, len(truth) - 1, True, seed + 101 * (i + 1))
        vts.append(valid_time(pred, truth, threshold).valid_time)

    true_long = part.long.states / scales
    worst = float(np.mean(true_long.max(axis=0) - true_long.min(axis=0)))
    ws, diverged = [], 0
    for i, t_s in enumerate(_start_times(rng, part.long, m2, width)):
        sync = obs.window(t_s, t_s + sync_length)
        n_steps = int(round((part.long.t_end - sync.t_end) / dt))
        pred = predict_closed_loop(model, sync, n_steps, True, seed + 211 * (i + 1))
        if pred.diverged:
            diverged += 1
            ws.append(worst)
            continue
        ws.append(multivariate_wasserstein(pred.states[1:] / scales, true_long))
    return CandidateScore(hp, float(np.median(vts)), float(np.mean(ws)), None, diverged, vts, ws)


def score_and_select(candidates: Sequence[CandidateScore], weight: float = 1.0,
                     objective: str = "combined"):
    """Assign scores in place and return (candidates, index of the best).

    ``objective="valid_time"`` drops the Wasserstein term.  A zero maximum
    on either axis makes that term 0 for everyone.  Ties go to the larger
    valid time, then the smaller distance, then the earlier candidate.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    if objective not in ("combined", "valid_time"):
        raise ValueError(f"unknown objective {objective!r}")
    ew = np.array([c.mean_wasserstein for c in candidates], dtype=float)
    tv = np.array([c.median_valid_time for c in candidates], dtype=float)
    ew_term = ew / ew.max() if ew.max() > 0 else np.zeros_like(ew)
    tv_term = tv / tv.max() if tv.max() > 0 else np.zeros_like(tv)
    scores = -tv_term if objective == "valid_time" else weight * ew_term - tv_term
    for c, s in zip(candidates, scores):
        c.score = float(s)
    order = sorted(range(len(candidates)), key=lambda i: (scores[i], -tv[i], ew[i], i))
    return list(candidates), order[0]


def rank(candidates: Sequence[CandidateScore]) -> List[int]:
    """Candidate indices from best to worst under the tie-breaking rule."""
    return sorted(range(len(candidates)), key=lambda i: (candidates[i].score, -candidates[i].median_valid_time,
                                                        candidates[i].mean_wasserstein, i))


def _evaluate_job(args):
    hp, data, grid, knowledge = args
    part = partition(data, grid.T1, grid.T1 + hp.train_length, grid.T1 + hp.train_length + grid.long_length)
    return evaluate_candidate(hp, part, grid.m1, grid.m2, grid.seed, grid.sync_length, grid.threshold,
                              knowledge)


def evaluate_grid(grid: GridSpec, data: Trajectory, workers: int = 1,
                  knowledge: Optional[KnowledgeModel] = None) -> List[CandidateScore]:
    """Evaluate every grid candidate (unscored), in candidate order."""
    jobs = [(hp, data, grid, knowledge) for hp in grid.candidates()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_evaluate_job, jobs))
    out = []
    for i, job in enumerate(jobs):
        log.info("candidate %d/%d", i + 1, len(jobs))
        out.append(_evaluate_job(job))
    return out


def grid_search(grid: GridSpec, data: Trajectory, workers: int = 1,
                knowledge: Optional[KnowledgeModel] = None, objective: str = "combined"):
    """Evaluate, score and rank the grid; returns candidates in ranked order."""
    cands = evaluate_grid(grid, data, workers, knowledge)
    score_and_select(cands, grid.weight, objective)
    return [cands[i] for i in rank(cands)]


def write_results(candidates: Sequence[CandidateScore], path) -> None:
    """CSV with one row per candidate in the given (ranked) order."""
    names = list(HyperParams().to_dict())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["t_v", "E_W", "score", "diverged", "rank"])
        for r, c in enumerate(candidates, start=1):
            hp = c.hyperparams.to_dict()
            w.writerow([hp[n] for n in names] + [repr(c.median_valid_time), repr(c.mean_wasserstein),
                                                 repr(c.score), c.diverged, r])
