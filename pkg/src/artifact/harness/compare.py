"""Side-by-side ensembles for two hyperparameter selection objectives."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..dynamics import random_initial_state, simulate
from ..hpo import CandidateScore, GridSpec, evaluate_grid, rank, score_and_select, write_results
from .config import ConfigError, ExperimentConfig
from .experiment import RunManifest, rewrite_run, run_ensemble_experiment

log = logging.getLogger(__name__)


@dataclass
class CompareReport:
    winners: dict
    candidates: List[CandidateScore]
    manifests: dict
    late_window: Tuple[float, float]
    late_gamma: dict

    @property
    def same_winner(self) -> bool:
        return self.winners["combined"] == self.winners["valid_time"]

    def to_dict(self) -> dict:
        return {
            "winners": {k: v.to_dict() for k, v in self.winners.items()},
            "late_window": list(self.late_window),
            "late_gamma": self.late_gamma,
            "same_winner": self.same_winner,
            "candidates": [{"hyperparams": c.hyperparams.to_dict(), "t_v": c.median_valid_time,
                            "E_W": c.mean_wasserstein, "diverged": c.diverged} for c in self.candidates],
        }


def hpo_data(config: ExperimentConfig, grid: GridSpec):
    """The single observed record used for selection, from its own seed stream."""
    sys = config.build_system()
    words = np.random.SeedSequence([int(config.seed), 0xA5A5]).generate_state(2, dtype=np.uint64)
    ic_seed, sim_seed = (int(w) >> 1 for w in words)
    span = grid.required_span()
    x0 = random_initial_state(sys, ic_seed)
    data = simulate(sys, x0, -(span + config.spinup_length), 0.0, sim_seed)
    if data.diverged:
        raise RuntimeError("selection data diverged")
    return data


def appendixA_compare(config: ExperimentConfig, grid: GridSpec, out_dir=None, workers: Optional[int] = None,
                      late_window: Optional[Tuple[float, float]] = None,
                      finished: Optional[Sequence[RunManifest]] = None) -> CompareReport:
    """Select hyperparameters by the combined score and by valid time only, then run both ensembles.

    Both objectives rank the same candidate evaluations, so the grid is
    trained once.  Identical winners share one ensemble run, and an
    in-memory run from ``finished`` with the same run key is reused instead
    of recomputed (its outputs are written again when ``out_dir`` is set).
    """
    if config.horizon <= 0:
        raise ConfigError("comparison needs a positive horizon")
    workers = config.workers if workers is None else workers
    data = hpo_data(config, grid)
    cands = evaluate_grid(grid, data, workers, config.build_knowledge())

    winners, tables = {}, {}
    for objective in ("combined", "valid_time"):
        score_and_select(cands, grid.weight, objective)
        order = rank(cands)
        winners[objective] = cands[order[0]].hyperparams
        tables[objective] = [(cands[i], cands[i].score) for i in order]
    if late_window is None:
        late_window = (0.75 * config.horizon, config.horizon)

    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    reuse = {m.result.config.run_key(): m for m in (finished or []) if m.result is not None}
    manifests, late = {}, {}
    for objective, hp in winners.items():
        if objective == "valid_time" and hp == winners["combined"]:
            manifests[objective] = manifests["combined"]
        else:
            cfg = config.with_(hyperparams=hp.to_dict(), name=f"{config.name}-{objective}")
            sub = None if out is None else out / objective
            prior = reuse.get(cfg.run_key())
            if prior is not None:
                log.info("%s winner matches a finished run; reusing it", objective)
                manifests[objective] = rewrite_run(prior, cfg, sub)
            else:
                manifests[objective] = run_ensemble_experiment(cfg, sub, workers)
        g = manifests[objective].result.gamma
        late[objective] = float("nan") if g is None else g.mean_over(*late_window)

    report = CompareReport(winners, cands, manifests, tuple(late_window), late)
    if out is not None:
        _write(report, tables, out, config)
    return report


def _write(report: CompareReport, tables, out: Path, config: ExperimentConfig):
    files = []
    for objective, rows in tables.items():
        path = out / f"hpo_{objective}.csv"
        for c, s in rows:
            c.score = s
        write_results([c for c, _ in rows], path)
        files.append(path.name)
    gc = report.manifests["combined"].result.gamma
    gv = report.manifests["valid_time"].result.gamma
    if gc is not None and gv is not None:
        path = out / "gamma_compare.csv"
        np.savetxt(path, np.column_stack([gc.times, gc.gamma, gv.gamma]), delimiter=",",
                   header="t,gamma_combined,gamma_valid_time", comments="", fmt="%.17g")
        files.append(path.name)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    files.append("report.json")
    for objective, m in report.manifests.items():
        if objective == "valid_time" and report.same_winner:
            continue
        files.extend(f"{objective}/{f}" for f in m.files + ["manifest.json"])
    digest = hashlib.sha256("".join(m.digest for m in report.manifests.values()).encode()).hexdigest()
    manifest = RunManifest(kind="compare", name=config.name, config_hash=config.digest(),
                           master_seed=int(config.seed), members=[], files=sorted(files), diverged=[],
                           failed=[], used=0, digest=digest,
                           extra={"late_gamma": report.late_gamma, "same_winner": report.same_winner,
                                  "subruns": {k: (k if not (k == "valid_time" and report.same_winner)
                                                  else "combined") for k in report.manifests}})
    manifest.write(out)
