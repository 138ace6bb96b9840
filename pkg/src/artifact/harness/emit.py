"""Plot-data export from finished runs: CSV files only."""
from __future__ import annotations

import shutil
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..dynamics import Trajectory
from .experiment import MANIFEST_NAME, RunManifest

EMIT_KINDS = ("gamma", "cdf", "events", "snapshot", "sweep")


def _require(run_dir: Path, manifest: RunManifest, name: str) -> Path:
    if name not in manifest.files or not (run_dir / name).is_file():
        raise FileNotFoundError(f"artifact {name!r} missing from run {run_dir}")
    return run_dir / name


def emit_plot_data(manifest_path, what: str, out_dir=None, t: Optional[float] = None) -> List[Path]:
    """Write CSV plot data for ``what`` and return the paths.

    gamma: ``t,gamma``.  cdf: ``x,F_true,F_pred`` per snapshot time.
    events: ``member,source,t,value``.  snapshot: ``member,source,v1',...``
    at time ``t`` (RMS-normalized).  sweep: ``parameter,value``.
    """
    if what not in EMIT_KINDS:
        raise ValueError(f"what must be one of {EMIT_KINDS}, got {what!r}")
    run_dir = Path(manifest_path)
    if run_dir.name == MANIFEST_NAME:
        run_dir = run_dir.parent
    manifest = RunManifest.read(run_dir)
    out = run_dir / "plots" if out_dir is None else Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if what == "sweep":
        if manifest.kind != "sweep":
            raise ValueError("sweep data comes from a sweep run")
        dst = out / "sweep.csv"
        shutil.copyfile(_require(run_dir, manifest, "sweep.csv"), dst)
        return [dst]
    if manifest.kind != "ensemble":
        raise ValueError(f"{what} data comes from an ensemble run, this is a {manifest.kind} run")
    if what == "gamma":
        dst = out / "gamma.csv"
        shutil.copyfile(_require(run_dir, manifest, "gamma.csv"), dst)
        return [dst]
    if what == "cdf":
        names = sorted(f for f in manifest.files if f.startswith("cdf_t"))
        if not names:
            raise FileNotFoundError("run has no snapshot CDFs (configure snapshot_times)")
        paths = []
        for name in names:
            dst = out / name
            shutil.copyfile(_require(run_dir, manifest, name), dst)
            paths.append(dst)
        return paths
    if what == "events":
        dst = out / "events.csv"
        with open(dst, "w") as fh:
            fh.write("member,source,t,value\n")
            for m in manifest.members:
                for source in ("true", "pred"):
                    name = f"members/m{m['index']:04d}_events_{source}.csv"
                    data = np.loadtxt(_require(run_dir, manifest, name), delimiter=",", skiprows=1, ndmin=2)
                    for tt, v in data:
                        fh.write(f"{m['index']},{source},{tt:.17g},{v:.17g}\n")
        return [dst]
    # snapshot
    if t is None:
        raise ValueError("snapshot needs a time t")
    dst = out / f"snapshot_t{t:g}.csv"
    rows = []
    dim = None
    for m in manifest.members:
        scales = np.asarray(m["scales"])
        for source in ("truth", "pred"):
            traj = Trajectory.load(_require(run_dir, manifest, f"members/m{m['index']:04d}_{source}.dctr"))
            i = traj.index_of(t)
            if traj.diverged or not 0 <= i < len(traj):
                continue
            dim = traj.dim
            rows.append((m["index"], "true" if source == "truth" else "pred", traj.states[i] / scales))
    with open(dst, "w") as fh:
        fh.write("member,source," + ",".join(f"v{k + 1}'" for k in range(dim or 0)) + "\n")
        for idx, source, state in rows:
            fh.write(f"{idx},{source}," + ",".join(f"{v:.17g}" for v in state) + "\n")
    return [dst]
