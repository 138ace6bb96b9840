"""Event extraction and per-trajectory tipping detection used by the experiment runner."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..dynamics import LorenzParams, Trajectory, ramp_value
from ..observables import EventSeries, distinct_levels, section_crossings, trajectory_maxima
from .config import ObservableSpec, TransitionSpec


def finite_part(traj: Trajectory) -> Trajectory:
    """Drop the offending last sample of a diverged trajectory."""
    if traj.diverged and len(traj) > 1:
        return traj.slice(0, len(traj) - 1)
    return traj


def extract_events(traj: Trajectory, scales, spec: ObservableSpec, system=None) -> EventSeries:
    """Events of ``spec`` on ``traj`` in RMS-normalized units."""
    traj = finite_part(traj)
    scales = np.asarray(scales, dtype=float)
    norm = Trajectory(traj.t0, traj.dt, traj.states / scales, traj.seed, traj.diverged)
    c = spec.component
    if spec.kind == "state":
        return EventSeries(norm.times, norm.states[:, c])
    if len(norm) < 3:
        return EventSeries(np.empty(0), np.empty(0))
    if spec.kind == "maxima":
        return trajectory_maxima(norm, c)
    if spec.section == "lorenz_dz":
        beta = system.beta if isinstance(system, LorenzParams) else 8.0 / 3.0
        # dz/dt in physical units; its sign is what matters
        g = lambda s: (s[:, 0] * scales[0]) * (s[:, 1] * scales[1]) - beta * s[:, 2] * scales[2]  # noqa: E731
    else:
        idx = spec.section_index
        g = lambda s: s[:, idx]  # noqa: E731
    with np.errstate(over="ignore", invalid="ignore"):
        return section_crossings(norm, g, c, spec.direction)


def levels_transition_time(events: EventSeries, spec: TransitionSpec, t_lo: float, t_hi: float) -> Optional[float]:
    """Start of the first window [t, t + W] in [t_lo, t_hi] with more than ``min_levels`` event clusters."""
    w = spec.window
    step = w / 4.0
    t = t_lo
    while t + w <= t_hi + 1e-9:
        vals = events.values[(events.times >= t) & (events.times <= t + w)]
        if distinct_levels(vals, spec.tol) > spec.min_levels:
            return float(t)
        t += step
    return None


def lorenz_fixed_point_distance(traj: Trajectory, system: LorenzParams) -> np.ndarray:
    """Distance of each state from the nearer of C+/- of the frozen system at rho(t).

    Below rho = 1 the origin is the only fixed point and is used instead.
    """
    rho = np.atleast_1d(ramp_value(system.rho, traj.times))
    q = np.sqrt(np.clip(system.beta * (rho - 1.0), 0.0, None))
    s = traj.states
    dz = s[:, 2] - np.maximum(rho - 1.0, 0.0)
    d_plus = np.sqrt((s[:, 0] - q) ** 2 + (s[:, 1] - q) ** 2 + dz ** 2)
    d_minus = np.sqrt((s[:, 0] + q) ** 2 + (s[:, 1] + q) ** 2 + dz ** 2)
    return np.minimum(d_plus, d_minus)


def departure_time(traj: Trajectory, system: LorenzParams, threshold: float,
                   t_range: Optional[tuple] = None) -> Optional[float]:
    """First time the trajectory is farther than ``threshold`` from the fixed-point branch."""
    # a blow-up counts as departure at the sample where it happened
    with np.errstate(over="ignore", invalid="ignore"):
        d = lorenz_fixed_point_distance(traj, system)
    if traj.diverged:
        d[-1] = np.inf
    t = traj.times
    keep = np.ones(t.size, bool) if t_range is None else (t >= t_range[0]) & (t <= t_range[1])
    hit = np.nonzero(keep & ~(d <= threshold))[0]
    return float(t[hit[0]]) if hit.size else None


def transition_time(traj: Trajectory, events: EventSeries, spec: TransitionSpec, system,
                    t_default: tuple) -> Optional[float]:
    t_lo, t_hi = spec.t_range if spec.t_range is not None else t_default
    if spec.kind == "levels":
        return levels_transition_time(events, spec, t_lo, t_hi)
    if spec.kind == "departure":
        if not isinstance(system, LorenzParams):
            raise ValueError("departure detection is defined for the Lorenz system only")
        return departure_time(traj, system, spec.threshold, (t_lo, t_hi))
    return None


def is_bounded(traj: Trajectory, limits, factor: float = 2.0) -> bool:
    """Not diverged and every component within ``factor`` times the given absolute limits."""
    if traj.diverged:
        return False
    return bool(np.all(np.abs(traj.states) <= factor * np.asarray(limits)[None, :]))
