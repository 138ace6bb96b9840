"""Scalar event sequences extracted from trajectories: maxima, section crossings, RMS scaling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import Trajectory


@dataclass(frozen=True)
class EventSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if times.shape != values.shape:
            raise ValueError("times and values must have equal length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("event times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.times.size

    def between(self, t_lo: float, t_hi: float) -> "EventSeries":
        keep = (self.times >= t_lo) & (self.times <= t_hi)
        return EventSeries(self.times[keep], self.values[keep])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.times, self.values]), delimiter=",",
                   header="t,value", comments="", fmt="%.17g")


@dataclass(frozen=True)
class RmsScales:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if np.any(~(vals > 0)):
            raise ValueError(f"RMS scales must be > 0, got {vals}")
        object.__setattr__(self, "values", vals)

    def apply(self, traj: Trajectory) -> Trajectory:
        return Trajectory(traj.t0, traj.dt, traj.states / self.values, traj.seed, traj.diverged)

    def invert(self, traj: Trajectory) -> Trajectory:
        return Trajectory(traj.t0, traj.dt, traj.states * self.values, traj.seed, traj.diverged)


def rms_scales(traj: Trajectory, reference_window: Optional[tuple] = None) -> RmsScales:
    ref = traj if reference_window is None else traj.window(*reference_window)
    if len(ref) == 0:
        raise ValueError("reference window is empty")
    rms = np.sqrt(np.mean(ref.states ** 2, axis=0))
    zero = np.nonzero(rms == 0)[0]
    if zero.size:
        raise ValueError(f"component {int(zero[0])} has zero RMS over the reference window")
    return RmsScales(rms)


def rms_normalize(traj: Trajectory, reference_window: Optional[tuple] = None):
    """Divide each component by its RMS over ``reference_window`` (a (t_lo, t_hi) pair)."""
    scales = rms_scales(traj, reference_window)
    return scales.apply(traj), scales


def local_maxima(series, dt: float = 1.0, t0: float = 0.0) -> EventSeries:
    """Discrete maxima: s[i-1] < s[i] >= s[i+1].  A plateau reports its first sample."""
    s = np.asarray(series, dtype=float).ravel()
    if s.size < 3:
        raise ValueError("need at least 3 samples")
    mid = s[1:-1]
    idx = np.nonzero((s[:-2] < mid) & (mid >= s[2:]))[0] + 1
    return EventSeries(t0 + dt * idx, s[idx])


def trajectory_maxima(traj: Trajectory, component: int) -> EventSeries:
    return local_maxima(traj.states[:, component], traj.dt, traj.t0)


def section_crossings(traj: Trajectory, g: Callable, observe: int,
                      direction: str = "up") -> EventSeries:
    """Crossings of the surface g(state) = 0.

    ``direction`` is "up" (g goes - to +), "down" or "both".  The observed
    coordinate and the crossing time are linearly interpolated between the
    bracketing samples.
    """
    if direction not in ("up", "down", "both"):
        raise ValueError(f"direction must be up, down or both, got {direction!r}")
    states = traj.states
    gv = np.asarray(g(states), dtype=float).ravel()
    a, b = gv[:-1], gv[1:]
    up = (a < 0) & (b >= 0)
    down = (a > 0) & (b <= 0)
    hit = {"up": up, "down": down, "both": up | down}[direction]
    idx = np.nonzero(hit)[0]
    frac = a[idx] / (a[idx] - b[idx])
    obs = states[:, observe]
    values = obs[idx] + frac * (obs[idx + 1] - obs[idx])
    times = traj.t0 + traj.dt * (idx + frac)
    # an exact zero shared by two intervals would duplicate an event
    if times.size > 1:
        keep = np.concatenate([[True], np.diff(times) > 0])
        times, values = times[keep], values[keep]
    return EventSeries(times, values)


def lorenz_maxima_section(beta: float) -> Callable:
    """g(state) = x*y - beta*z, the Lorenz dz/dt; down-crossings are z maxima."""
    return lambda s: s[:, 0] * s[:, 1] - beta * s[:, 2]


def ks_section(index: int = 0) -> Callable:
    return lambda s: s[:, index]


def distinct_levels(values, tol: float) -> int:
    """Number of clusters after single-linkage grouping of sorted values with gap ``tol``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(v) > tol))
