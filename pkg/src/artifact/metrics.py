"""Climate and forecast metrics.

Empirical CDFs, the bounded 1-D Wasserstein distance, the ensemble
climate error Gamma(t), valid time, snapshot-attractor samples and a
Benettin estimate of the largest Lyapunov exponent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .dynamics import IkedaParams, KsParams, LorenzParams, Trajectory, frozen, one_step, random_initial_state
from .observables import EventSeries


@dataclass(frozen=True)
class EmpiricalCdf:
    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size == 0:
            raise ValueError("empirical CDF needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __call__(self, x):
        """Right-continuous: F(x) = #{samples <= x} / n."""
        return np.searchsorted(self.samples, x, side="right") / self.samples.size

    def __len__(self):
        return self.samples.size


def empirical_cdf(samples) -> EmpiricalCdf:
    return EmpiricalCdf(samples)


def wasserstein1(cdf_a: EmpiricalCdf, cdf_b: EmpiricalCdf, bounds: Sequence[float]) -> float:
    """Integral of |F_a - F_b| over [lo, hi], exact for step functions."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ValueError(f"bounds must satisfy lo < hi, got {bounds}")
    pts = np.concatenate([cdf_a.samples, cdf_b.samples])
    pts = np.unique(np.concatenate([[lo, hi], pts[(pts > lo) & (pts < hi)]]))
    left = pts[:-1]
    return float(np.sum(np.abs(cdf_a(left) - cdf_b(left)) * np.diff(pts)))


def multivariate_wasserstein(pred_states, true_states) -> float:
    """Mean over components of the bounded W1, integrated over each true component's range.

    A component whose true range is degenerate contributes 0 when the
    prediction matches it and its absolute offset otherwise.
    """
    pred_states = np.atleast_2d(np.asarray(pred_states, dtype=float))
    true_states = np.atleast_2d(np.asarray(true_states, dtype=float))
    dists = []
    for j in range(true_states.shape[1]):
        t = true_states[:, j]
        lo, hi = float(t.min()), float(t.max())
        if hi > lo:
            dists.append(wasserstein1(EmpiricalCdf(pred_states[:, j]), EmpiricalCdf(t), (lo, hi)))
        else:
            dists.append(float(np.mean(np.abs(pred_states[:, j] - lo))))
    return float(np.mean(dists))


@dataclass
class ClimateErrorSeries:
    times: np.ndarray
    gamma: np.ndarray
    width: float
    observable: str = "x"
    bounds: tuple = (0.0, 1.0)
    true_samples: List[np.ndarray] = field(default_factory=list, repr=False)
    pred_samples: List[np.ndarray] = field(default_factory=list, repr=False)

    def mean_over(self, t_lo: float, t_hi: float) -> float:
        keep = (self.times >= t_lo) & (self.times <= t_hi) & np.isfinite(self.gamma)
        return float(np.mean(self.gamma[keep])) if np.any(keep) else float("nan")

    def cdf_table(self, t: float, points: int = 200) -> np.ndarray:
        """(x, F_true, F_pred) rows on a grid over the bounds for the window nearest ``t``."""
        i = int(np.argmin(np.abs(self.times - t)))
        x = np.linspace(self.bounds[0], self.bounds[1], points)
        ft = EmpiricalCdf(self.true_samples[i])(x) if self.true_samples[i].size else np.full(points, np.nan)
        fp = EmpiricalCdf(self.pred_samples[i])(x) if self.pred_samples[i].size else np.full(points, np.nan)
        return np.column_stack([x, ft, fp])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.times, self.gamma]), delimiter=",",
                   header="t,gamma", comments="", fmt="%.17g")


def _pool(ensemble: Sequence[EventSeries], t_lo: float, t_hi: float) -> np.ndarray:
    parts = []
    for ev in ensemble:
        keep = (ev.times >= t_lo) & (ev.times <= t_hi)
        parts.append(ev.values[keep])
    return np.concatenate(parts) if parts else np.empty(0)


def gamma_metric(true_ensemble: Sequence[EventSeries], pred_ensemble: Sequence[EventSeries],
                 window: float, times: Optional[Sequence[float]] = None,
                 bounds: Optional[Sequence[float]] = None, observable: str = "x") -> ClimateErrorSeries:
    """Gamma(t) = (2 / Delta_x) * integral |F_true - F_pred| dx over [t, t + window].

    Samples from every ensemble member falling in the window are pooled.
    ``bounds`` default to the range of all true samples; Delta_x is their
    width.  Windows lacking samples on either side give NaN.
    """
    all_true = np.concatenate([ev.values for ev in true_ensemble]) if true_ensemble else np.empty(0)
    all_true = all_true[np.isfinite(all_true)]
    if bounds is None:
        if all_true.size == 0:
            raise ValueError("no true samples to set the integration bounds")
        bounds = (float(all_true.min()), float(all_true.max()))
    lo, hi = float(bounds[0]), float(bounds[1])
    if not hi > lo:
        raise ValueError(f"degenerate integration bounds {bounds}")
    if times is None:
        t_first = min(ev.times[0] for ev in true_ensemble if len(ev))
        t_last = max(ev.times[-1] for ev in true_ensemble if len(ev))
        times = np.arange(t_first, t_last - window + 1e-9, window)
    times = np.asarray(times, dtype=float)
    gamma = np.full(times.size, np.nan)
    ts, ps = [], []
    for i, t in enumerate(times):
        a = _pool(true_ensemble, t, t + window)
        b = _pool(pred_ensemble, t, t + window)
        b = b[np.isfinite(b)]
        ts.append(a)
        ps.append(b)
        if a.size and b.size:
            gamma[i] = 2.0 / (hi - lo) * wasserstein1(EmpiricalCdf(a), EmpiricalCdf(b), (lo, hi))
    return ClimateErrorSeries(times, gamma, float(window), observable, (lo, hi), ts, ps)


@dataclass(frozen=True)
class ValidTimeReport:
    valid_time: float
    threshold: float
    errors: np.ndarray
    horizon: float


def valid_time(predicted: Trajectory, truth: Trajectory, threshold: float = 0.4) -> ValidTimeReport:
    """Time until ||pred - true|| / RMS(||true||) first exceeds ``threshold``.

    Both trajectories must share dt and start time; the comparison runs
    over the truth span.  A prediction that stops early (diverged) counts
    as failed from its last sample on.
    """
    if predicted.dim != truth.dim:
        raise ValueError("dimension mismatch")
    if abs(predicted.dt - truth.dt) > 1e-12 or abs(predicted.t0 - truth.t0) > 1e-9 * max(1.0, abs(truth.t0)):
        raise ValueError("trajectories must share t0 and dt")
    n = len(truth)
    m = min(n, len(predicted))
    scale = math.sqrt(np.mean(np.sum(truth.states ** 2, axis=1)))
    if scale == 0:
        scale = 1.0
    err = np.full(n, np.inf)
    diff = predicted.states[:m] - truth.states[:m]
    with np.errstate(invalid="ignore", over="ignore"):
        err[:m] = np.sqrt(np.sum(diff ** 2, axis=1)) / scale
    err[~np.isfinite(err)] = np.inf
    horizon = (n - 1) * truth.dt
    over = np.nonzero(err > threshold)[0]
    vt = horizon if over.size == 0 else over[0] * truth.dt
    return ValidTimeReport(float(vt), float(threshold), err, float(horizon))


def snapshot_samples(ensemble: Sequence[Trajectory], t: float):
    """States of all non-diverged members at time ``t`` and the number excluded."""
    states, excluded = [], 0
    for traj in ensemble:
        if traj.diverged:
            excluded += 1
            continue
        i = traj.index_of(t)
        if i < 0 or i >= len(traj) or abs(traj.t0 + i * traj.dt - t) > 1e-6 * max(1.0, traj.dt):
            raise ValueError(f"t={t} outside trajectory span [{traj.t0}, {traj.t_end}]")
        states.append(traj.states[i])
    dim = ensemble[0].dim if ensemble else 0
    return (np.array(states) if states else np.empty((0, dim))), excluded


# -- Lyapunov ---------------------------------------------------------------------

def benettin(step: Callable, x0, n_intervals: int, steps_per_interval: int, interval: float,
             d0: float = 1e-8, discard: float = 0.1, seed: int = 0) -> float:
    """Two-trajectory Benettin estimate.

    ``step`` advances a (2, dim) stack by one step.  The shadow is
    renormalized to distance ``d0`` after every ``steps_per_interval`` steps;
    the first ``discard`` fraction of intervals is not averaged.
    """
    x = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=x.shape)
    d *= d0 / np.linalg.norm(d)
    pair = np.stack([x, x + d])
    skip = int(round(discard * n_intervals))
    total, used = 0.0, 0
    for j in range(n_intervals):
        for _ in range(steps_per_interval):
            pair = step(pair)
        sep = pair[1] - pair[0]
        dist = float(np.linalg.norm(sep))
        if not np.isfinite(dist) or dist == 0.0:
            raise FloatingPointError("shadow trajectory diverged or collapsed; reduce the interval")
        if j >= skip:
            total += math.log(dist / d0)
            used += 1
        pair[1] = pair[0] + sep * (d0 / dist)
    if used == 0:
        raise ValueError("no intervals left after discard")
    return total / (used * interval)


def _ikeda_pair_step(params: IkedaParams, eta: float):
    a, b, gamma = params.a, params.b, params.gamma

    def step(pair):
        x, y = pair[:, 0], pair[:, 1]
        phase = gamma - eta / (1.0 + x * x + y * y)
        c, s = np.cos(phase), np.sin(phase)
        return np.column_stack([a + b * (x * c - y * s), b * (x * s + y * c)])

    return step


def largest_lyapunov(system, parameter: float, t_span: float, renorm_interval: float = 1.0,
                     seed: int = 0, d0: float = 1e-8, discard: float = 0.1,
                     transient: Optional[float] = None, x0=None) -> float:
    """Largest Lyapunov exponent of ``system`` frozen at ``parameter``, per unit time.

    Time is the system's own unit (map iterations for Ikeda).  A noiseless
    copy is used; ``transient`` (default ``t_span / 10``) settles the orbit
    onto its attractor before measuring.
    """
    sys = frozen(system, parameter)
    if isinstance(sys, (LorenzParams, KsParams)):
        sys = replace(sys, noise_bound=0.0)
    dt = 1.0 if isinstance(sys, IkedaParams) else sys.dt
    per = max(1, int(round(renorm_interval / dt)))
    n_int = max(1, int(round(t_span / (per * dt))))
    if isinstance(sys, IkedaParams):
        step = _ikeda_pair_step(sys, parameter)
    else:
        step = lambda pair: one_step(sys, pair, 0.0)  # noqa: E731
    x = random_initial_state(sys, seed) if x0 is None else np.asarray(x0, dtype=float)
    transient = t_span / 10.0 if transient is None else transient
    settle = np.stack([x, x])
    for _ in range(int(round(transient / dt))):
        settle = step(settle)
    if not np.all(np.isfinite(settle)):
        raise FloatingPointError("orbit diverged during transient")
    return benettin(step, settle[0], n_int, per, per * dt, d0, discard, seed)


def ks_canonical_exponent(exponent: float, kappa: float) -> float:
    """Convert a KS exponent to the time unit of u_t + u u_x + u_xx + u_xxxx = 0.

    Rescaling x -> x / sqrt(kappa) maps the kappa-form equation on [0, 2*pi)
    to the canonical one on a domain of length 2*pi / sqrt(kappa) with time
    t / kappa, so exponents scale by kappa.
    """
    return exponent * kappa
