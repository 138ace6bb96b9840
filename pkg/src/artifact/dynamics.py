"""Ground-truth simulators for the three non-stationary test systems.

Lorenz '63 (RK4, dt = 0.01), the Ikeda map and the Kuramoto-Sivashinsky
equation (ETDRK4 on a periodic 2*pi domain).  Each system takes its drifting
parameter from a :class:`RampSchedule` and optional uniform dynamical noise.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

DIVERGENCE_LIMIT = 1e6

__all__ = [
    "hopf_threshold",
    "RampSchedule",
    "LorenzParams",
    "IkedaParams",
    "KsParams",
    "Trajectory",
    "ramp_value",
    "ramp_crossing_time",
    "lorenz_rhs",
    "rk4_noisy_step",
    "ikeda_step",
    "ks_etdrk4_step",
    "simulate",
    "random_initial_state",
    "frozen",
    "one_step",
]


@dataclass(frozen=True)
class RampSchedule:
    """p(t) = base + amplitude * exp(t / timescale)."""

    base: float
    amplitude: float
    timescale: float

    def __post_init__(self):
        if not self.timescale > 0:
            raise ValueError(f"timescale must be > 0, got {self.timescale}")

    def __call__(self, t):
        return ramp_value(self, t)

    @classmethod
    def constant(cls, value: float) -> "RampSchedule":
        return cls(float(value), 0.0, 1.0)


def ramp_value(schedule: RampSchedule, t):
    """Evaluate the exponential ramp. Overflow yields inf, which callers reject."""
    if schedule.amplitude == 0:
        out = np.full(np.shape(t), float(schedule.base))
        return float(out) if out.ndim == 0 else out
    with np.errstate(over="ignore"):
        out = schedule.base + schedule.amplitude * np.exp(np.asarray(t, dtype=float) / schedule.timescale)
    return float(out) if np.ndim(out) == 0 else out


def ramp_crossing_time(schedule: RampSchedule, value: float, lo: float = -1e7, hi: float = 1e7,
                       tol: float = 1e-10) -> float:
    """Time at which the ramp reaches ``value``, by bisection."""
    f_lo = ramp_value(schedule, lo) - value
    f_hi = ramp_value(schedule, hi) - value
    if not np.isfinite(f_hi):
        hi = schedule.timescale * 700.0
        f_hi = ramp_value(schedule, hi) - value
    if f_lo * f_hi > 0:
        raise ValueError(f"ramp never reaches {value} in [{lo}, {hi}]")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f_mid = ramp_value(schedule, mid) - value
        if f_mid == 0 or hi - lo < tol:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_noise(bound):
    arr = np.asarray(bound, dtype=float)
    if np.any(arr < 0):
        raise ValueError(f"noise_bound must be >= 0, got {bound}")


@dataclass(frozen=True)
class LorenzParams:
    rho: RampSchedule
    sigma: float = 10.0
    beta: float = 8.0 / 3.0
    noise_bound: Union[float, tuple] = 0.0
    dt: float = 0.01
    spinup: float = 200.0
    init_box: tuple = (-10.0, 10.0)

    dim = 3

    def __post_init__(self):
        _check_noise(self.noise_bound)
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    def parameter(self, t):
        return ramp_value(self.rho, t)

    @property
    def hopf_rho(self) -> float:
        """rho at which the nontrivial fixed points lose stability (subcritical Hopf)."""
        return hopf_threshold(self.sigma, self.beta)


def hopf_threshold(sigma: float, beta: float) -> float:
    if sigma <= beta + 1:
        raise ValueError("no Hopf bifurcation for sigma <= beta + 1")
    return sigma * (sigma + beta + 3.0) / (sigma - beta - 1.0)


@dataclass(frozen=True)
class IkedaParams:
    eta: RampSchedule
    a: float = 0.85
    b: float = 0.9
    gamma: float = 0.4
    noise_bound: float = 0.0
    spinup: float = 5000.0
    init_box: tuple = (-1.0, 1.0)

    dim = 2
    dt = 1.0

    def __post_init__(self):
        _check_noise(self.noise_bound)

    def parameter(self, t):
        return ramp_value(self.eta, t)


@dataclass(frozen=True)
class KsParams:
    kappa: RampSchedule
    grid_points: int = 64
    noise_bound: float = 0.0
    dt: float = 0.0084
    spinup: float = 200.0
    init_box: tuple = (-0.5, 0.5)

    def __post_init__(self):
        n = self.grid_points
        if n < 8 or n & (n - 1):
            raise ValueError(f"grid_points must be a power of two >= 8, got {n}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        _check_noise(self.noise_bound)

    @property
    def dim(self):
        return self.grid_points

    def parameter(self, t):
        return ramp_value(self.kappa, t)

    @property
    def grid(self):
        return 2 * np.pi * np.arange(self.grid_points) / self.grid_points


System = Union[LorenzParams, IkedaParams, KsParams]


def frozen(system: System, value: float) -> System:
    """Copy of ``system`` with its drifting parameter pinned at ``value``."""
    ramp = RampSchedule.constant(value)
    if isinstance(system, LorenzParams):
        return replace(system, rho=ramp)
    if isinstance(system, IkedaParams):
        return replace(system, eta=ramp)
    return replace(system, kappa=ramp)


@dataclass(frozen=True)
class Trajectory:
    t0: float
    dt: float
    states: np.ndarray
    seed: int = 0
    diverged: bool = False

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[1] < 1:
            raise ValueError(f"states must be (count, L), got shape {states.shape}")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self) - 1)

    def index_of(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt))

    def window(self, t_lo: float, t_hi: float, include_hi: bool = True) -> "Trajectory":
        """Samples with t_lo <= t <= t_hi (or < t_hi)."""
        i0 = max(0, int(math.ceil((t_lo - self.t0) / self.dt - 1e-9)))
        x = (t_hi - self.t0) / self.dt
        i1 = int(math.floor(x + 1e-9)) if include_hi else int(math.ceil(x - 1e-9)) - 1
        i1 = min(i1, len(self) - 1)
        if i1 < i0:
            raise ValueError(f"empty window [{t_lo}, {t_hi}] in trajectory spanning [{self.t0}, {self.t_end}]")
        return self.slice(i0, i1 + 1)

    def slice(self, i0: int, i1: int) -> "Trajectory":
        return Trajectory(self.t0 + i0 * self.dt, self.dt, self.states[i0:i1], self.seed,
                          self.diverged and i1 >= len(self))

    # -- persistence --------------------------------------------------------
    _HEADER = struct.Struct("<4sIIQddQ")

    def save(self, path) -> None:
        """Binary container: DCTR header then row-major float64 states."""
        header = self._HEADER.pack(b"DCTR", 1, self.dim, len(self), self.t0, self.dt,
                                   int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Trajectory":
        data = Path(path).read_bytes()
        magic, version, dim, count, t0, dt, seed = cls._HEADER.unpack_from(data)
        if magic != b"DCTR":
            raise ValueError(f"{path}: not a trajectory file")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        states = np.frombuffer(data, dtype="<f8", offset=cls._HEADER.size, count=dim * count)
        states = states.reshape(count, dim).astype(float)
        # a diverged trajectory keeps its offending sample as the last row
        diverged = bool(count) and not _finite_row(states[-1])
        return cls(t0, dt, states, seed, diverged)

    def to_csv(self, path, header: Sequence[str] | None = None) -> None:
        if header is None:
            header = ["t"] + [f"v{i + 1}" for i in range(self.dim)]
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def _finite_row(row) -> bool:
    return bool(np.all(np.isfinite(row)) and np.all(np.abs(row) <= DIVERGENCE_LIMIT))


# -- Lorenz -------------------------------------------------------------------

def lorenz_rhs(state, sigma: float, beta: float, rho: float):
    """Noiseless Lorenz vector field; works on (..., 3) arrays."""
    state = np.asarray(state, dtype=float)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)


def rk4_noisy_step(rhs: Callable, state, t: float, dt: float, noise=None):
    """One classical RK4 step of ``rhs(state, t) + noise``; noise is frozen over the step."""
    if noise is None:
        f = rhs
    else:
        f = lambda s, tt: rhs(s, tt) + noise  # noqa: E731
    k1 = f(state, t)
    k2 = f(state + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(state + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(state + dt * k3, t + dt)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _lorenz_orbit(x0, sigma, beta, rho, noise, dt):
    # scalar-float RK4; same arithmetic as rk4_noisy_step(lorenz_rhs) but ~20x faster
    n = rho.shape[0]
    out = np.empty((n + 1, 3))
    x, y, z = (float(v) for v in x0)
    out[0] = x, y, z
    h2, h6 = 0.5 * dt, dt / 6.0
    rho = rho.tolist()
    noise = noise.tolist()
    for i in range(n):
        r0, rh, r1 = rho[i]
        nx, ny, nz = noise[i]
        a1 = sigma * (y - x) + nx
        b1 = x * (r0 - z) - y + ny
        c1 = x * y - beta * z + nz
        xa, ya, za = x + h2 * a1, y + h2 * b1, z + h2 * c1
        a2 = sigma * (ya - xa) + nx
        b2 = xa * (rh - za) - ya + ny
        c2 = xa * ya - beta * za + nz
        xa, ya, za = x + h2 * a2, y + h2 * b2, z + h2 * c2
        a3 = sigma * (ya - xa) + nx
        b3 = xa * (rh - za) - ya + ny
        c3 = xa * ya - beta * za + nz
        xa, ya, za = x + dt * a3, y + dt * b3, z + dt * c3
        a4 = sigma * (ya - xa) + nx
        b4 = xa * (r1 - za) - ya + ny
        c4 = xa * ya - beta * za + nz
        x = x + h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        y = y + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        z = z + h6 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        out[i + 1] = x, y, z
        if not (abs(x) <= DIVERGENCE_LIMIT and abs(y) <= DIVERGENCE_LIMIT and abs(z) <= DIVERGENCE_LIMIT):
            return out[:i + 2]
    return out


def _lorenz_field(params: LorenzParams):
    sigma, beta, rho = params.sigma, params.beta, params.rho

    def rhs(s, t):
        return lorenz_rhs(s, sigma, beta, ramp_value(rho, t))

    return rhs


# -- Ikeda --------------------------------------------------------------------

def ikeda_step(state, eta_n: float, params: IkedaParams, noise=(0.0, 0.0)):
    """One iterate of the Ikeda map in real coordinates plus additive noise."""
    x, y = float(state[0]), float(state[1])
    phase = params.gamma - eta_n / (1.0 + x * x + y * y)
    c, s = math.cos(phase), math.sin(phase)
    return np.array([params.a + params.b * (x * c - y * s) + noise[0],
                     params.b * (x * s + y * c) + noise[1]])


def _ikeda_orbit(x, y, a, b, gamma, etas, noise):
    n = len(etas)
    out = np.empty((n + 1, 2))
    out[0] = x, y
    cos, sin = math.cos, math.sin
    stop = n + 1
    for i in range(n):
        phase = gamma - etas[i] / (1.0 + x * x + y * y)
        c, s = cos(phase), sin(phase)
        x, y = a + b * (x * c - y * s) + noise[i, 0], b * (x * s + y * c) + noise[i, 1]
        out[i + 1] = x, y
        if not (abs(x) <= DIVERGENCE_LIMIT and abs(y) <= DIVERGENCE_LIMIT):
            stop = i + 2
            break
    return out[:stop]


# -- Kuramoto-Sivashinsky -------------------------------------------------------

@lru_cache(maxsize=64)
def _etdrk4_coefficients(kappa: float, dt: float, n: int, contour_points: int = 32):
    # Kassam & Trefethen contour-integral evaluation of the phi functions
    k = np.arange(n // 2 + 1, dtype=float)
    lin = k ** 2 - kappa * k ** 4
    E = np.exp(dt * lin)
    E2 = np.exp(dt * lin / 2)
    roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    LR = dt * lin[:, None] + roots[None, :]
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = dt * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = dt * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1))
    g = -0.5j * k
    # 2/3-rule dealiasing mask folded into the nonlinear coefficient
    g = np.where(k < n / 3.0, g, 0.0)
    return E, E2, Q, f1, f2, f3, g


def _ks_step_hat(v, kappa, dt, n):
    E, E2, Q, f1, f2, f3, g = _etdrk4_coefficients(float(kappa), float(dt), n)
    irfft, rfft = np.fft.irfft, np.fft.rfft
    Nv = g * rfft(irfft(v, n) ** 2)
    a = E2 * v + Q * Nv
    Na = g * rfft(irfft(a, n) ** 2)
    b = E2 * v + Q * Na
    Nb = g * rfft(irfft(b, n) ** 2)
    c = E2 * a + Q * (2 * Nb - Nv)
    Nc = g * rfft(irfft(c, n) ** 2)
    return E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3


def ks_etdrk4_step(field, kappa_t: float, dt: float):
    """One ETDRK4 step of w_t + w w_x + w_xx + kappa w_xxxx = 0 on [0, 2*pi)."""
    field = np.asarray(field, dtype=float)
    n = field.shape[-1]
    v = np.fft.rfft(field)
    return np.fft.irfft(_ks_step_hat(v, kappa_t, dt, n), n)


# -- simulation -----------------------------------------------------------------

def _step_count(t_start, t_end, dt):
    if not t_end > t_start:
        raise ValueError(f"t_start < t_end required, got [{t_start}, {t_end}]")
    return int(round((t_end - t_start) / dt))


def simulate(system: System, initial_state, t_start: float, t_end: float, seed: int) -> Trajectory:
    """Integrate ``system`` from ``initial_state`` at ``t_start`` through ``t_end``.

    The returned trajectory holds every native step, endpoints included.
    Noise comes from ``numpy.random.default_rng(seed)``.  On divergence
    (non-finite or |value| > 1e6) the trajectory stops at the offending
    sample and is flagged.
    """
    x0 = np.array(initial_state, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    if isinstance(system, IkedaParams):
        n = _step_count(t_start, t_end, 1.0)
        times = t_start + np.arange(n)
        etas = ramp_value(system.eta, times) if n else np.empty(0)
        noise = _draw_noise(rng, system.noise_bound, (n, 2))
        states = _ikeda_orbit(x0[0], x0[1], system.a, system.b, system.gamma, np.atleast_1d(etas), noise)
        return _finish(t_start, 1.0, states, seed, n)

    dt = system.dt
    n = _step_count(t_start, t_end, dt)
    noise = _draw_noise(rng, system.noise_bound, (n, x0.size))
    states = np.empty((n + 1, x0.size))
    states[0] = x0
    s = x0
    stop = n + 1
    if isinstance(system, LorenzParams):
        if x0.size != 3:
            raise ValueError(f"Lorenz state must have 3 components, got {x0.size}")
        times = t_start + dt * np.arange(n)
        rho = np.column_stack([ramp_value(system.rho, times), ramp_value(system.rho, times + 0.5 * dt),
                               ramp_value(system.rho, times + dt)]) if n else np.empty((0, 3))
        states = _lorenz_orbit(x0, system.sigma, system.beta, rho, noise, dt)
        stop = states.shape[0]
    elif isinstance(system, KsParams):
        if x0.size != system.grid_points:
            raise ValueError(f"KS state must have {system.grid_points} points, got {x0.size}")
        for i in range(n):
            t = t_start + i * dt
            kappa = ramp_value(system.kappa, t)
            s = ks_etdrk4_step(s, kappa, dt) + noise[i]
            states[i + 1] = s
            if not _finite_row(s):
                stop = i + 2
                break
    else:
        raise TypeError(f"unknown system {type(system).__name__}")
    return _finish(t_start, dt, states[:stop], seed, n)


def _draw_noise(rng, bound, shape):
    bound = np.broadcast_to(np.asarray(bound, dtype=float), shape[1:])
    if np.all(bound == 0):
        return np.zeros(shape)
    return rng.uniform(-1.0, 1.0, size=shape) * bound


def _finish(t0, dt, states, seed, n):
    diverged = states.shape[0] < n + 1 or not _finite_row(states[-1])
    return Trajectory(float(t0), float(dt), states, int(seed), diverged)


def one_step(system: System, state, t: float):
    """Noiseless single native step from time ``t`` (used by Lyapunov and hybrid code)."""
    state = np.asarray(state, dtype=float)
    if isinstance(system, LorenzParams):
        return rk4_noisy_step(_lorenz_field(system), state, t, system.dt)
    if isinstance(system, IkedaParams):
        return ikeda_step(state, ramp_value(system.eta, t), system)
    return ks_etdrk4_step(state, ramp_value(system.kappa, t), system.dt)


def random_initial_state(system: System, seed: int) -> np.ndarray:
    """Uniform draw from the system's initial-condition box.

    KS fields have their spatial mean removed so the traveling-wave
    section values are not shifted by a Galilean drift.
    """
    rng = np.random.default_rng(seed)
    lo, hi = system.init_box
    x = rng.uniform(lo, hi, size=system.dim)
    if isinstance(system, KsParams):
        x -= x.mean()
    return x
