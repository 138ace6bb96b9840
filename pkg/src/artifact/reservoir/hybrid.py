"""Knowledge-based component of the hybrid reservoir model."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..dynamics import LorenzParams, RampSchedule, lorenz_rhs, ramp_value, rk4_noisy_step


@dataclass(frozen=True)
class KnowledgeModel:
    """An imperfect one-step predictor: a noiseless Lorenz model with its own sigma and beta.

    The model shares the true drifting rho(t).  ``scales`` map between the
    normalized reservoir coordinates and the physical ones.
    """

    system: LorenzParams
    scales: Optional[np.ndarray] = None

    def with_scales(self, scales) -> "KnowledgeModel":
        return replace(self, scales=np.asarray(scales, dtype=float))

    @classmethod
    def inaccurate_lorenz(cls, rho: RampSchedule, sigma: float = 20.0, beta: float = 16.0 / 3.0,
                          dt: float = 0.01) -> "KnowledgeModel":
        return cls(LorenzParams(rho=rho, sigma=sigma, beta=beta, dt=dt))


def knowledge_step(km: KnowledgeModel, v, t):
    """One RK4 step of the knowledge model from normalized state(s) ``v`` at time(s) ``t``.

    ``v`` may be a single L-vector or rows of L-vectors with matching ``t``.
    Non-finite results are returned as is; the caller's divergence check
    handles them.
    """
    sys = km.system
    scales = np.ones(3) if km.scales is None else km.scales
    state = np.asarray(v, dtype=float) * scales
    t = np.asarray(t, dtype=float)
    if state.ndim == 2:
        t = t.reshape(-1)
    sigma, beta, rho = sys.sigma, sys.beta, sys.rho

    def rhs(s, tt):
        r = ramp_value(rho, tt)
        if np.ndim(r):
            r = np.asarray(r)
        return lorenz_rhs(s, sigma, beta, r)

    with np.errstate(over="ignore", invalid="ignore"):
        out = rk4_noisy_step(rhs, state, t, sys.dt)
    return out / scales
