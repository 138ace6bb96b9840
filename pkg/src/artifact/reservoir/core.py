"""Reservoir construction, open-loop driving, ridge training and closed-loop prediction."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import blas
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from ..dynamics import DIVERGENCE_LIMIT, Trajectory
from .hybrid import KnowledgeModel, knowledge_step

log = logging.getLogger(__name__)

ARCHITECTURES = ("plain", "split", "split_quadratic", "hybrid")


@dataclass(frozen=True)
class HyperParams:
    """Full reservoir configuration.

    ``tikhonov`` is the ridge weight lambda of the readout cost;
    ``control_slope``/``control_intercept`` define s_k = a*k + b.
    ``washout`` counts initial training steps excluded from the fit while
    the reservoir forgets its zero start.
    """

    n_nodes: int = 2000
    mean_degree: float = 3.0
    spectral_radius: float = 0.8
    input_scale: float = 0.5
    control_scale: float = 1.0
    leakage: float = 1.0
    tikhonov: float = 1e-8
    activation_bias: float = 0.0
    control_slope: float = 0.0
    control_intercept: float = 1.0
    obs_noise: float = 0.0
    training_passes: int = 1
    train_length: float = 100.0
    rc_dt: float = 0.01
    architecture: str = "plain"
    washout: int = 100

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if not self.spectral_radius > 0:
            raise ValueError("spectral_radius must be > 0")
        if not 0 <= self.leakage <= 1:
            raise ValueError("leakage must lie in [0, 1]")
        if self.training_passes < 1:
            raise ValueError("training_passes must be >= 1")
        if self.tikhonov < 0 or self.obs_noise < 0:
            raise ValueError("tikhonov and obs_noise must be >= 0")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class ReservoirTopology:
    adjacency: sp.csr_matrix
    input_layer: np.ndarray
    control_layer: Optional[np.ndarray] = None
    seed: int = 0

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def input_matrix(self) -> np.ndarray:
        """Matrix acting on u = [v; s] (split layers are concatenated)."""
        if self.control_layer is None:
            return self.input_layer
        return np.column_stack([self.input_layer, self.control_layer])


def spectral_radius(matrix) -> float:
    n = matrix.shape[0]
    if n <= 300:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        return float(np.max(np.abs(np.linalg.eigvals(dense)))) if n else 0.0
    try:
        vals = eigs(matrix, k=1, which="LM", tol=1e-13, maxiter=100 * n, ncv=min(n - 1, 60),
                    return_eigenvectors=False)
        return float(np.abs(vals[0]))
    except ArpackNoConvergence:
        log.warning("ARPACK did not converge for n=%d; using dense eigenvalues", n)
        return float(np.max(np.abs(np.linalg.eigvals(matrix.toarray()))))


def build_topology(hp: HyperParams, dim: int, seed: int) -> ReservoirTopology:
    """Erdos-Renyi adjacency rescaled to ``hp.spectral_radius`` plus input layer(s).

    ``dim`` is the number of measured variables L; the control signal adds one
    more input.  A graph with zero spectral radius is redrawn with the next
    seed, up to ten attempts.
    """
    n = hp.n_nodes
    for attempt in range(10):
        rng = np.random.default_rng(seed + attempt)
        mask = rng.random((n, n)) < min(1.0, hp.mean_degree / n)
        rows, cols = np.nonzero(mask)
        weights = rng.uniform(-1.0, 1.0, size=rows.size)
        adjacency = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
        radius = spectral_radius(adjacency) if rows.size else 0.0
        if radius > 1e-12:
            break
    else:
        raise RuntimeError(f"adjacency had zero spectral radius for 10 seeds starting at {seed}")
    adjacency = (adjacency * (hp.spectral_radius / radius)).tocsr()

    split = hp.architecture in ("split", "split_quadratic")
    k = dim if split else dim + 1
    w_in = np.zeros((n, k))
    w_in[np.arange(n), rng.integers(k, size=n)] = rng.uniform(-hp.input_scale, hp.input_scale, size=n)
    control = None
    if split:
        on = rng.random(n) < 0.5
        control = np.where(on, rng.uniform(-hp.control_scale, hp.control_scale, size=n), 0.0)
    return ReservoirTopology(adjacency, w_in, control, seed)


def reservoir_step(r, u, topology: ReservoirTopology, hp: HyperParams):
    """r(t+dt) = (1-alpha) r + alpha tanh(A r + W_in u + b_r); columns are independent states."""
    pre = topology.adjacency @ r + topology.input_matrix @ u + hp.activation_bias
    return (1.0 - hp.leakage) * r + hp.leakage * np.tanh(pre)


def drive_open_loop(topology: ReservoirTopology, hp: HyperParams, inputs, r0=None) -> np.ndarray:
    """Drive with each row of ``inputs``; row i of the result follows input i."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 0:
        raise ValueError("inputs must be non-empty")
    r = np.zeros(topology.n_nodes) if r0 is None else np.array(r0, dtype=float)
    drive = inputs @ topology.input_matrix.T + hp.activation_bias
    A, alpha = topology.adjacency, hp.leakage
    out = np.empty((inputs.shape[0], topology.n_nodes))
    for i in range(inputs.shape[0]):
        r = (1.0 - alpha) * r + alpha * np.tanh(A @ r + drive[i])
        out[i] = r
    return out


def feature_length(architecture: str, n_nodes: int, dim: int) -> int:
    k = dim + 1
    return {
        "plain": n_nodes + k + 1,
        "split": n_nodes + k + 1,
        "split_quadratic": 2 * n_nodes + k + 1,
        "hybrid": n_nodes + dim + 1 + dim,
    }[architecture]


def feature_rows(architecture: str, r, u, kb=None) -> np.ndarray:
    """Stack feature vectors row-wise; ``r`` is (n, N), ``u`` is (n, L+1)."""
    ones = np.ones((r.shape[0], 1))
    if architecture in ("plain", "split"):
        return np.hstack([r, u, ones])
    if architecture == "split_quadratic":
        return np.hstack([r, r * r, u, ones])
    if kb is None:
        raise ValueError("hybrid features need knowledge-model predictions")
    return np.hstack([r, u[:, :-1], ones, kb])


def hybrid_prior(n_nodes: int, dim: int) -> np.ndarray:
    """P = [0 I]: readout that passes the knowledge-model prediction through."""
    prior = np.zeros((dim, feature_length("hybrid", n_nodes, dim)))
    prior[:, -dim:] = np.eye(dim)
    return prior


def solve_readout(gram, cross, tikhonov: float, prior=None) -> np.ndarray:
    """Solve W (G + lambda I) = H + lambda P for the readout W.

    ``gram`` is the mean of f f^T over training pairs and ``cross`` the mean of
    y f^T, so W minimizes mean ||W f - y||^2 + lambda ||W - P||^2.
    """
    n_feat = gram.shape[0]
    lhs = gram + tikhonov * np.eye(n_feat)
    rhs = cross if prior is None else cross + tikhonov * prior
    # tiny tikhonov values are routine here, so conditioning warnings are noise
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        try:
            sol = sla.solve(lhs, rhs.T, assume_a="pos", check_finite=False)
        except (sla.LinAlgError, ValueError):
            try:
                sol = sla.solve(lhs, rhs.T, assume_a="sym", check_finite=False)
            except sla.LinAlgError as exc:
                raise np.linalg.LinAlgError(
                    "readout normal equations are singular; use tikhonov > 0") from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("readout normal equations are singular; use tikhonov > 0")
    return sol.T


def train_readout(features, targets, tikhonov: float, prior=None) -> np.ndarray:
    """Ridge readout (L x F) from feature rows (n x F) and target rows (n x L)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(features.shape[0], -1)
    n = features.shape[0]
    if n == 0:
        raise ValueError("need at least one training pair")
    return solve_readout(features.T @ features / n, targets.T @ features / n, tikhonov, prior)


@dataclass(frozen=True)
class TrainedModel:
    topology: ReservoirTopology
    readout: np.ndarray
    residuals: np.ndarray
    scales: np.ndarray
    hyperparams: HyperParams
    train_t0: float
    dt: float
    seed: int = 0
    knowledge: Optional[KnowledgeModel] = None

    def __post_init__(self):
        dim = self.scales.size
        expected = feature_length(self.hyperparams.architecture, self.topology.n_nodes, dim)
        if self.readout.shape != (dim, expected):
            raise ValueError(f"readout shape {self.readout.shape} does not match "
                             f"{self.hyperparams.architecture} features ({dim}, {expected})")
        if self.hyperparams.architecture == "hybrid" and self.knowledge is None:
            raise ValueError("hybrid model needs a knowledge model")

    @property
    def dim(self) -> int:
        return self.scales.size

    @property
    def architecture(self) -> str:
        return self.hyperparams.architecture

    def step_index(self, t: float) -> int:
        """Control-signal index k of an input observed at time t (first training input is k=1)."""
        return int(round((t - self.train_t0) / self.dt)) + 1

    def control(self, k):
        hp = self.hyperparams
        return hp.control_slope * np.asarray(k, dtype=float) + hp.control_intercept


def _control(hp, k):
    return hp.control_slope * np.asarray(k, dtype=float) + hp.control_intercept


def _knowledge_batch(km: KnowledgeModel, v, times):
    if km is None:
        return None
    return knowledge_step(km, v, times)


def _accumulate(topology, hp, v, k_first, t_first, dt, km, rng, chunk=1000):
    """Gram and cross moments over all passes, skipping the washout."""
    n, dim = v.shape
    passes = hp.training_passes if hp.obs_noise > 0 else 1
    n_feat = feature_length(hp.architecture, topology.n_nodes, dim)
    gram = np.zeros((n_feat, n_feat), order="F")
    cross = np.zeros((dim, n_feat))
    count = 0
    s = _control(hp, k_first + np.arange(n))
    times = t_first + dt * np.arange(n)
    if hp.obs_noise > 0:
        noisy = v[None] + rng.uniform(-hp.obs_noise, hp.obs_noise, size=(passes, n, dim))
    else:
        noisy = v[None]
    kb = [_knowledge_batch(km, noisy[p], times) for p in range(passes)]

    A, alpha = topology.adjacency, hp.leakage
    w_v = topology.input_matrix[:, :dim]
    w_s = topology.input_matrix[:, dim]
    r = np.zeros((topology.n_nodes, passes))
    pairs = n - 1
    buf = np.empty((min(chunk, pairs), passes, topology.n_nodes))
    for start in range(0, pairs, chunk):
        stop = min(start + chunk, pairs)
        for k in range(start, stop):
            drive = w_v @ noisy[:, k, :].T + (w_s * s[k] + hp.activation_bias)[:, None]
            r = (1.0 - alpha) * r + alpha * np.tanh(A @ r + drive)
            buf[k - start] = r.T
        lo = max(start, hp.washout)
        if lo >= stop:
            continue
        sel = slice(lo - start, stop - start)
        y = v[lo + 1:stop + 1]
        for p in range(passes):
            u = np.column_stack([noisy[p, lo:stop], s[lo:stop]])
            kbp = None if kb[p] is None else kb[p][lo:stop]
            x = feature_rows(hp.architecture, buf[sel, p, :], u, kbp)
            # upper triangle only; mirrored below
            gram = blas.dsyrk(1.0, x.T, beta=1.0, c=gram, trans=0, lower=0, overwrite_c=1)
            cross += y.T @ x
            count += stop - lo
    if count == 0:
        raise ValueError(f"training data ({n} samples) shorter than washout ({hp.washout})")
    gram = np.triu(gram) + np.triu(gram, 1).T
    return gram / count, cross / count


def train(data: Trajectory, hp: HyperParams, seed: int, scales=None,
          knowledge: Optional[KnowledgeModel] = None) -> TrainedModel:
    """Fit a reservoir to ``data`` (physical units).

    ``scales`` are per-component RMS values used to normalize inputs; they
    default to the RMS of ``data``.  Observational noise of half-width
    ``hp.obs_noise`` is redrawn for each of ``hp.training_passes`` passes and
    added to inputs only.
    """
    if data.diverged:
        raise ValueError("cannot train on a diverged trajectory")
    if abs(data.dt - hp.rc_dt) > 1e-12 * max(1.0, hp.rc_dt):
        raise ValueError(f"trajectory dt {data.dt} differs from rc_dt {hp.rc_dt}")
    if scales is None:
        scales = np.sqrt(np.mean(data.states ** 2, axis=0))
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0):
        raise ValueError(f"zero RMS scale in component(s) {np.nonzero(scales <= 0)[0].tolist()}")
    dim = data.dim
    if hp.architecture == "hybrid":
        if knowledge is None:
            raise ValueError("hybrid architecture needs a knowledge model")
        knowledge = knowledge.with_scales(scales)
    else:
        knowledge = None

    topology = build_topology(hp, dim, seed)
    rng = np.random.default_rng([seed, 1])
    v = data.states / scales
    gram, cross = _accumulate(topology, hp, v, 1, data.t0, data.dt, knowledge, rng)
    prior = hybrid_prior(hp.n_nodes, dim) if hp.architecture == "hybrid" else None
    readout = solve_readout(gram, cross, hp.tikhonov, prior)
    model = TrainedModel(topology, readout, np.zeros((0, dim)), scales, hp, data.t0, data.dt,
                         seed, knowledge)
    return replace(model, residuals=residual_pool(model, data))


def _open_loop_features(model: TrainedModel, vn, k_first, t_first, r0=None):
    hp = model.hyperparams
    s = model.control(k_first + np.arange(vn.shape[0]))
    u = np.column_stack([vn, s])
    r = drive_open_loop(model.topology, hp, u, r0)
    kb = None
    if model.architecture == "hybrid":
        kb = knowledge_step(model.knowledge, vn, t_first + model.dt * np.arange(vn.shape[0]))
    return feature_rows(model.architecture, r, u, kb), r


def residual_pool(model: TrainedModel, data: Trajectory) -> np.ndarray:
    """One-step training errors v(t+dt) - W_out f(t) (normalized units), in time order.

    The clean training inputs drive the reservoir; the first ``washout``
    steps are skipped so the pool reflects the fitted regime.
    """
    vn = data.states / model.scales
    k_first = model.step_index(data.t0)
    feats, _ = _open_loop_features(model, vn[:-1], k_first, data.t0)
    res = vn[1:] - feats @ model.readout.T
    return res[min(model.hyperparams.washout, max(res.shape[0] - 1, 0)):]


class _Readout:
    """Readout split into blocks so one closed-loop step avoids building features."""

    def __init__(self, model: TrainedModel):
        w = model.readout
        n, dim = model.topology.n_nodes, model.dim
        arch = model.architecture
        self.w_r = w[:, :n]
        pos = n
        self.w_r2 = None
        if arch == "split_quadratic":
            self.w_r2 = w[:, n:2 * n]
            pos = 2 * n
        if arch == "hybrid":
            self.w_u = np.column_stack([w[:, pos:pos + dim], np.zeros(dim)])
            self.bias = w[:, pos + dim]
            self.w_kb = w[:, pos + dim + 1:]
        else:
            self.w_u = w[:, pos:pos + dim + 1]
            self.bias = w[:, pos + dim + 1]
            self.w_kb = None

    def __call__(self, r, u, kb=None):
        y = self.w_r @ r + self.w_u @ u + self.bias
        if self.w_r2 is not None:
            y += self.w_r2 @ (r * r)
        if self.w_kb is not None:
            y += self.w_kb @ kb
        return y


def predict_closed_loop(model: TrainedModel, sync: Trajectory, n_steps: int, stochastic: bool = True,
                        seed: int = 0, start_step: Optional[int] = None) -> Trajectory:
    """Synchronize on ``sync`` in open loop, then run ``n_steps`` autonomous steps.

    The result starts with the last synchronization sample (the anchor at
    the prediction start) followed by ``n_steps`` predictions, all in
    physical units.  With ``stochastic`` a residual drawn uniformly from the
    training pool is added to each one-step output before it is fed back.
    Outputs beyond 1e6 in normalized units truncate the trajectory and mark
    it diverged.
    """
    if len(sync) < 1:
        raise ValueError("synchronization segment must be non-empty")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    hp = model.hyperparams
    vn = sync.states / model.scales
    k0 = model.step_index(sync.t0) if start_step is None else start_step
    anchor_t = sync.t_end
    _, r_hist = _open_loop_features(model, vn, k0, sync.t0)
    r = r_hist[-1]
    v = vn[-1]
    k = k0 + vn.shape[0] - 1
    t = anchor_t

    rng = np.random.default_rng(seed)
    pool = model.residuals
    picks = None
    if stochastic and pool.shape[0] and n_steps:
        picks = pool[rng.integers(pool.shape[0], size=n_steps)]

    readout = _Readout(model)
    A, alpha, bias = model.topology.adjacency, hp.leakage, hp.activation_bias
    w_in = model.topology.input_matrix
    km = model.knowledge
    out = np.empty((n_steps + 1, model.dim))
    out[0] = v
    diverged = False
    count = n_steps + 1
    for i in range(n_steps):
        u = np.append(v, model.control(k))
        kb = knowledge_step(km, v, t) if km is not None else None
        y = readout(r, u, kb)
        if picks is not None:
            y = y + picks[i]
        out[i + 1] = y
        if not (np.all(np.isfinite(y)) and np.max(np.abs(y)) <= DIVERGENCE_LIMIT):
            diverged = True
            count = i + 2
            break
        v = y
        k += 1
        t += model.dt
        u = np.append(v, model.control(k))
        r = (1.0 - alpha) * r + alpha * np.tanh(A @ r + w_in @ u + bias)
    states = out[:count] * model.scales
    return Trajectory(anchor_t, model.dt, states, seed, diverged)
