"""Experiment configuration: JSON files describing a system, a reservoir and an analysis."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from ..dynamics import IkedaParams, KsParams, LorenzParams, RampSchedule, System
from ..reservoir import HyperParams, KnowledgeModel

CONFIG_VERSION = 1
_SYSTEM_KINDS = ("lorenz", "ikeda", "ks")
_OBSERVABLE_KINDS = ("maxima", "section", "state")
_SECTIONS = ("lorenz_dz", "ks")
_TRANSITION_KINDS = ("levels", "departure", "none")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def build_system(spec: dict) -> System:
    """System parameters from a ``{"kind": ..., "ramp": [base, amplitude, timescale], ...}`` dict."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _SYSTEM_KINDS:
        raise ConfigError(f"system.kind must be one of {_SYSTEM_KINDS}, got {kind!r}")
    try:
        ramp = RampSchedule(*spec.pop("ramp"))
    except KeyError:
        raise ConfigError("system.ramp is required") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system.ramp: {exc}") from None
    for key in ("init_box", "noise_bound"):
        if isinstance(spec.get(key), list):
            spec[key] = tuple(spec[key])
    cls, name = {"lorenz": (LorenzParams, "rho"), "ikeda": (IkedaParams, "eta"), "ks": (KsParams, "kappa")}[kind]
    try:
        return cls(**{name: ramp}, **spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from None


def system_kind(system: System) -> str:
    if isinstance(system, LorenzParams):
        return "lorenz"
    if isinstance(system, IkedaParams):
        return "ikeda"
    return "ks"


@dataclass(frozen=True)
class ObservableSpec:
    """Scalar events used for Gamma(t): maxima of a component, section crossings or raw samples."""

    kind: str = "maxima"
    component: int = 2
    section: Optional[str] = None
    section_index: int = 0
    direction: str = "up"

    def __post_init__(self):
        if self.kind not in _OBSERVABLE_KINDS:
            raise ConfigError(f"observable.kind must be one of {_OBSERVABLE_KINDS}, got {self.kind!r}")
        if self.kind == "section" and self.section not in _SECTIONS:
            raise ConfigError(f"observable.section must be one of {_SECTIONS}, got {self.section!r}")
        if self.direction not in ("up", "down", "both"):
            raise ConfigError(f"observable.direction must be up, down or both, got {self.direction!r}")

    @property
    def label(self) -> str:
        if self.kind == "section":
            return f"{self.section}_{self.component}"
        return f"{self.kind}_{self.component}"


@dataclass(frozen=True)
class TransitionSpec:
    """How a single trajectory is judged to have tipped.

    ``levels``: the observable's events in some window of length ``window``
    inside ``t_range`` form more than ``min_levels`` clusters at gap ``tol``.
    ``departure``: distance from the nearest Lorenz fixed point of the true
    rho(t) exceeds ``threshold`` somewhere inside ``t_range``.
    """

    kind: str = "levels"
    window: float = 20.0
    min_levels: int = 10
    tol: float = 0.005
    threshold: float = 5.0
    t_range: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in _TRANSITION_KINDS:
            raise ConfigError(f"transition.kind must be one of {_TRANSITION_KINDS}, got {self.kind!r}")
        if self.t_range is not None:
            object.__setattr__(self, "t_range", tuple(float(v) for v in self.t_range))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    system: dict
    hyperparams: dict = field(default_factory=dict)
    ensemble_size: int = 20
    spinup: Optional[float] = None
    observed_length: Optional[float] = None
    horizon: float = 120.0
    sync_length: float = 1.0
    stochastic: bool = True
    knowledge: Optional[dict] = None
    observable: ObservableSpec = ObservableSpec()
    transition: TransitionSpec = TransitionSpec()
    gamma_window: float = 1.0
    gamma_step: Optional[float] = None
    snapshot_times: tuple = ()
    grid: Optional[dict] = None
    seed: int = 0
    workers: int = 1
    save_models: bool = False
    notes: str = ""
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.gamma_window <= 0:
            raise ConfigError("gamma_window must be > 0")
        if self.sync_length <= 0:
            raise ConfigError("sync_length must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        sys = self.build_system()
        hp = self.build_hyperparams()
        dt = 1.0 if isinstance(sys, IkedaParams) else sys.dt
        if abs(hp.rc_dt - dt) > 1e-12:
            raise ConfigError(f"hyperparams.rc_dt {hp.rc_dt} must equal the system step {dt}")
        if self.observed_length is not None and self.observed_length < hp.train_length:
            raise ConfigError("observed_length shorter than the training window")
        if hp.architecture == "hybrid" and not isinstance(sys, LorenzParams):
            raise ConfigError("hybrid architecture is only available for the Lorenz system")
        if hp.architecture == "hybrid" and self.knowledge is None:
            raise ConfigError("hybrid architecture needs a knowledge section")
        if self.observable.component >= sys.dim:
            raise ConfigError(f"observable.component {self.observable.component} out of range for dim {sys.dim}")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    # -- derived objects ----------------------------------------------------------
    def build_system(self) -> System:
        return build_system(self.system)

    def build_hyperparams(self) -> HyperParams:
        try:
            return HyperParams.from_dict(self.hyperparams)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hyperparams: {exc}") from None

    def build_knowledge(self) -> Optional[KnowledgeModel]:
        if self.knowledge is None:
            return None
        sys = self.build_system()
        k = dict(self.knowledge)
        return KnowledgeModel.inaccurate_lorenz(sys.rho, sigma=k.get("sigma", 20.0),
                                                beta=k.get("beta", 16.0 / 3.0), dt=sys.dt)

    @property
    def spinup_length(self) -> float:
        return self.build_system().spinup if self.spinup is None else float(self.spinup)

    @property
    def observed(self) -> float:
        hp = self.build_hyperparams()
        return hp.train_length if self.observed_length is None else float(self.observed_length)

    # -- serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshot_times"] = list(self.snapshot_times)
        if d["transition"]["t_range"] is not None:
            d["transition"]["t_range"] = list(d["transition"]["t_range"])
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def run_key(self) -> str:
        """Hash of the fields that determine ensemble outputs (labels and scheduling excluded)."""
        d = self.to_dict()
        for k in ("name", "notes", "grid", "workers", "save_models"):
            d.pop(k)
        d["hyperparams"] = self.build_hyperparams().to_dict()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "name" not in data or "system" not in data:
            raise ConfigError("config needs 'name' and 'system'")
        try:
            if isinstance(data.get("observable"), dict):
                data["observable"] = ObservableSpec(**data["observable"])
            if isinstance(data.get("transition"), dict):
                data["transition"] = TransitionSpec(**data["transition"])
            if "snapshot_times" in data:
                data["snapshot_times"] = tuple(data["snapshot_times"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def bundled_configs() -> list:
    """Names of the JSON configs shipped with the package."""
    root = resources.files("artifact") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_json(path_or_name) -> dict:
    """Load JSON from a path, or from a bundled config by bare name."""
    p = Path(path_or_name)
    if not p.exists():
        name = str(path_or_name)
        name = name if name.endswith(".json") else name + ".json"
        bundled = resources.files("artifact") / "configs" / name
        if "/" in str(path_or_name) or not bundled.is_file():
            raise ConfigError(f"config {path_or_name!r} not found")
        text = bundled.read_text()
    else:
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_name}: invalid JSON ({exc})") from None


def load_config(path_or_name) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_json(path_or_name))
