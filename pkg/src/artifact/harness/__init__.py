from .analysis import departure_time, extract_events, is_bounded, levels_transition_time, lorenz_fixed_point_distance
from .compare import CompareReport, appendixA_compare, hpo_data
from .config import (ConfigError, ExperimentConfig, ObservableSpec, TransitionSpec, build_system, bundled_configs,
                     load_config, read_json)
from .emit import emit_plot_data
from .experiment import (EnsembleResult, MemberResult, RunManifest, member_seeds, rewrite_run,
                         run_ensemble_experiment, run_member)
from .sweep import SweepConfig, SweepTable, stationary_sweep, write_sweep

__all__ = [
    "CompareReport",
    "ConfigError",
    "EnsembleResult",
    "ExperimentConfig",
    "MemberResult",
    "ObservableSpec",
    "RunManifest",
    "SweepConfig",
    "SweepTable",
    "TransitionSpec",
    "appendixA_compare",
    "build_system",
    "bundled_configs",
    "bundled_configs",
    "departure_time",
    "emit_plot_data",
    "extract_events",
    "hpo_data",
    "is_bounded",
    "levels_transition_time",
    "load_config",
    "lorenz_fixed_point_distance",
    "member_seeds",
    "read_json",
    "rewrite_run",
    "run_ensemble_experiment",
    "run_member",
    "stationary_sweep",
    "write_sweep",
]
