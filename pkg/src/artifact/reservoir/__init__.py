from .core import (
    ARCHITECTURES,
    HyperParams,
    ReservoirTopology,
    TrainedModel,
    build_topology,
    drive_open_loop,
    feature_length,
    feature_rows,
    hybrid_prior,
    predict_closed_loop,
    reservoir_step,
    residual_pool,
    solve_readout,
    spectral_radius,
    train,
    train_readout,
)
from .hybrid import KnowledgeModel, knowledge_step
from .persist import load_model, save_model

__all__ = [
    "ARCHITECTURES",
    "HyperParams",
    "KnowledgeModel",
    "ReservoirTopology",
    "TrainedModel",
    "build_topology",
    "drive_open_loop",
    "feature_length",
    "feature_rows",
    "hybrid_prior",
    "knowledge_step",
    "load_model",
    "predict_closed_loop",
    "reservoir_step",
    "residual_pool",
    "save_model",
    "solve_readout",
    "spectral_radius",
    "train",
    "train_readout",
]
