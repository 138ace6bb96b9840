"""Single-file binary container for trained models.

Layout (little endian)::

    b"DCRM" | version u32 | meta_len u32 | meta (UTF-8 JSON)
    nnz u64 | rows u32[nnz] | cols u32[nnz] | weights f64[nnz]
    then each array in meta["arrays"] order as raw f64, shapes recorded in meta

The JSON carries hyperparameters, seeds, time origin and the knowledge
model.  Float values in arrays are stored bit-exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..dynamics import LorenzParams, RampSchedule
from .core import HyperParams, ReservoirTopology, TrainedModel
from .hybrid import KnowledgeModel

MAGIC = b"DCRM"
VERSION = 1
_ARRAYS = ("input_layer", "control_layer", "readout", "residuals", "scales")


def _knowledge_meta(km):
    if km is None:
        return None
    s = km.system
    return {"sigma": s.sigma, "beta": s.beta, "dt": s.dt,
            "rho": [s.rho.base, s.rho.amplitude, s.rho.timescale]}


def save_model(model: TrainedModel, path) -> None:
    topo = model.topology
    arrays = {
        "input_layer": topo.input_layer,
        "control_layer": topo.control_layer,
        "readout": model.readout,
        "residuals": model.residuals,
        "scales": model.scales,
    }
    meta = {
        "hyperparams": model.hyperparams.to_dict(),
        "seed": int(model.seed),
        "topology_seed": int(topo.seed),
        "train_t0": float(model.train_t0).hex(),
        "dt": float(model.dt).hex(),
        "n_nodes": topo.n_nodes,
        "knowledge": _knowledge_meta(model.knowledge),
        "shapes": {k: (None if v is None else list(np.shape(v))) for k, v in arrays.items()},
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    coo = topo.adjacency.tocoo()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", coo.nnz))
        fh.write(coo.row.astype("<u4").tobytes())
        fh.write(coo.col.astype("<u4").tobytes())
        fh.write(coo.data.astype("<f8").tobytes())
        for name in _ARRAYS:
            if arrays[name] is not None:
                fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_model(path) -> TrainedModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    pos = 12
    meta = json.loads(data[pos:pos + meta_len])
    pos += meta_len
    (nnz,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    rows = np.frombuffer(data, "<u4", nnz, pos).astype(np.int64)
    pos += 4 * nnz
    cols = np.frombuffer(data, "<u4", nnz, pos).astype(np.int64)
    pos += 4 * nnz
    weights = np.frombuffer(data, "<f8", nnz, pos).astype(float)
    pos += 8 * nnz
    n = meta["n_nodes"]
    arrays = {}
    for name in _ARRAYS:
        shape = meta["shapes"][name]
        if shape is None:
            arrays[name] = None
            continue
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, "<f8", count, pos).astype(float).reshape(shape)
        pos += 8 * count
    adjacency = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
    topology = ReservoirTopology(adjacency, arrays["input_layer"], arrays["control_layer"],
                                 meta["topology_seed"])
    km = None
    if meta["knowledge"] is not None:
        k = meta["knowledge"]
        km = KnowledgeModel(LorenzParams(rho=RampSchedule(*k["rho"]), sigma=k["sigma"], beta=k["beta"],
                                         dt=k["dt"]), arrays["scales"])
    return TrainedModel(topology, arrays["readout"], arrays["residuals"], arrays["scales"],
                        HyperParams.from_dict(meta["hyperparams"]), float.fromhex(meta["train_t0"]),
                        float.fromhex(meta["dt"]), meta["seed"], km)
