"""JSON and CSV persistence for weights, data sets, reports and inner solutions.

Every ``save_*`` has a matching ``load_*`` and the round trip reproduces the
object exactly (floats are written with ``repr`` precision by :mod:`json`).
CSV files carry a header row, use ``.`` as decimal separator and end lines
with ``\\n``.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import mlp
from .fem1d import Mesh, ProblemData
from .outer import DataSet, TrainReport

__all__ = [
    "SchemaError",
    "weights_to_dict",
    "weights_from_dict",
    "dataset_to_dict",
    "dataset_from_dict",
    "report_to_dict",
    "save_json",
    "load_json",
    "save_weights",
    "load_weights",
    "save_dataset",
    "load_dataset",
    "save_report",
    "write_csv",
    "read_csv",
]


class SchemaError(ValueError):
    """A document does not have the expected fields or shapes."""


def _require(doc, *keys):
    if not isinstance(doc, dict):
        raise SchemaError(f"expected a JSON object, got {type(doc).__name__}")
    missing = [k for k in keys if k not in doc]
    if missing:
        raise SchemaError(f"missing field(s) {', '.join(missing)}")


def weights_to_dict(w: mlp.WeightVector, arch: mlp.Architecture) -> dict:
    w.check(arch)
    return {
        "widths": list(arch.widths),
        "activation": arch.activation.kind,
        "layers": [{"A": A.tolist(), "b": b.tolist()} for A, b in w.layers],
    }


def weights_from_dict(doc) -> tuple:
    """Returns ``(arch, weights)``."""
    _require(doc, "widths", "activation", "layers")
    try:
        arch = mlp.Architecture(tuple(doc["widths"]), mlp.Activation(doc["activation"]))
        layers = []
        for i, layer in enumerate(doc["layers"]):
            _require(layer, "A", "b")
            A = np.array(layer["A"], dtype=float).reshape(arch.layer_shapes()[i])
            layers.append((A, np.array(layer["b"], dtype=float)))
        w = mlp.WeightVector(tuple(layers))
        w.check(arch)
    except (ValueError, TypeError, IndexError) as exc:
        raise SchemaError(f"invalid weights document: {exc}") from exc
    return arch, w


def dataset_to_dict(ds: DataSet) -> dict:
    return {
        "mesh": {"N": ds.mesh.N},
        "problem": {"f": ds.data.f.tolist(), "g": list(ds.data.g)},
        "group_map": ds.group_map.tolist(),
        "bounds": list(ds.bounds),
        "pairs": [
            {"z_hat": z.tolist(), "u_hat": u.tolist()} for z, u in zip(ds.z_hats, ds.u_hats)
        ],
    }


def dataset_from_dict(doc) -> DataSet:
    _require(doc, "mesh", "problem", "pairs")
    try:
        mesh = Mesh(int(doc["mesh"]["N"]))
        f = doc["problem"]["f"]
        f = np.full(mesh.N, float(f)) if np.isscalar(f) else np.asarray(f, dtype=float)
        data = ProblemData(f, tuple(doc["problem"].get("g", (0.0, 0.0))))
        pairs = doc["pairs"]
        for pair in pairs:
            _require(pair, "z_hat", "u_hat")
        z = np.array([p["z_hat"] for p in pairs], dtype=float)
        u = np.array([np.atleast_1d(p["u_hat"]) for p in pairs], dtype=float)
        if "group_map" in doc:
            gmap = np.asarray(doc["group_map"], dtype=int)
        else:
            gmap = (np.arange(mesh.N) * u.shape[1]) // mesh.N
        return DataSet(mesh, data, z, u, gmap, tuple(doc.get("bounds", (0.1, 10.0))))
    except (ValueError, TypeError, KeyError) as exc:
        raise SchemaError(f"invalid data set document: {exc}") from exc


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def report_to_dict(report: TrainReport, arch: mlp.Architecture) -> dict:
    return {
        "n_steps": report.n_steps,
        "converged": report.converged,
        "best_step": report.best_step,
        "wall_time": report.wall_time,
        "misfit_percent": list(map(float, report.misfit_percent)),
        "grad_norm": list(map(float, report.grad_norm)),
        "objective": list(map(float, report.objective)),
        "step_sizes": [_finite_or_none(s) for s in report.step_sizes],
        "inner_iteration_counts": list(map(int, report.inner_iteration_counts)),
        "inner_converged": list(map(bool, report.inner_converged)),
        "boundary_active": list(map(bool, report.boundary_active)),
        "eps_used": list(map(float, report.eps_used)),
        "costate_residual": list(map(float, report.costate_residual)),
        "final_weights": weights_to_dict(report.final_weights, arch),
        "best_weights": weights_to_dict(report.best_weights, arch),
    }


def save_json(doc, path) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    return path


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_weights(w, arch, path) -> Path:
    return save_json(weights_to_dict(w, arch), path)


def load_weights(path) -> tuple:
    return weights_from_dict(load_json(path))


def save_dataset(ds: DataSet, path) -> Path:
    return save_json(dataset_to_dict(ds), path)


def load_dataset(path) -> DataSet:
    return dataset_from_dict(load_json(path))


def save_report(report: TrainReport, arch, path) -> Path:
    return save_json(report_to_dict(report, arch), path)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple:
    """Returns ``(header, rows)`` with every cell parsed as float."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader]
    return header, rows
