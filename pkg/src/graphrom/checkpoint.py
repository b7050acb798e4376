"""Self-describing ``.npz`` checkpoints for pooling levels and models.

Every file holds little-endian float64/int64 arrays plus one ``meta`` entry
carrying a JSON document with the format version and everything that is
not an array.  Loading never unpickles.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .coarsening import PoolingLevel
from .mesh import Graph
from .mwls import InterpolationMatrix

__all__ = [
    "FORMAT_VERSION",
    "CheckpointError",
    "save_levels",
    "load_levels",
    "save_model",
    "load_model",
    "file_sha256",
]

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _f8(a):
    return np.ascontiguousarray(a, dtype="<f8")


def _i8(a):
    return np.ascontiguousarray(a, dtype="<i8")


def _level_arrays(prefix, lv: PoolingLevel) -> dict:
    out = {
        f"{prefix}selected": _i8(lv.selected),
        f"{prefix}coarse_coords": _f8(lv.coarse_coords),
        f"{prefix}edges": _i8(lv.coarse_graph.edges),
        f"{prefix}weights": _f8(lv.coarse_graph.weights),
    }
    for name, m in (("down", lv.down), ("up", lv.up)):
        out[f"{prefix}{name}_indptr"] = _i8(m.indptr)
        out[f"{prefix}{name}_indices"] = _i8(m.indices)
        out[f"{prefix}{name}_data"] = _f8(m.data)
        out[f"{prefix}{name}_basis"] = _i8(m.basis)
    return out


def _level_meta(lv: PoolingLevel) -> dict:
    return {"fine_n": lv.fine_n, "coarse_n": lv.coarse_n, "ratio": lv.ratio,
            "diagnostics": lv.diagnostics,
            "down_shape": list(lv.down.shape), "up_shape": list(lv.up.shape)}


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def _level_from(prefix, arrs, meta) -> PoolingLevel:
    def mat(name, shape):
        return InterpolationMatrix(
            int(shape[0]), int(shape[1]),
            np.array(arrs[f"{prefix}{name}_indptr"], dtype=np.int64),
            np.array(arrs[f"{prefix}{name}_indices"], dtype=np.int64),
            np.array(arrs[f"{prefix}{name}_data"], dtype=np.float64),
            np.array(arrs[f"{prefix}{name}_basis"], dtype=np.int64),
        )

    graph = Graph(int(meta["coarse_n"]), _readonly(arrs[f"{prefix}edges"].astype(np.int64)),
                  _readonly(arrs[f"{prefix}weights"].astype(np.float64)))
    return PoolingLevel(
        int(meta["fine_n"]), int(meta["coarse_n"]), float(meta["ratio"]),
        np.array(arrs[f"{prefix}selected"], dtype=np.int64),
        np.array(arrs[f"{prefix}coarse_coords"], dtype=np.float64),
        graph, mat("down", meta["down_shape"]), mat("up", meta["up_shape"]),
        dict(meta["diagnostics"]),
    )


def _write(path, kind, meta, arrays):
    path = Path(path)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **meta}
    blob = np.frombuffer(json.dumps(doc, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, meta=blob, **arrays)
    except OSError as exc:
        raise CheckpointError(f"cannot write {path}: {exc}") from exc


def _read(path, kind):
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrs = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in arrs:
        raise CheckpointError(f"{path}: no meta entry")
    doc = json.loads(arrs.pop("meta").tobytes().decode("utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {doc.get('format_version')}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    return doc, arrs


def save_levels(path, levels, extra=None) -> None:
    arrays = {}
    for i, lv in enumerate(levels):
        arrays.update(_level_arrays(f"level{i}/", lv))
    meta = {"levels": [_level_meta(lv) for lv in levels], "extra": extra or {}}
    _write(path, "levels", meta, arrays)


def load_levels(path):
    """``(levels, extra)`` from :func:`save_levels`."""
    doc, arrs = _read(path, "levels")
    levels = tuple(_level_from(f"level{i}/", arrs, m) for i, m in enumerate(doc["levels"]))
    return levels, doc.get("extra", {})


def save_model(path, model, scalers, extra=None) -> None:
    """Config, parameters, scalers and the levels the model is wired to."""
    arrays = {f"param/{k}": _f8(v) for k, v in model.parameters().items()}
    for i, lv in enumerate(model.levels):
        arrays.update(_level_arrays(f"level{i}/", lv))
    fine = model.ops[0]
    arrays["fine/rows"] = _i8(fine.rows)
    arrays["fine/cols"] = _i8(fine.cols)
    meta = {
        "config": model.config.to_dict(),
        "scalers": scalers.to_dict(),
        "levels": [_level_meta(lv) for lv in model.levels],
        "n_nodes": model.n_nodes,
        "extra": extra or {},
    }
    _write(path, "model", meta, arrays)


def load_model(path, fine_graph):
    """``(model, scalers, extra)``; ``fine_graph`` must be the training graph."""
    from .model import ModelConfig, build_model
    from .training import Scalers

    doc, arrs = _read(path, "model")
    if fine_graph.n_nodes != doc["n_nodes"] or not (
        np.array_equal(fine_graph.edges[:, 0], arrs["fine/rows"])
        and np.array_equal(fine_graph.edges[:, 1], arrs["fine/cols"])
    ):
        raise CheckpointError(f"{path}: graph does not match the one the model was trained on")
    cfg = ModelConfig.from_dict(doc["config"])
    levels = tuple(_level_from(f"level{i}/", arrs, m) for i, m in enumerate(doc["levels"]))
    model = build_model(cfg, fine_graph, levels, seed=0)
    model.set_state({k[len("param/"):]: v for k, v in arrs.items() if k.startswith("param/")})
    return model, Scalers.from_dict(doc["scalers"]), doc.get("extra", {})
