"""``graphrom`` command line: gen, levels, train, hpo, predict, eval, mesh-info.

All subcommands share one working directory that holds every artifact::

    mesh.txt, fields/sample_NNN.txt, manifest.json     (gen)
    levels.npz, levels_diagnostics.json                 (levels)
    model.npz, history.csv, train_summary.json          (train)
    hpo/trials.jsonl, hpo/best_config.json              (hpo)
    predictions/*.txt                                   (predict)
    metrics_<split>.json                                (eval)

Settings come from an optional TOML file (sections below) with flag
overrides; the effective config is echoed next to each output.  Exit
codes: 0 success, 1 compute failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _backend, aero, checkpoint, hpo
from .coarsening import RetentionProfile
from .dataset import CHANNELS, Doe, FlowSample, SyntheticCase, generate_case, lhs_sample, split
from .mesh import MeshFormatError, build_graph, node_areas, node_normals, load_fields, load_mesh, save_fields, save_mesh
from .model import ModelConfig, build_model
from .mwls import MwlsParams
from .pipeline import Dataset, build_levels
from .training import Scalers, TrainConfig, TrainingDiverged, evaluate, fit, predict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("graphrom")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


def _defaults() -> dict:
    case = SyntheticCase().to_dict()
    return {
        "run": {"seed": 0, "work_dir": "graphrom_run"},
        "case": case,
        "doe": {"aoa_range": [0.0, 5.0], "mach_range": [0.70, 0.84], "n_samples": 70,
                "counts": [40, 15, 15], "fractions": [0.6, 0.2, 0.2]},
        "coarsening": {"ratios": [1 / 3, 1 / 3], "p1": 0.2, "pn": 1.0, "k": 5, "prefilter": 250},
        "mwls": {"k_n": 10, "order": 2, "eps": 1e-20, "cond_max": 1e6, "cond_max_linear": 1e12},
        "model": {"stem": [32], "fine": [32], "mid": [48], "reduced": [64], "strict": True},
        "train": {"epochs": 300, "lr0": 1e-3, "decay": 0.9, "decay_interval": 30,
                  "lam": 0.01, "penalty": "abs"},
        "hpo": {"n_trials": 30, "n_init": 5, "epochs": 500, "n_candidates": 1024,
                "widths": [32, 512, 16]},
        "aero": {"chord": 0.0, "area": 0.0, "moment_fraction": 0.25, "span_station": 0.0},
    }


def _check_type(section, key, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, (list, tuple))
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"[{section}] {key}: expected {type(default).__name__}, got {value!r}")


def merge_config(user: dict) -> dict:
    """Defaults overlaid with ``user``; unknown sections and keys are errors."""
    cfg = _defaults()
    for section, values in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}] (known: {', '.join(cfg)})")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            _check_type(section, key, cfg[section][key], value)
            cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg):
    """Build every typed object once so bad values fail before compute."""
    try:
        _case(cfg)
        _doe(cfg)
        _profile(cfg)
        _mwls(cfg)
        _model_cfg(cfg)
        _train_cfg(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    lo, hi, step = cfg["hpo"]["widths"]
    if not (0 < lo <= hi and step > 0):
        raise ConfigError("[hpo] widths must be [min, max, step] with 0 < min <= max")


def load_config(path=None) -> dict:
    if path is None:
        return merge_config({})
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return merge_config(user)


def derive_seed(root, tag) -> int:
    """Independent stream per pipeline stage, all from the root seed."""
    tags = {"doe": 0, "levels": 1, "model": 2, "train": 3, "hpo": 4}
    return int(np.random.SeedSequence([int(root), tags[tag]]).generate_state(1)[0])


def _case(cfg):
    return SyntheticCase(**cfg["case"])


def _doe(cfg):
    d = cfg["doe"]
    counts = tuple(d["counts"]) if d["counts"] else None
    return Doe(tuple(d["aoa_range"]), tuple(d["mach_range"]), int(d["n_samples"]), counts,
               tuple(d["fractions"]), derive_seed(cfg["run"]["seed"], "doe"))


def _profile(cfg):
    c = cfg["coarsening"]
    return RetentionProfile(float(c["p1"]), float(c["pn"]))


def _mwls(cfg):
    m = cfg["mwls"]
    return MwlsParams(int(m["k_n"]), int(m["order"]), float(m["eps"]), float(m["cond_max"]),
                      float(m["cond_max_linear"]))


def _model_cfg(cfg):
    m = cfg["model"]
    return ModelConfig(tuple(m["stem"]), tuple(m["fine"]), tuple(m["mid"]), tuple(m["reduced"]),
                       tuple(cfg["coarsening"]["ratios"]), bool(m["strict"]))


def _train_cfg(cfg, epochs=None):
    t = dict(cfg["train"])
    if epochs is not None:
        t["epochs"] = int(epochs)
    return TrainConfig(seed=derive_seed(cfg["run"]["seed"], "train"), **t)


def _reference(cfg, mesh):
    a = cfg["aero"]
    case = _case(cfg)
    chord = a["chord"] or case.mean_chord
    area = a["area"] or case.planform_area
    station = a["span_station"] if a["span_station"] else None
    point = aero.moment_reference(mesh.nodes, a["moment_fraction"], case.root_chord, station)
    return aero.AeroReference(float(chord), float(area), tuple(point), 0.0)


# ---------------------------------------------------------------- artifacts

def _work(cfg) -> Path:
    return Path(cfg["run"]["work_dir"])


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _echo_config(cfg, directory: Path, command: str):
    doc = {"command": command, "config": cfg, "backend": _backend.name(),
           "threads": _backend.threads()}
    (directory / f"config_{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _write_json(path: Path, doc):
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from exc


def _read_manifest(work: Path) -> dict:
    path = work / "manifest.json"
    if not path.exists():
        raise UsageError(f"no manifest at {path}; run 'graphrom gen' first")
    return json.loads(path.read_text())


def load_dataset(work: Path, splits=("train", "val", "test")) -> Dataset:
    """Mesh, samples and splits from a ``gen`` output directory.

    Only the requested splits are read from disk; other entries stay ``None``.
    """
    manifest = _read_manifest(work)
    mesh = load_mesh(work / manifest["mesh"])
    samples = [None] * len(manifest["samples"])
    idx = {"train": [], "val": [], "test": []}
    for rec in manifest["samples"]:
        idx[rec["split"]].append(rec["index"])
        if rec["split"] not in splits:
            continue
        path = work / rec["file"]
        if not path.exists():
            raise UsageError(
                f"{rec['split']} field file {path} listed in {work / 'manifest.json'} is missing"
            )
        names, values = load_fields(path)
        if tuple(names) != CHANNELS:
            raise UsageError(f"{path}: expected channels {CHANNELS}, found {tuple(names)}")
        samples[rec["index"]] = FlowSample(rec["aoa"], rec["mach"], values)
    design = np.array([[r["aoa"], r["mach"]] for r in manifest["samples"]])
    return Dataset(mesh, build_graph(mesh), design, samples,
                   {k: np.array(sorted(v), dtype=np.int64) for k, v in idx.items()})


# ---------------------------------------------------------------- commands

def cmd_gen(cfg, args):
    work = _writable_dir(_work(cfg))
    case, doe = _case(cfg), _doe(cfg)
    design = lhs_sample(doe)
    parts = split(doe.n_samples, counts=doe.counts, fractions=doe.fractions, seed=doe.seed)
    label = np.empty(doe.n_samples, dtype=object)
    for name, ids in parts.items():
        label[ids] = name
    (work / "fields").mkdir(exist_ok=True)
    records = []
    mesh = None
    for i, (aoa, mach) in enumerate(design):
        mesh, s = generate_case(case, aoa, mach)
        rel = f"fields/sample_{i:03d}.txt"
        save_fields(work / rel, CHANNELS, s.targets)
        records.append({"index": i, "aoa": float(aoa), "mach": float(mach),
                        "split": str(label[i]), "file": rel})
    save_mesh(work / "mesh.txt", mesh)
    manifest = {"mesh": "mesh.txt", "seed": cfg["run"]["seed"], "case": case.to_dict(),
                "doe": {"n_samples": doe.n_samples, "seed": doe.seed,
                        "counts": {k: int(len(v)) for k, v in parts.items()}},
                "samples": records}
    _write_json(work / "manifest.json", manifest)
    _echo_config(cfg, work, "gen")
    digest = hashlib.sha256((work / "manifest.json").read_bytes()).hexdigest()
    print(json.dumps({"samples": doe.n_samples, "counts": manifest["doe"]["counts"],
                      "manifest_sha256": digest}))
    return EXIT_OK


def cmd_levels(cfg, args):
    work = _work(cfg)
    data = load_dataset(work, splits=("train",))
    train = data.subset("train")
    if not train:
        raise UsageError(f"{work / 'manifest.json'} lists no training samples")
    levels = build_levels(data.graph, data.mesh.nodes, train, tuple(cfg["coarsening"]["ratios"]),
                          _profile(cfg), derive_seed(cfg["run"]["seed"], "levels"), _mwls(cfg),
                          int(cfg["coarsening"]["k"]), int(cfg["coarsening"]["prefilter"]),
                          areas=node_areas(data.mesh), normals=node_normals(data.mesh))
    _writable_dir(work)
    checkpoint.save_levels(work / "levels.npz", levels, {"seed": cfg["run"]["seed"],
                                                         "ratios": cfg["coarsening"]["ratios"]})
    diag = {"levels": [lv.diagnostics for lv in levels],
            "sizes": [levels[0].fine_n] + [lv.coarse_n for lv in levels]}
    _write_json(work / "levels_diagnostics.json", diag)
    _echo_config(cfg, work, "levels")
    print(json.dumps(diag["sizes"]))
    return EXIT_OK


def _load_levels(work):
    path = work / "levels.npz"
    if not path.exists():
        raise UsageError(f"no levels at {path}; run 'graphrom levels' first")
    return checkpoint.load_levels(path)[0]


def cmd_train(cfg, args):
    work = _work(cfg)
    levels = _load_levels(work)
    data = load_dataset(work, splits=("train", "val"))
    train, val = data.subset("train"), data.subset("val")
    scalers = Scalers.fit(data.mesh.nodes, train)
    model_cfg = _model_cfg(cfg)
    model = build_model(model_cfg, data.graph, levels, seed=derive_seed(cfg["run"]["seed"], "model"))
    tcfg = _train_cfg(cfg, args.epochs)
    ref = _reference(cfg, data.mesh)
    hist = fit(model, data.mesh, train, val, scalers, ref, tcfg)
    checkpoint.save_model(work / "model.npz", model, scalers,
                          {"levels_sha256": checkpoint.file_sha256(work / "levels.npz"),
                           "train": tcfg.to_dict()})
    hist.write_csv(work / "history.csv")
    summary = {"best_epoch": hist.best_epoch, "best_val_loss": hist.best_val,
               "final_train_mape": hist.final_train_mape, "n_parameters": model.n_parameters(),
               "wall_time": hist.wall_time}
    _write_json(work / "train_summary.json", summary)
    _echo_config(cfg, work, "train")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_hpo(cfg, args):
    work = _work(cfg)
    data = load_dataset(work, splits=("train", "val"))
    h = cfg["hpo"]
    lo, hi, step = (int(v) for v in h["widths"])
    space = hpo.SearchSpace.table(widths=tuple(range(lo, hi + 1, step)))
    strict = bool(cfg["model"]["strict"])
    cache = hpo.LevelCache(data, _profile(cfg), derive_seed(cfg["run"]["seed"], "levels"), _mwls(cfg))
    tcfg = _train_cfg(cfg, args.epochs if args.epochs is not None else h["epochs"])
    ref = _reference(cfg, data.mesh)
    seed = derive_seed(cfg["run"]["seed"], "hpo")
    out = _writable_dir(work / "hpo")
    n_trials = int(args.n_trials if args.n_trials is not None else h["n_trials"])

    def objective(theta):
        return hpo.trial_objective(data, cache, theta, tcfg, ref,
                                   seed=derive_seed(cfg["run"]["seed"], "model"), strict=strict)

    res = hpo.optimize(objective, space, n_trials=n_trials, n_init=int(h["n_init"]), seed=seed,
                       n_candidates=int(h["n_candidates"]), log_path=out / "trials.jsonl")
    if res.best_theta is None:
        raise TrainingDiverged("every trial failed")
    best = hpo.theta_to_config(res.best_theta, strict=strict)
    _write_json(out / "best_config.json", {"theta": hpo.Trial(0, res.best_theta).record()["theta"],
                                           "val_mse": res.best_y, "model": best.to_dict(),
                                           "best_curve": res.best_curve})
    _echo_config(cfg, out, "hpo")
    print(json.dumps({"best_val_mse": res.best_y, "model": best.to_dict()}))
    return EXIT_OK


def _load_trained(work):
    path = work / "model.npz"
    if not path.exists():
        raise UsageError(f"no model at {path}; run 'graphrom train' first")
    manifest = _read_manifest(work)
    mesh = load_mesh(work / manifest["mesh"])
    model, scalers, _ = checkpoint.load_model(path, build_graph(mesh))
    return mesh, model, scalers


def cmd_predict(cfg, args):
    work = _work(cfg)
    mesh, model, scalers = _load_trained(work)
    conds = []
    if args.aoa is not None or args.mach is not None:
        if args.aoa is None or args.mach is None:
            raise UsageError("--aoa and --mach must be given together")
        conds.append((f"aoa{args.aoa:g}_mach{args.mach:g}", args.aoa, args.mach))
    else:
        manifest = _read_manifest(work)
        for rec in manifest["samples"]:
            if rec["split"] == args.split:
                conds.append((f"sample_{rec['index']:03d}", rec["aoa"], rec["mach"]))
    out = _writable_dir(work / "predictions")
    for name, aoa, mach in conds:
        save_fields(out / f"{name}.txt", CHANNELS, predict(model, mesh.nodes, aoa, mach, scalers))
    _echo_config(cfg, out, "predict")
    print(json.dumps({"written": len(conds), "dir": str(out)}))
    return EXIT_OK


def cmd_eval(cfg, args):
    work = _work(cfg)
    mesh, model, scalers = _load_trained(work)
    data = load_dataset(work, splits=(args.split,))
    report = evaluate(model, mesh, data.subset(args.split), scalers, _reference(cfg, mesh))
    report["split"] = args.split
    _write_json(work / f"metrics_{args.split}.json", report)
    _echo_config(cfg, work, "eval")
    print(json.dumps({"split": args.split, **report["aggregate"]}))
    return EXIT_OK


def cmd_mesh_info(cfg, args):
    mesh = load_mesh(args.mesh)
    graph = build_graph(mesh)
    deg = graph.out_degree()
    info = {"nodes": mesh.n_nodes, "cells": mesh.n_cells, "edges": int((graph.n_edges - mesh.n_nodes) // 2),
            "total_area": mesh.total_area, "degree": {"min": int(deg.min()), "max": int(deg.max()),
                                                      "mean": float(deg.mean())},
            "bounds": {"min": mesh.nodes.min(axis=0).tolist(), "max": mesh.nodes.max(axis=0).tolist()}}
    print(json.dumps(info))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "levels": cmd_levels, "train": cmd_train, "hpo": cmd_hpo,
            "predict": cmd_predict, "eval": cmd_eval, "mesh-info": cmd_mesh_info}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphrom", description="Graph autoencoder surrogate pipeline")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--work-dir", help="artifact directory (overrides [run] work_dir)")
    p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    p.add_argument("--threads", type=int, help="kernel threads (default: logical cores; "
                   "GRAPHROM_THREADS wins)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="sample the design and write synthetic fields")
    sub.add_parser("levels", help="build the two pooling levels")
    t = sub.add_parser("train", help="fit the model")
    t.add_argument("--epochs", type=int)
    h = sub.add_parser("hpo", help="Bayesian architecture search")
    h.add_argument("--n-trials", type=int)
    h.add_argument("--epochs", type=int, help="epochs per trial")
    pr = sub.add_parser("predict", help="write predicted fields")
    pr.add_argument("--aoa", type=float)
    pr.add_argument("--mach", type=float)
    pr.add_argument("--split", default="test", choices=("train", "val", "test"))
    e = sub.add_parser("eval", help="metrics on one split")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    m = sub.add_parser("mesh-info", help="summary of a mesh file")
    m.add_argument("mesh")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = copy.deepcopy(cfg)
        if args.work_dir:
            cfg["run"]["work_dir"] = args.work_dir
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        if _backend._env_threads() is None:
            _backend.set_threads(args.threads)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, MeshFormatError, checkpoint.CheckpointError, OSError) as exc:
        print(f"graphrom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"graphrom: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
