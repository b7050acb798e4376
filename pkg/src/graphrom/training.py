"""Normalization, the moment-penalized loss, the training loop and metrics.

All model inputs and targets are mapped to [-1, 1] with per-channel
extrema from the training split.  The loss is the mean squared error of
normalized outputs plus ``lam * penalty(CMy(pred) - CMy(truth))`` where the
pitching moments are integrated in physical units.  CMy is linear in the
node fields, so its gradient is a fixed per-node weight array.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import aero, gcn
from .dataset import FlowSample
from .mesh import SurfaceMesh, node_areas

__all__ = [
    "Scalers",
    "TrainConfig",
    "History",
    "LossTerms",
    "TrainingDiverged",
    "MomentPenalty",
    "features",
    "loss",
    "fit",
    "evaluate",
    "area_weighted_errors",
    "predict",
    "MAPE_FLOOR",
]

log = logging.getLogger(__name__)

# floor of the MAPE denominator, in normalized units (fraction of the
# half-range of the channel's training scaler)
MAPE_FLOOR = 1e-3
PENALTIES = ("abs", "signed", "squared")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Scalers:
    """Per-channel training-split extrema for 5 inputs and 4 targets."""

    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    @staticmethod
    def _fit(values):
        lo = values.min(axis=0)
        hi = values.max(axis=0)
        return lo.astype(np.float64), hi.astype(np.float64)

    @classmethod
    def fit(cls, coords, samples) -> "Scalers":
        """Extrema over the given (training) samples only."""
        samples = list(samples)
        if not samples:
            raise ValueError("cannot fit scalers on an empty split")
        coords = np.asarray(coords, dtype=np.float64)
        params = np.array([[s.aoa, s.mach] for s in samples])
        in_lo = np.concatenate([coords.min(axis=0), params.min(axis=0)])
        in_hi = np.concatenate([coords.max(axis=0), params.max(axis=0)])
        Y = np.stack([np.asarray(s.targets) for s in samples])
        out_lo = Y.min(axis=(0, 1))
        out_hi = Y.max(axis=(0, 1))
        return cls(in_lo, in_hi, out_lo, out_hi)

    @property
    def degenerate_inputs(self) -> np.ndarray:
        return ~(self.in_max > self.in_min)

    @property
    def degenerate_outputs(self) -> np.ndarray:
        return ~(self.out_max > self.out_min)

    @staticmethod
    def _fwd(v, lo, hi):
        span = hi - lo
        ok = span > 0
        safe = np.where(ok, span, 1.0)
        return np.where(ok, 2.0 * (v - lo) / safe - 1.0, 0.0)

    @staticmethod
    def _inv(u, lo, hi):
        return lo + (np.asarray(u) + 1.0) * 0.5 * (hi - lo)

    def transform_inputs(self, X):
        return self._fwd(np.asarray(X, dtype=np.float64), self.in_min, self.in_max)

    def transform_targets(self, Y):
        return self._fwd(np.asarray(Y, dtype=np.float64), self.out_min, self.out_max)

    def inverse_targets(self, U):
        return self._inv(U, self.out_min, self.out_max)

    def target_half_range(self) -> np.ndarray:
        """``d physical / d normalized`` per target channel."""
        return 0.5 * (self.out_max - self.out_min)

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "Scalers":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("in_min", "in_max", "out_min", "out_max")))


def features(coords, aoa, mach, scalers: Scalers) -> np.ndarray:
    """Normalized (n, 5) input block: coordinates plus broadcast freestream."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    raw = np.column_stack([coords, np.full(n, float(aoa)), np.full(n, float(mach))])
    return np.ascontiguousarray(scalers.transform_inputs(raw))


def predict(model, coords, aoa, mach, scalers: Scalers) -> np.ndarray:
    """Physical-unit (n, 4) fields for one freestream condition."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != model.n_nodes:
        raise ValueError(
            f"got {coords.shape[0]} coordinates, the levels were built on {model.n_nodes} nodes"
        )
    return scalers.inverse_targets(model.forward(features(coords, aoa, mach, scalers)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr0: float = 1e-3
    decay: float = 0.9
    decay_interval: int = 30
    batch_size: int = 1
    lam: float = 0.01
    penalty: str = "abs"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.lr0 <= 0 or not 0 < self.decay <= 1 or self.decay_interval < 1:
            raise ValueError("learning-rate schedule values must be positive")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MomentPenalty:
    """CMy weights in normalized-output space for one mesh and scaler set.

    ``weights[i, c]`` is ``d CMy / d (normalized output c at node i)``.
    """

    weights: np.ndarray
    offset: float

    @classmethod
    def build(cls, mesh: SurfaceMesh, ref: aero.AeroReference, scalers: Scalers):
        w_phys = aero.coefficient_weights(mesh, ref)["CMy"]
        half = scalers.target_half_range()
        mid = scalers.out_min + half
        # physical = mid + half * u, so CMy = sum(w*mid) + sum(w*half*u)
        return cls(w_phys * half, float((w_phys * mid).sum()))

    def cmy(self, U) -> float:
        return float((self.weights * U).sum() + self.offset)


@dataclass(frozen=True)
class LossTerms:
    total: float
    mse: float
    cmy_pred: float
    cmy_true: float
    penalty: float


def loss(pred, truth, moment: MomentPenalty | None, lam=0.01, kind="abs"):
    """Loss value terms and gradient with respect to normalized ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} differ")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise TrainingDiverged("non-finite values entering the loss")
    diff = pred - truth
    mse = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    cp = ct = pen = 0.0
    if moment is not None and lam != 0.0:
        cp = moment.cmy(pred)
        ct = moment.cmy(truth)
        d = cp - ct
        if kind == "abs":
            pen, dpen = abs(d), float(np.sign(d))
        elif kind == "squared":
            pen, dpen = d * d, 2.0 * d
        elif kind == "signed":
            pen, dpen = cp, 1.0
        else:
            raise ValueError(f"unknown penalty {kind!r}")
        grad = grad + (lam * dpen) * moment.weights
    return LossTerms(mse + lam * pen, mse, cp, ct, pen), grad


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    final_train_mape: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in zip(self.epoch, self.train_loss, self.val_loss, self.lr):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def read_csv(cls, path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.epoch.append(int(row["epoch"]))
                h.train_loss.append(float(row["train_loss"]))
                h.val_loss.append(float(row["val_loss"]))
                h.lr.append(float(row["lr"]))
        return h


@dataclass
class _Prepared:
    X: list
    Y: list


def _prepare(mesh, samples, scalers):
    X = [features(mesh.nodes, s.aoa, s.mach, scalers) for s in samples]
    Y = [scalers.transform_targets(s.targets) for s in samples]
    return _Prepared(X, Y)


def _mean_loss(model, data, moment, cfg):
    if not data.X:
        return float("nan")
    total = 0.0
    for x, y in zip(data.X, data.Y):
        terms, _ = loss(model.forward(x), y, moment, cfg.lam, cfg.penalty)
        total += terms.total
    return total / len(data.X)


def fit(model, mesh: SurfaceMesh, train, val, scalers: Scalers, ref: aero.AeroReference,
        config: TrainConfig, callback=None):
    """Train in place with Adam, keep the best-on-validation parameters.

    ``train`` and ``val`` are sequences of :class:`FlowSample`; the test
    split is never passed in.  ``callback(epoch, history)`` runs after every
    epoch.  Returns the :class:`History`.
    """
    t0 = time.perf_counter()
    train = list(train)
    val = list(val)
    if not train:
        raise ValueError("training split is empty")
    moment = MomentPenalty.build(mesh, ref, scalers)
    tr = _prepare(mesh, train, scalers)
    va = _prepare(mesh, val, scalers)
    state = gcn.AdamState(lr0=config.lr0, decay=config.decay, interval=config.decay_interval)
    params = model.parameters()
    rng = np.random.default_rng(config.seed)
    hist = History()
    best = model.get_state()
    tape = gcn.Tape()
    for epoch in range(config.epochs):
        state.epoch = epoch
        running = 0.0
        for j in rng.permutation(len(train)):
            try:
                out = model.forward(tr.X[j], tape)
                terms, g = loss(out, tr.Y[j], moment, config.lam, config.penalty)
                if not np.isfinite(terms.total):
                    raise TrainingDiverged("loss is not finite")
                grads = model.backward(tape, g)
                gcn.adam_step(state, params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, training sample {int(j)}: {exc}") from exc
            running += terms.total
        train_loss = running / len(train)
        val_loss = _mean_loss(model, va, moment, config) if val else train_loss
        hist.epoch.append(epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(state.lr)
        if val_loss < hist.best_val:
            hist.best_val = val_loss
            hist.best_epoch = epoch
            best = model.get_state()
        if callback is not None:
            callback(epoch, hist)
    model.set_state(best)
    report = evaluate(model, mesh, train, scalers, ref)
    hist.final_train_mape = report["aggregate"]["mape"]
    hist.wall_time = time.perf_counter() - t0
    log.info("fit done: best val %.4g at epoch %d, train Cp MAPE %.3f%%",
             hist.best_val, hist.best_epoch, hist.final_train_mape["Cp"])
    return hist


def area_weighted_errors(pred, truth, areas, floor) -> dict:
    """Area-weighted MAE and MAPE (percent) per channel.

    ``floor`` (per channel) bounds the MAPE denominator from below.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64).T).T
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64).T).T
    w = np.asarray(areas, dtype=np.float64)
    w = w / w.sum()
    err = np.abs(pred - truth)
    denom = np.maximum(np.abs(truth), np.asarray(floor, dtype=np.float64))
    mae = w @ err
    mape = 100.0 * (w @ (err / denom))
    return {"mae": mae, "mape": mape}


def _pct(p, t):
    return float(100.0 * abs(p - t) / max(abs(t), 1e-12))


def evaluate(model, mesh: SurfaceMesh, samples, scalers: Scalers, ref: aero.AeroReference,
             predictions=None) -> dict:
    """Per-sample and mean errors in physical units.

    ``predictions`` may supply precomputed (n, 4) physical fields instead of
    running ``model``.
    """
    from .dataset import CHANNELS

    areas = node_areas(mesh)
    floor = MAPE_FLOOR * np.where(scalers.degenerate_outputs, 1.0, scalers.target_half_range())
    per = []
    for k, s in enumerate(samples):
        pred = predictions[k] if predictions is not None else predict(model, mesh.nodes, s.aoa, s.mach, scalers)
        truth = np.asarray(s.targets)
        e = area_weighted_errors(pred, truth, areas, floor)
        r = ref.with_aoa(s.aoa)
        cp_ = aero.integrate_coefficients(mesh, pred[:, 0], pred[:, 1:], r)
        ct_ = aero.integrate_coefficients(mesh, truth[:, 0], truth[:, 1:], r)
        per.append({
            "aoa": s.aoa,
            "mach": s.mach,
            "mape": dict(zip(CHANNELS, map(float, e["mape"]))),
            "mae": dict(zip(CHANNELS, map(float, e["mae"]))),
            "coefficients": {
                name: {"pred": getattr(cp_, name), "true": getattr(ct_, name),
                       "error_pct": _pct(getattr(cp_, name), getattr(ct_, name))}
                for name in ("CL", "CD", "CMy")
            },
        })
    agg = {
        "mape": {c: float(np.mean([p["mape"][c] for p in per])) for c in CHANNELS},
        "mae": {c: float(np.mean([p["mae"][c] for p in per])) for c in CHANNELS},
        "coefficient_error_pct": {
            name: float(np.mean([p["coefficients"][name]["error_pct"] for p in per]))
            for name in ("CL", "CD", "CMy")
        },
    }
    return {
        "n_samples": len(per),
        "mape_floor": {"normalized_units": MAPE_FLOOR, "physical": floor.tolist()},
        "aggregate": agg,
        "samples": per,
    }
