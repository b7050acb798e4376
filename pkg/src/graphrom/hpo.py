"""Bayesian hyperparameter search with a GP surrogate and expected improvement.

The loop follows the usual recipe: a few random trials seed the history,
then each new trial maximizes expected improvement over a seeded pool of
random candidates under a Matern-5/2 Gaussian process fitted to all
finished trials.  Internally the objective is maximized, so a
``direction="minimize"`` objective (a validation MSE) is negated.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

__all__ = [
    "Variable",
    "SearchSpace",
    "Trial",
    "OptimizeResult",
    "expected_improvement",
    "fit_surrogate",
    "optimize",
    "theta_to_config",
    "trial_objective",
    "LevelCache",
    "synthetic_objective",
]

log = logging.getLogger(__name__)

RATIO_CHOICES = (1 / 4, 1 / 3, 1 / 2)
LAYER_CHOICES = (1, 2, 3)
WIDTH_CHOICES = tuple(range(32, 513, 16))
SEARCH_BLOCKS = ("fine", "mid", "reduced")


@dataclass(frozen=True)
class Variable:
    """A discrete search dimension: ``categorical`` (one-hot) or ``ordinal``."""

    name: str
    choices: tuple
    kind: str = "ordinal"

    def __post_init__(self):
        if not self.choices:
            raise ValueError(f"variable {self.name!r} has no choices")
        if self.kind not in ("ordinal", "categorical"):
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @property
    def width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    def encode(self, value) -> list[float]:
        i = self.index(value)
        if self.kind == "categorical":
            v = [0.0] * len(self.choices)
            v[i] = 1.0
            return v
        return [i / (len(self.choices) - 1) if len(self.choices) > 1 else 0.0]

    def index(self, value) -> int:
        for i, c in enumerate(self.choices):
            if c == value or (isinstance(c, float) and math.isclose(c, value, rel_tol=1e-12)):
                return i
        raise ValueError(f"{value!r} is not a valid choice for {self.name!r}")


@dataclass(frozen=True)
class SearchSpace:
    variables: tuple

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")

    @classmethod
    def table(cls, ratios=RATIO_CHOICES, layers=LAYER_CHOICES, widths=WIDTH_CHOICES,
              blocks=SEARCH_BLOCKS) -> "SearchSpace":
        """Architecture space: one ratio, layer counts per block, encoder widths.

        The single-layer stem contributes one width slot; every searched block
        contributes ``max(layers)`` slots, of which the first ``layers_<block>``
        are used.
        """
        vs = [Variable("ratio", tuple(ratios), "categorical"), Variable("width_stem_0", tuple(widths))]
        for b in blocks:
            vs.append(Variable(f"layers_{b}", tuple(layers)))
            for i in range(max(layers)):
                vs.append(Variable(f"width_{b}_{i}", tuple(widths)))
        return cls(tuple(vs))

    @property
    def dim(self) -> int:
        return sum(v.width for v in self.variables)

    def sample(self, rng) -> dict:
        return {v.name: v.choices[int(rng.integers(len(v.choices)))] for v in self.variables}

    def encode(self, theta) -> np.ndarray:
        out = []
        for v in self.variables:
            if v.name not in theta:
                raise KeyError(f"assignment lacks {v.name!r}")
            out.extend(v.encode(theta[v.name]))
        return np.array(out)

    def contains(self, theta) -> bool:
        try:
            self.encode(theta)
        except (KeyError, ValueError):
            return False
        return True

    def key(self, theta) -> tuple:
        return tuple(self.variables[i].index(theta[v.name]) for i, v in enumerate(self.variables))


def theta_to_config(theta, strict=True):
    """:class:`ModelConfig` from an assignment of :meth:`SearchSpace.table`."""
    from .model import ModelConfig

    r = float(theta["ratio"])
    blocks = {"stem": (int(theta["width_stem_0"]),)}
    for b in SEARCH_BLOCKS:
        n = int(theta.get(f"layers_{b}", 1))
        blocks[b] = tuple(int(theta[f"width_{b}_{i}"]) for i in range(n))
    return ModelConfig(ratios=(r, r), strict=strict, **blocks)


@dataclass
class Trial:
    index: int
    theta: dict
    y: float | None = None
    status: str = "pending"
    wall_time: float = 0.0
    source: str = "random"
    error: str = ""

    def record(self) -> dict:
        return {
            "index": self.index,
            "theta": {k: (float(v) if isinstance(v, float) else v) for k, v in self.theta.items()},
            "y": self.y,
            "status": self.status,
            "wall_time": self.wall_time,
            "source": self.source,
            **({"error": self.error} if self.error else {}),
        }


@dataclass
class OptimizeResult:
    best_theta: dict | None
    best_y: float | None
    trials: list = field(default_factory=list)
    best_curve: list = field(default_factory=list)
    direction: str = "minimize"

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.trials:
                fh.write(json.dumps(t.record(), sort_keys=True) + "\n")


def expected_improvement(mu, sigma, best, xi=0.0) -> np.ndarray:
    """EI for maximization; zero wherever ``sigma`` is zero and ``mu <= best``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    imp = mu - best - xi
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    z = np.where(pos, imp / np.where(pos, sigma, 1.0), 0.0)
    ei = imp * norm.cdf(z) + sigma * norm.pdf(z)
    out = np.where(pos, ei, out)
    return np.maximum(out, 0.0)


def fit_surrogate(X, y, seed=0, jitter=1e-10) -> GaussianProcessRegressor:
    """Matern-5/2 GP with normalized targets (anisotropic length scales)."""
    X = np.asarray(X, dtype=np.float64)
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=np.ones(X.shape[1]), length_scale_bounds=(1e-2, 1e2), nu=2.5
    )
    gp = GaussianProcessRegressor(kernel=kernel, alpha=jitter, normalize_y=True,
                                  n_restarts_optimizer=2, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(X, np.asarray(y, dtype=np.float64))
    return gp


def optimize(objective, space: SearchSpace, n_trials=30, n_init=5, seed=0,
             direction="minimize", n_candidates=1024, log_path=None) -> OptimizeResult:
    """Run the search; ``objective(theta)`` returns a float or raises.

    Failed trials are logged with ``status="failed"`` and left out of the
    surrogate.  ``best_curve`` is the incumbent objective after each trial
    (``None`` until a trial succeeds).
    """
    if n_trials < 1 or n_init < 1:
        raise ValueError("n_trials and n_init must be positive")
    if direction not in ("minimize", "maximize"):
        raise ValueError("direction must be 'minimize' or 'maximize'")
    sign = -1.0 if direction == "minimize" else 1.0
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    seen = set()
    best_curve = []
    best = None
    fh = open(log_path, "w") if log_path else None
    try:
        for t in range(n_trials):
            ok = [tr for tr in trials if tr.status == "ok"]
            if t < n_init or len(ok) < 2:
                theta = _fresh_random(space, rng, seen)
                source = "random"
            else:
                theta = _propose(space, ok, sign, rng, seen, n_candidates, seed + t)
                source = "ei"
            seen.add(space.key(theta))
            trial = Trial(t, theta, source=source)
            t0 = time.perf_counter()
            try:
                y = float(objective(theta))
                if not math.isfinite(y):
                    raise FloatingPointError(f"objective returned {y}")
                trial.y, trial.status = y, "ok"
            except Exception as exc:  # noqa: BLE001 - any failure marks the trial
                trial.status, trial.error = "failed", f"{type(exc).__name__}: {exc}"
                log.warning("trial %d failed: %s", t, trial.error)
            trial.wall_time = time.perf_counter() - t0
            trials.append(trial)
            if trial.status == "ok" and (best is None or sign * trial.y > sign * best.y):
                best = trial
            best_curve.append(None if best is None else best.y)
            if fh:
                fh.write(json.dumps(trial.record(), sort_keys=True) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    return OptimizeResult(
        best.theta if best else None, best.y if best else None, trials, best_curve, direction
    )


def _fresh_random(space, rng, seen, tries=1000):
    theta = space.sample(rng)
    for _ in range(tries):
        if space.key(theta) not in seen:
            break
        theta = space.sample(rng)
    return theta


def _propose(space, ok, sign, rng, seen, n_candidates, gp_seed):
    X = np.stack([space.encode(tr.theta) for tr in ok])
    y = sign * np.array([tr.y for tr in ok])
    gp = fit_surrogate(X, y, seed=gp_seed)
    pool = [space.sample(rng) for _ in range(n_candidates)]
    pool = [p for p in pool if space.key(p) not in seen] or pool
    C = np.stack([space.encode(p) for p in pool])
    mu, sd = gp.predict(C, return_std=True)
    ei = expected_improvement(mu, sd, y.max())
    # ties (e.g. all zero) resolve to the highest posterior mean, then pool order
    order = np.lexsort((np.arange(len(pool)), -mu, -ei))
    return pool[int(order[0])]


def synthetic_objective(theta) -> float:
    """Closed-form stand-in for a validation MSE over :meth:`SearchSpace.table`.

    Smooth in the log widths with one interaction between depth and width,
    a preferred ratio of 1/3 and a global minimum of 0.1 at
    ``stem=96, fine=(176, 176), mid=(240, 240, 240), reduced=(320,)``.
    Unused width slots do not contribute.
    """
    target = {"fine": (2, 176), "mid": (3, 240), "reduced": (1, 320)}
    y = 0.1 + 0.5 * np.log2(int(theta["width_stem_0"]) / 96.0) ** 2
    for b, (n_best, w_best) in target.items():
        n = int(theta[f"layers_{b}"])
        ws = np.array([int(theta[f"width_{b}_{i}"]) for i in range(n)], dtype=float)
        y += 0.4 * (n - n_best) ** 2 + np.mean(np.log2(ws / w_best) ** 2) * (1.0 + 0.25 * n)
    ratio = min(RATIO_CHOICES, key=lambda r: abs(r - theta["ratio"]))
    y += {RATIO_CHOICES[0]: 0.3, RATIO_CHOICES[1]: 0.0, RATIO_CHOICES[2]: 0.15}[ratio]
    return float(y)


class LevelCache:
    """Pooling levels per compression ratio, built once on first use."""

    def __init__(self, data, profile=None, seed=0, mwls_params=None):
        self.data = data
        self.profile = profile
        self.seed = seed
        self.mwls_params = mwls_params
        self._levels = {}

    def get(self, ratios):
        key = tuple(round(float(r), 12) for r in ratios)
        if key not in self._levels:
            from .mesh import node_areas, node_normals
            from .pipeline import build_levels

            d = self.data
            self._levels[key] = build_levels(
                d.graph, d.mesh.nodes, d.subset("train"), ratios, self.profile, self.seed,
                self.mwls_params, areas=node_areas(d.mesh),
                normals=node_normals(d.mesh),
            )
        return self._levels[key]


def trial_objective(data, cache: LevelCache, theta, train_cfg, ref, seed=0, strict=True) -> float:
    """Validation MSE (normalized units) of a model fitted with ``theta``."""
    from .model import build_model
    from .training import Scalers, features, fit

    cfg = theta_to_config(theta, strict=strict)
    levels = cache.get(cfg.ratios)
    train, val = data.subset("train"), data.subset("val")
    scalers = Scalers.fit(data.mesh.nodes, train)
    model = build_model(cfg, data.graph, levels, seed=seed)
    fit(model, data.mesh, train, val, scalers, ref, train_cfg)
    errs = []
    for s in val:
        out = model.forward(features(data.mesh.nodes, s.aoa, s.mach, scalers))
        errs.append(np.mean((out - scalers.transform_targets(s.targets)) ** 2))
    return float(np.mean(errs))
