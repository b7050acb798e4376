import json

import numpy as np
import pytest

from graphrom import hpo
from graphrom.hpo import (
    SearchSpace,
    Variable,
    expected_improvement,
    fit_surrogate,
    optimize,
    synthetic_objective,
    theta_to_config,
)

UNITS = SearchSpace((Variable("u", tuple(range(32, 513, 16))),))


def test_table_space_contents(rng):
    sp = SearchSpace.table()
    names = [v.name for v in sp.variables]
    assert names[:2] == ["ratio", "width_stem_0"]
    assert sp.dim == 3 + 1 + 3 * 4
    for _ in range(50):
        th = sp.sample(rng)
        assert th["ratio"] in (1 / 4, 1 / 3, 1 / 2)
        assert all(th[f"layers_{b}"] in (1, 2, 3) for b in ("fine", "mid", "reduced"))
        assert all(32 <= th[n] <= 512 and th[n] % 16 == 0 for n in names if n.startswith("width"))
        assert sp.contains(th)
        cfg = theta_to_config(th)
        assert len(cfg.fine) == th["layers_fine"]
        assert cfg.layer_shapes()


def test_encoding():
    v = Variable("r", (0.25, 1 / 3, 0.5), "categorical")
    assert v.encode(1 / 3) == [0.0, 1.0, 0.0]
    w = Variable("w", (32, 48, 64))
    assert w.encode(64) == [1.0]
    with pytest.raises(ValueError):
        w.encode(40)
    with pytest.raises(ValueError):
        Variable("x", ())
    with pytest.raises(ValueError):
        SearchSpace((w, w))
    assert not SearchSpace((w,)).contains({"w": 33})


def test_ei_properties():
    mu = np.array([0.0, 1.0, 2.0, 0.5])
    sd = np.array([0.0, 0.0, 0.0, 1.0])
    ei = expected_improvement(mu, sd, best=1.0)
    assert ei[0] == 0 and ei[1] == 0
    assert ei[2] == pytest.approx(1.0)
    assert ei[3] > 0
    rng = np.random.default_rng(0)
    assert np.all(expected_improvement(rng.standard_normal(100), rng.random(100), 0.3) >= 0)


def test_gp_interpolates(rng):
    X = rng.random((12, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    gp = fit_surrogate(X, y, seed=0)
    mu, sd = gp.predict(X, return_std=True)
    assert np.abs(mu - y).max() <= 1e-6 * (1 + np.abs(y).max()) * 10
    assert np.all(sd < 1e-3)


def test_grid_objective():
    res = optimize(lambda th: -((th["u"] - 256) ** 2), UNITS, n_trials=30, seed=0, direction="maximize")
    assert abs(res.best_theta["u"] - 256) <= 2 * 16


def test_single_trial():
    res = optimize(lambda th: float(th["u"]), UNITS, n_trials=1, n_init=1, seed=5)
    assert res.best_theta == res.trials[0].theta
    assert res.best_y == res.trials[0].y


def test_failed_trials_are_skipped(tmp_path):
    def obj(th):
        if th["u"] > 300:
            raise RuntimeError("diverged")
        return float((th["u"] - 100) ** 2)

    log = tmp_path / "trials.jsonl"
    res = optimize(obj, UNITS, n_trials=12, seed=1, log_path=log)
    failed = [t for t in res.trials if t.status == "failed"]
    assert failed and all("diverged" in t.error for t in failed)
    assert res.best_theta["u"] <= 300
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert len(lines) == 12
    assert {"index", "theta", "y", "status", "wall_time"} <= set(lines[0])


def test_best_curve_monotone_and_reproducible():
    sp = SearchSpace.table()
    a = optimize(synthetic_objective, sp, n_trials=12, seed=3)
    b = optimize(synthetic_objective, sp, n_trials=12, seed=3)
    ys = [y for y in a.best_curve if y is not None]
    assert all(x >= y for x, y in zip(ys, ys[1:]))
    assert [t.record() | {"wall_time": 0} for t in a.trials] == [t.record() | {"wall_time": 0} for t in b.trials]
    keys = [sp.key(t.theta) for t in a.trials]
    assert len(set(keys)) == len(keys)
    assert [t.source for t in a.trials[:5]] == ["random"] * 5 and a.trials[5].source == "ei"


def test_synthetic_objective_optimum():
    th = {"ratio": 1 / 3, "width_stem_0": 96, "layers_fine": 2, "layers_mid": 3, "layers_reduced": 1}
    for b, w in (("fine", 176), ("mid", 240), ("reduced", 320)):
        for i in range(3):
            th[f"width_{b}_{i}"] = w
    assert synthetic_objective(th) == pytest.approx(0.1)
    th["width_reduced_2"] = 32  # unused slot
    assert synthetic_objective(th) == pytest.approx(0.1)
    th["layers_reduced"] = 2
    assert synthetic_objective(th) > 0.1


def test_arguments_validated():
    with pytest.raises(ValueError):
        optimize(lambda t: 0.0, UNITS, n_trials=0)
    with pytest.raises(ValueError):
        optimize(lambda t: 0.0, UNITS, direction="up")


def test_nonfinite_objective_fails_trial():
    res = optimize(lambda t: float("nan"), UNITS, n_trials=3, seed=0)
    assert all(t.status == "failed" for t in res.trials)
    assert res.best_theta is None and res.best_curve == [None] * 3


def test_trial_objective_deterministic():
    from graphrom.dataset import Doe, SyntheticCase
    from graphrom.pipeline import default_reference, make_dataset
    from graphrom.training import TrainConfig

    case = SyntheticCase(n_chord=15, n_span=10)
    data = make_dataset(case, Doe(n_samples=8, counts=(4, 2, 2)))
    cache = hpo.LevelCache(data)
    th = {"ratio": 1 / 3, "width_stem_0": 32, "layers_fine": 1, "layers_mid": 1, "layers_reduced": 2}
    for b in ("fine", "mid", "reduced"):
        for i in range(3):
            th[f"width_{b}_{i}"] = 48
    cfg = TrainConfig(epochs=3)
    a = hpo.trial_objective(data, cache, th, cfg, default_reference(case), seed=2)
    b = hpo.trial_objective(data, cache, th, cfg, default_reference(case), seed=2)
    assert a == b and np.isfinite(a)
    big = dict(th, width_stem_0=512, width_fine_0=512)
    assert np.isfinite(hpo.trial_objective(data, cache, big, cfg, default_reference(case)))
    assert len(cache._levels) == 1
