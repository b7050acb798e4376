import hashlib
import json

import numpy as np
import pytest

from graphrom import checkpoint, cli
from graphrom.mesh import build_graph, load_fields, load_mesh
from graphrom.training import History

SMALL = """
[case]
n_chord = 15
n_span = 10
[doe]
n_samples = 10
counts = [6, 2, 2]
[model]
stem = [8]
fine = [8]
mid = [8]
reduced = [8]
strict = false
[train]
epochs = 3
[hpo]
n_trials = 2
n_init = 1
epochs = 2
n_candidates = 64
"""


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.toml"
    cfg.write_text(SMALL)
    work = d / "work"
    base = ["--config", str(cfg), "--work-dir", str(work), "--threads", "1"]
    for cmd in ("gen", "levels", "train"):
        assert run(*base, cmd) == 0
    return base, work


def test_gen_default_counts(tmp_path):
    assert run("--work-dir", str(tmp_path / "a"), "gen") == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(man["samples"]) == 70
    labels = [r["split"] for r in man["samples"]]
    assert (labels.count("train"), labels.count("val"), labels.count("test")) == (40, 15, 15)
    assert len(list((tmp_path / "a" / "fields").iterdir())) == 70
    assert run("--work-dir", str(tmp_path / "b"), "gen") == 0
    h = [hashlib.sha256((tmp_path / x / "manifest.json").read_bytes()).hexdigest() for x in "ab"]
    assert h[0] == h[1]


def test_levels_diagnostics_default_mesh(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[doe]\nn_samples = 10\ncounts = [6, 2, 2]\n")
    base = ["--config", str(cfg), "--work-dir", str(tmp_path)]
    assert run(*base, "gen") == 0 and run(*base, "levels") == 0
    diag = json.loads((tmp_path / "levels_diagnostics.json").read_text())
    assert diag["sizes"] == [900, 300, 100]
    assert all(lv["affine_round_trip_error"] < 1e-6 for lv in diag["levels"])
    assert all(lv["connected"] for lv in diag["levels"])


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("--work-dir", str(blocker / "sub"), "gen") == 2


def test_missing_training_fields(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    base = ["--config", str(cfg), "--work-dir", str(tmp_path / "w")]
    assert run(*base, "gen") == 0
    man = json.loads((tmp_path / "w" / "manifest.json").read_text())
    victim = next(r for r in man["samples"] if r["split"] == "train")
    (tmp_path / "w" / victim["file"]).unlink()
    assert run(*base, "levels") == 2
    assert "manifest.json" in capsys.readouterr().err


def test_prerequisites(tmp_path, capsys):
    assert run("--work-dir", str(tmp_path), "levels") == 2
    assert "gen" in capsys.readouterr().err
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    base = ["--config", str(cfg), "--work-dir", str(tmp_path)]
    assert run(*base, "gen") == 0
    assert run(*base, "train") == 2
    assert run(*base, "predict") == 2


@pytest.mark.parametrize("text,msg", [
    ("[bogus]\nx = 1\n", "unknown config section"),
    ("[train]\nlearning = 1\n", "unknown key"),
    ("[train]\nepochs = 'ten'\n", "expected int"),
    ("[train]\nepochs = 0\n", "epochs"),
    ("[model]\nstem = [40]\n", "width 40"),
    ("[coarsening]\nratios = [0.5, 1.5]\n", "ratio"),
    ("not toml [", ""),
])
def test_config_errors(tmp_path, capsys, text, msg):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    assert run("--config", str(cfg), "--work-dir", str(tmp_path), "gen") == 2
    assert msg in capsys.readouterr().err


def test_train_artifacts(trained):
    base, work = trained
    h = History.read_csv(work / "history.csv")
    assert len(h.epoch) == 3
    summary = json.loads((work / "train_summary.json").read_text())
    mesh = load_mesh(work / "mesh.txt")
    model, scalers, extra = checkpoint.load_model(work / "model.npz", build_graph(mesh))
    assert model.n_parameters() == summary["n_parameters"]
    assert extra["levels_sha256"] == checkpoint.file_sha256(work / "levels.npz")
    echo = json.loads((work / "config_train.json").read_text())
    assert echo["config"]["train"]["epochs"] == 3 and echo["threads"] == 1


def test_eval_matches_training_log(trained):
    base, work = trained
    assert run(*base, "eval", "--split", "train") == 0
    rep = json.loads((work / "metrics_train.json").read_text())
    summary = json.loads((work / "train_summary.json").read_text())
    for ch, v in summary["final_train_mape"].items():
        assert rep["aggregate"]["mape"][ch] == pytest.approx(v, rel=1e-12)
    assert run(*base, "eval") == 0
    test = json.loads((work / "metrics_test.json").read_text())
    assert test["n_samples"] == 2
    assert {"CL", "CD", "CMy"} == set(test["samples"][0]["coefficients"])


def test_predict_round_trip(trained):
    base, work = trained
    assert run(*base, "predict", "--aoa", "2.5", "--mach", "0.77") == 0
    names, values = load_fields(work / "predictions" / "aoa2.5_mach0.77.txt")
    assert names == ["Cp", "Cfx", "Cfy", "Cfz"] and values.shape == (150, 4)
    from graphrom.training import predict

    mesh = load_mesh(work / "mesh.txt")
    model, scalers, _ = checkpoint.load_model(work / "model.npz", build_graph(mesh))
    np.testing.assert_array_equal(values, predict(model, mesh.nodes, 2.5, 0.77, scalers))
    assert run(*base, "predict", "--aoa", "2.5") == 2
    assert run(*base, "predict", "--split", "val") == 0
    assert len(list((work / "predictions").glob("sample_*.txt"))) == 2


def test_hpo_artifacts(trained):
    base, work = trained
    assert run(*base, "hpo") == 0
    lines = [json.loads(x) for x in (work / "hpo" / "trials.jsonl").read_text().splitlines()]
    assert len(lines) == 2 and all(r["status"] == "ok" for r in lines)
    best = json.loads((work / "hpo" / "best_config.json").read_text())
    assert best["val_mse"] == min(r["y"] for r in lines)


def test_hpo_single_trial_is_random(trained, tmp_path):
    from graphrom import hpo

    base, work = trained
    assert run(*base, "hpo", "--n-trials", "1") == 0
    rec = json.loads((work / "hpo" / "trials.jsonl").read_text())
    assert rec["source"] == "random"
    cfg = cli.load_config(base[1])
    space = hpo.SearchSpace.table(widths=tuple(range(32, 513, 16)))
    rng = np.random.default_rng(cli.derive_seed(cfg["run"]["seed"], "hpo"))
    assert rec["theta"] == {k: (float(v) if isinstance(v, float) else v) for k, v in space.sample(rng).items()}


def test_mesh_info(trained, capsys):
    _, work = trained
    assert run("mesh-info", str(work / "mesh.txt")) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["nodes"] == 150 and info["cells"] == 2 * 14 * 9
    assert run("mesh-info", str(work / "nope.txt")) == 2


def test_seed_streams_differ():
    s = {cli.derive_seed(0, t) for t in ("doe", "levels", "model", "train", "hpo")}
    assert len(s) == 5
    assert cli.derive_seed(1, "doe") != cli.derive_seed(0, "doe")
