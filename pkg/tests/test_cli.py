import json
import subprocess
import sys

import numpy as np
import pytest

from robusta import __version__
from robusta.cli import main
from robusta.config import ExperimentConfig
from robusta.data import synth_dataset, write_csv_dataset
from robusta.model_core import DifferentiableModel
from robusta.runner import run_experiment

TINY_TRANSFER = {
    "task": "transfer-eval",
    "dataset": {"kind": "glyphs", "n": 300, "test_fraction": 0.25},
    "model": {"hidden": [16]},
    "train": {"epochs": 3},
    "transfer": {"corruptions": [{"kind": "brightness", "amount": 0.3}, {"kind": "invert"}],
                 "n_c": [0], "total": 200, "ae": {"latent": 4, "hidden": [16], "epochs": 2}},
}


def payload(out):
    """Every bundle file except the run metadata."""
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "metadata.json"}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# runner


def test_linear_checkpoint_curve_starts_at_one(tmp_path):
    ds, lin = synth_dataset("linear_separable", 60, noise=0.0, seed=2)
    write_csv_dataset(tmp_path / "d.csv", ds)
    w = lin.W.T
    DifferentiableModel((w,), (lin.b,), ("softmax",)).save(tmp_path / "lin.json")
    cfg = ExperimentConfig.from_dict({
        "task": "eval-robustness",
        "dataset": {"kind": "csv", "path": str(tmp_path / "d.csv"), "test_fraction": 0},
        "model": {"checkpoint": str(tmp_path / "lin.json")},
        "robustness": {"grid_points": 11, "oracle": "analytic"},
    })
    out, summary = run_experiment(cfg, tmp_path / "run")
    rows = (out / "margin_curve.csv").read_text().splitlines()
    assert rows[0] == "epsilon,R,stderr,n"
    assert [float(v) for v in rows[1].split(",")[:2]] == [0.0, 1.0]
    assert summary["accuracy"] == 1.0 and summary["oracle"] == "analytic_linear"


def test_cotrain_without_epochs_writes_initial_models(tmp_path):
    cfg = ExperimentConfig.from_dict({"task": "cotrain", "dataset": {"n": 40}, "model": {"hidden": [4]},
                                      "cotrain": {"epochs": 0}})
    out, summary = run_experiment(cfg, tmp_path / "run")
    assert (out / "history.csv").read_text() == "epoch,batch,loss_f,loss_g\n"
    f = DifferentiableModel.from_json((out / "f.json").read_text())
    init = DifferentiableModel.init([2, 4, 2], seed=0)
    assert np.array_equal(f.flat_params(), init.flat_params())
    assert (out / "g.json").exists() and summary["n_steps"] == 0


def test_transfer_modes_give_identical_reports_without_corrupted_data(tmp_path):
    doc = {**TINY_TRANSFER, "transfer": {**TINY_TRANSFER["transfer"], "modes": ["separate", "joint"]}}
    out, _ = run_experiment(ExperimentConfig.from_dict(doc), tmp_path / "run")
    assert (out / "report_separate_nc0.csv").read_bytes() == (out / "report_joint_nc0.csv").read_bytes()
    table = (out / "table.csv").read_text().splitlines()
    assert table[0] == "corruption,Plain,Gauss,Separate(N_c=0),Joint(N_c=0)"
    assert table[-1].startswith("clean,")


@pytest.mark.parametrize("doc", [
    {"task": "train", "dataset": {"n": 60}, "train": {"epochs": 5}},
    {"task": "attack", "dataset": {"n": 30}, "train": {"epochs": 5}},
    {"task": "eval-robustness", "dataset": {"n": 30}, "train": {"epochs": 5},
     "robustness": {"grid_points": 10, "n_inner": 20, "n_outer": 10, "oracle": "attack",
                    "scores": [{"kernel": {"kind": "uniform_ball", "epsilon": 0.05}, "H": "identity"}]}},
    {**TINY_TRANSFER, "task": "transfer-train"},
    TINY_TRANSFER,
])
def test_runs_are_deterministic_and_echo_their_config(tmp_path, doc):
    cfg = ExperimentConfig.from_dict(doc)
    a, _ = run_experiment(cfg, tmp_path / "a")
    b, _ = run_experiment(cfg, tmp_path / "b")
    assert payload(a) == payload(b)
    echoed = ExperimentConfig.from_dict(json.loads((a / "config.json").read_text()))
    assert ExperimentConfig.from_dict(json.loads(echoed.to_json())) == echoed
    assert echoed.seed == cfg.seed and echoed.task == cfg.task
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["version"] == __version__


def test_existing_output_is_not_overwritten(tmp_path):
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "keep.txt").write_text("x")
    from robusta.errors import ConfigError
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.from_dict({"task": "train"}), tmp_path / "run")
    assert [p.name for p in (tmp_path / "run").iterdir()] == ["keep.txt"]


def test_failed_run_leaves_no_directory(tmp_path):
    from robusta.errors import ConfigError
    cfg = ExperimentConfig.from_dict({"task": "transfer-eval", "dataset": {"kind": "glyphs", "n": 50}})
    with pytest.raises(ConfigError):
        run_experiment(cfg, tmp_path / "run")
    assert list(tmp_path.iterdir()) == []


# command line


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == __version__


def test_success_prints_the_bundle(tmp_path, capsys):
    p = write_config(tmp_path, {"dataset": {"n": 40}, "train": {"epochs": 2}})
    assert main(["train", "--config", str(p), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    assert json.loads(capsys.readouterr().out) == {"out": str(tmp_path / "o"), "task": "train"}
    assert json.loads((tmp_path / "o" / "config.json").read_text())["seed"] == 5


def test_bad_config_exits_2_with_json(tmp_path, capsys):
    p = write_config(tmp_path, {"dataset": {"n": 40, "colour": "red"}})
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "colour" in err["message"]
    assert not (tmp_path / "o").exists()


def test_runtime_failure_exits_1(tmp_path, capsys):
    (tmp_path / "bad.idx").write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 9, 1]))
    p = write_config(tmp_path, {"dataset": {"kind": "idx", "images": str(tmp_path / "bad.idx"),
                                            "labels": str(tmp_path / "bad.idx")}})
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError" and err["offset"] == 9


def test_thread_cap_must_be_positive(tmp_path, capsys, monkeypatch):
    p = write_config(tmp_path, {"dataset": {"n": 40}, "train": {"epochs": 1}})
    monkeypatch.setenv("ROBUSTA_THREADS", "zero")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "ROBUSTA_THREADS" in json.loads(capsys.readouterr().err)["message"]
    monkeypatch.setenv("ROBUSTA_THREADS", "2")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "metadata.json").read_text())["threads"] == 2


def test_negative_seed_and_unknown_task(tmp_path, capsys):
    p = write_config(tmp_path, {})
    assert main(["train", "--config", str(p), "--seed", "-1"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["predict", "--config", str(p)])
    assert info.value.code == 2


def test_console_entry_point(tmp_path):
    p = write_config(tmp_path, {"dataset": {"n": 30}, "train": {"epochs": 1}})
    res = subprocess.run([sys.executable, "-m", "robusta", "train", "--config", str(p), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True, env={"ROBUSTA_THREADS": "1"})
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["task"] == "train"
