import json
import subprocess
import sys

import pytest

from minepred import cli
from minepred.evaluation import read_predictions
from minepred.scene import read_trajectories


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--kind", "crossroads", "--agents", 4, "--seed", 7, "--out", d) == 0
    assert run("preprocess", "--logs", d / "trajectories.csv", "--map", d / "map.json", "--out", d) == 0
    assert run("train", "--instances", d / "instances.jsonl", "--map", d / "map.json", "--split", d / "split.json",
               "--modes", "1,2", "--preset", "coarse", "--hidden", 16, "--max-steps", 2, "--batch-size", 8,
               "--save-init", "--out", d) == 0
    return d


def data_flags(d):
    return ["--instances", d / "instances.jsonl", "--map", d / "map.json", "--split", d / "split.json"]


def test_help_lists_defaults(capsys):
    for name, expected in [
        ("train", ["--lr LR", "(default: 0.0001)", "(default: 64)", "(default: 45.0)"]),
        ("preprocess", ["(default: 6)", "(default: 1.0)", "(default: [7.0, 1.5, 1.5])"]),
        ("eval", ["(default: [1, 2, 3, 5])", "(default: 2.0)", "(default: CTRV)"]),
    ]:
        with pytest.raises(SystemExit) as exc:
            run(name, "--help")
        assert exc.value.code == 0
        text = " ".join(capsys.readouterr().out.split())
        for item in expected:
            assert item in text, (name, item)


def test_synth_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("synth", "--kind", "crossroads", "--agents", 5, "--seed", 7, "--out", tmp_path / sub) == 0
    for name in ("map.json", "trajectories.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "map.json").read_text())
    assert set(doc) >= {"origin", "drivable", "non_drivable"}
    assert all(len(p) >= 3 and all(len(v) == 2 for v in p) for p in doc["drivable"])


def test_bad_kind_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("synth", "--kind", "bogus", "--out", tmp_path)
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_config_then_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_agents": 3}}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "a") == 0
    assert len(read_trajectories(tmp_path / "a" / "trajectories.csv")) == 3
    assert run("synth", "--config", cfg, "--agents", 2, "--out", tmp_path / "b") == 0
    assert len(read_trajectories(tmp_path / "b" / "trajectories.csv")) == 2
    cfg.write_text(json.dumps({"nope": 1}))
    assert run("synth", "--config", cfg, "--out", tmp_path) == 2


def test_preprocess_echo(pipeline, capsys, tmp_path):
    assert run("preprocess", "--logs", pipeline / "trajectories.csv", "--map", pipeline / "map.json", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "k=6 H=6" in out and "split 7:1.5:1.5" in out
    summary = json.loads((tmp_path / "preprocess_summary.json").read_text())
    assert summary["k"] == 6 and summary["horizon"] == 6


def test_malformed_csv_reports_line(tmp_path, pipeline, capsys):
    lines = (pipeline / "trajectories.csv").read_text().splitlines()
    lines[3] = lines[3].replace(",", ",oops,", 1)
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    assert run("preprocess", "--logs", tmp_path / "bad.csv", "--map", pipeline / "map.json", "--out", tmp_path) == 1
    assert "line 4" in capsys.readouterr().err
    assert not (tmp_path / "instances.jsonl").exists()


def test_empty_log_no_instances(tmp_path, pipeline, capsys):
    header = (pipeline / "trajectories.csv").read_text().splitlines()[0]
    (tmp_path / "empty.csv").write_text(header + "\n")
    assert run("preprocess", "--logs", tmp_path / "empty.csv", "--map", pipeline / "map.json", "--out", tmp_path) == 1
    assert "no instances" in capsys.readouterr().err


def test_lr_zero_keeps_init(pipeline, tmp_path):
    assert run("train", *data_flags(pipeline), "--modes", 1, "--preset", "coarse", "--hidden", 16,
               "--max-steps", 2, "--batch-size", 8, "--lr", 0, "--save-init", "--out", tmp_path) == 0
    assert (tmp_path / "model_M1.ckpt").read_bytes() == (tmp_path / "model_M1.init.ckpt").read_bytes()


def test_train_deterministic(pipeline, tmp_path):
    assert run("train", *data_flags(pipeline), "--modes", "1,2", "--preset", "coarse", "--hidden", 16,
               "--max-steps", 2, "--batch-size", 8, "--out", tmp_path) == 0
    for m in (1, 2):
        assert (tmp_path / f"model_M{m}.ckpt").read_bytes() == (pipeline / f"model_M{m}.ckpt").read_bytes()
    assert (pipeline / "model_M1.ckpt").read_bytes() != (pipeline / "model_M1.init.ckpt").read_bytes()


def test_train_needs_split(pipeline, capsys):
    assert run("train", "--instances", pipeline / "instances.jsonl", "--map", pipeline / "map.json",
               "--out", pipeline / "x") == 1
    assert "missing split" in capsys.readouterr().err


def test_predict_one_record_per_instance(pipeline, tmp_path):
    split = json.loads((pipeline / "split.json").read_text())
    assert run("predict", *data_flags(pipeline), "--checkpoint", pipeline / "model_M2.ckpt", "--ekf",
               "--out", tmp_path) == 0
    model = read_predictions(tmp_path / "predictions_model-M2.jsonl")
    ekf = read_predictions(tmp_path / "predictions_ekf.jsonl")
    assert len(model) == len(ekf) == len(split["test"])
    assert all(p.n_modes == 2 for p in model)


def test_predict_rejects_raster_mismatch(pipeline, tmp_path, capsys):
    from minepred import nn
    from minepred.nn.model import ArchSpec, TrajectoryNet
    from minepred.raster import get_config

    net = TrajectoryNet(ArchSpec(horizon=12, n_modes=1, hidden=8, raster=get_config("coarse")))
    nn.save(net, tmp_path / "h12.ckpt")
    assert run("predict", *data_flags(pipeline), "--checkpoint", tmp_path / "h12.ckpt", "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err
    assert not list(tmp_path.glob("predictions_*"))


def test_eval_report(pipeline, tmp_path, capsys):
    assert run("eval", *data_flags(pipeline), "--modes", "1,2", "--models-dir", pipeline, "--out", tmp_path) == 0
    text = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in text[2:5]] == ["EKF", "Single-modal", "Ours"]
    assert (tmp_path / "report.csv").read_text().splitlines()[0] == "method,minADE,minFDE,missRate,n"


def test_eval_missing_checkpoint(pipeline, tmp_path, capsys):
    assert run("eval", *data_flags(pipeline), "--modes", 5, "--models-dir", pipeline, "--out", tmp_path) == 1
    assert "missing checkpoint" in capsys.readouterr().err


def test_failed_eval_removes_partial_outputs(pipeline, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ValueError("injected")

    monkeypatch.setattr(cli, "compare", boom)
    assert run("eval", *data_flags(pipeline), "--modes", 1, "--models-dir", pipeline, "--out", tmp_path) == 1
    assert list(tmp_path.iterdir()) == []


def test_plot_and_missing_instance(pipeline, tmp_path, capsys):
    assert run("predict", *data_flags(pipeline), "--checkpoint", pipeline / "model_M2.ckpt", "--out", tmp_path) == 0
    preds = tmp_path / "predictions_model-M2.jsonl"
    args = ["plot", "--instances", pipeline / "instances.jsonl", "--map", pipeline / "map.json", "--predictions", preds]
    assert run(*args, "--out", tmp_path, "--png") == 0
    svg = next(tmp_path.glob("plot_*.svg")).read_text()
    assert svg.count('class="mode"') == 2 and svg.count('class="gt"') == 1
    assert list(tmp_path.glob("raster_*.png"))
    assert run(*args, "--instance", "nope", "--out", tmp_path) == 1
    assert "missing instance id" in capsys.readouterr().err


def test_rasterize(pipeline, tmp_path):
    assert run("rasterize", "--instances", pipeline / "instances.jsonl", "--map", pipeline / "map.json",
               "--preset", "coarse", "--format", "ppm", "--out", tmp_path) == 0
    ppm = next(tmp_path.glob("*.ppm")).read_bytes()
    assert ppm.startswith(b"P6\n120 120\n255\n")


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "minepred.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "preprocess" in proc.stdout
