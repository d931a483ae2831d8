import json

import numpy as np
import pytest

from bootdistill.boot import StudentNet, sample_student
from bootdistill.cli import main
from bootdistill.config import ConfigError, ExperimentConfig, load_config
from bootdistill.experiments import load_student, load_teacher


def _small_config(path, **boot):
    cfg = ExperimentConfig().to_dict()
    cfg["teacher"].update(hidden=[16, 16], steps=60, batch=64)
    cfg["boot"].update(dict(batch=16, steps=12, lr=1e-3), **boot)
    cfg["eval"].update(n_samples=200, ddim_steps=8)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _small_config(root / "cfg.json")
    assert main(["train-teacher", "--config", str(cfg), "--out", str(root / "t")]) == 0
    return root, cfg, root / "t" / "teacher.json"


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    bad = cfg.to_dict()
    bad["boot"]["gamma"] = 1
    with pytest.raises(ConfigError, match="gamma"):
        ExperimentConfig.from_dict(bad)
    bad = cfg.to_dict()
    bad["colour"] = "red"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)
    bad = cfg.to_dict()
    bad["boot"]["t_min"] = 0.05
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)
    p = tmp_path / "boot.json"
    p.write_text(json.dumps({"delta": 0.02}))
    assert load_config(p).boot.delta == 0.02


def test_usage_errors_exit_two(tmp_path, workdir, monkeypatch):
    _, _, teacher = workdir
    assert main(["distill", "--teacher", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["ablate", "nope", "--teacher", str(teacher), "--out", str(tmp_path)]) == 2
    assert main(["no-such-command"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train-teacher", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"boot": {"delta": 0.04, "gamma": 1}}))
    assert main(["train-teacher", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["verify", "--quick", "--threads", "0"]) == 2
    monkeypatch.setenv("BOOT_LOG", "loud")
    assert main(["verify", "--quick"]) == 2


def test_teacher_checkpoint_has_sidecar(workdir):
    root, _, teacher = workdir
    net, data = load_teacher(teacher)
    assert net.dim == 2 and data.n_modes == 8
    side = json.loads((root / "t" / "teacher.sidecar.json").read_text())
    assert side["dataset"]["name"] == "ring"


def test_distill_zero_steps_is_initial_student(tmp_path, workdir):
    _, cfg, teacher = workdir
    out = tmp_path / "s0.json"
    assert main(["distill", "--config", str(cfg), "--teacher", str(teacher), "--steps", "0", "--out", str(out)]) == 0
    student = load_student(out)
    init = StudentNet.from_teacher(load_teacher(teacher)[0], student.sched)
    eps = np.random.default_rng(0).standard_normal((20, 2))
    np.testing.assert_array_equal(sample_student(student, eps), sample_student(init, eps))
    assert (tmp_path / "metrics.csv").read_text().splitlines() == ["step,loss_bs,loss_bc,ema_decay,wall_ms"]


def test_metrics_csv_rows(tmp_path, workdir):
    _, cfg, teacher = workdir
    out = tmp_path / "run"
    assert main(["distill", "--config", str(cfg), "--teacher", str(teacher), "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,loss_bs,loss_bc,ema_decay,wall_ms"
    assert len(lines) == 13
    rows = [r.split(",") for r in lines[1:]]
    assert [int(r[0]) for r in rows] == list(range(12))
    assert all(float(r[4]) == 0.0 for r in rows)
    assert all(np.isfinite(float(r[1])) for r in rows)


def test_resume_is_bit_exact(tmp_path, workdir):
    _, cfg, teacher = workdir
    base = ["distill", "--config", str(cfg), "--teacher", str(teacher)]
    assert main(base + ["--out", str(tmp_path / "full.json"), "--log", str(tmp_path / "full.csv")]) == 0
    assert main(base + ["--stop-at", "5", "--out", str(tmp_path / "half.json"), "--log", str(tmp_path / "split.csv")]) == 0
    assert main(base + ["--resume", str(tmp_path / "half.json"), "--out", str(tmp_path / "rest.json"),
                        "--log", str(tmp_path / "split.csv")]) == 0
    full = json.loads((tmp_path / "full.json").read_text())
    rest = json.loads((tmp_path / "rest.json").read_text())
    assert full["params"] == rest["params"] and full["ema"] == rest["ema"]
    assert (tmp_path / "full.csv").read_text() == (tmp_path / "split.csv").read_text()


def test_repeat_commands_are_byte_identical(tmp_path, workdir):
    _, cfg, teacher = workdir
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["distill", "--config", str(cfg), "--teacher", str(teacher), "--out", str(d)]) == 0
        assert main(["sample", "--ckpt", str(d / "student.json"), "--solver", "student", "--n", "50",
                     "--seed", "3", "--out", str(d / "s.csv")]) == 0
        assert main(["eval", "--config", str(cfg), "--teacher", str(teacher), "--student", str(d / "student.json"),
                     "--out", str(d / "eval")]) == 0
        outs.append([(d / name).read_bytes() for name in ("student.json", "metrics.csv", "s.csv", "eval/metrics.json")])
    assert outs[0] == outs[1]


def test_sample_solvers(tmp_path, workdir):
    _, _, teacher = workdir
    for solver in ("ddim", "signal-euler", "signal-heun"):
        out = tmp_path / f"{solver}.csv"
        assert main(["sample", "--ckpt", str(teacher), "--solver", solver, "--steps", "8", "--n", "10", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "x0,x1" and len(rows) == 11
    assert main(["sample", "--ckpt", str(teacher), "--solver", "student", "--out", str(tmp_path / "x.csv")]) == 2


def test_verify_command(tmp_path):
    assert main(["verify", "--quick", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "verify.txt").read_text()
    assert "FAIL" not in text and text.count("PASS") >= 10
