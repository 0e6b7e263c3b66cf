import json
import re

import pytest

from sau.cli import main

ERROR_LINE = re.compile(r'^error: code=(\d+) kind=(\w+) message=(".*")$')


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory, tiny_experiment):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(tiny_experiment.to_json())
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, tiny_cfg):
    d = tmp_path_factory.mktemp("pipe")
    p = {k: str(d / v) for k, v in dict(data="d.txt", base="base.ckpt", pruned="p.ckpt", sal="s.ckpt",
                                         plan="plan.ckpt", out="u.ckpt", man="m.json").items()}
    c = ["--config", tiny_cfg]
    assert main(["gen-data", *c, "--out", p["data"]]) == 0
    assert main(["train", *c, "--data", p["data"], "--out", p["base"]]) == 0
    assert main(["prune", *c, "--model", p["base"], "--data", p["data"], "--out", p["pruned"]]) == 0
    assert main(["saliency", *c, "--model", p["pruned"], "--data", p["data"], "--out", p["sal"]]) == 0
    assert main(["plan", *c, "--saliency", p["sal"], "--mask", p["pruned"], "--out", p["plan"]]) == 0
    assert main(["unlearn", *c, "--model", p["pruned"], "--data", p["data"], "--plan", p["plan"],
                 "--out", p["out"], "--manifest", p["man"]]) == 0
    p["dir"], p["cfg"] = d, tiny_cfg
    return p


def _error(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    m = ERROR_LINE.match(line)
    assert m, line
    json.loads(m.group(3))
    return int(m.group(1)), m.group(2)


def test_pipeline_outputs(pipeline, capsys):
    assert main(["eval", "--model", pipeline["out"], "--data", pipeline["data"]]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"forget_quality", "utility", "aggregate", "note"}
    man = json.loads(open(pipeline["man"]).read())
    assert man["config"]["variant"] == "sau"


def test_usage_errors_exit_2(capsys):
    assert main(["bogus"]) == 2
    assert _error(capsys) == (2, "usage")
    assert main(["train", "--unknown-flag"]) == 2
    assert _error(capsys) == (2, "usage")


def test_invalid_config_exits_3(pipeline, capsys, tmp_path):
    assert main(["gen-data", "--set", "sparsity=1.5", "--out", str(tmp_path / "x")]) == 3
    assert _error(capsys) == (3, "config")
    bad = tmp_path / "bad.json"
    bad.write_text('{"topk": 0}')
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert not (tmp_path / "x").exists()


def test_plan_for_other_mask_exits_4(pipeline, capsys, tmp_path):
    other = str(tmp_path / "p2.ckpt")
    assert main(["prune", "--config", pipeline["cfg"], "--set", "sparsity=0.25",
                 "--model", pipeline["base"], "--out", other]) == 0
    code = main(["unlearn", "--config", pipeline["cfg"], "--model", other, "--data", pipeline["data"],
                 "--plan", pipeline["plan"], "--out", str(tmp_path / "u.ckpt")])
    assert code == 4 and _error(capsys) == (4, "hash_mismatch")
    assert not (tmp_path / "u.ckpt").exists()


def test_corrupt_checkpoint_exits_5(pipeline, capsys, tmp_path):
    data = bytearray(open(pipeline["pruned"], "rb").read())
    data[100] ^= 0x10
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(data))
    assert main(["eval", "--model", str(bad), "--data", pipeline["data"]]) == 5
    assert _error(capsys) == (5, "checkpoint_load")
    assert main(["eval", "--model", str(tmp_path / "missing"), "--data", pipeline["data"]]) == 5


def test_divergence_exits_6(pipeline, capsys, tmp_path):
    import numpy as np
    with np.errstate(all="ignore"):
        code = main(["unlearn", "--config", pipeline["cfg"], "--set", "variant=baseline", "--set", "lr=1e8",
                     "--set", "retain_weight=0", "--set", "epochs=30", "--model", pipeline["pruned"],
                     "--data", pipeline["data"], "--out", str(tmp_path / "u.ckpt")])
    assert code == 6 and _error(capsys) == (6, "runtime")


def test_verify_theory(capsys, tmp_path):
    assert main(["verify-theory", "--seed", "7", "--instances", "50"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["seed"] == 7


def test_verify_theory_failure_exits_7(monkeypatch, capsys):
    from sau import theory
    monkeypatch.setattr(theory, "run_suite", lambda seed, n_instances: {"passed": False})
    assert main(["verify-theory"]) == 7
    assert _error(capsys) == (7, "theory_check")


def test_report_from_csv(pipeline, tmp_path):
    from sau.eval_harness import SWEEP_COLUMNS
    csv = tmp_path / "t.csv"
    csv.write_text(",".join(SWEEP_COLUMNS) + "\nmagnitude,0.0,baseline,1.0,0.0,0,0.5,0.5,0.5,0.5,0.5,5,0\n")
    assert main(["report", "--csv", str(csv), "--out-dir", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report.svg").exists()


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "ExperimentConfig"


def test_reruns_are_byte_identical(pipeline, tmp_path):
    c = ["--config", pipeline["cfg"]]
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        assert main(["gen-data", *c, "--out", str(d / "d.txt")]) == 0
        assert main(["train", *c, "--data", str(d / "d.txt"), "--out", str(d / "base.ckpt")]) == 0
        assert main(["prune", *c, "--model", str(d / "base.ckpt"), "--out", str(d / "p.ckpt")]) == 0
        assert main(["unlearn", *c, "--set", "variant=baseline", "--model", str(d / "p.ckpt"),
                     "--data", str(d / "d.txt"), "--out", str(d / "u.ckpt"), "--manifest", str(d / "m.json")]) == 0
    for name in ("d.txt", "base.ckpt", "p.ckpt", "u.ckpt", "m.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
