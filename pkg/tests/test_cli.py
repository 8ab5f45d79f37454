import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from trajattack.cli import main
from trajattack.core import load_scenario
from trajattack.metrics import ade
from trajattack.predictors import PredictionRequest, load_predictor

FAST = ["--restarts", "2", "--iters", "5"]


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def scen(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "scen"
    assert main(["gen", "--count", "6", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_gen_manifest_and_rerun(scen, tmp_path):
    doc = json.loads((scen / "manifest.json").read_text())
    assert doc["count"] == 6 == len(list(scen.glob("*_*.json")))
    assert doc["counts"] == {"straight": 2, "turn": 2, "lane_change": 2}
    again = tmp_path / "again"
    assert main(["gen", "--count", "6", "--seed", "3", "--out", str(again)]) == 0
    assert tree_bytes(scen) == tree_bytes(again)


def test_gen_rejects_bad_input(tmp_path):
    assert main(["gen", "--count", "3", "--families", "roundabout", "--out", str(tmp_path)]) == 2
    assert main(["gen", "--count", "-1", "--out", str(tmp_path)]) == 2


def test_train_roundtrip_and_report(scen, tmp_path):
    a, b = tmp_path / "a" / "m.json", tmp_path / "b" / "m.json"
    args = ["train", "--scenarios", str(scen), "--val", str(scen), "--epochs", "50", "--seed", "4"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.with_suffix(".report.json").read_text())
    model = load_predictor(a)
    scs = [load_scenario(p) for p in sorted(scen.glob("*_*.json"))]
    errs = [ade(model.predict_agent(PredictionRequest.from_scenario(s), s.adversary_id), s.future()) for s in scs]
    assert report["validation_ade"] == pytest.approx(np.mean(errs), abs=1e-12)
    assert len(report["loss_curve"]["values"]) == 50


def test_train_divergence_exit(scen, tmp_path):
    out = tmp_path / "m.json"
    assert main(["train", "--scenarios", str(scen), "--epochs", "20", "--lr", "1e300", "--out", str(out)]) == 2
    assert "error" in json.loads(out.with_suffix(".report.json").read_text())
    assert not out.exists()


def test_attack_requires_seed(scen, tmp_path):
    assert main(["attack", "--scenarios", str(scen), "--out", str(tmp_path)]) == 2


def test_attack_zero_bound_is_near_clean(scen, tmp_path):
    out = tmp_path / "att"
    assert main(["attack", "--scenarios", str(scen), "--bound", "0", "--seed", "0", "--out", str(out)] + FAST) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failed"] == 0 and manifest["model"] == {"name": "cv"}
    for entry in manifest["scenarios"]:
        sc = load_scenario(scen / entry["file"])
        adv = np.array(json.loads((out / entry["id"] / "adversarial.json").read_text())["history"])
        assert np.max(np.hypot(*(adv - sc.history()).T)) <= 0.2


def test_attack_failures_recorded(scen, tmp_path):
    broken = tmp_path / "scen"
    broken.mkdir()
    for p in sorted(scen.glob("*_*.json"))[:2]:
        (broken / p.name).write_bytes(p.read_bytes())
    (broken / "zz_bad.json").write_text("{not json")
    out = tmp_path / "att"
    assert main(["attack", "--scenarios", str(broken), "--seed", "0", "--out", str(out)] + FAST) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failed"] == 1
    assert [e["status"] for e in manifest["scenarios"]] == ["ok", "ok", "failed"]


def test_jobs_do_not_change_output(scen, tmp_path):
    base = ["attack", "--scenarios", str(scen), "--seed", "1"] + FAST
    assert main(base + ["--out", str(tmp_path / "j1")]) == 0
    assert main(base + ["--jobs", "2", "--out", str(tmp_path / "j2")]) == 0
    assert tree_bytes(tmp_path / "j1") == tree_bytes(tmp_path / "j2")


def test_eval_outputs(scen, tmp_path):
    sa, bl = tmp_path / "sa", tmp_path / "search"
    assert main(["attack", "--scenarios", str(scen), "--seed", "0", "--out", str(sa)] + FAST) == 0
    assert main(["attack", "--scenarios", str(scen), "--seed", "0", "--method", "search", "--out", str(bl)] + FAST) == 0
    out = tmp_path / "eval"
    assert main(["eval", "--scenarios", str(scen), "--attacks", str(sa), str(bl), "--out", str(out)]) == 0
    for run in ("sa", "search"):
        rows = (out / run / "suite.csv").read_text().splitlines()
        assert len(rows) == 7
        hist = (out / run / "accel_hist.csv").read_text().splitlines()[1:]
        assert sum(int(r.split(",")[2]) for r in hist) == 6
        assert len(list((out / run / "figures").glob("*.png"))) == 6
    comp = (out / "comparison.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in comp[1:]] == ["sa", "search"]
    assert (out / "accel_hist.png").exists() and (out / "metrics.png").exists()


def test_eval_reports_missing(scen, tmp_path):
    sa = tmp_path / "sa"
    assert main(["attack", "--scenarios", str(scen), "--seed", "0", "--out", str(sa)] + FAST) == 0
    victim = next(p for p in sa.iterdir() if p.is_dir())
    (victim / "adversarial.json").unlink()
    out = tmp_path / "eval"
    assert main(["eval", "--scenarios", str(scen), "--attacks", str(sa), "--no-figures", "--out", str(out)]) == 1
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["runs"][0]["count"] == 5 and len(doc["runs"][0]["missing"]) == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"count": 2, "seed": 9}}))
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["count"] == 2
    assert main(["--config", str(cfg), "gen", "--count", "4", "--out", str(tmp_path / "b")]) == 0
    doc = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert doc["count"] == 4 and doc["seed"] == 9
    cfg.write_text(json.dumps({"gen": {"colour": "red"}}))
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "c")]) == 2


def test_env_default_out_and_entry_point(tmp_path):
    env = {"TRAJATTACK_OUT": str(tmp_path / "envout"), "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "trajattack", "gen", "--count", "1"],
                          env=env, capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "envout" / "scenarios" / "manifest.json").exists()
