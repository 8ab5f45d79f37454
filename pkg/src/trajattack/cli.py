"""Command-line harness: ``gen``, ``train``, ``attack`` and ``eval``.

Settings resolve as command-line flag, then the matching section of a JSON
``--config`` file, then the built-in default. Every output file is written
atomically and manifests carry no timestamps, so reruns with the same seeds
reproduce the output directories byte for byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import Scenario, ScenarioError, atomic_write_text, dumps_scenario, load_scenario
from .metrics import (
    MISS_THRESHOLD,
    AttackEvaluation,
    aggregate,
    ade,
    evaluate_attack,
    histogram_csv,
    suite_csv,
)
from .predictors import (
    PredictionRequest,
    Predictor,
    TrainConfig,
    TrainingDivergedError,
    builtin_predictor,
    load_predictor,
    save_predictor,
    train_tiny_surrogate,
)
from .pursuit import PursuitConfig, sa_attack
from .search import SearchConfig, search_attack
from .synth import FAMILIES, GeneratorConfig, generate_synthetic_scenarios

OUT_ENV = "TRAJATTACK_OUT"
MANIFEST = "manifest.json"
BUILTIN_MODELS = ("cv", "poly")

DEFAULTS = {
    "gen": {"count": 100, "seed": 0, "families": ",".join(FAMILIES)},
    "train": {"seed": 0, "hidden": TrainConfig.hidden, "epochs": TrainConfig.epochs,
              "lr": TrainConfig.learning_rate, "neighbors": TrainConfig.n_neighbors},
    "attack": {"method": "sa", "model": "cv", "bound": 1.0, "restarts": 20, "iters": 50, "lr": 0.01,
               "seed": None, "alpha": 2.0, "step_length": 0.2, "jobs": 1},
    "eval": {"model": None, "miss_threshold": MISS_THRESHOLD, "figures": True},
}


class CliError(Exception):
    pass


# -- helpers ---------------------------------------------------------------


def _json(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "trajattack_out")) / sub


def _settings(args: argparse.Namespace, command: str) -> dict:
    """Flags over config-file section over defaults."""
    file_cfg = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        file_cfg = doc.get(command, {})
        unknown = set(file_cfg) - set(DEFAULTS[command]) - {"scenarios", "out", "val", "attacks"}
        if unknown:
            raise CliError(f"unknown {command} settings in config: {sorted(unknown)}")
    out = dict(DEFAULTS[command])
    out.update(file_cfg)
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command", "func"):
            out[key] = value
    return out


def _scenario_files(directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"scenario directory {d} does not exist")
    manifest = d / MANIFEST
    if manifest.exists():
        doc = json.loads(manifest.read_text())
        return [d / entry["file"] for entry in doc["scenarios"]]
    return sorted(p for p in d.glob("*.json") if p.name != MANIFEST)


def _load_scenarios(directory) -> list[Scenario]:
    files = _scenario_files(directory)
    if not files:
        raise CliError(f"no scenarios in {directory}")
    try:
        return [load_scenario(p) for p in files]
    except (OSError, ScenarioError) as exc:
        raise CliError(str(exc)) from exc


def _model_for(spec: str, scenario: Scenario, cache: dict) -> Predictor:
    if spec in BUILTIN_MODELS:
        return builtin_predictor(spec, scenario.history_len, scenario.future_len)
    if spec not in cache:
        cache[spec] = load_predictor(spec)
    model = cache[spec]
    if (model.history_len, model.future_len) != (scenario.history_len, scenario.future_len):
        raise ValueError(f"model horizons ({model.history_len}, {model.future_len}) do not match "
                         f"scenario ({scenario.history_len}, {scenario.future_len})")
    return model


def _model_record(spec: str) -> dict:
    if spec in BUILTIN_MODELS:
        return {"name": spec}
    return {"file": Path(spec).name, "sha256": _sha256(spec)}


def _family_counts(count: int, families: list[str]) -> dict:
    base, extra = divmod(count, len(families))
    return {f: base + (1 if i < extra else 0) for i, f in enumerate(families)}


# -- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    s = _settings(args, "gen")
    families = [f.strip() for f in str(s["families"]).split(",") if f.strip()]
    if int(s["count"]) < 0:
        raise CliError("count must be non-negative")
    try:
        cfg = GeneratorConfig(counts=_family_counts(int(s["count"]), families))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(s.get("out") or _default_out("scenarios"))
    scenarios = generate_synthetic_scenarios(cfg, seed=int(s["seed"]))
    entries = []
    for sc in scenarios:
        text = dumps_scenario(sc)
        atomic_write_text(out / f"{sc.id}.json", text)
        entries.append({"id": sc.id, "file": f"{sc.id}.json",
                        "sha256": hashlib.sha256(text.encode()).hexdigest()})
    manifest = {"command": "gen", "seed": int(s["seed"]), "count": len(entries),
                "counts": cfg.counts, "scenarios": entries}
    atomic_write_text(out / MANIFEST, _json(manifest))
    print(f"wrote {len(entries)} scenarios to {out}")
    return 0


# -- train -----------------------------------------------------------------


def _suite_ade(model: Predictor, scenarios: list[Scenario]) -> float:
    errs = [ade(model.predict_agent(PredictionRequest.from_scenario(sc), sc.adversary_id), sc.future())
            for sc in scenarios]
    return float(np.mean(errs))


def cmd_train(args) -> int:
    s = _settings(args, "train")
    if not s.get("scenarios"):
        raise CliError("train needs --scenarios")
    train = _load_scenarios(s["scenarios"])
    hyper = TrainConfig(hidden=int(s["hidden"]), epochs=int(s["epochs"]), learning_rate=float(s["lr"]),
                        n_neighbors=int(s["neighbors"]))
    out = Path(s.get("out") or _default_out("model.json"))
    report = {"command": "train", "seed": int(s["seed"]), "hyperparameters": asdict(hyper),
              "train_scenarios": len(train)}
    try:
        result = train_tiny_surrogate(train, hyper, seed=int(s["seed"]))
    except TrainingDivergedError as exc:
        report["error"] = str(exc)
        atomic_write_text(out.with_suffix(".report.json"), _json(report))
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    save_predictor(result.model, out)
    report["final_loss"] = result.final_loss if result.losses else None
    report["train_ade"] = _suite_ade(result.model, train)
    if s.get("val"):
        val = _load_scenarios(s["val"])
        report["validation_scenarios"] = len(val)
        report["validation_ade"] = _suite_ade(result.model, val)
    # a thinned loss curve keeps the report small
    stride = max(1, len(result.losses) // 100)
    report["loss_curve"] = {"stride": stride, "values": result.losses[::stride]}
    report["parameters"] = {"file": out.name, "sha256": _sha256(out)}
    atomic_write_text(out.with_suffix(".report.json"), _json(report))
    msg = f"final loss {result.final_loss:.4f}, train ADE {report['train_ade']:.3f} m"
    if "validation_ade" in report:
        msg += f", validation ADE {report['validation_ade']:.3f} m"
    print(msg)
    return 0


# -- attack ----------------------------------------------------------------


def _attack_one(job: tuple) -> dict:
    path, spec, method, search_cfg, pursuit_cfg, out_dir = job
    cache: dict = {}
    entry: dict = {"file": Path(path).name}
    try:
        sc = load_scenario(path)
        entry["id"] = sc.id
        model = _model_for(spec, sc, cache)
        d = Path(out_dir) / sc.id
        if method == "sa":
            res = sa_attack(model, sc, search_cfg, pursuit_cfg, keep_log=True)
            history, search, flags, speed = res.history.points, res.search, res.flags, res.speed
            atomic_write_text(d / "reference.json", _json({
                "scenario_id": sc.id, "has_preceding": res.reference.has_preceding,
                "points": res.reference.points.tolist()}))
            atomic_write_text(d / "trace.jsonl", res.trace.to_jsonl())
        else:
            history, search = search_attack(model, sc, search_cfg, keep_log=True)
            flags, speed = [], None
        adv = {"scenario_id": sc.id, "method": method, "dt": sc.dt, "history": np.asarray(history).tolist(),
               "speed": speed, "flags": flags, "rmse": search.rmse, "clean_rmse": search.clean_rmse,
               "restart": search.restart, "restart_rmses": search.restart_rmses}
        atomic_write_text(d / "adversarial.json", _json(adv))
        atomic_write_text(d / "iterates.jsonl", "".join(json.dumps(r) + "\n" for r in search.log))
        entry.update(status="ok", flags=flags, rmse=search.rmse)
    except Exception as exc:  # recorded per scenario, the run continues
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return entry


def cmd_attack(args) -> int:
    s = _settings(args, "attack")
    if s.get("seed") is None:
        raise CliError("attack runs need an explicit --seed")
    if s["method"] not in ("sa", "search"):
        raise CliError(f"unknown method {s['method']!r}")
    if not s.get("scenarios"):
        raise CliError("attack needs --scenarios")
    spec = str(s["model"])
    if spec not in BUILTIN_MODELS and not Path(spec).is_file():
        raise CliError(f"model {spec!r} is neither a built-in ({', '.join(BUILTIN_MODELS)}) nor a file")
    try:
        search_cfg = SearchConfig(restarts=int(s["restarts"]), iterations=int(s["iters"]),
                                  learning_rate=float(s["lr"]), bound=float(s["bound"]), seed=int(s["seed"]))
        pursuit_cfg = PursuitConfig(alpha=float(s["alpha"]), step_length=float(s["step_length"]))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(s.get("out") or _default_out(f"attack_{s['method']}"))
    files = _scenario_files(s["scenarios"])
    jobs = [(str(p), spec, s["method"], search_cfg, pursuit_cfg, str(out)) for p in files]
    n_jobs = max(1, int(s["jobs"]))
    if n_jobs == 1:
        entries = [_attack_one(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(n_jobs) as pool:
            entries = list(pool.map(_attack_one, jobs))
    failed = [e for e in entries if e["status"] != "ok"]
    manifest = {
        "command": "attack", "method": s["method"], "model": _model_record(spec),
        "search": asdict(search_cfg), "pursuit": asdict(pursuit_cfg),
        "count": len(entries), "failed": len(failed), "scenarios": entries,
    }
    atomic_write_text(out / MANIFEST, _json(manifest))
    flagged = sum(1 for e in entries if e.get("flags"))
    print(f"attacked {len(entries) - len(failed)}/{len(entries)} scenarios ({flagged} flagged) -> {out}")
    for e in failed:
        print(f"  {e.get('id', e['file'])}: {e['error']}", file=sys.stderr)
    return 1 if failed else 0


# -- eval ------------------------------------------------------------------


def _polyline_csv(sc: Scenario, ev: AttackEvaluation, adversarial: np.ndarray) -> str:
    series = {"history": sc.history(), "future": sc.future(), "adversarial": adversarial,
              "pred_normal": ev.pred_normal, "pred_attack": ev.pred_attack}
    lines = ["series,index,x,y"]
    for name, pts in series.items():
        lines.extend(f"{name},{i},{x!r},{y!r}" for i, (x, y) in enumerate(np.asarray(pts).tolist()))
    return "\n".join(lines) + "\n"


def _run_name(attack_dir: Path, taken: set) -> str:
    name = attack_dir.name or "attack"
    k, base = 2, name
    while name in taken:
        name, k = f"{base}_{k}", k + 1
    taken.add(name)
    return name


def cmd_eval(args) -> int:
    from . import plotting  # matplotlib only when evaluating

    s = _settings(args, "eval")
    if not s.get("scenarios") or not s.get("attacks"):
        raise CliError("eval needs --scenarios and at least one --attacks directory")
    attacks = s["attacks"] if isinstance(s["attacks"], list) else [s["attacks"]]
    scenarios = {sc.id: sc for sc in _load_scenarios(s["scenarios"])}
    out = Path(s.get("out") or _default_out("eval"))
    threshold = float(s["miss_threshold"])
    summaries, runs, problems = {}, [], 0
    taken: set = set()
    for attack_dir in map(Path, attacks):
        manifest_path = attack_dir / MANIFEST
        if not manifest_path.exists():
            raise CliError(f"{attack_dir} has no attack manifest")
        manifest = json.loads(manifest_path.read_text())
        spec = s.get("model") or manifest["model"].get("name")
        if spec is None:
            raise CliError(f"{attack_dir} was attacked with a parameter file; pass it with --model")
        name = _run_name(attack_dir, taken)
        run_out = out / name
        cache: dict = {}
        reports, missing = [], []
        for entry in manifest["scenarios"]:
            sid = entry.get("id")
            adv_path = attack_dir / str(sid) / "adversarial.json"
            if entry["status"] != "ok" or sid not in scenarios or not adv_path.exists():
                missing.append({"id": sid, "reason": entry.get("error", "missing artifacts or scenario")})
                continue
            sc = scenarios[sid]
            adversarial = np.array(json.loads(adv_path.read_text())["history"], dtype=float)
            ev = evaluate_attack(_model_for(spec, sc, cache), sc, adversarial, threshold)
            reports.append(ev)
            atomic_write_text(run_out / "reports" / f"{sid}.json", _json(ev.to_dict()))
            atomic_write_text(run_out / "polylines" / f"{sid}.csv", _polyline_csv(sc, ev, adversarial))
            if s["figures"]:
                plotting.plot_scenario(sc, adversarial, ev.pred_normal, ev.pred_attack,
                                       run_out / "figures" / f"{sid}.png")
        problems += len(missing)
        if not reports:
            runs.append({"name": name, "method": manifest.get("method"), "count": 0, "missing": missing})
            continue
        summary = aggregate(reports)
        summaries[name] = summary
        atomic_write_text(run_out / "suite.csv", suite_csv(reports))
        atomic_write_text(run_out / "accel_hist.csv", histogram_csv(summary))
        atomic_write_text(run_out / "summary.json", _json(summary.to_dict()))
        runs.append({"name": name, "method": manifest.get("method"), "count": len(reports), "missing": missing})
        print(f"{name}: ADE {summary.ade_normal:.3f} -> {summary.ade_attack:.3f} m, "
              f"FDE {summary.fde_normal:.3f} -> {summary.fde_attack:.3f} m, "
              f"MR {summary.mr_normal:.0f}% -> {summary.mr_attack:.0f}%, "
              f"ORR {summary.orr_normal:.0f}% -> {summary.orr_attack:.0f}%")
    if summaries:
        atomic_write_text(out / "comparison.csv", _comparison_csv(summaries))
        if s["figures"]:
            plotting.plot_accel_histogram(summaries, out / "accel_hist.png")
            plotting.plot_metric_summary(summaries, out / "metrics.png")
    atomic_write_text(out / MANIFEST, _json({"command": "eval", "miss_threshold": threshold, "runs": runs}))
    if problems:
        print(f"{problems} scenario(s) could not be evaluated; see {out / MANIFEST}", file=sys.stderr)
    return 1 if problems else 0


def _comparison_csv(summaries: dict) -> str:
    cols = ("count", "ade_normal", "ade_attack", "fde_normal", "fde_attack",
            "mr_normal", "mr_attack", "orr_normal", "orr_attack")
    lines = ["run," + ",".join(cols) + "," + ",".join(
        f"accel_{lo:g}_{hi:g}" if math.isfinite(hi) else f"accel_{lo:g}_inf"
        for lo, hi in zip(next(iter(summaries.values())).accel_edges,
                          next(iter(summaries.values())).accel_edges[1:]))]
    for name, sm in summaries.items():
        vals = [repr(getattr(sm, c)) for c in cols] + [str(c) for c in sm.accel_counts]
        lines.append(name + "," + ",".join(vals))
    return "\n".join(lines) + "\n"


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajattack", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with per-command settings sections")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic scenarios")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--families", help=f"comma list from {','.join(FAMILIES)}")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the tiny MLP surrogate")
    t.add_argument("--scenarios")
    t.add_argument("--val", help="held-out scenario directory for validation ADE")
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--neighbors", type=int)
    t.add_argument("--out", help="parameter file; the report goes next to it")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="run SA-Attack or the search baseline")
    a.add_argument("--scenarios")
    a.add_argument("--model", help="cv, poly or a parameter file")
    a.add_argument("--method", choices=("sa", "search"))
    a.add_argument("--bound", type=float)
    a.add_argument("--restarts", type=int)
    a.add_argument("--iters", type=int)
    a.add_argument("--lr", type=float)
    a.add_argument("--seed", type=int)
    a.add_argument("--alpha", type=float)
    a.add_argument("--step-length", dest="step_length", type=float)
    a.add_argument("--jobs", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", help="score attack runs and write reports")
    e.add_argument("--scenarios")
    e.add_argument("--attacks", nargs="+")
    e.add_argument("--model", help="override the model recorded in the attack manifest")
    e.add_argument("--miss-threshold", dest="miss_threshold", type=float)
    e.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
