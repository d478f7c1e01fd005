"""End-to-end experiment pipelines with resumable per-trace checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import shutil
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from importlib.resources import files
from pathlib import Path

import numpy as np

from .. import baseline, exact
from ..anomaly import AnomalyConfig, classify_violations
from ..models import TigerModel, VelocityRegulationModel
from ..planner import PlannerConfig, simulate_runs
from ..rules import describe, parse_template
from ..synthesis import BackendConfig, synthesize
from ..trace import make_trace, read_trace, write_trace
from .metrics import (
    CONTAMINATION_GRID,
    TAU_GRID,
    SelectionError,
    SweepResult,
    select_threshold,
    sweep,
    sweep_predictions,
)

CHECKPOINT = "checkpoint.json"
MANIFEST = "MANIFEST.json"
MISSING = "NA"


class StudyError(ValueError):
    pass


def bundled_template(name: str) -> str:
    return files("xpomcp").joinpath(f"data/{name}.rule").read_text(encoding="utf-8")


@dataclass(frozen=True)
class StudyConfig:
    study: str = "tiger-w-sweep"
    runs: int = 200
    traces: int = 10
    w_values: tuple[float, ...] = (110.0, 85.0, 65.0, 40.0)
    train_traces: int = 2
    particle_count: int = 2**13
    simulations: int = 2**13
    seed: int = 0
    anomaly_samples: int = 5000
    tau: float = 0.1
    if_trees: int = 100
    if_subsample: int = 256

    def to_json(self) -> dict:
        d = asdict(self)
        d["w_values"] = list(self.w_values)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "StudyConfig":
        data = dict(data)
        data["w_values"] = tuple(float(w) for w in data["w_values"])
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


STUDIES = {
    "tiger-w-sweep": StudyConfig(),
    "velreg-w90": StudyConfig(study="velreg-w90", runs=100, traces=1, w_values=(90.0,),
                              train_traces=0, tau=0.1),
}


def unit_seed(seed: int, w: float, index: int, stream: int = 0) -> int:
    ss = np.random.SeedSequence([seed, int(round(w * 1000)), index, stream])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _sweep_json(s: SweepResult) -> dict:
    return {"tp": s.tp.tolist(), "fp": s.fp.tolist(), "tn": s.tn.tolist(), "fn": s.fn.tolist(),
            "auc": s.auc, "ap": s.ap}


def _sweep_from(d: dict, thresholds) -> SweepResult:
    arr = lambda k: np.asarray(d[k], dtype=int)  # noqa: E731
    return SweepResult(np.asarray(thresholds, float), arr("tp"), arr("fp"), arr("tn"), arr("fn"),
                       d["auc"], d["ap"])


def _tiger_unit(cfg: StudyConfig, w: float, index: int, out: str, backend: BackendConfig | None) -> dict:
    model = TigerModel()
    policy = _policy_cache(model)
    pcfg = PlannerConfig(particle_count=cfg.particle_count, simulations=cfg.simulations,
                         reward_range=w, seed=unit_seed(cfg.seed, w, index))
    t0 = time.perf_counter()
    trace = make_trace(model, pcfg, simulate_runs(model, pcfg, cfg.runs), runs=cfg.runs, created_at="")
    trace = exact.label_trace(trace, policy, model)
    t_sim = time.perf_counter() - t0
    write_trace(trace, Path(out) / "traces" / f"tiger_W{w:g}_{index:02d}.jsonl")
    truth = np.array([s.is_error for s in trace.steps], dtype=bool)

    t0 = time.perf_counter()
    template = parse_template(bundled_template("tiger"), trace.header.belief_names)
    result = synthesize(template, trace.steps, backend)
    report = classify_violations(result.learned_rule, result.unsatisfied_steps,
                                 AnomalyConfig(tau=cfg.tau, w=cfg.anomaly_samples, seed=cfg.seed),
                                 indices=result.unsatisfied, total_steps=len(trace.steps),
                                 skip_empty_regions=True)
    t_x = time.perf_counter() - t0
    h = np.zeros(len(trace.steps))
    for v in report.violations:
        h[v.index] = v.h
    # no belief makes these actions rule-consistent: rank them at the metric's maximum
    for i, _ in report.unscored:
        h[i] = 1.0
    x_sweep = sweep(h, truth, TAU_GRID)

    t0 = time.perf_counter()
    rows = baseline.feature_rows(trace.steps, model.n_actions, trace.header.belief_names)
    forest = baseline.fit(rows, cfg.if_trees, cfg.if_subsample, seed=unit_seed(cfg.seed, w, index, 1))
    scores = forest.score(rows)
    order = np.argsort(-scores, kind="stable")
    preds = np.zeros((len(CONTAMINATION_GRID), len(rows)), dtype=bool)
    for k, c in enumerate(CONTAMINATION_GRID):
        preds[k, order[: max(1, int(np.ceil(c * len(rows) - 1e-12)))]] = True
    t_if = time.perf_counter() - t0
    i_sweep = sweep_predictions(preds, truth, CONTAMINATION_GRID)

    return {
        "key": f"{w:g}/{index}",
        "w": w,
        "index": index,
        "steps": len(trace.steps),
        "error_rate": float(truth.mean()),
        "assignment": result.learned_rule.assignment,
        "cost": result.cost,
        "unsatisfied": len(result.unsatisfied),
        "violated": result.unsatisfied,
        "unscored": len(report.unscored),
        "h": h.tolist(),
        "xpomcp": _sweep_json(x_sweep),
        "iforest": _sweep_json(i_sweep),
        "timing": {"simulate": t_sim, "xpomcp": t_x, "iforest": t_if},
    }


_POLICY: dict = {}


def _policy_cache(model: TigerModel):
    key = model.params_hash()
    if key not in _POLICY:
        _POLICY[key] = exact.solve(model.tabular(), model.max_steps, model.discount)
    return _POLICY[key]


def _fmt(x) -> str:
    return MISSING if x is None else f"{x:.4f}"


def _mean_std(values) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _load_checkpoint(out: Path, cfg: StudyConfig) -> dict:
    path = out / CHECKPOINT
    if not path.exists():
        return {}
    data = json.loads(path.read_text())
    if data.get("config_digest") != cfg.digest():
        return {}
    return data.get("units", {})


def _save_checkpoint(out: Path, cfg: StudyConfig, units: dict) -> None:
    tmp = out / (CHECKPOINT + ".tmp")
    tmp.write_text(json.dumps({"config_digest": cfg.digest(), "units": units}))
    tmp.replace(out / CHECKPOINT)


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    z3 = shutil.which("z3")
    if z3:
        try:
            out["z3"] = subprocess.run([z3, "--version"], capture_output=True, text=True, timeout=30).stdout.strip()
        except (OSError, subprocess.SubprocessError):
            out["z3"] = None
    return out


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class StudyResult:
    config: StudyConfig
    out: Path
    units: list[dict] = field(default_factory=list)
    tables: dict = field(default_factory=dict)


def run_tiger_study(cfg: StudyConfig, out, jobs: int = 1, backend: BackendConfig | None = None,
                    log=print) -> StudyResult:
    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    done = _load_checkpoint(out, cfg)
    todo = [(w, i) for w in cfg.w_values for i in range(cfg.traces) if f"{w:g}/{i}" not in done]
    if done:
        log(f"resuming: {len(done)} trace(s) already complete")

    def record(unit):
        done[unit["key"]] = unit
        _save_checkpoint(out, cfg, done)
        log(f"W={unit['w']:g} trace {unit['index']}: {unit['steps']} steps, "
            f"error rate {unit['error_rate']:.4f}, fail to satisfy {unit['unsatisfied']} steps")

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_tiger_unit, cfg, w, i, str(out), backend) for w, i in todo]
            for fut in futures:
                record(fut.result())
    else:
        for w, i in todo:
            record(_tiger_unit(cfg, w, i, str(out), backend))

    units = [done[f"{w:g}/{i}"] for w in cfg.w_values for i in range(cfg.traces)]
    result = StudyResult(cfg, out, units)
    _write_tiger_tables(result)
    _write_manifest(result)
    return result


def _write_tiger_tables(res: StudyResult) -> None:
    cfg, out = res.config, res.out
    t1, t2, deltas, timing = [], [], [], {}
    for w in cfg.w_values:
        units = [u for u in res.units if u["w"] == w]
        err = _mean_std([u["error_rate"] for u in units])
        cols = [err]
        for method in ("xpomcp", "iforest"):
            cols.append(_mean_std([u[method]["auc"] for u in units]))
            cols.append(_mean_std([u[method]["ap"] for u in units]))
        t1.append([f"{w:g}"] + [f"{_fmt(m)} ± {_fmt(s)}" if m is not None else MISSING for m, s in cols])
        res.tables.setdefault("table1", {})[w] = {
            "errors": err, "xpomcp_auc": cols[1], "xpomcp_ap": cols[2],
            "iforest_auc": cols[3], "iforest_ap": cols[4],
        }
        for u in units:
            if u["xpomcp"]["auc"] is not None and u["iforest"]["auc"] is not None:
                deltas.append([f"{w:g}", u["index"],
                               f"{u['xpomcp']['auc'] - u['iforest']['auc']:.6f}",
                               f"{u['xpomcp']['ap'] - u['iforest']['ap']:.6f}"])
        train, test = units[: cfg.train_traces], units[cfg.train_traces:]
        for method, grid in (("xpomcp", TAU_GRID), ("iforest", CONTAMINATION_GRID)):
            try:
                chosen, _ = select_threshold([_sweep_from(u[method], grid) for u in train])
            except SelectionError:
                t2.append([f"{w:g}", method, MISSING, MISSING, MISSING])
                res.tables.setdefault("table2", {})[(w, method)] = None
                continue
            k = int(np.flatnonzero(grid == chosen)[0])
            sweeps = [_sweep_from(u[method], grid) for u in test]
            f1 = _mean_std([float(s.f1[k]) for s in sweeps])
            acc = _mean_std([float(s.accuracy[k]) for s in sweeps])
            t2.append([f"{w:g}", method, f"{chosen:.4f}", f"{_fmt(f1[0])} ± {_fmt(f1[1])}",
                       f"{_fmt(acc[0])} ± {_fmt(acc[1])}"])
            res.tables.setdefault("table2", {})[(w, method)] = {"threshold": chosen, "f1": f1, "accuracy": acc}
        timing[f"{w:g}"] = {
            stage: _mean_std([u["timing"][stage] for u in units]) for stage in ("simulate", "xpomcp", "iforest")
        }

    _write_csv(out / "table1.csv",
               ["W", "errors", "xpomcp_auc", "xpomcp_ap", "iforest_auc", "iforest_ap"], t1)
    _write_csv(out / "table2.csv", ["W", "method", "threshold", "f1", "accuracy"], t2)
    _write_csv(out / "fig3_deltas.csv", ["W", "trace", "delta_auc", "delta_ap"], deltas)
    rows = []
    for u in res.units:
        trace = read_trace(out / "traces" / f"tiger_W{u['w']:g}_{u['index']:02d}.jsonl")
        violated = set(u["violated"])
        for k, (s, h) in enumerate(zip(trace.steps, u["h"])):
            rows.append([f"{u['w']:g}", u["index"], s.run_id, s.step_index,
                         *(repr(s.belief[n]) for n in trace.header.belief_names), s.action,
                         int(k in violated), repr(h), int(bool(s.is_error))])
    names = TigerModel().belief_names
    _write_csv(out / "tsne_export.csv",
               ["W", "trace", "run", "step", *names, "action", "violation", "h", "error"], rows)
    (out / "timings.json").write_text(json.dumps(timing, indent=1))


def _write_manifest(res: StudyResult) -> None:
    cfg, out = res.config, res.out
    csvs = sorted(p.name for p in out.glob("*.csv"))
    manifest = {
        "study": cfg.study,
        "config": cfg.to_json(),
        "config_digest": cfg.digest(),
        "unit_seeds": {u["key"]: unit_seed(cfg.seed, u["w"], u["index"]) for u in res.units},
        "model_params_hash": (TigerModel() if cfg.study.startswith("tiger") else VelocityRegulationModel()).params_hash(),
        "versions": _versions(),
        "outputs": {name: _sha(out / name) for name in csvs},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1))


def run_velreg_study(cfg: StudyConfig, out, jobs: int = 1, backend: BackendConfig | None = None,
                     log=print) -> StudyResult:
    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    model = VelocityRegulationModel()
    w = cfg.w_values[0]
    trace_path = out / "traces" / f"velreg_W{w:g}_00.jsonl"
    done = _load_checkpoint(out, cfg)
    if "trace" in done and trace_path.exists():
        trace = read_trace(trace_path)
        log("resuming: velocity trace already simulated")
    else:
        pcfg = PlannerConfig(particle_count=cfg.particle_count, simulations=cfg.simulations,
                             reward_range=w, seed=unit_seed(cfg.seed, w, 0))
        trace = make_trace(model, pcfg, simulate_runs(model, pcfg, cfg.runs), runs=cfg.runs, created_at="")
        write_trace(trace, trace_path)
        done["trace"] = {"steps": len(trace.steps)}
        _save_checkpoint(out, cfg, done)
    template = parse_template(bundled_template("velreg"), trace.header.belief_names)
    t0 = time.perf_counter()
    result = synthesize(template, trace.steps, backend)
    report = classify_violations(result.learned_rule, result.unsatisfied_steps,
                                 AnomalyConfig(tau=cfg.tau, w=cfg.anomaly_samples, seed=cfg.seed),
                                 indices=result.unsatisfied, total_steps=len(trace.steps),
                                 skip_empty_regions=True)
    elapsed = time.perf_counter() - t0
    for _, reason in report.unscored[:1]:
        log(f"warning: {len(report.unscored)} violation(s) left unscored; {reason}")
    report.action_phrases = {2: "go at speed 2"}
    log(result.summary())
    rows = [[k + 1, v.run_id, v.step_index, v.action,
             *(f"{v.belief[n]:.3f}" for n in trace.header.belief_names),
             f"{v.h:.4f}", "yes" if v.unexpected else "no"] for k, v in enumerate(report.violations)]
    for i, _ in report.unscored:
        s = trace.steps[i]
        rows.append([len(rows) + 1, s.run_id, s.step_index, s.action,
                     *(f"{s.belief[n]:.3f}" for n in trace.header.belief_names), "", "unscored"])
    _write_csv(out / "velreg_violations.csv",
               ["#", "run", "step", "action", *trace.header.belief_names, "h", "unexpected"], rows)
    _write_csv(out / "velreg_rule.csv", ["variable", "value"],
               [[v, repr(x)] for v, x in result.learned_rule.assignment.items()])
    (out / "velreg_report.txt").write_text(report.text(f"velreg_W{w:g}"), encoding="utf-8")
    (out / "timings.json").write_text(json.dumps({"xpomcp": elapsed}, indent=1))
    summary = {
        "steps": len(trace.steps),
        "violations": len(result.unsatisfied),
        "scored": len(report.violations),
        "unexpected": len(report.unexpected),
        "unscored": len(report.unscored),
        "assignment": result.learned_rule.assignment,
        "rule": describe(result.learned_rule, report.action_phrases),
    }
    res = StudyResult(cfg, out, [{"key": f"{w:g}/0", "w": w, "index": 0, **summary}],
                      {"velreg": summary, "report": report, "synthesis": result})
    _write_manifest(res)
    return res


def run_study(name: str, out, jobs: int = 1, backend: BackendConfig | None = None, log=print,
              **overrides) -> StudyResult:
    if name not in STUDIES:
        raise StudyError(f"unknown study {name!r}; known studies: {', '.join(sorted(STUDIES))}")
    cfg = replace(STUDIES[name], **{k: v for k, v in overrides.items() if v is not None})
    if cfg.runs < 1 or cfg.traces < 1:
        raise StudyError("a study needs at least one run and one trace")
    runner = run_tiger_study if cfg.study.startswith("tiger") else run_velreg_study
    return runner(cfg, out, jobs=jobs, backend=backend, log=log)


def rerun_manifest(manifest_path, out, jobs: int = 1, backend: BackendConfig | None = None,
                   log=print) -> tuple[StudyResult, dict[str, tuple[str, str]]]:
    """Re-run the study recorded in a manifest; return CSVs whose hashes differ."""
    manifest = json.loads(Path(manifest_path).read_text())
    try:
        cfg = StudyConfig.from_json(manifest["config"])
    except (KeyError, TypeError) as exc:
        raise StudyError(f"{manifest_path}: not a study manifest ({exc})") from None
    if Path(out).resolve() == Path(manifest_path).resolve().parent:
        raise StudyError("rerun into a fresh --out directory so the recorded outputs are not overwritten")
    runner = run_tiger_study if cfg.study.startswith("tiger") else run_velreg_study
    res = runner(cfg, out, jobs=jobs, backend=backend, log=log)
    fresh = json.loads((Path(out) / MANIFEST).read_text())["outputs"]
    recorded = manifest.get("outputs", {})
    diff = {k: (recorded.get(k, ""), fresh.get(k, "")) for k in sorted(set(recorded) | set(fresh))
            if recorded.get(k) != fresh.get(k)}
    return res, diff
