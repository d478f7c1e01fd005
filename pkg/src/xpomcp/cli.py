"""Command-line entry point: ``xpomcp <command> [options]``.

Exit codes: 0 success, 2 invalid input (files, schemas, templates, usage),
3 solver backend failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baseline, exact
from .anomaly import AnomalyConfig, UnsatRegionError, classify_violations
from .evaluation import STUDIES, StudyError, rerun_manifest, run_study
from .evaluation.studies import bundled_template
from .models import ContractError, load_model_config, make_model
from .planner import PlannerConfig, ParticleDeprivationError, simulate_runs
from .rules import LearnedRule, TemplateError, describe, parse_template
from .synthesis import BackendConfig, BackendError, InfeasibleTemplateError, synthesize
from .trace import TraceError, make_trace, read_trace, write_trace

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3
log = logging.getLogger("xpomcp")

ACTION_PHRASES = {
    "tiger": {0: "listen", 1: "open the left door", 2: "open the right door"},
    "velreg": {0: "go at speed 0", 1: "go at speed 1", 2: "go at speed 2"},
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_default: str = ".") -> None:
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--out", default=out_default, help="output directory (created if missing)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--smt-solver", help="solver executable (default: $XPOMCP_SMT_SOLVER or z3)")
    p.add_argument("--smt-timeout", type=float, default=600.0, help="solver timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xpomcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run POMCP and record a trace")
    p.add_argument("--model", choices=["tiger", "velreg"], default="tiger")
    p.add_argument("--model-config", help="JSON/TOML file overriding model parameters")
    p.add_argument("--W", type=float, dest="reward_range", help="POMCP reward range (default: model's true range)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--particles", type=int, default=2**13)
    p.add_argument("--simulations", type=int, default=2**13)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-label", action="store_true", help="skip exact-policy labels (Tiger)")
    p.add_argument("--name", default="trace.jsonl", help="trace file name inside --out")
    _common(p)

    p = sub.add_parser("synthesize", help="instantiate a rule template on a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--template", required=True, help="template file, or 'tiger' / 'velreg' for the bundled ones")
    p.add_argument("--emit-smt", metavar="PATH", help="also write the SMT-LIB2 script (relative to --out)")
    _backend_args(p)
    _common(p)

    p = sub.add_parser("detect", help="flag unexpected decisions")
    p.add_argument("--trace", required=True)
    p.add_argument("--method", choices=["xpomcp", "iforest"], default="xpomcp")
    p.add_argument("--rule", help="rule.json produced by synthesize (xpomcp method)")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--w", type=int, default=5000, help="belief samples per rule region")
    p.add_argument("--contamination", type=float, default=0.03)
    _common(p)

    p = sub.add_parser("evaluate", help="run a named end-to-end study")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--study")
    which.add_argument("--manifest", help="re-run the study recorded in a MANIFEST.json and compare outputs")
    p.add_argument("--runs", type=int)
    p.add_argument("--traces", type=int)
    p.add_argument("--w-values", type=float, nargs="+")
    p.add_argument("--particles", type=int)
    p.add_argument("--simulations", type=int)
    p.add_argument("--jobs", type=int, default=1)
    _backend_args(p)
    _common(p, out_default="results")

    p = sub.add_parser("exact-policy", help="solve Tiger exactly; optionally label a trace")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--model", choices=["tiger", "velreg"], default="tiger")
    p.add_argument("--gamma", "--discount", type=float, default=0.95, dest="discount")
    p.add_argument("--model-config")
    p.add_argument("--label", metavar="TRACE", help="write a labeled copy of this trace")
    _common(p)
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _inside(out: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else out / p


def _backend(args) -> BackendConfig:
    return BackendConfig(executable=args.smt_solver, timeout=args.smt_timeout)


def _load_template(source: str, belief_names):
    if source in ("tiger", "velreg") and not Path(source).exists():
        text = bundled_template(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise UsageError(f"template file not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        return parse_template(text, belief_names)
    except TemplateError as exc:
        raise TemplateError(f"{source}:{exc}") from None


def _read_trace(path: str):
    if not Path(path).is_file():
        raise UsageError(f"trace file not found: {path}")
    try:
        return read_trace(path)
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from None


def _simulate_chunk(model_id, model_config, pcfg, n, offset):
    model = make_model(model_id, model_config)
    return simulate_runs(model, pcfg, n, run_offset=offset)


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    model = load_model_config(args.model_config) if args.model_config else make_model(args.model)
    model_config = model.to_config()
    pcfg = PlannerConfig(particle_count=args.particles, simulations=args.simulations,
                         reward_range=args.reward_range, seed=args.seed)
    if args.jobs > 1 and args.runs > 1:
        bounds = np.linspace(0, args.runs, min(args.jobs, args.runs) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_simulate_chunk, model.model_id, model_config, pcfg, int(b - a), int(a))
                       for a, b in zip(bounds[:-1], bounds[1:])]
            steps = [s for f in futures for s in f.result()]
    else:
        steps = simulate_runs(model, pcfg, args.runs)
    trace = make_trace(model, pcfg, steps, runs=args.runs, created_at="")
    if model.model_id == "tiger" and not args.no_label:
        policy = exact.solve(model.tabular(), model.max_steps, model.discount)
        trace = exact.label_trace(trace, policy, model)
    path = out / args.name
    write_trace(trace, path)
    msg = f"wrote {len(trace.steps)} steps from {args.runs} runs to {path}"
    if trace.steps[0].optimal_action is not None:
        msg += f" (error rate {exact.error_rate(trace):.4f})"
    print(msg)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    out = _out_dir(args)
    trace = _read_trace(args.trace)
    template = _load_template(args.template, trace.header.belief_names)
    emit = _inside(out, args.emit_smt) if args.emit_smt else None
    result = synthesize(template, trace.steps, _backend(args), emit_smt=emit)
    phrases = ACTION_PHRASES.get(trace.header.model_id, {})
    rule = result.learned_rule
    payload = rule.to_json()
    payload.update({
        "cost": result.cost,
        "unsatisfied_steps": len(result.unsatisfied),
        "total_steps": result.total_steps,
        "model_id": trace.header.model_id,
        "solver": {k: v for k, v in result.solver_stats.items() if k != "stderr"},
    })
    (out / "rule.json").write_text(json.dumps(payload, indent=1))
    (out / "rule.txt").write_text(result.summary() + "\n" + describe(rule, phrases) + "\n", encoding="utf-8")
    with (out / "violations.jsonl").open("w", encoding="utf-8") as fh:
        for i in result.unsatisfied:
            s = trace.steps[i]
            broken = [r.name for k, r in enumerate(template.rules) if result.broken_pairs[k, i]]
            fh.write(json.dumps({"index": i, "run": s.run_id, "step": s.step_index, "action": s.action,
                                 "belief": s.belief, "broken_rules": broken}) + "\n")
    print(result.summary())
    print(describe(rule, phrases))
    print(f"cost {result.cost} (violated rule/step pairs); outputs in {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    out = _out_dir(args)
    trace = _read_trace(args.trace)
    if args.method == "iforest":
        n_actions = make_model(trace.header.model_id).n_actions
        rows = baseline.feature_rows(trace.steps, n_actions, trace.header.belief_names or None)
        forest = baseline.fit(rows, seed=args.seed)
        scores = forest.score(rows)
        flags = baseline.detect(forest, rows, args.contamination)
        doc = {"method": "iforest", "contamination": args.contamination, "seed": args.seed,
               "anomalies": [{"index": int(i), "run": trace.steps[i].run_id, "step": trace.steps[i].step_index,
                              "score": float(scores[i])} for i in np.flatnonzero(flags)]}
        (out / "anomalies.json").write_text(json.dumps(doc, indent=1))
        lines = [f"flagged {int(flags.sum())} of {len(rows)} steps (contamination {args.contamination})"]
        lines += [f"ANOMALY: run {Path(args.trace).stem}/Run_{a['run']} step {a['step']}: score = {a['score']:.4f}"
                  for a in doc["anomalies"]]
        (out / "anomalies.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(lines[0])
        return EXIT_OK
    if not args.rule:
        raise UsageError("--rule is required for --method xpomcp")
    rule_path = Path(args.rule)
    if not rule_path.is_file():
        raise UsageError(f"rule file not found: {rule_path}")
    try:
        rule = LearnedRule.from_json(json.loads(rule_path.read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{rule_path}: not a learned rule ({exc})") from None
    try:
        rule.template.check_beliefs(trace.header.belief_names or trace.steps[0].belief)
    except TemplateError as exc:
        raise UsageError(f"{rule_path} does not match {args.trace}: {exc}") from None
    violating = [i for i, s in enumerate(trace.steps) if not rule.satisfied(s.belief, s.action)]
    report = classify_violations(rule, [trace.steps[i] for i in violating],
                                 AnomalyConfig(tau=args.tau, w=args.w, seed=args.seed),
                                 indices=violating, total_steps=len(trace.steps))
    report.action_phrases = ACTION_PHRASES.get(trace.header.model_id, {})
    report.write_json(out / "anomalies.json")
    text = report.text(Path(args.trace).stem)
    (out / "anomalies.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    print(f"{len(report.unexpected)} unexpected of {len(report.violations)} violations (tau={args.tau})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.manifest:
        if not Path(args.manifest).is_file():
            raise UsageError(f"manifest not found: {args.manifest}")
        _, diff = rerun_manifest(args.manifest, args.out, jobs=args.jobs, backend=_backend(args), log=print)
        for name, (old, new) in diff.items():
            print(f"DIFFERS: {name} recorded {old[:12] or '-'} now {new[:12] or '-'}")
        print("outputs identical to manifest" if not diff else f"{len(diff)} output(s) differ")
        return EXIT_OK if not diff else EXIT_INPUT
    if args.study not in STUDIES:
        raise UsageError(f"unknown study {args.study!r}; known studies: {', '.join(sorted(STUDIES))}")
    res = run_study(args.study, args.out, jobs=args.jobs, backend=_backend(args), log=print,
                    runs=args.runs, traces=args.traces, seed=args.seed,
                    w_values=tuple(args.w_values) if args.w_values else None,
                    particle_count=args.particles, simulations=args.simulations)
    for name in sorted(p.name for p in Path(res.out).glob("*.csv")):
        print(f"wrote {Path(res.out) / name}")
    return EXIT_OK


def cmd_exact_policy(args) -> int:
    out = _out_dir(args)
    model = load_model_config(args.model_config) if args.model_config else make_model(args.model)
    if model.model_id != "tiger":
        raise exact.ModelMismatchError(f"exact solution is only tractable for tiger, not {model.model_id!r}")
    policy = exact.solve(model.tabular(), args.horizon, args.discount)
    policy.save(out / "policy.json")
    print(f"opening threshold {exact.opening_threshold(policy):.10f} "
          f"({len(policy.alpha_sets[-1])} alpha-vectors at horizon {args.horizon})")
    if args.label:
        trace = _read_trace(args.label)
        labeled = exact.label_trace(trace, policy, model)
        path = out / (Path(args.label).stem + ".labeled.jsonl")
        write_trace(labeled, path)
        print(f"labeled {len(labeled.steps)} steps, error rate {exact.error_rate(labeled):.4f} -> {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "synthesize": cmd_synthesize,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "exact-policy": cmd_exact_policy,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (BackendError,) as exc:
        print(f"error: solver backend failed: {exc}", file=sys.stderr)
        if exc.stderr:
            print(exc.stderr.strip()[:2000], file=sys.stderr)
        return EXIT_BACKEND
    except (UsageError, TraceError, TemplateError, InfeasibleTemplateError, StudyError,
            ContractError, exact.ModelMismatchError, UnsatRegionError, FileNotFoundError,
            ParticleDeprivationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
