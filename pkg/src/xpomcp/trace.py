"""JSON-lines trace files: one header line, then one line per decision.

Header keys, in order::

    format_version, model_id, model_params_hash, W, particle_count,
    simulations, seed, runs, belief_names, created_at

Step keys, in order::

    run, step, action, belief, optimal_action, particle_histogram

``belief`` maps probability-variable names to values; ``optimal_action`` and
``particle_histogram`` are ``null`` unless filled in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

FORMAT_VERSION = 1
KNOWN_MODELS = ("tiger", "velreg")
HEADER_KEYS = (
    "format_version", "model_id", "model_params_hash", "W", "particle_count",
    "simulations", "seed", "runs", "belief_names", "created_at",
)
STEP_KEYS = ("run", "step", "action", "belief", "optimal_action", "particle_histogram")
ACTION_COUNTS = {"tiger": 3, "velreg": 3}
BELIEF_TOLERANCE = 1e-6


class TraceError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceParseError(TraceError):
    pass


class TraceValidationError(TraceError):
    pass


@dataclass(frozen=True)
class TraceStep:
    run_id: int
    step_index: int
    action: int
    belief: dict[str, float]
    optimal_action: int | None = None
    particle_histogram: dict[int, int] | None = None

    @property
    def is_error(self) -> bool | None:
        if self.optimal_action is None:
            return None
        return self.action != self.optimal_action

    def to_json(self) -> dict:
        hist = None
        if self.particle_histogram is not None:
            hist = {str(k): int(v) for k, v in sorted(self.particle_histogram.items())}
        return {
            "run": self.run_id,
            "step": self.step_index,
            "action": self.action,
            "belief": dict(self.belief),
            "optimal_action": self.optimal_action,
            "particle_histogram": hist,
        }


@dataclass(frozen=True)
class TraceHeader:
    model_id: str
    model_params_hash: str = ""
    W: float | None = None
    particle_count: int | None = None
    simulations: int | None = None
    seed: int | None = None
    runs: int | None = None
    belief_names: tuple[str, ...] = ()
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    format_version: int = FORMAT_VERSION

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "model_id": self.model_id,
            "model_params_hash": self.model_params_hash,
            "W": self.W,
            "particle_count": self.particle_count,
            "simulations": self.simulations,
            "seed": self.seed,
            "runs": self.runs,
            "belief_names": list(self.belief_names),
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    steps: list[TraceStep]

    def __post_init__(self):
        validate(self)

    def runs(self) -> dict[int, list[TraceStep]]:
        grouped: dict[int, list[TraceStep]] = {}
        for s in self.steps:
            grouped.setdefault(s.run_id, []).append(s)
        return grouped

    def with_steps(self, steps: Iterable[TraceStep]) -> "Trace":
        return replace(self, steps=list(steps))


def _check_belief(belief: dict, line: int | None) -> None:
    if not belief:
        raise TraceValidationError("empty belief", line)
    for name, p in belief.items():
        if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p):
            raise TraceValidationError(f"belief {name!r} is not a finite number", line)
        if p < -BELIEF_TOLERANCE or p > 1 + BELIEF_TOLERANCE:
            raise TraceValidationError(f"belief {name!r}={p} outside [0, 1]", line)
    total = math.fsum(belief.values())
    if abs(total - 1.0) > BELIEF_TOLERANCE:
        raise TraceValidationError(f"belief sums to {total:.9g}, expected 1", line)


def validate(trace: Trace, first_line: int | None = None) -> None:
    header = trace.header
    if header.model_id not in KNOWN_MODELS:
        raise TraceValidationError(f"unknown model id {header.model_id!r}", 1 if first_line else None)
    if not trace.steps:
        raise TraceValidationError("trace has no steps")
    n_actions = ACTION_COUNTS[header.model_id]
    last: dict[int, int] = {}
    for i, step in enumerate(trace.steps):
        line = first_line + i if first_line is not None else None
        if not 0 <= step.action < n_actions:
            raise TraceValidationError(f"action {step.action} out of range", line)
        if step.run_id in last and step.step_index <= last[step.run_id]:
            raise TraceValidationError(
                f"step index {step.step_index} not increasing in run {step.run_id}", line
            )
        last[step.run_id] = step.step_index
        _check_belief(step.belief, line)
        if header.belief_names and tuple(step.belief) != tuple(header.belief_names):
            raise TraceValidationError(
                f"belief keys {list(step.belief)} differ from header {list(header.belief_names)}", line
            )


def write_trace(trace: Trace, path: str | Path) -> None:
    validate(trace)
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(trace.header.to_json()) + "\n")
        for step in trace.steps:
            fh.write(json.dumps(step.to_json()) + "\n")


def _expect_keys(obj: dict, keys: tuple[str, ...], line: int, optional: tuple[str, ...] = ()) -> None:
    unknown = [k for k in obj if k not in keys]
    if unknown:
        raise TraceValidationError(f"unknown keys {unknown}", line)
    missing = [k for k in keys if k not in obj and k not in optional]
    if missing:
        raise TraceValidationError(f"missing keys {missing}", line)


def _int(value, name: str, line: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise TraceValidationError(f"{name} must be an integer", line)
    return value


def read_trace(path: str | Path) -> Trace:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceParseError("empty file", 1)
    records = []
    for lineno, text in enumerate(lines, start=1):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"malformed JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise TraceParseError("expected a JSON object", lineno)
        records.append(obj)

    head = records[0]
    _expect_keys(head, HEADER_KEYS, 1, optional=HEADER_KEYS[2:])
    if head["format_version"] != FORMAT_VERSION:
        raise TraceValidationError(f"unsupported format_version {head['format_version']}", 1)
    header = TraceHeader(
        model_id=head["model_id"],
        model_params_hash=head.get("model_params_hash", ""),
        W=head.get("W"),
        particle_count=head.get("particle_count"),
        simulations=head.get("simulations"),
        seed=head.get("seed"),
        runs=head.get("runs"),
        belief_names=tuple(head.get("belief_names") or ()),
        created_at=head.get("created_at", ""),
    )
    steps = []
    for lineno, obj in enumerate(records[1:], start=2):
        _expect_keys(obj, STEP_KEYS, lineno, optional=("optimal_action", "particle_histogram"))
        belief = obj["belief"]
        if not isinstance(belief, dict):
            raise TraceValidationError("belief must be an object", lineno)
        _check_belief(belief, lineno)
        hist = obj.get("particle_histogram")
        opt = obj.get("optimal_action")
        steps.append(
            TraceStep(
                run_id=_int(obj["run"], "run", lineno),
                step_index=_int(obj["step"], "step", lineno),
                action=_int(obj["action"], "action", lineno),
                belief={str(k): float(v) for k, v in belief.items()},
                optimal_action=None if opt is None else _int(opt, "optimal_action", lineno),
                particle_histogram=None if hist is None else {int(k): int(v) for k, v in hist.items()},
            )
        )
    trace = Trace.__new__(Trace)
    object.__setattr__(trace, "header", header)
    object.__setattr__(trace, "steps", steps)
    validate(trace, first_line=2)
    return trace


def make_trace(model, config, steps: list[TraceStep], runs: int | None = None, created_at: str | None = None) -> Trace:
    """Wrap planner output with a header describing how it was produced."""
    header = TraceHeader(
        model_id=model.model_id,
        model_params_hash=model.params_hash(),
        W=config.exploration(model),
        particle_count=config.particle_count,
        simulations=config.simulations,
        seed=config.seed,
        runs=runs,
        belief_names=tuple(model.belief_names),
        **({"created_at": created_at} if created_at is not None else {}),
    )
    return Trace(header, list(steps))
