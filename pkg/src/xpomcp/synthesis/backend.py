"""Run an SMT-LIB2 script through an external solver process and parse its answer."""
from __future__ import annotations

import os
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from fractions import Fraction

ENV_SOLVER = "XPOMCP_SMT_SOLVER"
DEFAULT_TIMEOUT = 600.0


class BackendError(RuntimeError):
    def __init__(self, message: str, stdout: str = "", stderr: str = ""):
        self.stdout, self.stderr = stdout, stderr
        super().__init__(message)


class BackendTimeoutError(BackendError):
    pass


class InfeasibleTemplateError(ValueError):
    """The hard constraints of the template admit no assignment."""


@dataclass(frozen=True)
class BackendConfig:
    executable: str | None = None
    args: tuple[str, ...] = ("-smt2", "-in")
    timeout: float = DEFAULT_TIMEOUT

    def resolve(self) -> str:
        exe = self.executable or os.environ.get(ENV_SOLVER) or "z3"
        found = shutil.which(exe)
        if found is None:
            raise BackendError(
                f"SMT solver {exe!r} not found; install z3 or set {ENV_SOLVER} / --smt-solver"
            )
        return found


@dataclass
class BackendResult:
    model: dict[str, Fraction]
    objectives: dict[str, str]
    backend: str
    wall_time: float
    stdout: str = ""
    stderr: str = field(default="", repr=False)

    def decimal_model(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.model.items()}


_TOKEN = re.compile(r"\s*(?:(\()|(\))|(\"(?:[^\"]|\"\")*\")|([^\s()\"]+))")


def parse_sexprs(text: str) -> list:
    """Parse a sequence of s-expressions into nested lists of atom strings."""
    stack: list[list] = [[]]
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise BackendError(f"unparseable solver output near {text[pos:pos + 20]!r}", text)
        pos = m.end()
        if m.group(1):
            stack.append([])
        elif m.group(2):
            if len(stack) == 1:
                raise BackendError("unbalanced ')' in solver output", text)
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(m.group(3) or m.group(4))
    if len(stack) != 1:
        raise BackendError("unterminated s-expression in solver output", text)
    return stack[0]


def parse_rational(expr) -> Fraction:
    if isinstance(expr, str):
        try:
            return Fraction(expr)
        except ValueError:
            raise BackendError(f"bad token {expr!r} in solver model") from None
    if not expr:
        raise BackendError("bad token '()' in solver model")
    head, *rest = expr
    if head == "-" and len(rest) == 1:
        return -parse_rational(rest[0])
    if head == "-" and len(rest) == 2:
        return parse_rational(rest[0]) - parse_rational(rest[1])
    if head == "/" and len(rest) == 2:
        return parse_rational(rest[0]) / parse_rational(rest[1])
    if head == "+" and rest:
        return sum((parse_rational(r) for r in rest), Fraction(0))
    if head == "*" and rest:
        out = Fraction(1)
        for r in rest:
            out *= parse_rational(r)
        return out
    raise BackendError(f"bad token {head!r} in solver model")


def _first_bad(items) -> str:
    first = items[0] if items else "(empty)"
    return first if isinstance(first, str) else "(" + " ".join(map(str, first))[:60]


def parse_output(stdout: str, stderr: str = "", backend: str = "", wall_time: float = 0.0) -> BackendResult:
    items = parse_sexprs(stdout)
    if not items:
        raise BackendError("solver produced no output", stdout, stderr)
    status = items[0]
    if status == "unsat":
        raise InfeasibleTemplateError("hard constraints are unsatisfiable")
    if status != "sat":
        if isinstance(status, list) and status and status[0] == "error":
            raise BackendError(f"solver error: {' '.join(map(str, status[1:]))}", stdout, stderr)
        raise BackendError(f"unexpected solver answer; first bad token: {_first_bad(items)!r}", stdout, stderr)
    model: dict[str, Fraction] = {}
    objectives: dict[str, str] = {}
    for item in items[1:]:
        if not isinstance(item, list) or not item:
            raise BackendError(f"unexpected solver output; first bad token: {item!r}", stdout, stderr)
        head = item[0]
        if head == "error":
            raise BackendError(f"solver error: {' '.join(map(str, item[1:]))}", stdout, stderr)
        if head == "objectives":
            for obj in item[1:]:
                if isinstance(obj, list) and len(obj) == 2:
                    objectives[_render(obj[0])] = _render(obj[1])
            continue
        defs = item[1:] if head == "model" else item
        for d in defs:
            if not (isinstance(d, list) and len(d) == 5 and d[0] == "define-fun"):
                raise BackendError(f"unexpected model entry; first bad token: {_first_bad(d if isinstance(d, list) else [d])!r}",
                                   stdout, stderr)
            model[d[1]] = parse_rational(d[4])
    return BackendResult(model, objectives, backend, wall_time, stdout, stderr)


def _render(expr) -> str:
    return expr if isinstance(expr, str) else "(" + " ".join(_render(e) for e in expr) + ")"


def run_backend(script: str, config: BackendConfig | None = None) -> BackendResult:
    config = config or BackendConfig()
    exe = config.resolve()
    start = time.perf_counter()
    try:
        proc = subprocess.run(
            [exe, *config.args], input=script, capture_output=True, text=True, timeout=config.timeout
        )
    except subprocess.TimeoutExpired as exc:
        out = exc.stdout.decode() if isinstance(exc.stdout, bytes) else (exc.stdout or "")
        err = exc.stderr.decode() if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        raise BackendTimeoutError(f"solver timed out after {config.timeout:g} s", out, err) from None
    except OSError as exc:
        raise BackendError(f"cannot run solver {exe!r}: {exc}") from None
    elapsed = time.perf_counter() - start
    if not proc.stdout.strip():
        raise BackendError(
            f"solver exited with code {proc.returncode} and no output: {proc.stderr.strip()[:200]}",
            proc.stdout, proc.stderr,
        )
    return parse_output(proc.stdout, proc.stderr, backend=os.path.basename(exe), wall_time=elapsed)
