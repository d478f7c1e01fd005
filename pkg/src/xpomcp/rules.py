"""Rule templates: action rules over belief probabilities with free thresholds.

Concrete syntax::

    template    = rule { rule } [ where ] ;
    rule        = "rule" IDENT "{" "action" ":" INT "when" ":" disjunction [";"] "}" ;
    disjunction = conjunction { ("||" | "or") conjunction } ;
    conjunction = atom { ("&&" | "and") atom } ;
    atom        = literal | "(" conjunction ")" ;
    literal     = PROBVAR CMP ( IDENT | NUMBER ) ;
    where       = "where" "{" [ constraint { ";" constraint } [";"] ] "}" ;
    constraint  = IDENT ( "==" | "=" ) IDENT | IDENT CMP NUMBER ;
    CMP         = "<" | ">" | "<=" | ">=" ;

``#`` starts a comment. A probability variable written ``p0`` binds to the
belief key ``p_0``; any other name binds verbatim. Every free variable may
occur in exactly one literal; use ``where { x == y }`` to tie thresholds.

A step satisfies an action rule iff (the step took the rule's action) is
equivalent to (the rule body holds on the step's belief); it satisfies a
template iff it satisfies every action rule.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, Union

OPS = ("<", ">", "<=", ">=")
_OP_ALIASES = {"≤": "<=", "≥": ">=", "=<": "<=", "=>": ">="}
_PY_OPS = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


class TemplateError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"{line}:{col}: {message}" if line else message)


class RuleEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    prob_var: str
    op: str
    rhs: Union[str, float]

    @property
    def free_var(self) -> str | None:
        return self.rhs if isinstance(self.rhs, str) else None

    @property
    def polarity(self) -> str:
        """``"lower"`` when the threshold bounds the probability from below."""
        return "lower" if self.op in (">", ">=") else "upper"

    def holds(self, belief: Mapping[str, float], assignment: Mapping[str, float]) -> bool:
        try:
            p = belief[self.prob_var]
        except KeyError:
            raise RuleEvaluationError(f"belief has no variable {self.prob_var!r}") from None
        if isinstance(self.rhs, str):
            try:
                x = assignment[self.rhs]
            except KeyError:
                raise RuleEvaluationError(f"free variable {self.rhs!r} is not instantiated") from None
        else:
            x = self.rhs
        return _PY_OPS[self.op](p, x)


@dataclass(frozen=True)
class Subformula:
    literals: tuple[Literal, ...]

    def holds(self, belief, assignment) -> bool:
        return all(lit.holds(belief, assignment) for lit in self.literals)


@dataclass(frozen=True)
class ActionRule:
    name: str
    action: int
    body: tuple[Subformula, ...]

    def body_holds(self, belief, assignment) -> bool:
        return any(sub.holds(belief, assignment) for sub in self.body)

    def satisfied(self, belief, action: int, assignment) -> bool:
        return (action == self.action) == self.body_holds(belief, assignment)

    def literals(self) -> Iterator[Literal]:
        for sub in self.body:
            yield from sub.literals


@dataclass(frozen=True)
class VarBound:
    var: str
    op: str
    value: float

    def holds(self, assignment) -> bool:
        return _PY_OPS[self.op](assignment[self.var], self.value)


@dataclass(frozen=True)
class VarEquality:
    left: str
    right: str

    def holds(self, assignment) -> bool:
        return assignment[self.left] == assignment[self.right]


HardConstraint = Union[VarBound, VarEquality]


@dataclass(frozen=True)
class RuleTemplate:
    rules: tuple[ActionRule, ...]
    constraints: tuple[HardConstraint, ...] = ()

    @property
    def free_vars(self) -> tuple[str, ...]:
        seen: list[str] = []
        for rule in self.rules:
            for lit in rule.literals():
                if lit.free_var and lit.free_var not in seen:
                    seen.append(lit.free_var)
        for c in self.constraints:
            for v in (c.left, c.right) if isinstance(c, VarEquality) else (c.var,):
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    @property
    def prob_vars(self) -> tuple[str, ...]:
        seen: list[str] = []
        for rule in self.rules:
            for lit in rule.literals():
                if lit.prob_var not in seen:
                    seen.append(lit.prob_var)
        return tuple(seen)

    def literals_of(self, var: str) -> list[Literal]:
        return [lit for r in self.rules for lit in r.literals() if lit.free_var == var]

    def polarity(self, var: str) -> str | None:
        """``"lower"``, ``"upper"``, ``"mixed"``, or None when no literal uses ``var``.

        Variables tied by equality constraints share the polarity of their class.
        """
        pols = {lit.polarity for v in self.equality_class(var) for lit in self.literals_of(v)}
        if not pols:
            return None
        return pols.pop() if len(pols) == 1 else "mixed"

    def equality_class(self, var: str) -> list[str]:
        members = {var}
        changed = True
        while changed:
            changed = False
            for c in self.constraints:
                if isinstance(c, VarEquality) and (c.left in members) != (c.right in members):
                    members |= {c.left, c.right}
                    changed = True
        return [v for v in self.free_vars if v in members]

    def check_beliefs(self, belief_names: Iterable[str]) -> None:
        names = set(belief_names)
        missing = [p for p in self.prob_vars if p not in names]
        if missing:
            raise TemplateError(f"unknown probability variables {missing}; trace has {sorted(names)}")


@dataclass(frozen=True)
class LearnedRule:
    template: RuleTemplate
    assignment: dict[str, float] = field(default_factory=dict)

    def rule_satisfied(self, index: int, belief, action: int) -> bool:
        return self.template.rules[index].satisfied(belief, action, self.assignment)

    def satisfied(self, belief, action: int) -> bool:
        return all(r.satisfied(belief, action, self.assignment) for r in self.template.rules)

    def constraints_hold(self) -> bool:
        return all(c.holds(self.assignment) for c in self.template.constraints) and all(
            0.0 <= self.assignment[v] <= 1.0 for v in self.template.free_vars
        )

    def to_json(self) -> dict:
        return {
            "template": format_template(self.template),
            "assignment": {v: self.assignment[v] for v in self.template.free_vars},
        }

    @classmethod
    def from_json(cls, data: dict) -> "LearnedRule":
        template = parse_template(data["template"])
        assignment = {str(k): float(v) for k, v in data["assignment"].items()}
        missing = set(template.free_vars) - set(assignment)
        if missing:
            raise TemplateError(f"assignment missing free variables {sorted(missing)}")
        return cls(template, assignment)


def evaluate_rule(rule: LearnedRule, step) -> bool:
    """Template-level satisfaction of one trace step."""
    return rule.satisfied(step.belief, step.action)


# -- parsing ----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|=<|=>|==|\|\||&&|[<>≤≥=(){}:;])
    """,
    re.VERBOSE,
)

_PROB_SHORT = re.compile(r"p(\d+)$")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise TemplateError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


def prob_var_key(name: str) -> str:
    m = _PROB_SHORT.match(name)
    return f"p_{m.group(1)}" if m else name


class _Parser:
    def __init__(self, text: str, belief_names: Sequence[str] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.belief_names = set(belief_names) if belief_names is not None else None
        self.var_sites: dict[str, _Tok] = {}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise TemplateError(msg, tok.line, tok.col)

    def accept(self, *texts: str) -> _Tok | None:
        if self.tok.kind in ("op", "ident") and self.tok.text in texts:
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, *texts: str) -> _Tok:
        t = self.accept(*texts)
        if t is None:
            found = self.tok.text or "end of input"
            self.error(f"expected {' or '.join(repr(x) for x in texts)}, found {found!r}")
        return t

    def expect_kind(self, kind: str, what: str) -> _Tok:
        if self.tok.kind != kind or (kind == "ident" and self.tok.text in ("or", "and")):
            self.error(f"expected {what}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def number(self, tok: _Tok) -> float:
        value = float(tok.text)
        if not 0.0 <= value <= 1.0:
            self.error(f"constant {tok.text} outside [0, 1]", tok)
        return value

    def parse(self) -> RuleTemplate:
        rules = []
        names: set[str] = set()
        while self.accept("rule"):
            rule = self.rule()
            if rule.name in names:
                self.error(f"duplicate rule name {rule.name!r}")
            names.add(rule.name)
            rules.append(rule)
        if not rules:
            self.error("expected 'rule'")
        constraints: tuple[HardConstraint, ...] = ()
        if self.accept("where"):
            constraints = self.where()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return RuleTemplate(tuple(rules), constraints)

    def rule(self) -> ActionRule:
        name = self.expect_kind("ident", "rule name").text
        self.expect("{")
        self.expect("action")
        self.expect(":")
        action = self.expect_kind("num", "action index")
        if not re.fullmatch(r"\d+", action.text):
            self.error("action must be a non-negative integer", action)
        self.expect("when")
        self.expect(":")
        body = self.disjunction()
        self.accept(";")
        self.expect("}")
        return ActionRule(name, int(action.text), tuple(body))

    def disjunction(self) -> list[Subformula]:
        subs = [self.conjunction()]
        while self.accept("||", "or"):
            subs.append(self.conjunction())
        return subs

    def conjunction(self) -> Subformula:
        lits = self.atom()
        while self.accept("&&", "and"):
            lits += self.atom()
        return Subformula(tuple(lits))

    def atom(self) -> list[Literal]:
        if self.accept("("):
            inner = self.conjunction()
            if self.tok.text in ("||", "or"):
                self.error("disjunction inside parentheses; write the body as OR of ANDs")
            self.expect(")")
            return list(inner.literals)
        return [self.literal()]

    def comparator(self) -> str:
        tok = self.tok
        if tok.kind == "op" and (tok.text in OPS or tok.text in _OP_ALIASES):
            self.i += 1
            return _OP_ALIASES.get(tok.text, tok.text)
        self.error(f"expected comparison operator, found {tok.text or 'end of input'!r}")

    def literal(self) -> Literal:
        ptok = self.expect_kind("ident", "probability variable")
        key = prob_var_key(ptok.text)
        if self.belief_names is not None and key not in self.belief_names:
            self.error(f"unknown probability variable {ptok.text!r}", ptok)
        op = self.comparator()
        if self.tok.kind == "num":
            return Literal(key, op, self.number(self.expect_kind("num", "number")))
        vtok = self.expect_kind("ident", "free variable or constant")
        if vtok.text in self.var_sites:
            prev = self.var_sites[vtok.text]
            self.error(
                f"duplicate free variable {vtok.text!r} (first used at {prev.line}:{prev.col})", vtok
            )
        self.var_sites[vtok.text] = vtok
        return Literal(key, op, vtok.text)

    def where(self) -> tuple[HardConstraint, ...]:
        self.expect("{")
        out: list[HardConstraint] = []
        while not self.accept("}"):
            out.append(self.constraint())
            if not self.accept(";"):
                self.expect("}")
                break
        return tuple(out)

    def constraint(self) -> HardConstraint:
        vtok = self.expect_kind("ident", "free variable")
        if vtok.text not in self.var_sites:
            self.error(f"constraint on undeclared free variable {vtok.text!r}", vtok)
        if self.accept("==", "="):
            if self.tok.kind == "num":
                return VarBound(vtok.text, "==", self.number(self.expect_kind("num", "number")))
            other = self.expect_kind("ident", "free variable")
            if other.text not in self.var_sites:
                self.error(f"constraint on undeclared free variable {other.text!r}", other)
            return VarEquality(vtok.text, other.text)
        op = self.comparator()
        return VarBound(vtok.text, op, self.number(self.expect_kind("num", "number")))


def parse_template(text: str, belief_names: Sequence[str] | None = None) -> RuleTemplate:
    return _Parser(text, belief_names).parse()


# -- printing ---------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def _lit_text(lit: Literal) -> str:
    rhs = lit.rhs if isinstance(lit.rhs, str) else _num(lit.rhs)
    return f"{lit.prob_var} {lit.op} {rhs}"


def _body_text(body: Sequence[Subformula], conj: str, disj: str, lit_fmt) -> str:
    parts = []
    for sub in body:
        inner = f" {conj} ".join(lit_fmt(lit) for lit in sub.literals)
        parts.append(f"({inner})" if len(sub.literals) > 1 else inner)
    return f" {disj} ".join(parts)


def format_template(template: RuleTemplate) -> str:
    """Canonical DSL text; ``parse_template(format_template(t)) == t``."""
    lines = []
    for rule in template.rules:
        body = _body_text(rule.body, "&&", "||", _lit_text)
        lines.append(f"rule {rule.name} {{ action: {rule.action} when: {body} }}")
    if template.constraints:
        cs = []
        for c in template.constraints:
            if isinstance(c, VarEquality):
                cs.append(f"{c.left} == {c.right}")
            else:
                cs.append(f"{c.var} {c.op} {_num(c.value)}")
        lines.append("where { " + "; ".join(cs) + " }")
    return "\n".join(lines) + "\n"


def _display_var(name: str) -> str:
    m = re.fullmatch(r"p_(\d+)", name)
    return f"P_{m.group(1)}" if m else name


def describe(rule: LearnedRule, action_phrases: Mapping[int, str] | None = None,
             digits: int = 3) -> str:
    """Human-readable rendering, e.g. ``go at speed 2 if: P_0 >= 0.900 OR ...``."""

    def fmt(lit: Literal) -> str:
        x = rule.assignment[lit.rhs] if isinstance(lit.rhs, str) else lit.rhs
        return f"{_display_var(lit.prob_var)} {lit.op} {x:.{digits}f}"

    out = []
    for r in rule.template.rules:
        phrase = (action_phrases or {}).get(r.action, f"select action {r.action}")
        out.append(f"rule: {phrase} if: " + _body_text(r.body, "AND", "OR", fmt))
    return "\n".join(out)


def render_math(rule: LearnedRule | RuleTemplate, action_names: Sequence[str] | None = None,
                digits: int = 3) -> str:
    """Mathematical rendering: ``r_L: select listen when (p_right ≤ 0.847 ∧ ...)``."""
    template = rule.template if isinstance(rule, LearnedRule) else rule
    assignment = rule.assignment if isinstance(rule, LearnedRule) else {}
    sym = {"<": "<", ">": ">", "<=": "≤", ">=": "≥"}

    def fmt(lit: Literal) -> str:
        if isinstance(lit.rhs, str) and lit.rhs in assignment:
            rhs = f"{assignment[lit.rhs]:.{digits}f}"
        elif isinstance(lit.rhs, str):
            rhs = lit.rhs
        else:
            rhs = f"{lit.rhs:g}"
        return f"{lit.prob_var} {sym[lit.op]} {rhs}"

    lines = []
    for r in template.rules:
        act = action_names[r.action] if action_names else str(r.action)
        lines.append(f"{r.name}: select {act} when {_body_text(r.body, '∧', '∨', fmt)};")
    if template.constraints and not assignment:
        cs = []
        for c in template.constraints:
            if isinstance(c, VarEquality):
                cs.append(f"({c.left} = {c.right})")
            else:
                cs.append(f"({c.var} {sym.get(c.op, '=')} {c.value:g})")
        lines.append("where " + " ∧ ".join(cs) + ";")
    return "\n".join(lines)
