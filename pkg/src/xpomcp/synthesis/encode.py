"""SMT-LIB2 encoding of a rule-synthesis problem as weighted MAX-SMT."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

from ..rules import ActionRule, Literal, RuleTemplate, VarBound, VarEquality
from ..trace import TraceStep

COST_ID = "cost"


@dataclass(frozen=True)
class SynthesisProblem:
    template: RuleTemplate
    steps: tuple[TraceStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("synthesis needs at least one trace step")
        self.template.check_beliefs(self.steps[0].belief)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """(rule index, step index) for every soft clause of the problem."""
        return [(r, t) for t in range(len(self.steps)) for r in range(len(self.template.rules))]


def smt_number(x: float) -> str:
    """Exact decimal rendering of a float (SMT-LIB has no exponent syntax)."""
    text = format(Decimal(float(x)), "f")
    if "." not in text:
        text += ".0"
    if text.startswith("-"):
        return f"(- {text[1:]})"
    return text


def _literal(lit: Literal, belief) -> str:
    p = smt_number(belief[lit.prob_var])
    rhs = lit.rhs if isinstance(lit.rhs, str) else smt_number(lit.rhs)
    return f"({lit.op} {p} {rhs})"


def _body(rule: ActionRule, belief) -> str:
    subs = []
    for sub in rule.body:
        lits = [_literal(lit, belief) for lit in sub.literals]
        subs.append(lits[0] if len(lits) == 1 else f"(and {' '.join(lits)})")
    return subs[0] if len(subs) == 1 else f"(or {' '.join(subs)})"


def clause(rule: ActionRule, step: TraceStep) -> str:
    """Instantiated body, negated when the step took a different action."""
    body = _body(rule, step.belief)
    return body if step.action == rule.action else f"(not {body})"


def goodness_terms(template: RuleTemplate) -> list[str]:
    terms = []
    for v in template.free_vars:
        pol = template.polarity(v)
        if pol == "lower":
            terms.append(v)
        elif pol == "upper":
            terms.append(f"(- {v})")
    return terms


def encode_smtlib(problem: SynthesisProblem) -> str:
    """Build the script; identical soft clauses are merged into one weighted clause."""
    t = problem.template
    out = ["(set-option :opt.priority lex)", "(set-logic QF_LRA)"]
    for v in t.free_vars:
        out.append(f"(declare-const {v} Real)")
    for v in t.free_vars:
        out.append(f"(assert (>= {v} 0.0))")
        out.append(f"(assert (<= {v} 1.0))")
    for c in t.constraints:
        if isinstance(c, VarEquality):
            out.append(f"(assert (= {c.left} {c.right}))")
        else:
            op = "=" if c.op == "==" else c.op
            out.append(f"(assert ({op} {c.var} {smt_number(c.value)}))")
    weights: Counter[str] = Counter()
    for r_idx, s_idx in problem.pairs:
        weights[clause(t.rules[r_idx], problem.steps[s_idx])] += 1
    for text, w in weights.items():
        out.append(f"(assert-soft {text} :weight {w} :id {COST_ID})")
    terms = goodness_terms(t)
    if terms:
        expr = terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"
        out.append(f"(maximize {expr})")
    out += ["(check-sat)", "(get-objectives)", "(get-model)"]
    return "\n".join(out) + "\n"
