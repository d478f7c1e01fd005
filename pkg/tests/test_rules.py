import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xpomcp.evaluation.studies import bundled_template
from xpomcp.rules import (
    ActionRule,
    LearnedRule,
    Literal,
    RuleEvaluationError,
    RuleTemplate,
    Subformula,
    TemplateError,
    VarBound,
    VarEquality,
    describe,
    evaluate_rule,
    format_template,
    parse_template,
    render_math,
)
from xpomcp.trace import TraceStep

from conftest import tiger_step

# supplementary learned Tiger rule: listen bound 0.847, open bound 0.966
REFERENCE_TIGER_RULE = {"x1": 0.847, "x2": 0.847, "x3": 0.966, "x4": 0.966}


def test_tiger_template_shape(tiger_template):
    assert len(tiger_template.rules) == 3
    assert tiger_template.free_vars == ("x1", "x2", "x4", "x3")
    assert len(tiger_template.constraints) == 3
    assert VarBound("x3", ">", 0.9) in tiger_template.constraints
    assert VarEquality("x1", "x2") in tiger_template.constraints


def test_velreg_template_shape(velreg_template):
    assert len(velreg_template.rules) == 1
    assert set(velreg_template.free_vars) == {"x1", "x2", "x3", "x4"}
    assert velreg_template.constraints == (VarBound("x1", ">=", 0.9),)
    assert velreg_template.rules[0].body[2].literals == (
        Literal("p_0", ">=", "x3"), Literal("p_1", ">=", "x4"))


@pytest.mark.parametrize("text, fragment", [
    ("rule a { action: 0 when: p0 >= 1.5 }", "outside [0, 1]"),
    ("rule a { action: 0 when: p0 >= x1 || p1 <= x1 }", "duplicate"),
    ("rule a { action: 0 when: p0 >= x1 } where { y >= 0.2 }", "undeclared"),
    ("rule a { action: 0 when: p0 >= }", "1:"),
    ("rule a { action: 0 when: (p0 >= x1 || p1 <= x2) }", "1:"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(TemplateError) as err:
        parse_template(text)
    assert fragment in str(err.value)
    assert err.value.line == 1


def test_unknown_prob_var_reports_location():
    text = "rule a {\n  action: 0 when: q >= x1 }"
    with pytest.raises(TemplateError) as err:
        parse_template(text, ("p_left", "p_right"))
    assert (err.value.line, err.value.col) == (2, 19)


def test_reference_tiger_rule_semantics(tiger_template):
    rule = LearnedRule(tiger_template, REFERENCE_TIGER_RULE)
    assert rule.constraints_hold()
    assert evaluate_rule(rule, tiger_step(0.5, 0))
    # open-left at p_left = 0.860 falls short of the 0.966 open bound
    assert not evaluate_rule(rule, tiger_step(0.14, 1))


def test_vacuous_body():
    t = parse_template("rule a { action: 1 when: p0 >= 0 }")
    rule = LearnedRule(t, {})
    for p in (0.0, 0.3, 1.0):
        assert evaluate_rule(rule, TraceStep(0, 0, 1, {"p_0": p, "p_1": 1 - p}))
        assert not evaluate_rule(rule, TraceStep(0, 0, 0, {"p_0": p, "p_1": 1 - p}))


def test_unused_action_with_false_bodies_is_satisfied():
    t = parse_template("rule a { action: 0 when: p0 >= 0.9 } rule b { action: 1 when: p1 >= 0.9 }")
    assert evaluate_rule(LearnedRule(t, {}), TraceStep(0, 0, 2, {"p_0": 0.5, "p_1": 0.5}))


def test_missing_belief_variable(tiger_template):
    with pytest.raises(RuleEvaluationError):
        evaluate_rule(LearnedRule(tiger_template, REFERENCE_TIGER_RULE), TraceStep(0, 0, 0, {"p_0": 1.0}))


def test_describe_and_math(velreg_template):
    rule = LearnedRule(velreg_template, {"x1": 0.9, "x2": 0.013, "x3": 0.838, "x4": 0.132})
    text = describe(rule, {2: "go at speed 2"})
    assert text.startswith("rule: go at speed 2 if: P_0 >= 0.900 OR P_2 <= 0.013")
    assert "≥" in render_math(rule)


def test_json_round_trip(tiger_template):
    rule = LearnedRule(tiger_template, REFERENCE_TIGER_RULE)
    assert LearnedRule.from_json(rule.to_json()) == rule


def test_comments_and_aliases():
    t = parse_template("# header\nrule r { action: 2 when: p0 ≥ x and p1 < y } # tail\nwhere { x = y; y >= 0.1 }")
    assert t.rules[0].body[0].literals[0].op == ">="
    assert t.constraints[0] == VarEquality("x", "y")


def test_bundled_templates_round_trip():
    for name in ("tiger", "velreg"):
        t = parse_template(bundled_template(name))
        assert parse_template(format_template(t)) == t


# -- round-trip property over generated ASTs ----------------------------

probs = st.sampled_from(["p_0", "p_1", "p_2", "p_left"])
ops = st.sampled_from(["<", ">", "<=", ">="])
constants = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def templates(draw):
    counter = iter(range(1000))
    n_rules = draw(st.integers(1, 3))
    rules = []
    for k in range(n_rules):
        body = []
        for _ in range(draw(st.integers(1, 3))):
            lits = []
            for _ in range(draw(st.integers(1, 3))):
                rhs = f"x{next(counter)}" if draw(st.booleans()) else draw(constants)
                lits.append(Literal(draw(probs), draw(ops), rhs))
            body.append(Subformula(tuple(lits)))
        rules.append(ActionRule(f"r{k}", draw(st.integers(0, 5)), tuple(body)))
    names = [lit.free_var for r in rules for lit in r.literals() if lit.free_var]
    constraints = []
    if names:
        for _ in range(draw(st.integers(0, 3))):
            if len(names) > 1 and draw(st.booleans()):
                a, b = draw(st.permutations(names))[:2]
                constraints.append(VarEquality(a, b))
            else:
                constraints.append(VarBound(draw(st.sampled_from(names)),
                                            draw(st.sampled_from(["<", ">", "<=", ">=", "=="])), draw(constants)))
    return RuleTemplate(tuple(rules), tuple(constraints))


@settings(max_examples=200, deadline=None)
@given(templates())
def test_format_parse_identity(t):
    assert parse_template(format_template(t)) == t
