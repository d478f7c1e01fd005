"""Tiger end to end: simulate a weakened planner, learn its rule, then audit the odd decisions.

Run with ``python demos/tiger_walkthrough.py`` (seconds once numba has compiled its kernels).
"""
from xpomcp import exact
from xpomcp.anomaly import AnomalyConfig, classify_violations
from xpomcp.evaluation.studies import bundled_template
from xpomcp.models import TigerModel
from xpomcp.planner import PlannerConfig, simulate_runs
from xpomcp.rules import parse_template
from xpomcp.synthesis import synthesize
from xpomcp.trace import make_trace

PHRASES = {0: "listen", 1: "open the left door", 2: "open the right door"}

model = TigerModel()

# W=40 undersizes the exploration constant, so the planner sometimes opens too early.
cfg = PlannerConfig(reward_range=40.0, seed=0)
trace = make_trace(model, cfg, simulate_runs(model, cfg, 200), runs=200)
policy = exact.solve(model.tabular(), 10, model.discount)
trace = exact.label_trace(trace, policy, model)
print(f"{len(trace.steps)} steps, exact-policy error rate {exact.error_rate(trace):.3f}")
print(f"the exact policy opens once confidence reaches {exact.opening_threshold(policy):.4f}")

template = parse_template(bundled_template("tiger"), trace.header.belief_names)
result = synthesize(template, trace.steps)

# Decisions far from anything the rule allows are the ones worth a second look.
report = classify_violations(result.learned_rule, result.unsatisfied_steps,
                             AnomalyConfig(tau=0.1, w=5000, seed=0),
                             indices=result.unsatisfied, total_steps=len(trace.steps),
                             skip_empty_regions=True)
report.action_phrases = PHRASES
print(report.text("tiger_W40"))
