"""Velocity regulation: learn when the robot chooses top speed and list the outliers.

Run with ``python demos/velocity_walkthrough.py`` (under a minute on one core).
"""
from xpomcp.anomaly import AnomalyConfig, classify_violations
from xpomcp.evaluation.studies import bundled_template
from xpomcp.models import VelocityRegulationModel
from xpomcp.planner import PlannerConfig, simulate_runs
from xpomcp.rules import parse_template
from xpomcp.synthesis import synthesize
from xpomcp.trace import make_trace

model = VelocityRegulationModel()
cfg = PlannerConfig(reward_range=90.0, seed=0)
trace = make_trace(model, cfg, simulate_runs(model, cfg, 30), runs=30)
counts = [sum(s.action == a for s in trace.steps) for a in range(3)]
print(f"{len(trace.steps)} steps; speed 0/1/2 chosen {counts[0]}/{counts[1]}/{counts[2]} times")

template = parse_template(bundled_template("velreg"), trace.header.belief_names)
result = synthesize(template, trace.steps)

report = classify_violations(result.learned_rule, result.unsatisfied_steps,
                             AnomalyConfig(tau=0.1, w=5000, seed=0),
                             indices=result.unsatisfied, total_steps=len(trace.steps),
                             skip_empty_regions=True)
report.action_phrases = {2: "go at speed 2"}
print(report.text("velreg_W90"))
if report.unscored:
    print(f"{len(report.unscored)} violation(s) could not be scored: the rule region is too small to sample")
