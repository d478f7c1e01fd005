"""Random synthesis instances shared by the unit and acceptance suites."""
import numpy as np

from xpomcp.rules import parse_template
from xpomcp.trace import TraceStep

VELOCITY_STYLE = """
rule r_2 { action: 2 when: p0 >= x1 || p2 <= x2 || (p0 >= x3 && p1 >= 0.1) }
where { x1 >= 0.9 }
"""
TIGER_STYLE = """
rule r_L  { action: 0 when: (p_right <= x1 && p_left <= x2) }
rule r_OL { action: 1 when: p_left >= x4 }
rule r_OR { action: 2 when: p_right >= x3 }
where { x1 == x2; x3 == x4; x3 > 0.9 }
"""


def tiger_instance(rng: np.random.Generator, n: int):
    steps = []
    for i in range(n):
        p = float(np.round(rng.uniform(0, 1), int(rng.integers(2, 5))))
        top = max(p, 1 - p)
        action = 0 if top < rng.uniform(0.8, 0.97) else (2 if p > 0.5 else 1)
        if rng.random() < 0.15:
            action = int(rng.integers(0, 3))
        steps.append(TraceStep(i, 0, action, {"p_left": 1 - p, "p_right": p}))
    return parse_template(TIGER_STYLE, ("p_left", "p_right")), steps


def velocity_instance(rng: np.random.Generator, n: int):
    steps = []
    for i in range(n):
        b = rng.dirichlet([2.0, 1.0, 1.0]) if rng.random() < 0.5 else rng.dirichlet([8.0, 1.0, 0.3])
        b = np.round(b, 3)
        b[0] = 1.0 - b[1] - b[2]
        fast = b[0] >= 0.85 or b[2] <= 0.02
        action = 2 if fast else int(rng.integers(0, 2))
        if rng.random() < 0.15:
            action = int(rng.integers(0, 3))
        steps.append(TraceStep(i, 0, action, {"p_0": float(b[0]), "p_1": float(b[1]), "p_2": float(b[2])}))
    return parse_template(VELOCITY_STYLE, ("p_0", "p_1", "p_2")), steps


def random_instance(k: int):
    rng = np.random.default_rng(1000 + k)
    n = int(rng.integers(1, 51))
    return (tiger_instance if k % 2 == 0 else velocity_instance)(rng, n)
