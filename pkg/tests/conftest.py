import math

import pytest

from llmq_vrp import env as E

from llmq_vrp.instance import Instance, Node, augment, AugmentConfig, synthetic_instance

# depot plus three customers on integer-distance triangles:
# d(0,1) = 3, d(0,2) = 4, d(1,2) = 5, d(0,3) = 5
PYTH_XY = ((0.0, 0.0), (0.0, 3.0), (4.0, 0.0), (3.0, 4.0))

PYTH_VRP = """NAME : pyth-k2
COMMENT : four node fixture
TYPE : CVRP
DIMENSION : 4
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 0 0
2 0 3
3 4 0
4 3 4
DEMAND_SECTION
1 0
2 4
3 5
4 1
DEPOT_SECTION
1
-1
EOF
"""


def pyth(n_customers=3, demands=(4, 5, 1), capacity=10, max_routes=2, windows=None, breaks=()):
    """The Pythagorean fixture restricted to its first ``n_customers`` customers."""
    windows = windows or {}
    nodes = [Node(0, *PYTH_XY[0], 0)]
    for i in range(1, n_customers + 1):
        nodes.append(Node(i, *PYTH_XY[i], demands[i - 1], windows.get(i, (0.0, math.inf))))
    return Instance("pyth", tuple(nodes), capacity, max_routes, breaks=tuple(breaks))


@pytest.fixture
def fixture4():
    return pyth()


@pytest.fixture
def fixture3():
    return pyth(2)


def seeded(n_customers, seed, tightness=0.3, fraction=0.2):
    return augment(synthetic_instance(n_customers, seed), AugmentConfig(tightness, fraction, seed))


def reachable_states(inst, rng, n):
    """``n`` states reached by random legal play from the start."""
    out = []
    while len(out) < n:
        s = E.reset(inst)
        for _ in range(int(rng.integers(0, 2 * inst.n_nodes))):
            o = E.step(s, int(rng.choice(E.action_space(s, inst))), inst)
            if o.done:
                break
            s = o.next
        out.append(s)
    return out


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
