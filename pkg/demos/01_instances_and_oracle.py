"""
Instances, windows, broken roads and the exact solver
=====================================================

Build a small random instance, tighten it with time windows and roads that
break partway through the day, then score plans against the exact optimum.
"""
import numpy as np

from llmq_vrp import instance as I
from llmq_vrp.milp import GENERALIZED, RoutePlan, evaluate, exact_solve, gap

# six customers on a 100 x 100 grid, depot at index 0
base = I.synthetic_instance(6, seed=2)
print(base.name, "capacity", base.capacity, "routes allowed", base.max_routes)
print("demands", [n.demand for n in base.nodes])

# windows and breaks are drawn from the seed; the result is screened so that
# every customer stays reachable
inst = I.augment(base, I.AugmentConfig(window_tightness=0.3, break_fraction=0.2, seed=2))
for n in inst.nodes[1:]:
    print(f"customer {n.id}: window {n.window[0]:.1f} .. {n.window[1]:.1f}")
print("broken roads (i, j, from t):", inst.breaks)

# the distance matrix is Euclidean and symmetric
print(np.round(inst.dist[:3, :3], 2))

# exhaustive search over ordered partitions, fine up to eight customers
sol = exact_solve(inst, weights=GENERALIZED)
print("optimal plan", sol.best_plan.to_list(), "cost", round(sol.best_cost, 2))

# any other plan gets a verdict listing its violations
naive = RoutePlan([list(range(1, inst.n_nodes))])
v = evaluate(inst, naive, weights=GENERALIZED)
print("one route through everyone: feasible =", v.feasible)
for viol in v.violations[:5]:
    print("  ", viol.kind, "route", viol.route, "at", viol.where)

# gap of a feasible plan against the optimum, in percent
reversed_plan = RoutePlan([r[::-1] for r in sol.best_plan.to_list()])
rv = evaluate(inst, reversed_plan, weights=GENERALIZED)
if rv.feasible:
    print("reversed routes: gap", round(gap(rv.cost, sol.best_cost), 2), "%")
else:
    print("reversed routes break", sorted({x.kind for x in rv.violations}))

# canonical text form round-trips exactly
assert I.deserialize(I.serialize(inst)) == inst
