"""
Stepping through the routing environment
========================================

The vehicle picks the next node; the state carries position, clock, the
pending set and remaining load. Rewards are negative generalized cost plus a
small shaping bonus.
"""
from llmq_vrp import env as E
from llmq_vrp import instance as I
from llmq_vrp.milp import GENERALIZED, exact_solve

inst = I.augment(I.synthetic_instance(5, seed=4), I.AugmentConfig(seed=4))
s = E.reset(inst)
print("start:", s)
print("legal first moves:", E.action_space(s, inst))

# follow the optimal plan move by move
plan = exact_solve(inst, weights=GENERALIZED).best_plan
moves = [c for r in plan.nonempty for c in (*r, 0)]
trace = []
for a in moves:
    out = E.step(s, a, inst)
    trace.append(out)
    print(f"-> {a}: clock {out.next.clock:6.1f}  load left {out.next.remaining:3.0f}  "
          f"reward {out.reward:8.2f}")
    s = out.next
print("done:", trace[-1].done)

# the rollout cost strips shaping and equals the plan's generalized cost
print("rollout cost", round(E.rollout_cost(trace), 4))
print(E.trace_to_text(trace).splitlines()[0])

# a road that breaks is dropped from the legal moves once the vehicle
# could no longer arrive before it closes
if inst.breaks:
    i, j, t = inst.breaks[0]
    print(f"road {i}-{j} unusable from t={t:.1f}")
