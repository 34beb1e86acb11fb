"""
The advisor loop: prompt, reply, three filters, feedback
========================================================

Candidate trajectories come back as text. Each passes a syntax check, a
semantic check (known, pending, no repeats) and a physical simulation; the
errors from one round go into the next prompt.
"""
from llmq_vrp import env as E
from llmq_vrp import instance as I
from llmq_vrp.advisor import MemoryPool, advise, build_prompt, filter_candidates
from llmq_vrp.backends import MockBackend

inst = I.augment(I.synthetic_instance(6, seed=3), I.AugmentConfig(seed=3))
s = E.reset(inst)

# the prompt is plain text and byte-stable for a given state
pool = MemoryPool(3).update([1, 2, 0, 3], -900.0)
print(build_prompt(s, inst, pool))

# a deterministic offline stand-in answers like a model would
cs = advise(s, inst, MockBackend(seed=0), pool)
print("reply:", cs.raw_replies[0].splitlines()[-1])
print("accepted:", cs.accepted, "first moves:", sorted(cs.action_set))

# hand-written replies show where each kind of mistake is caught
for reply in ("route: 1 -> 2 -> 3", "[[1, 99]]", "[[1, 1]]", "[[1, 2, 3, 4, 5, 6]]"):
    for v in filter_candidates(reply, s, inst):
        print(f"{reply!r:28} layer={v.layer}  {v.message[:70]}")

# injected faults are rejected at the layer they target
for fault in ("syntax", "hallucinate", "infeasible"):
    cs = advise(s, inst, MockBackend(0, fault=fault), max_rounds=2)
    print(fault, "->", {v.layer for v in cs.verdicts}, "accepted", len(cs.accepted))

# round two sees round one's errors verbatim
print(cs.prompts[1].split("## Errors", 1)[1][:300])
