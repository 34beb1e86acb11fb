"""
Training with and without the advisor
=====================================

Same instance, same seeds, same episode budget: the only difference is the
advisor restricting exploration during the first phase.

    python demos/04_training_llm_vs_dqn.py [episodes]
"""
import sys

import numpy as np

from llmq_vrp import bench
from llmq_vrp.agent import TrainConfig, evaluate_policy, train
from llmq_vrp.backends import MockBackend
from llmq_vrp.milp import gap

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 400
inst = bench.desk_corpus()[2]
opt = bench.oracle_cost(inst, None)
cfg = TrainConfig(episodes=episodes)
print(inst.name, "optimum", round(opt, 2), "episodes", episodes)

for label, make in (("dqn", lambda seed: None), ("llm-mock", lambda seed: MockBackend(seed))):
    gaps, sat = [], []
    for seed in range(3):
        res = train(inst, cfg, make(seed), seed=seed)
        gaps.append(None if res.best_cost is None else gap(res.best_cost, opt))
        sat.append(evaluate_policy(inst, res.params).satisfaction_rate)
        first = next((r.episode for r in res.reports if r.feasible), None)
        print(f"  {label} seed {seed}: first feasible episode {first}, "
              f"best gap {gaps[-1] if gaps[-1] is None else round(gaps[-1], 2)}")
    found = [g for g in gaps if g is not None]
    print(f"{label}: mean best gap {np.mean(found) if found else float('nan'):.2f}% "
          f"over {len(found)}/3 seeds, greedy policy feasible {np.mean(sat):.0%}")

# per-episode records are what the bench CLI writes to episodes.jsonl
print(res.reports[-1].to_record())
