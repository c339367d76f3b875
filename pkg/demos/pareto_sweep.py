"""Click / contributions trade-off of the hybrid re-ranker.

Clicks are scored with the upstream SPR score; contributions come from a
slot-aware model. Sweeping the contributions weight traces a frontier that
contains the pointwise baseline.

Run: python demos/pareto_sweep.py
"""
from multislot.core import ResponseKind
from multislot.replay import ReplayLog, estimate, hybrid_policy, pareto_frontier
from multislot.simulator import PointwiseGreedyPolicy, RandomPolicy, SimConfig, fit_estimated_models, rollout

cfg = SimConfig()
log = ReplayLog.from_episodes(rollout(RandomPolicy(), cfg, episodes=5000, seed=6).episodes,
                              ("click", "contributions"), cfg)
contrib = fit_estimated_models(cfg, episodes=1500, seed=6, responses=[ResponseKind.CONTRIBUTIONS])
model = contrib[ResponseKind.CONTRIBUTIONS]

points = [estimate(log, hybrid_policy(cfg, model, w), "one_step") for w in (0, 0.5, 1, 2, 4, 8)]
base = estimate(log, PointwiseGreedyPolicy(), "one_step")
front = pareto_frontier(points + [base])
on_front = {p.policy_id for p in front.points}

print(f"{'policy':<18} {'clicks':>8} {'contrib':>8}  frontier")
for e in points + [base]:
    print(f"{e.policy_id:<18} {e.values[0]:>8.4f} {e.values[1]:>8.4f}  {'*' if e.policy_id in on_front else ''}")
print("\nbaseline weakly dominated by the frontier:", front.weakly_dominates(base.values))
