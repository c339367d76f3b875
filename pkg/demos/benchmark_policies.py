"""Compare the four benchmark policies in the simulator.

The estimated policy is trained on random-policy logs first. Smaller than the
acceptance run so it finishes in well under a minute.

Run: python demos/benchmark_policies.py
"""
from multislot.simulator import SimConfig, fit_estimated_models, policy_zoo, rollout

cfg = SimConfig()
models = fit_estimated_models(cfg, episodes=1500, seed=1)
zoo = policy_zoo(cfg, models)

print(f"{'policy':<30} {'mean reward':>12} {'stderr':>8}")
for name, policy in zoo.items():
    res = rollout(policy, cfg, episodes=4000, seed=1)
    print(f"{name:<30} {res.mean:>12.4f} {res.stderr:>8.4f}")
