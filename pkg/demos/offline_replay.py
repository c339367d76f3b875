"""Estimate target policies offline from uniformly random logs.

Run: python demos/offline_replay.py
"""
from multislot.models import CombinationConfig
from multislot.replay import ReplayLog, estimate, variance_report
from multislot.simulator import GreedyPolicy, PointwiseGreedyPolicy, RandomPolicy, SimConfig, rollout

cfg = SimConfig()
logs = rollout(RandomPolicy(), cfg, episodes=5000, seed=4).episodes
log = ReplayLog.from_episodes(logs, cfg=cfg)
print(f"logged mean reward under the random policy: {log.empirical_mean()[0]:.4f}\n")

coef = CombinationConfig(dict(cfg.reward))
targets = [
    GreedyPolicy("always_best", cfg.oracle_models(), coef),
    GreedyPolicy("always_second_best", cfg.oracle_models(), coef, rank=1),
    PointwiseGreedyPolicy(),
]
for kind in ("one_step", "full_trajectory"):
    for pol in targets:
        est = estimate(log, pol, kind)
        print(f"{kind:<16} {pol.name:<20} value={est.values[0]:.4f} se={est.stderr[0]:.4f} ess={est.ess:.0f}")

true = rollout(targets[0], cfg, episodes=5000, seed=5)
print(f"\nonline value of always_best: {true.mean:.4f} +- {true.stderr:.4f}")

print("\ndepth  match-fraction  weight-se(full)  weight-se(one-step)")
for row in variance_report(log, PointwiseGreedyPolicy())[:8]:
    print(f"{row.depth:>5}  {row.match_fraction:>14.5f}  {row.full_weight_stderr:>15.3f}  "
          f"{row.one_step_weight_stderr:>19.3f}")
