"""Re-rank one generated feed with the sequential greedy algorithm.

Run: python demos/rerank_a_feed.py
"""
from multislot import DecayConfig, SgaConfig, SimConfig, exp_decay_rerank, sga_rerank
from multislot.models import CombinationConfig
from multislot.reranker import SgaTrace, count_model_calls
from multislot.simulator import generate_candidates

cfg = SimConfig(n_slots=12)
feed = generate_candidates(cfg, seed=3)
oracle = cfg.oracle_models()

sga = SgaConfig(oracle, CombinationConfig({"click": 1.0, "skip": -0.5}), k=3, max_deviation=3)
trace = SgaTrace()
greedy = sga_rerank(feed, sga, trace=trace)
decay = exp_decay_rerank(feed, DecayConfig(alpha=0.5))

types = cfg.item_types.names
print("slot  spr-order            greedy               creator-decay")
for i in range(len(feed)):
    a, g, d = feed[i], greedy.items[i], decay.items[i]
    print(f"{i:>4}  {types[a.item_type]:<8} {a.creator_id:<4} #{a.id:<4}  "
          f"{types[g.item_type]:<8} {g.creator_id:<4} #{g.id:<4}  "
          f"{types[d.item_type]:<8} {d.creator_id:<4} #{d.id:<4}")

print("\nmodel calls per response:", {r.value: c for r, c in count_model_calls(trace).items()},
      f"(bound K(N-1) = {3 * (len(feed) - 1)})")
print("largest move:", max(abs(s.index - s.original_position) for s in greedy.slots), "positions (limit 3)")
