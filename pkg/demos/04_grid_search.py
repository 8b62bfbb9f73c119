"""
Searching for the best configuration
====================================

Assumed HFU, activation-preservation ratio and ZeRO stage, all at once.
"""

import collections

import numpy as np

from fsdp_plan import GridParams, default_catalog, grid_search

catalog = default_catalog()
model = catalog.model("7b")
cluster = catalog.cluster("40GB-A100-100Gbps")

res = grid_search(model, cluster, keep_frontier=True)
best = res.best_estimate
print(f"evaluated {res.evaluated_count}, feasible {res.feasible_count}")
print(
    f"best: {res.best_plan.zero_stage}, gamma {res.best_plan.gamma:.2f}, "
    f"assumed HFU {res.best_plan.assumed_hfu:.2f} -> MFU {best.mfu:.3f}, TGS {best.throughput:.0f}"
)

# Best MFU for each gamma. Small gamma keeps more tokens per GPU, large
# gamma skips recomputation; the sweet spot balances the two against the
# fixed transfer time.
by_gamma = collections.defaultdict(float)
for row in res.frontier:
    by_gamma[row.gamma] = max(by_gamma[row.gamma], row.mfu)
gammas = np.array(sorted(by_gamma))
mfu = np.array([by_gamma[g] for g in gammas])
for g in gammas[::10]:
    print(f"  gamma {g:.1f}: best MFU {by_gamma[g]:.3f}")
print(f"  argmax gamma {gammas[mfu.argmax()]:.2f}")

# Coarser grids can only miss the optimum, never beat it.
for step in (0.25, 0.1, 0.05, 0.01):
    r = grid_search(model, cluster, GridParams(alpha_step=step, gamma_step=step))
    print(f"step {step:>4}: MFU {r.best_estimate.mfu:.4f} over {r.evaluated_count} points")

# Other objectives.
for objective in ("hfu", "throughput"):
    r = grid_search(model, cluster, GridParams(objective=objective))
    print(f"max {objective}: gamma {r.best_plan.gamma:.2f}, TGS {r.best_estimate.throughput:.0f}, HFU {r.best_estimate.hfu:.3f}")
