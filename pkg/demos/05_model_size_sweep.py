"""
MFU and throughput versus model size on 512 GPUs
================================================

The sweep behind the usual "bigger models train less efficiently" plot.
Write the rows to CSV and plot with anything.
"""

import math

from fsdp_plan import default_catalog, sweep

catalog = default_catalog()
models = list(catalog.models.values())
clusters = [catalog.cluster("40GB-A100-200Gbps"), catalog.cluster("40GB-A100-100Gbps")]

rows = sweep(models, clusters, [512])
print(f"{'cluster':<18} {'model':>5} {'params':>9} {'stage':>7} {'gamma':>5} {'MFU':>6} {'log10 TGS':>9}  binding")
for r in rows:
    est = r.result.best_estimate
    print(
        f"{r.cluster.name:<18} {r.model.name:>5} {r.params / 1e9:8.1f}B {str(r.result.best_plan.zero_stage):>7} "
        f"{r.result.best_plan.gamma:5.2f} {est.mfu:6.3f} {math.log10(est.throughput):9.2f}  {r.binding}"
    )

# Doubling the bandwidth matters most once the model is big enough for the
# all-gather to dominate.
best = {(r.cluster.name, r.model.name): r.result.best_estimate.mfu for r in rows}
for m in catalog.models:
    gain = best[("40GB-A100-200Gbps", m)] - best[("40GB-A100-100Gbps", m)]
    print(f"{m:>5}: +{gain * 100:4.1f} MFU points from 100 to 200 Gbps")

# The same thing over GPU counts, for one model. Fewer GPUs means less
# sharding, so memory becomes the limit at the small end.
for r in sweep([catalog.model("30b")], clusters[1], [8, 16, 32, 64, 128, 256, 512]):
    text = f"MFU {r.result.best_estimate.mfu:.3f}" if r.feasible else "does not fit"
    print(f"30b on {r.cluster.num_gpus:>3} GPUs: {text}")
