"""
Closed-form ceilings
====================

Token capacity, utilization and throughput limits, and how they compare
with what the grid search actually finds.
"""

from fsdp_plan import TrainPlan, bound_report, default_catalog, grid_search
from fsdp_plan.bounds import tight_hfu_bound

catalog = default_catalog()

# Utilization ceilings above 1 just mean the cluster is compute-limited;
# they are clamped for display.
for cname in ("40GB-A100-200Gbps", "40GB-A100-100Gbps"):
    cluster = catalog.cluster(cname)
    print(cname)
    for name, model in catalog.models.items():
        rep = bound_report(model, cluster, TrainPlan())
        print(
            f"  {name:>5}: E_max {rep.e_max:>7}  HFU<= {rep.hfu_bound_raw:7.3f}  "
            f"MFU<= {rep.mfu_bound_raw:7.3f}  K<= {rep.k_bound:10.1f}  {rep.binding_resource}"
        )

# The utilization ceiling marks where the forward all-gather exactly hides
# behind forward compute. Past that point the step is set by two transfer
# times, and the reported HFU keeps rising with the assumed HFU until the
# backward pass is exposed too, up to (4 - gamma)/2 times the ceiling.
# The throughput ceiling does hold, because a step never takes less than
# two transfers.
cluster = catalog.cluster("40GB-A100-100Gbps")
for name in ("66b", "175b", "310b"):
    model = catalog.model(name)
    res = grid_search(model, cluster)
    plan = res.best_plan
    est = res.best_estimate
    rep = bound_report(model, cluster, plan)
    print(
        f"{name}: searched HFU {est.hfu:.3f} vs ceiling {rep.hfu_bound_raw:.3f} "
        f"(tight {tight_hfu_bound(model, cluster, plan, clamp=False):.3f}, gamma {plan.gamma:.2f}); "
        f"K {est.throughput:.1f} vs ceiling {rep.k_bound:.1f}"
    )
