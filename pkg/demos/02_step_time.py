"""
One training step, end to end
=============================

Tokens per GPU, FLOPs, phase times and the all-gather they overlap with.
"""

import dataclasses

from fsdp_plan import TrainPlan, default_catalog, estimate

catalog = default_catalog()
model = catalog.model("13b")
cluster = dataclasses.replace(catalog.cluster("40GB-A100-200Gbps"), num_gpus=8)

# Assume the kernels hit 60% of peak. With only 8 GPUs the parameter
# all-gather is short next to the compute, so HFU comes out exactly 0.6.
est = estimate(model, cluster, TrainPlan(gamma=0.0, assumed_hfu=0.6))
print(f"tokens/GPU  {est.tokens:,}")
print(f"F_fwd       {est.flops_fwd:,} FLOPs/token")
print(f"t_transfer  {est.t_transfer:.3f} s")
print(f"t_fwd       {est.t_fwd:.3f} s   (R_fwd {est.r_fwd:.2f})")
print(f"t_bwd       {est.t_bwd:.3f} s   (R_bwd {est.r_bwd:.2f})")
print(f"step        {est.t_step:.3f} s")
print(f"TGS {est.throughput:.0f}   HFU {est.hfu:.3f}   MFU {est.mfu:.3f}")

# MFU counts only the 3 * F_fwd useful FLOPs; full recomputation (gamma=0)
# spends a fourth forward pass, so MFU = 3/4 HFU here.
print("MFU/HFU =", round(est.mfu / est.hfu, 6))

# 175B on the 512-GPU 100 Gbps cluster. Few tokens fit per GPU, so once
# the kernels are fast enough the all-gather outlasts the forward pass.
# The step is then set by the network and the reported HFU stops tracking
# what the kernels deliver.
big = catalog.cluster("40GB-A100-100Gbps")
for alpha in (0.3, 0.6, 0.9):
    e = estimate(catalog.model("175b"), big, TrainPlan(assumed_hfu=alpha))
    flag = "bandwidth-limited" if e.bandwidth_limited else "compute-limited"
    print(f"assumed {alpha:.1f}: R_fwd {e.r_fwd:.2f}, HFU {e.hfu:.3f}, MFU {e.mfu:.3f}  {flag}")
