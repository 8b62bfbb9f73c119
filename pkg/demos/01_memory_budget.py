"""
Where the GPU memory goes
=========================

Model states first, then whatever is left holds activations.
"""

import dataclasses

from fsdp_plan import TrainPlan, ZeroStage, default_catalog
from fsdp_plan.core import (
    activation_memory_per_token,
    free_memory,
    model_state_memory,
    token_capacity,
)

GiB = 2**30
catalog = default_catalog()
cluster = catalog.cluster("40GB-A100-200Gbps")

# Parameters, gradients and optimizer state for each preset, unsharded.
# Optimizer state is six times the parameter bytes (two moments plus an
# fp32 master copy, all at two bytes per half-precision value).
print(f"{'model':>6} {'params GiB':>11} {'grads GiB':>10} {'optim GiB':>10} {'ckpt act/token MiB':>19}")
for name, model in catalog.models.items():
    p, g, o = model_state_memory(model)
    act = activation_memory_per_token(model, 0.0) / 2**20
    print(f"{name:>6} {p / GiB:11.2f} {g / GiB:10.2f} {o / GiB:10.1f} {act:19.3f}")

# 1.3B on a single four-GPU node. Optimizer state and gradients are split
# four ways, and under stage 3 so are the parameters.
model = catalog.model("1.3b")
node = dataclasses.replace(cluster, num_gpus=4)
for stage in ZeroStage:
    m = free_memory(model, node, TrainPlan(zero_stage=stage))
    print(f"1.3b on 4 GPUs, {stage}: {m / GiB:.2f} GiB free")

# Keeping activations around (gamma -> 1) avoids recomputation but costs
# memory, so the token budget falls quickly.
for gamma in (0.0, 0.1, 0.5, 1.0):
    e = token_capacity(model, node, TrainPlan(gamma=gamma))
    print(f"gamma={gamma:.1f}: {e:>8,} tokens per GPU")

# With more GPUs the sharded states shrink and free memory creeps toward
# gpu_mem - reserved = 30 GiB.
for n in (8, 64, 512, 4096):
    c = dataclasses.replace(cluster, num_gpus=n)
    print(f"13b on {n:>4} GPUs: {free_memory(catalog.model('13b'), c, TrainPlan()) / GiB:6.2f} GiB free")
