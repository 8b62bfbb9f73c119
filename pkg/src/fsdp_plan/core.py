"""Closed-form cost model for transformer training under fully sharded data parallelism.

All quantities use bytes, seconds, bytes/second and FLOPs. Parameter counts
exclude embeddings; the optimizer is Adam-like (velocity, moment and a
full-precision parameter copy, each ``2*Q*phi`` bytes).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import InfeasibleConfig, ValidationError

# Relative slack on the "achieved HFU <= assumed HFU" acceptance test. In the
# compute-bound regime both sides are equal analytically and differ only by
# rounding.
HFU_RTOL = 1e-12


class ZeroStage(enum.Enum):
    """Sharding level. Stage 1/2 keeps full parameters on every GPU."""

    STAGE12 = "1/2"
    STAGE3 = "3"

    @classmethod
    def parse(cls, value) -> "ZeroStage":
        if isinstance(value, ZeroStage):
            return value
        text = str(value).strip().lower().replace("zero", "").replace("stage", "").strip("-_ ")
        if text in {"1", "2", "12", "1/2", "1-2"}:
            return cls.STAGE12
        if text == "3":
            return cls.STAGE3
        raise ValueError(f"unknown ZeRO stage {value!r}")

    @property
    def param_divisor_is_n(self) -> bool:
        return self is ZeroStage.STAGE3

    def __str__(self) -> str:
        return "Stage3" if self is ZeroStage.STAGE3 else "Stage12"


@dataclass(frozen=True)
class ModelSpec:
    """Decoder-only transformer shape and training precision.

    ``heads`` is carried for bookkeeping only; no formula uses it.
    """

    layers: int
    hidden: int
    heads: int
    seq_len: int
    bytes_per_value: int = 2
    name: str = ""

    def __post_init__(self):
        for attr in ("layers", "hidden", "heads", "seq_len"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(f"must be a positive integer, got {value!r}", field=attr)
        if self.bytes_per_value not in (2, 4):
            raise ValidationError(
                f"must be 2 or 4, got {self.bytes_per_value!r}", field="bytes_per_value"
            )

    @property
    def params(self) -> int:
        return param_count(self)


@dataclass(frozen=True)
class ClusterSpec:
    """Per-GPU hardware envelope of a cluster.

    ``bandwidth`` is the average inter-node share per GPU in bytes/second and
    ``latency`` the per-layer, per-GPU collective overhead in seconds.
    """

    num_gpus: int
    gpu_mem: int
    reserved: int
    peak_flops: float
    bandwidth: float
    latency: float = 0.0
    name: str = ""

    def __post_init__(self):
        if isinstance(self.num_gpus, bool) or not isinstance(self.num_gpus, int) or self.num_gpus < 1:
            raise ValidationError(f"must be a positive integer, got {self.num_gpus!r}", field="num_gpus")
        if not self.gpu_mem > 0:
            raise ValidationError(f"must be positive, got {self.gpu_mem!r}", field="gpu_mem")
        if not 0 <= self.reserved < self.gpu_mem:
            raise ValidationError(
                f"must satisfy 0 <= reserved < gpu_mem, got {self.reserved!r}", field="reserved"
            )
        if not (self.peak_flops > 0 and math.isfinite(self.peak_flops)):
            raise ValidationError(f"must be positive, got {self.peak_flops!r}", field="peak_flops")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValidationError(f"must be positive, got {self.bandwidth!r}", field="bandwidth")
        if not (self.latency >= 0 and math.isfinite(self.latency)):
            raise ValidationError(f"must be >= 0, got {self.latency!r}", field="latency")


@dataclass(frozen=True)
class TrainPlan:
    """Tunables of one configuration.

    ``batch_tokens`` pins the per-GPU tokens per step; when ``None`` the
    memory-saturating token capacity is used.
    """

    gamma: float = 0.0
    zero_stage: ZeroStage = ZeroStage.STAGE3
    assumed_hfu: float = 1.0
    batch_tokens: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"must lie in [0, 1], got {self.gamma!r}", field="gamma")
        if not 0.0 < self.assumed_hfu <= 1.0:
            raise ValidationError(
                f"must lie in (0, 1], got {self.assumed_hfu!r}", field="assumed_hfu"
            )
        if not isinstance(self.zero_stage, ZeroStage):
            object.__setattr__(self, "zero_stage", ZeroStage.parse(self.zero_stage))
        if self.batch_tokens is not None and (
            isinstance(self.batch_tokens, bool)
            or not isinstance(self.batch_tokens, int)
            or self.batch_tokens < 1
        ):
            raise ValidationError(
                f"must be a positive integer, got {self.batch_tokens!r}", field="batch_tokens"
            )


@dataclass(frozen=True)
class MemoryBreakdown:
    params_bytes: int
    grad_bytes: int
    optimizer_bytes: int
    free_bytes: float
    act_per_token_bytes: float
    act_total_bytes: float


@dataclass(frozen=True)
class PerfEstimate:
    t_transfer: float
    t_fwd: float
    t_bwd: float
    t_step: float
    r_fwd: float
    r_bwd: float
    throughput: float
    hfu: float
    mfu: float
    tokens: int
    flops_fwd: int
    flops_bwd: float
    flops_total: float
    memory: MemoryBreakdown = field(repr=False)
    plan: TrainPlan = field(repr=False)

    @property
    def bandwidth_limited(self) -> bool:
        return self.r_fwd > 1.0


def param_count(model: ModelSpec) -> int:
    """Learnable parameters without embeddings, ``12 * L * H**2``."""
    return 12 * model.layers * model.hidden**2


def model_state_memory(model: ModelSpec) -> tuple[int, int, int]:
    """Bytes of (parameters, gradients, optimizer states) for the unsharded model."""
    phi = param_count(model)
    q = model.bytes_per_value
    return phi * q, phi * q, 6 * q * phi


def free_memory(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> float:
    """Per-GPU memory left for activations after sharded model states.

    Optimizer states and gradients are always sharded over N; parameters are
    sharded only under stage 3. A negative result marks an infeasible setup.
    """
    params, grads, optim = model_state_memory(model)
    n = cluster.num_gpus
    param_div = n if plan.zero_stage.param_divisor_is_n else 1
    return cluster.gpu_mem - cluster.reserved - (optim + grads) / n - params / param_div


def activation_memory_per_token(model: ModelSpec, gamma: float) -> float:
    """Activation bytes per token, interpolating from layer-output checkpoints
    (``gamma=0``) to keeping every intermediate activation (``gamma=1``)."""
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    checkpointed = L * H * Q
    full = 16 * L * H * Q + 2 * L * H
    return (1.0 - gamma) * checkpointed + gamma * full


def token_capacity(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> int:
    m_free = free_memory(model, cluster, plan)
    if m_free <= 0:
        raise InfeasibleConfig(
            f"free memory negative ({m_free:.4g} B): model states do not fit "
            f"on {cluster.num_gpus} GPU(s) under {plan.zero_stage}"
        )
    return math.floor(m_free / activation_memory_per_token(model, plan.gamma))


def transfer_time(model: ModelSpec, cluster: ClusterSpec) -> float:
    """Seconds to all-gather the full parameter set once, plus latency."""
    phi = param_count(model)
    return phi * model.bytes_per_value / cluster.bandwidth + model.layers * cluster.num_gpus * cluster.latency


def flops_per_token(model: ModelSpec, gamma: float) -> tuple[int, float, float]:
    """(forward, backward, total) FLOPs per token; backward includes recomputation."""
    f_fwd = 2 * param_count(model) + 4 * model.layers * model.hidden * model.seq_len
    f_bwd = 2 * f_fwd + (1.0 - gamma) * f_fwd
    return f_fwd, f_bwd, (4.0 - gamma) * f_fwd


def phase_times(
    model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, tokens: int
) -> tuple[float, float]:
    f_fwd, f_bwd, _ = flops_per_token(model, plan.gamma)
    rate = plan.assumed_hfu * cluster.peak_flops
    return f_fwd * tokens / rate, f_bwd * tokens / rate


def step_time(t_fwd: float, t_bwd: float, t_transfer: float) -> float:
    """Each phase is bounded below by the parameter all-gather it overlaps with."""
    return max(t_fwd, t_transfer) + max(t_bwd, t_transfer)


def ratios(t_fwd: float, t_bwd: float, t_transfer: float) -> tuple[float, float]:
    if t_fwd <= 0 or t_bwd <= 0:
        raise InfeasibleConfig("compute time is zero; communication ratio undefined")
    return t_transfer / t_fwd, t_transfer / t_bwd


def metrics(
    model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, tokens: int, t_step: float
) -> tuple[float, float, float]:
    """(tokens/GPU/s, HFU, MFU) for a step of ``t_step`` seconds."""
    f_fwd, _, f_total = flops_per_token(model, plan.gamma)
    k = tokens / t_step
    return k, k * f_total / cluster.peak_flops, 3 * k * f_fwd / cluster.peak_flops


def memory_breakdown(
    model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, tokens: int = 0
) -> MemoryBreakdown:
    params, grads, optim = model_state_memory(model)
    per_token = activation_memory_per_token(model, plan.gamma)
    return MemoryBreakdown(
        params_bytes=params,
        grad_bytes=grads,
        optimizer_bytes=optim,
        free_bytes=free_memory(model, cluster, plan),
        act_per_token_bytes=per_token,
        act_total_bytes=per_token * tokens,
    )


def estimate(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> PerfEstimate:
    """Run the full pipeline for one configuration.

    Raises InfeasibleConfig when model states overflow the GPU, when no
    token fits, or when pinned ``batch_tokens`` exceed the free memory.
    """
    capacity = token_capacity(model, cluster, plan)
    if plan.batch_tokens is None:
        tokens = capacity
    else:
        tokens = plan.batch_tokens
        if tokens > capacity:
            raise InfeasibleConfig(
                f"activation memory exceeds free memory: {tokens} tokens requested, "
                f"{capacity} fit"
            )
    if tokens < 1:
        raise InfeasibleConfig("activation memory exceeds free memory: not a single token fits")

    f_fwd, f_bwd, f_total = flops_per_token(model, plan.gamma)
    t_transfer = transfer_time(model, cluster)
    t_fwd, t_bwd = phase_times(model, cluster, plan, tokens)
    t = step_time(t_fwd, t_bwd, t_transfer)
    r_fwd, r_bwd = ratios(t_fwd, t_bwd, t_transfer)
    k, hfu, mfu = metrics(model, cluster, plan, tokens, t)
    return PerfEstimate(
        t_transfer=t_transfer,
        t_fwd=t_fwd,
        t_bwd=t_bwd,
        t_step=t,
        r_fwd=r_fwd,
        r_bwd=r_bwd,
        throughput=k,
        hfu=hfu,
        mfu=mfu,
        tokens=tokens,
        flops_fwd=f_fwd,
        flops_bwd=f_bwd,
        flops_total=f_total,
        memory=memory_breakdown(model, cluster, plan, tokens),
        plan=plan,
    )
