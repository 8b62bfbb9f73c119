"""Closed-form ceilings on token capacity, utilization and throughput.

The loose forms drop the activation-checkpointing term from the denominator
and are independent of gamma; the tight forms keep it. Utilization bounds
are clamped to [0, 1] since the hardware caps them regardless.

The HFU/MFU ceilings are the utilization at which the forward all-gather
exactly hides behind forward compute. Under the max-composed step time a
bandwidth-limited configuration can still report a higher achieved HFU (up
to ``(4 - gamma) / 2`` times the tight form); the throughput ceiling holds
unconditionally because every step lasts at least two transfer times.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .core import (
    ClusterSpec,
    ModelSpec,
    TrainPlan,
    flops_per_token,
    free_memory,
    param_count,
    transfer_time,
)
from .errors import InfeasibleConfig


class BindingResource(enum.Enum):
    BANDWIDTH = "Bandwidth"
    MEMORY = "Memory"
    COMPUTE = "Compute"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class BoundReport:
    e_max: int
    hfu_bound: float
    mfu_bound: float
    k_bound: float
    binding_resource: BindingResource
    hfu_bound_raw: float
    mfu_bound_raw: float
    tight_hfu_bound: float
    tight_mfu_bound: float
    gamma: float

    @property
    def hfu_clamped(self) -> bool:
        return self.hfu_bound_raw >= 1.0

    @property
    def mfu_clamped(self) -> bool:
        return self.mfu_bound_raw >= 1.0


def _checked_free(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> float:
    m_free = free_memory(model, cluster, plan)
    if m_free <= 0:
        raise InfeasibleConfig(f"free memory negative ({m_free:.4g} B)")
    return m_free


def _clamp(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def tokens_within(m_free: float, gpu_mem: float, model: ModelSpec) -> int:
    per_token = model.layers * model.hidden * model.bytes_per_value
    return min(math.floor(m_free / per_token), math.floor(gpu_mem / per_token))


def max_token_capacity(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> int:
    """Tokens per GPU with only layer outputs checkpointed, capped by total memory."""
    return tokens_within(_checked_free(model, cluster, plan), cluster.gpu_mem, model)


def _seq_factor(model: ModelSpec) -> float:
    return 2.0 + model.seq_len / (3.0 * model.hidden)


def _rate_term(model: ModelSpec, cluster: ClusterSpec, m_free: float) -> float:
    return cluster.bandwidth * m_free / cluster.peak_flops


def _ckpt_term(model: ModelSpec, gamma: float) -> float:
    q = model.bytes_per_value
    return q + 15.0 * gamma * q + 2.0 * gamma


def hfu_bound(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, clamp: bool = True) -> float:
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    raw = _seq_factor(model) / (L * H * Q**2) * _rate_term(model, cluster, m_free)
    return _clamp(raw) if clamp else raw


def mfu_bound(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, clamp: bool = True) -> float:
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    raw = _seq_factor(model) * 3.0 / (4.0 * L * H * Q**2) * _rate_term(model, cluster, m_free)
    return _clamp(raw) if clamp else raw


def tight_hfu_bound(
    model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, clamp: bool = True
) -> float:
    """HFU at which the forward transfer/compute ratio reaches exactly 1 for ``plan.gamma``."""
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    raw = (
        _seq_factor(model)
        / _ckpt_term(model, plan.gamma)
        / (L * H * Q)
        * _rate_term(model, cluster, m_free)
    )
    return _clamp(raw) if clamp else raw


def tight_mfu_bound(
    model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan, clamp: bool = True
) -> float:
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    g = plan.gamma
    raw = (
        _seq_factor(model)
        / (_ckpt_term(model, g) * (4.0 - g))
        * 3.0
        / (L * H * Q)
        * _rate_term(model, cluster, m_free)
    )
    return _clamp(raw) if clamp else raw


def throughput_bound(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> float:
    """Tokens/GPU/s ceiling, ``M_free * S_volume / (24 Q^2 L^2 H^3)``."""
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    return m_free * cluster.bandwidth / (24 * Q**2 * L**2 * H**3)


def throughput_bound_via_params(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> float:
    """Same ceiling written through the parameter count, ``M_free S / (2 phi L H Q^2)``."""
    m_free = _checked_free(model, cluster, plan)
    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    return (1.0 / param_count(model)) * (1.0 / (2 * L * H * Q**2)) * m_free * cluster.bandwidth


def binding_resource(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> BindingResource:
    """Diagnostic label: which resource saturates first at full token capacity.

    Not part of the analytical model; it evaluates the forward ratio at
    ``E_MAX`` with perfect hardware utilization.
    """
    e_max = max_token_capacity(model, cluster, plan)
    f_fwd, _, _ = flops_per_token(model, 0.0)
    t_fwd = f_fwd * e_max / cluster.peak_flops
    t_transfer = transfer_time(model, cluster)
    if t_fwd <= 0 or t_transfer / t_fwd > 1.0:
        return BindingResource.BANDWIDTH
    if e_max < model.seq_len:
        return BindingResource.MEMORY
    return BindingResource.COMPUTE


def bound_report(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> BoundReport:
    return BoundReport(
        e_max=max_token_capacity(model, cluster, plan),
        hfu_bound=hfu_bound(model, cluster, plan),
        mfu_bound=mfu_bound(model, cluster, plan),
        k_bound=throughput_bound(model, cluster, plan),
        binding_resource=binding_resource(model, cluster, plan),
        hfu_bound_raw=hfu_bound(model, cluster, plan, clamp=False),
        mfu_bound_raw=mfu_bound(model, cluster, plan, clamp=False),
        tight_hfu_bound=tight_hfu_bound(model, cluster, plan),
        tight_mfu_bound=tight_mfu_bound(model, cluster, plan),
        gamma=plan.gamma,
    )
