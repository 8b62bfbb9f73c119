import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsdp_plan.core import (
    ClusterSpec,
    ModelSpec,
    TrainPlan,
    ZeroStage,
    activation_memory_per_token,
    estimate,
    flops_per_token,
    free_memory,
    metrics,
    model_state_memory,
    param_count,
    phase_times,
    ratios,
    step_time,
    token_capacity,
    transfer_time,
)
from fsdp_plan.errors import InfeasibleConfig, ValidationError

GiB = 2**30

M_1_3B = ModelSpec(24, 2048, 16, 2048, name="1.3b")
M_13B = ModelSpec(40, 5120, 40, 2048, name="13b")
A100_200 = ClusterSpec(512, 40 * GiB, 10 * GiB, 312e12, 25e9, name="40GB-A100-200Gbps")


def a100(n, bandwidth=25e9, latency=0.0):
    return ClusterSpec(n, 40 * GiB, 10 * GiB, 312e12, bandwidth, latency)


# ---------------------------------------------------------------- oracle examples


@pytest.mark.parametrize(
    "layers,hidden,expected",
    [(24, 2048, 1_207_959_552), (1, 1, 12), (96, 16384, 309_237_645_312)],
)
def test_param_count(layers, hidden, expected):
    assert param_count(ModelSpec(layers, hidden, 1, 1)) == expected


def test_param_count_is_exact_integer_at_large_scale():
    m = ModelSpec(10_000, 300_000, 1, 1)
    assert param_count(m) == 12 * 10_000 * 300_000**2
    assert isinstance(param_count(m), int)


def test_model_state_memory_1_3b():
    params, grads, optim = model_state_memory(M_1_3B)
    assert params == grads == 2_415_919_104
    assert params / GiB == pytest.approx(2.25)
    assert optim / GiB == pytest.approx(13.5)


def test_model_state_memory_13b():
    params, _, optim = model_state_memory(M_13B)
    assert params / GiB == pytest.approx(23.43, rel=6e-3)
    assert optim / GiB == pytest.approx(140.6, rel=6e-3)


def test_fp32_doubles_every_byte_figure():
    wide = ModelSpec(40, 5120, 40, 2048, bytes_per_value=4)
    assert model_state_memory(wide) == tuple(2 * x for x in model_state_memory(M_13B))


def test_free_memory_oracle_1_3b_four_gpus():
    m = free_memory(M_1_3B, a100(4), TrainPlan())
    assert m == 27_380_416_512
    assert m / GiB == 25.5


def test_free_memory_large_n_limit():
    m = free_memory(M_1_3B, a100(10**9), TrainPlan())
    assert m == pytest.approx(30 * GiB, rel=1e-6)


def test_free_memory_negative_for_310b_stage12():
    big = ModelSpec(96, 16384, 128, 2048)
    assert free_memory(big, a100(8), TrainPlan(zero_stage=ZeroStage.STAGE12)) < 0


@pytest.mark.parametrize(
    "model,expected",
    [(M_13B, 409_600), (ModelSpec(96, 12288, 96, 2048), 2_359_296)],
)
def test_checkpointed_activation_bytes(model, expected):
    assert activation_memory_per_token(model, 0.0) == expected


def test_activation_midpoint():
    lo = activation_memory_per_token(M_13B, 0.0)
    hi = activation_memory_per_token(M_13B, 1.0)
    assert activation_memory_per_token(M_13B, 0.5) == pytest.approx((lo + hi) / 2, rel=1e-15)
    assert hi == 16 * 40 * 5120 * 2 + 2 * 40 * 5120


def test_token_capacity_oracle():
    assert token_capacity(M_1_3B, a100(4), TrainPlan()) == 278_528
    assert token_capacity(M_1_3B, a100(4), TrainPlan(gamma=1.0)) < 278_528


def test_token_capacity_zero_tokens_is_zero_and_estimate_rejects_it():
    per_token = activation_memory_per_token(M_13B, 0.0)
    states = sum(model_state_memory(M_13B)) // 8
    # one byte short of a single token
    cluster = ClusterSpec(8, int(states + per_token - 1), 0, 312e12, 25e9)
    assert free_memory(M_13B, cluster, TrainPlan()) == per_token - 1
    assert token_capacity(M_13B, cluster, TrainPlan()) == 0
    with pytest.raises(InfeasibleConfig, match="activation memory exceeds free memory"):
        estimate(M_13B, cluster, TrainPlan())


def test_token_capacity_raises_on_negative_free_memory():
    with pytest.raises(InfeasibleConfig, match="free memory negative"):
        token_capacity(ModelSpec(96, 16384, 128, 2048), a100(8), TrainPlan(zero_stage="1"))


def test_transfer_time_7b_oracle():
    m7 = ModelSpec(32, 4086, 32, 2048)
    assert transfer_time(m7, a100(512)) == pytest.approx(0.513, abs=5e-4)
    assert transfer_time(m7, a100(512, bandwidth=50e9)) == transfer_time(m7, a100(512)) / 2


def test_transfer_time_latency_only_term():
    eps = 3e-6
    m = ModelSpec(24, 2048, 16, 2048)
    base = transfer_time(m, a100(512))
    assert transfer_time(m, a100(512, latency=eps)) - base == pytest.approx(24 * 512 * eps)


def test_flops_per_token_oracle():
    m = ModelSpec(24, 2048, 16, 1024)
    f_fwd, f_bwd, f = flops_per_token(m, 0.0)
    assert f_fwd == 2_617_245_696
    assert f == 4 * f_fwd and f_bwd == 3 * f_fwd
    assert flops_per_token(m, 1.0)[2] == 3 * f_fwd


def test_phase_time_oracle():
    m = ModelSpec(24, 2048, 16, 1024)
    t_fwd, t_bwd = phase_times(m, a100(512), TrainPlan(assumed_hfu=0.5), 10240)
    assert t_fwd == pytest.approx(0.1718, abs=1e-4)
    assert t_bwd / t_fwd == pytest.approx(3.0, rel=1e-12)
    t2, _ = phase_times(m, a100(512), TrainPlan(assumed_hfu=0.5), 20480)
    assert t2 == 2 * t_fwd


@pytest.mark.parametrize(
    "args,expected",
    [((0.3, 0.7, 0.0), 1.0), ((0.0, 0.0, 0.5), 1.0), ((0.3, 0.7, 0.5), 1.2)],
)
def test_step_time(args, expected):
    assert step_time(*args) == pytest.approx(expected)


def test_ratios():
    assert ratios(0.5, 1.0, 0.5)[0] == 1.0
    r_fwd, r_bwd = ratios(0.3, 0.9, 0.513)
    assert r_fwd == pytest.approx(1.71)
    assert r_bwd == pytest.approx(r_fwd / 3)
    with pytest.raises(InfeasibleConfig):
        ratios(0.0, 1.0, 0.5)


def test_metrics_gamma_one_mfu_equals_hfu():
    plan = TrainPlan(gamma=1.0, assumed_hfu=0.4)
    _, hfu, mfu = metrics(M_13B, A100_200, plan, 1000, 2.0)
    assert mfu == pytest.approx(hfu, rel=1e-15)


def test_estimate_13b_eight_gpus_oracle():
    # hand-computed before implementation from the closed-form chain
    cluster = ClusterSpec(8, 40 * GiB, 10 * GiB, 312e12, 25e9)
    est = estimate(M_13B, cluster, TrainPlan(gamma=0.0, assumed_hfu=0.6))
    assert est.memory.free_bytes == 7_046_430_720
    assert est.tokens == 17_203
    assert est.flops_fwd == 26_843_545_600
    assert est.t_transfer == pytest.approx(1.00663296, rel=1e-12)
    assert est.t_fwd == pytest.approx(2.466824332034188, rel=1e-12)
    assert est.t_step == pytest.approx(9.867297328136752, rel=1e-12)
    assert est.throughput == pytest.approx(1743.4358596801758, rel=1e-12)
    assert est.hfu == pytest.approx(0.6, rel=1e-12)
    assert est.mfu == pytest.approx(0.45, rel=1e-12)
    assert not est.bandwidth_limited


def test_compute_bound_hfu_equals_assumed():
    est = estimate(M_13B, a100(8), TrainPlan(assumed_hfu=0.37))
    assert est.r_fwd < 1 / 3
    assert est.hfu == pytest.approx(0.37, rel=1e-12)


def test_batch_tokens_override():
    est = estimate(M_13B, a100(8), TrainPlan(batch_tokens=10_240))
    assert est.tokens == 10_240
    with pytest.raises(InfeasibleConfig, match="activation memory exceeds free memory"):
        estimate(M_13B, a100(8), TrainPlan(batch_tokens=10**9))


@pytest.mark.parametrize(
    "kwargs",
    [dict(gamma=-0.1), dict(gamma=1.5), dict(assumed_hfu=0.0), dict(assumed_hfu=1.2), dict(batch_tokens=0)],
)
def test_plan_validation(kwargs):
    with pytest.raises(ValidationError):
        TrainPlan(**kwargs)


def test_model_validation():
    with pytest.raises(ValidationError):
        ModelSpec(24, 2048, 16, 2048, bytes_per_value=3)
    with pytest.raises(ValidationError):
        ModelSpec(0, 2048, 16, 2048)


def test_cluster_validation():
    with pytest.raises(ValidationError):
        ClusterSpec(8, -1, 0, 312e12, 25e9)
    with pytest.raises(ValidationError):
        ClusterSpec(8, 40 * GiB, 10 * GiB, 312e12, 0.0)


def test_stage_parsing():
    assert ZeroStage.parse("1") is ZeroStage.STAGE12
    assert ZeroStage.parse("ZeRO-2") is ZeroStage.STAGE12
    assert ZeroStage.parse(3) is ZeroStage.STAGE3
    with pytest.raises(ValueError):
        ZeroStage.parse("4")


# ---------------------------------------------------------------------- properties

models = st.builds(
    ModelSpec,
    layers=st.integers(1, 128),
    hidden=st.integers(64, 20480),
    heads=st.just(8),
    seq_len=st.integers(128, 65536),
    bytes_per_value=st.sampled_from([2, 4]),
)
clusters = st.builds(
    ClusterSpec,
    num_gpus=st.integers(1, 4096),
    gpu_mem=st.integers(8, 192).map(lambda g: g * GiB),
    reserved=st.integers(0, 7).map(lambda g: g * GiB),
    peak_flops=st.floats(1e13, 2e15),
    bandwidth=st.floats(1e9, 1e11),
    latency=st.sampled_from([0.0, 1e-6, 1e-5]),
)
plans = st.builds(
    TrainPlan,
    gamma=st.floats(0, 1),
    zero_stage=st.sampled_from(list(ZeroStage)),
    assumed_hfu=st.floats(0.01, 1),
)


def _feasible(model, cluster, plan):
    try:
        return estimate(model, cluster, plan)
    except InfeasibleConfig:
        return None


@settings(max_examples=300, deadline=None)
@given(models, clusters, plans)
def test_estimate_invariants(model, cluster, plan):
    est = _feasible(model, cluster, plan)
    if est is None:
        return
    assert est.t_step >= est.t_fwd + est.t_bwd
    assert est.t_step >= 2 * est.t_transfer
    assert 0 < est.hfu <= plan.assumed_hfu * (1 + 1e-12)
    assert est.mfu * (4 - plan.gamma) == pytest.approx(3 * est.hfu, rel=1e-12)
    assert est.t_bwd / est.t_fwd == pytest.approx(3 - plan.gamma, rel=1e-12)
    assert est.r_bwd == pytest.approx(est.r_fwd / (3 - plan.gamma), rel=1e-12)
    assert est.memory.act_total_bytes <= est.memory.free_bytes
    assert est.memory.optimizer_bytes == 6 * est.memory.params_bytes


@settings(max_examples=200, deadline=None)
@given(models, st.floats(0, 1), st.floats(0, 1))
def test_gamma_monotonicity(model, g1, g2):
    lo, hi = sorted((g1, g2))
    assert activation_memory_per_token(model, lo) <= activation_memory_per_token(model, hi)
    assert flops_per_token(model, lo)[2] >= flops_per_token(model, hi)[2]
    cluster = a100(4096)
    if free_memory(model, cluster, TrainPlan()) > 0:
        e_lo = token_capacity(model, cluster, TrainPlan(gamma=lo))
        e_hi = token_capacity(model, cluster, TrainPlan(gamma=hi))
        assert e_lo >= e_hi


@settings(max_examples=200, deadline=None)
@given(models, clusters.map(lambda c: ClusterSpec(**{**c.__dict__, "latency": 0.0})), plans, st.floats(1.01, 8))
def test_bandwidth_monotonicity(model, cluster, plan, factor):
    slow = _feasible(model, cluster, plan)
    if slow is None:
        return
    faster = ClusterSpec(**{**cluster.__dict__, "bandwidth": cluster.bandwidth * factor})
    fast = estimate(model, faster, plan)
    assert fast.throughput >= slow.throughput
    assert fast.mfu >= slow.mfu
    if slow.r_fwd > 1:
        assert fast.throughput > slow.throughput


@settings(max_examples=100, deadline=None)
@given(models, clusters, plans)
def test_estimate_is_deterministic(model, cluster, plan):
    a = _feasible(model, cluster, plan)
    b = _feasible(model, cluster, plan)
    assert a == b


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_step_time_lower_bounds(t_fwd, t_bwd, t_tr):
    t = step_time(t_fwd, t_bwd, t_tr)
    assert t >= t_fwd + t_bwd
    assert t >= 2 * t_tr


def test_metric_identity_exact_on_presets(catalog):
    for model in catalog.models.values():
        for gamma in (0.0, 0.25, 0.5, 1.0):
            est = _feasible(model, A100_200, TrainPlan(gamma=gamma))
            if est is None:
                continue
            assert math.isclose(est.mfu * (4 - gamma), 3 * est.hfu, rel_tol=1e-12)
