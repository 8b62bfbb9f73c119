import dataclasses
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsdp_plan.core import ClusterSpec, ModelSpec, TrainPlan, ZeroStage, estimate
from fsdp_plan.errors import InfeasibleConfig, NoFeasibleConfig, ValidationError
from fsdp_plan.search import (
    GridParams,
    Objective,
    evaluate_point,
    grid_search,
    sweep,
)

GiB = 2**30


@pytest.fixture(scope="module")
def a100_100(catalog):
    return catalog.cluster("40GB-A100-100Gbps")


def brute_force(model, cluster, grid):
    """Reference argmax by scalar evaluation of every point."""
    best_key, best_plan, feasible = None, None, 0
    rank = {ZeroStage.STAGE12: 0, ZeroStage.STAGE3: 1}
    for stage in grid.stages:
        for gamma in grid.gammas:
            for alpha in grid.alphas:
                plan = TrainPlan(gamma=float(gamma), zero_stage=stage, assumed_hfu=float(alpha))
                est = evaluate_point(model, cluster, plan)
                if est is None:
                    continue
                feasible += 1
                value = {
                    Objective.MAX_MFU: est.mfu,
                    Objective.MAX_HFU: est.hfu,
                    Objective.MAX_THROUGHPUT: est.throughput,
                }[grid.objective]
                key = (value, plan.gamma, rank[stage], -plan.assumed_hfu)
                if best_key is None or key > best_key:
                    best_key, best_plan = key, plan
    return best_plan, feasible


def test_grid_axes_are_inclusive_and_drift_free():
    g = GridParams()
    assert len(g.alphas) == 100 and g.alphas[0] == 0.01 and g.alphas[-1] == 1.0
    assert len(g.gammas) == 101 and g.gammas[0] == 0.0 and g.gammas[-1] == 1.0
    assert g.alphas[56] == 0.57
    assert g.size == 100 * 101 * 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(alpha_step=0),
        dict(alpha_min=0.5, alpha_max=0.4),
        dict(gamma_max=1.5),
        dict(stages=()),
        dict(alpha_step=1e-5, gamma_step=1e-5),
    ],
)
def test_grid_validation(kwargs):
    with pytest.raises(ValidationError):
        GridParams(**kwargs)


def test_objective_parsing():
    assert Objective.parse("MaxMFU") is Objective.MAX_MFU
    assert Objective.parse("max-hfu") is Objective.MAX_HFU
    assert Objective.parse("tgs") is Objective.MAX_THROUGHPUT


def test_exhaustive_count(catalog, a100_100):
    grid = GridParams(alpha_step=0.05, gamma_step=0.1)
    res = grid_search(catalog.model("13b"), a100_100, grid)
    assert res.evaluated_count == grid.size == 20 * 11 * 2
    assert res.feasible_count <= res.evaluated_count


@pytest.mark.parametrize("name", ["1.3b", "13b", "175b", "310b"])
@pytest.mark.parametrize("objective", list(Objective))
def test_vectorized_matches_brute_force(catalog, a100_100, name, objective):
    grid = GridParams(alpha_step=0.05, gamma_step=0.05, objective=objective)
    model = catalog.model(name)
    res = grid_search(model, a100_100, grid)
    plan, feasible = brute_force(model, a100_100, grid)
    assert res.best_plan == plan
    assert res.feasible_count == feasible


def test_degenerate_single_point(catalog, a100_100):
    grid = GridParams(alpha_min=0.6, alpha_max=0.6, gamma_min=0.3, gamma_max=0.3, stages=("3",))
    model = catalog.model("13b")
    res = grid_search(model, a100_100, grid)
    assert res.evaluated_count == 1
    expected = evaluate_point(model, a100_100, TrainPlan(gamma=0.3, assumed_hfu=0.6))
    assert res.best_estimate == expected


def test_four_point_grid_equals_max_of_four(catalog, a100_100):
    grid = GridParams(alpha_step=1.0, gamma_step=1.0)
    assert grid.size == 4
    model = catalog.model("13b")
    res = grid_search(model, a100_100, grid)
    points = [
        evaluate_point(model, a100_100, TrainPlan(gamma=g, zero_stage=s, assumed_hfu=0.01))
        for g in (0.0, 1.0)
        for s in ZeroStage
    ]
    assert res.best_estimate.mfu == max(p.mfu for p in points if p is not None)


def test_no_feasible_config(catalog, a100_100):
    tiny = dataclasses.replace(a100_100, num_gpus=4)
    with pytest.raises(NoFeasibleConfig):
        grid_search(catalog.model("310b"), tiny)


def test_310b_stage12_points_all_infeasible(catalog, a100_100):
    model = catalog.model("310b")
    for gamma, alpha in itertools.product((0.0, 0.5, 1.0), (0.1, 1.0)):
        plan = TrainPlan(gamma=gamma, zero_stage=ZeroStage.STAGE12, assumed_hfu=alpha)
        assert evaluate_point(model, a100_100, plan) is None


def test_evaluate_point_compute_bound_identity():
    model = ModelSpec(4, 512, 4, 2048)
    cluster = ClusterSpec(64, 40 * GiB, 10 * GiB, 312e12, 1e15)
    est = evaluate_point(model, cluster, TrainPlan(assumed_hfu=0.42))
    assert est is not None
    assert est.hfu == pytest.approx(0.42, rel=1e-12)


def test_serial_equals_parallel(catalog, a100_100):
    for name in ("7b", "66b", "310b"):
        model = catalog.model(name)
        serial = grid_search(model, a100_100, workers=1, keep_frontier=True)
        parallel = grid_search(model, a100_100, workers=4, keep_frontier=True)
        assert serial.best_plan == parallel.best_plan
        assert serial.best_estimate == parallel.best_estimate
        assert serial.feasible_count == parallel.feasible_count
        assert serial.frontier == parallel.frontier


def test_frontier_rows_are_sound(catalog, a100_100):
    model = catalog.model("30b")
    res = grid_search(model, a100_100, GridParams(alpha_step=0.02, gamma_step=0.05), keep_frontier=True)
    assert len(res.frontier) == res.feasible_count
    for row in res.frontier:
        plan = TrainPlan(gamma=row.gamma, zero_stage=row.stage, assumed_hfu=row.alpha)
        est = estimate(model, a100_100, plan)
        assert est.tokens == row.tokens
        assert est.memory.act_total_bytes <= est.memory.free_bytes
        assert est.hfu <= row.alpha * (1 + 1e-12)
        assert est.mfu == pytest.approx(row.mfu, rel=1e-12)


def test_coarse_grid_never_beats_fine(catalog, a100_100):
    for name in ("7b", "30b", "175b"):
        model = catalog.model(name)
        coarse = grid_search(model, a100_100, GridParams(alpha_step=0.05, gamma_step=0.05))
        fine = grid_search(model, a100_100, GridParams())
        assert coarse.best_estimate.mfu <= fine.best_estimate.mfu


def test_throughput_and_hfu_objectives_agree_when_tokens_fixed(catalog, a100_100):
    grid = GridParams(gamma_min=0.0, gamma_max=0.0, stages=("3",))
    model = catalog.model("13b")
    by_k = grid_search(model, a100_100, dataclasses.replace(grid, objective="throughput"))
    by_h = grid_search(model, a100_100, dataclasses.replace(grid, objective="hfu"))
    assert by_k.best_estimate.throughput == by_h.best_estimate.throughput


def test_seq_len_override(catalog, a100_100):
    res = grid_search(catalog.model("13b"), a100_100, seq_len=8192)
    assert res.model.seq_len == 8192


def test_sweep_paper_setup(catalog):
    models = list(catalog.models.values())
    clusters = [catalog.cluster("40GB-A100-200Gbps"), catalog.cluster("40GB-A100-100Gbps")]
    rows = sweep(models, clusters, [512])
    assert len(rows) == 14
    assert all(r.feasible for r in rows)
    assert all(r.binding is not None for r in rows)


def test_sweep_records_infeasible_rows(catalog, a100_100):
    rows = sweep([catalog.model("1.3b"), catalog.model("310b")], a100_100, [8, 512])
    status = {(r.model.name, r.cluster.num_gpus): r.feasible for r in rows}
    assert status == {("1.3b", 8): True, ("1.3b", 512): True, ("310b", 8): False, ("310b", 512): True}
    assert "no feasible" in next(r for r in rows if not r.feasible).error


def test_sweep_seq_len_axis(catalog, a100_100):
    rows = sweep([catalog.model("7b")], a100_100, [64], seq_lens=[1024, 4096])
    assert [r.model.seq_len for r in rows] == [1024, 4096]


def test_sweep_requires_nonempty_lists(a100_100):
    with pytest.raises(ValueError):
        sweep([], a100_100, [8])


@settings(max_examples=60, deadline=None)
@given(
    layers=st.integers(2, 96),
    hidden=st.integers(256, 16384),
    n=st.sampled_from([8, 32, 256, 1024]),
    bw=st.floats(1e9, 1e11),
    step=st.sampled_from([0.05, 0.1, 0.25]),
)
def test_search_soundness_property(layers, hidden, n, bw, step):
    model = ModelSpec(layers, hidden, 8, 2048)
    cluster = ClusterSpec(n, 40 * GiB, 10 * GiB, 312e12, bw)
    grid = GridParams(alpha_step=step, gamma_step=step)
    try:
        res = grid_search(model, cluster, grid)
    except NoFeasibleConfig:
        for stage in grid.stages:
            with pytest.raises(InfeasibleConfig):
                estimate(model, cluster, TrainPlan(gamma=0.0, zero_stage=stage))
        return
    est = res.best_estimate
    assert est.memory.act_total_bytes <= est.memory.free_bytes
    assert est.hfu <= res.best_plan.assumed_hfu * (1 + 1e-12)
    assert res.feasible_count <= res.evaluated_count == grid.size
