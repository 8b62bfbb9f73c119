"""Exhaustive grid search over assumed HFU, activation-preservation ratio and
ZeRO stage, plus sweeps over models, clusters and GPU counts.

Grid points are evaluated in vectorized blocks (one block per stage and
gamma slice). Each block reports its best point under a totally ordered key,
so serial and threaded evaluation select the same winner.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bounds import BindingResource, binding_resource
from .core import (
    HFU_RTOL,
    ClusterSpec,
    ModelSpec,
    PerfEstimate,
    TrainPlan,
    ZeroStage,
    estimate,
    flops_per_token,
    free_memory,
    param_count,
    transfer_time,
)
from .errors import InfeasibleConfig, NoFeasibleConfig, ValidationError

MAX_GRID_POINTS = 1_000_000

# tie-break rank: Stage3 wins over Stage12
_STAGE_RANK = {ZeroStage.STAGE12: 0, ZeroStage.STAGE3: 1}


class Objective(enum.Enum):
    MAX_MFU = "mfu"
    MAX_HFU = "hfu"
    MAX_THROUGHPUT = "throughput"

    @classmethod
    def parse(cls, value) -> "Objective":
        if isinstance(value, Objective):
            return value
        text = str(value).strip().lower().replace("max", "").strip("-_ ")
        aliases = {"tgs": "throughput", "k": "throughput"}
        return cls(aliases.get(text, text))


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = math.floor((hi - lo) / step + 1e-9) + 1
    # index * step, never accumulated, so 100 steps do not drift
    values = np.round(lo + np.arange(n) * step, 12)
    return np.minimum(values, hi)


@dataclass(frozen=True)
class GridParams:
    alpha_min: float = 0.01
    alpha_max: float = 1.0
    alpha_step: float = 0.01
    gamma_min: float = 0.0
    gamma_max: float = 1.0
    gamma_step: float = 0.01
    stages: tuple[ZeroStage, ...] = (ZeroStage.STAGE12, ZeroStage.STAGE3)
    objective: Objective = Objective.MAX_MFU

    def __post_init__(self):
        if not (self.alpha_step > 0 and self.gamma_step > 0):
            raise ValidationError("grid steps must be positive", field="step")
        if not 0 < self.alpha_min <= self.alpha_max <= 1:
            raise ValidationError("need 0 < alpha_min <= alpha_max <= 1", field="alpha")
        if not 0 <= self.gamma_min <= self.gamma_max <= 1:
            raise ValidationError("need 0 <= gamma_min <= gamma_max <= 1", field="gamma")
        stages = tuple(dict.fromkeys(ZeroStage.parse(s) for s in self.stages))
        if not stages:
            raise ValidationError("at least one ZeRO stage is required", field="stages")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "objective", Objective.parse(self.objective))
        if self.size > MAX_GRID_POINTS:
            raise ValidationError(
                f"grid has {self.size} points, limit is {MAX_GRID_POINTS}", field="step"
            )

    @property
    def alphas(self) -> np.ndarray:
        return _axis(self.alpha_min, self.alpha_max, self.alpha_step)

    @property
    def gammas(self) -> np.ndarray:
        return _axis(self.gamma_min, self.gamma_max, self.gamma_step)

    @property
    def size(self) -> int:
        return len(self.alphas) * len(self.gammas) * len(self.stages)


@dataclass(frozen=True)
class FrontierRow:
    gamma: float
    stage: ZeroStage
    alpha: float
    tokens: int
    t_step: float
    throughput: float
    hfu: float
    mfu: float


@dataclass
class SearchResult:
    best_plan: TrainPlan
    best_estimate: PerfEstimate
    feasible_count: int
    evaluated_count: int
    objective: Objective
    model: ModelSpec
    cluster: ClusterSpec
    frontier: list[FrontierRow] | None = None


@dataclass
class _BlockResult:
    evaluated: int
    feasible: int
    best_key: tuple | None = None
    best_point: tuple[float, ZeroStage, float] | None = None
    frontier: list[FrontierRow] = field(default_factory=list)


def evaluate_point(model: ModelSpec, cluster: ClusterSpec, plan: TrainPlan) -> PerfEstimate | None:
    """Scalar evaluation of one grid point; ``None`` when the point is rejected."""
    try:
        est = estimate(model, cluster, plan)
    except InfeasibleConfig:
        return None
    if est.hfu > plan.assumed_hfu * (1 + HFU_RTOL):
        return None
    return est


def _evaluate_block(
    model: ModelSpec,
    cluster: ClusterSpec,
    stage: ZeroStage,
    alphas: np.ndarray,
    gammas: np.ndarray,
    objective: Objective,
    keep_frontier: bool,
) -> _BlockResult:
    result = _BlockResult(evaluated=len(alphas) * len(gammas), feasible=0)
    m_free = free_memory(model, cluster, TrainPlan(zero_stage=stage))
    if m_free <= 0 or len(gammas) == 0:
        return result

    L, H, Q = model.layers, model.hidden, model.bytes_per_value
    act = (1.0 - gammas) * (L * H * Q) + gammas * (16 * L * H * Q + 2 * L * H)
    tokens = np.floor(m_free / act)

    f_fwd, _, _ = flops_per_token(model, 0.0)
    f_bwd = 2 * f_fwd + (1.0 - gammas) * f_fwd
    f_total = (4.0 - gammas) * f_fwd
    t_tr = transfer_time(model, cluster)
    peak = cluster.peak_flops

    rate = (alphas * peak)[:, None]
    t_fwd = (float(f_fwd) * tokens)[None, :] / rate
    t_bwd = (f_bwd * tokens)[None, :] / rate
    t = np.maximum(t_fwd, t_tr) + np.maximum(t_bwd, t_tr)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = tokens[None, :] / t
    hfu = k * f_total[None, :] / peak
    mfu = 3 * k * f_fwd / peak

    ok = (tokens >= 1)[None, :] & (hfu <= alphas[:, None] * (1 + HFU_RTOL))
    result.feasible = int(ok.sum())
    if result.feasible == 0:
        return result

    score = {Objective.MAX_MFU: mfu, Objective.MAX_HFU: hfu, Objective.MAX_THROUGHPUT: k}[objective]
    masked = np.where(ok, score, -np.inf)
    best = masked.max()
    ai, gi = np.nonzero(masked == best)
    # highest gamma, then lowest alpha
    order = np.lexsort((ai, -gi))
    a_idx, g_idx = int(ai[order[0]]), int(gi[order[0]])
    alpha, gamma = float(alphas[a_idx]), float(gammas[g_idx])
    result.best_key = (float(best), gamma, _STAGE_RANK[stage], -alpha)
    result.best_point = (gamma, stage, alpha)

    if keep_frontier:
        for gi_, ai_ in zip(*np.nonzero(ok.T)):
            result.frontier.append(
                FrontierRow(
                    gamma=float(gammas[gi_]),
                    stage=stage,
                    alpha=float(alphas[ai_]),
                    tokens=int(tokens[gi_]),
                    t_step=float(t[ai_, gi_]),
                    throughput=float(k[ai_, gi_]),
                    hfu=float(hfu[ai_, gi_]),
                    mfu=float(mfu[ai_, gi_]),
                )
            )
    return result


def _blocks(grid: GridParams, chunks: int) -> list[tuple[ZeroStage, np.ndarray]]:
    gammas = grid.gammas
    parts = np.array_split(gammas, max(1, min(chunks, len(gammas))))
    return [(stage, part) for stage in grid.stages for part in parts if len(part)]


def grid_search(
    model: ModelSpec,
    cluster: ClusterSpec,
    grid: GridParams | None = None,
    seq_len: int | None = None,
    *,
    workers: int = 1,
    keep_frontier: bool = False,
) -> SearchResult:
    """Evaluate every (assumed HFU, gamma, stage) point and return the best one.

    Ties on the objective prefer higher gamma, then Stage3, then lower
    assumed HFU. Raises NoFeasibleConfig when nothing survives.
    """
    grid = grid or GridParams()
    if seq_len is not None:
        model = dataclasses.replace(model, seq_len=seq_len)
    alphas = grid.alphas
    tasks = _blocks(grid, chunks=workers if workers > 1 else 1)

    def run(task):
        stage, gammas = task
        return _evaluate_block(model, cluster, stage, alphas, gammas, grid.objective, keep_frontier)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, tasks))
    else:
        blocks = [run(task) for task in tasks]

    evaluated = sum(b.evaluated for b in blocks)
    feasible = sum(b.feasible for b in blocks)
    winners = [b for b in blocks if b.best_key is not None]
    if not winners:
        raise NoFeasibleConfig(
            f"no feasible configuration for {model.name or 'model'} on "
            f"{cluster.name or 'cluster'} with {cluster.num_gpus} GPU(s)"
        )
    top = max(winners, key=lambda b: b.best_key)
    gamma, stage, alpha = top.best_point
    plan = TrainPlan(gamma=gamma, zero_stage=stage, assumed_hfu=alpha)
    best = evaluate_point(model, cluster, plan)
    if best is None:  # pragma: no cover - vector and scalar paths share formulas
        raise NoFeasibleConfig("winning grid point failed scalar re-evaluation")

    frontier = None
    if keep_frontier:
        stage_order = {s: i for i, s in enumerate(grid.stages)}
        frontier = sorted(
            (row for b in blocks for row in b.frontier),
            key=lambda r: (stage_order[r.stage], r.gamma, r.alpha),
        )
    return SearchResult(
        best_plan=plan,
        best_estimate=best,
        feasible_count=feasible,
        evaluated_count=evaluated,
        objective=grid.objective,
        model=model,
        cluster=cluster,
        frontier=frontier,
    )


@dataclass
class SweepRow:
    model: ModelSpec
    cluster: ClusterSpec
    result: SearchResult | None
    error: str | None = None
    binding: BindingResource | None = None

    @property
    def feasible(self) -> bool:
        return self.result is not None

    @property
    def params(self) -> int:
        return param_count(self.model)


def sweep(
    models: Sequence[ModelSpec],
    clusters: ClusterSpec | Iterable[ClusterSpec],
    gpu_counts: Sequence[int],
    grid: GridParams | None = None,
    seq_lens: Sequence[int] | None = None,
    *,
    workers: int = 1,
) -> list[SweepRow]:
    """One grid search per (model, cluster, GPU count[, seq_len]).

    Infeasible combinations become rows with ``error`` set; the sweep never
    aborts on them.
    """
    if isinstance(clusters, ClusterSpec):
        clusters = [clusters]
    clusters = list(clusters)
    if not models or not clusters or not gpu_counts:
        raise ValueError("sweep needs at least one model, cluster and GPU count")
    rows = []
    for cluster in clusters:
        for model in models:
            for n in gpu_counts:
                sized = dataclasses.replace(cluster, num_gpus=int(n))
                for seq in seq_lens or [model.seq_len]:
                    m = dataclasses.replace(model, seq_len=int(seq))
                    try:
                        res = grid_search(m, sized, grid, workers=workers)
                    except NoFeasibleConfig as exc:
                        rows.append(SweepRow(m, sized, None, error=str(exc)))
                        continue
                    rows.append(
                        SweepRow(m, sized, res, binding=binding_resource(m, sized, res.best_plan))
                    )
    return rows
