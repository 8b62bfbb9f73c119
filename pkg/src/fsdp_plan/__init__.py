"""Analytical planner for transformer training with fully sharded data parallelism."""

from .bounds import (
    BindingResource,
    BoundReport,
    bound_report,
    hfu_bound,
    max_token_capacity,
    mfu_bound,
    throughput_bound,
)
from .configio import (
    MeasurementRecord,
    PresetCatalog,
    default_catalog,
    load_catalog,
    load_cluster_config,
    load_measurements,
    load_model_config,
    resolve_cluster,
    resolve_model,
    validate_against_measurements,
)
from .core import (
    ClusterSpec,
    MemoryBreakdown,
    ModelSpec,
    PerfEstimate,
    TrainPlan,
    ZeroStage,
    estimate,
    param_count,
)
from .errors import (
    ConfigError,
    FsdpPlanError,
    InfeasibleConfig,
    NoFeasibleConfig,
    ParseError,
    UnknownPreset,
    ValidationError,
)
from .search import GridParams, Objective, SearchResult, evaluate_point, grid_search, sweep

__version__ = "0.1.0"
