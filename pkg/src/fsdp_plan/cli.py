"""``fsdp-plan`` command line front end.

Exit codes: 0 success, 1 input/usage error, 2 infeasible configuration,
3 measurements exceed predictions.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from typing import Sequence

from . import bounds as bnd
from .configio import (
    bundled_measurements_path,
    load_measurements,
    resolve_cluster,
    resolve_model,
    validate_against_measurements,
)
from .core import TrainPlan, ZeroStage, estimate, param_count
from .errors import ConfigError, InfeasibleConfig, NoFeasibleConfig, ValidationError
from .search import GridParams, Objective, grid_search, sweep

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_FLAGGED = 0, 1, 2, 3

# columns printed with the fraction precision
FRACTION_KEYS = {
    "gamma",
    "assumed_hfu",
    "hfu",
    "mfu",
    "hfu_bound",
    "mfu_bound",
    "tight_hfu_bound",
    "tight_mfu_bound",
    "predicted_mfu",
    "measured_mfu",
    "ratio",
    "r_fwd",
    "r_bwd",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _precision(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 12:
        raise argparse.ArgumentTypeError("precision must lie in [1, 12]")
    return value


# ------------------------------------------------------------------------ rendering


def _fmt(key: str, value, precision: int) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if not math.isfinite(value):
            return str(value)
        if key in FRACTION_KEYS:
            return f"{value:.{precision}f}"
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return f"{value:.6g}"
    return str(value)


def render(rows: list[dict], kind: str, precision: int, notes: Sequence[str] = ()) -> str:
    if kind == "json":
        payload = rows[0] if len(rows) == 1 else rows
        return json.dumps(payload, indent=2) + "\n"
    if kind == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0]) if rows else []
        writer.writerow(keys)
        for row in rows:
            writer.writerow([_fmt(k, row.get(k), precision) for k in keys])
        return buf.getvalue()
    # human table: key/value for one row, columns otherwise
    if len(rows) == 1:
        row = rows[0]
        width = max(len(k) for k in row)
        lines = [f"{k:<{width}}  {_fmt(k, v, precision)}" for k, v in row.items()]
    else:
        keys = list(rows[0]) if rows else []
        cells = [[_fmt(k, r.get(k), precision) for k in keys] for r in rows]
        widths = [max([len(k)] + [len(c[i]) for c in cells]) for i, k in enumerate(keys)]
        lines = ["  ".join(k.ljust(w) for k, w in zip(keys, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(cell, widths)) for cell in cells]
    lines += list(notes)
    return "\n".join(lines) + "\n"


def _emit(args, rows: list[dict], notes: Sequence[str] = ()) -> None:
    text = render(rows, args.format, args.precision, notes if args.format == "table" else ())
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _tgs(value: float, args, num_gpus: int) -> float:
    return value * num_gpus if args.global_tgs else value


# ------------------------------------------------------------------------- commands


def _load_inputs(args):
    model = resolve_model(args.model)
    cluster = resolve_cluster(args.cluster)
    if getattr(args, "seq_len", None):
        model = dataclasses.replace(model, seq_len=args.seq_len)
    if getattr(args, "gpus", None):
        cluster = dataclasses.replace(cluster, num_gpus=args.gpus)
    return model, cluster


def _estimate_row(model, cluster, est, args) -> dict:
    mem = est.memory
    plan = est.plan
    return {
        "model": model.name,
        "cluster": cluster.name,
        "num_gpus": cluster.num_gpus,
        "zero_stage": str(plan.zero_stage),
        "gamma": plan.gamma,
        "assumed_hfu": plan.assumed_hfu,
        "seq_len": model.seq_len,
        "params": param_count(model),
        "params_bytes": mem.params_bytes,
        "grad_bytes": mem.grad_bytes,
        "optimizer_bytes": mem.optimizer_bytes,
        "free_bytes": mem.free_bytes,
        "act_per_token_bytes": mem.act_per_token_bytes,
        "act_total_bytes": mem.act_total_bytes,
        "tokens": est.tokens,
        "flops_fwd": est.flops_fwd,
        "flops_bwd": est.flops_bwd,
        "flops_total": est.flops_total,
        "t_transfer": est.t_transfer,
        "t_fwd": est.t_fwd,
        "t_bwd": est.t_bwd,
        "t_step": est.t_step,
        "r_fwd": est.r_fwd,
        "r_bwd": est.r_bwd,
        "bandwidth_limited": est.bandwidth_limited,
        "tgs": _tgs(est.throughput, args, cluster.num_gpus),
        "log10_tgs": math.log10(_tgs(est.throughput, args, cluster.num_gpus)),
        "hfu": est.hfu,
        "mfu": est.mfu,
    }


def cmd_estimate(args) -> int:
    model, cluster = _load_inputs(args)
    plan = TrainPlan(
        gamma=args.gamma,
        zero_stage=ZeroStage.parse(args.zero_stage),
        assumed_hfu=args.assumed_hfu,
        batch_tokens=args.batch_tokens,
    )
    try:
        est = estimate(model, cluster, plan)
    except InfeasibleConfig as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _emit(args, [_estimate_row(model, cluster, est, args)])
    return EXIT_OK


def cmd_bounds(args) -> int:
    model, cluster = _load_inputs(args)
    plan = TrainPlan(gamma=args.gamma, zero_stage=ZeroStage.parse(args.zero_stage))
    try:
        rep = bnd.bound_report(model, cluster, plan)
    except InfeasibleConfig as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    row = {
        "model": model.name,
        "cluster": cluster.name,
        "num_gpus": cluster.num_gpus,
        "zero_stage": str(plan.zero_stage),
        "seq_len": model.seq_len,
        "e_max": rep.e_max,
        "hfu_bound": rep.hfu_bound,
        "hfu_bound_clamped": rep.hfu_clamped,
        "mfu_bound": rep.mfu_bound,
        "mfu_bound_clamped": rep.mfu_clamped,
        "k_bound": _tgs(rep.k_bound, args, cluster.num_gpus),
        "binding_resource": str(rep.binding_resource),
    }
    if args.verbose:
        row.update(
            gamma=rep.gamma,
            hfu_bound_raw=rep.hfu_bound_raw,
            mfu_bound_raw=rep.mfu_bound_raw,
            tight_hfu_bound=rep.tight_hfu_bound,
            tight_mfu_bound=rep.tight_mfu_bound,
        )
    notes = ["binding_resource is a heuristic diagnostic, not part of the analytical bounds"]
    if args.format == "table":
        for key, clamped in (("hfu_bound", rep.hfu_clamped), ("mfu_bound", rep.mfu_clamped)):
            if clamped:
                row[key] = "≥1.0 (compute-limited)"
    _emit(args, [row], notes)
    return EXIT_OK


def _grid_from_args(args) -> GridParams:
    return GridParams(
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
        alpha_step=args.alpha_step,
        gamma_min=args.gamma_min,
        gamma_max=args.gamma_max,
        gamma_step=args.gamma_step,
        stages=tuple(ZeroStage.parse(s) for s in args.stages),
        objective=Objective.parse(args.objective),
    )


def _search_row(res, args) -> dict:
    est = res.best_estimate
    n = res.cluster.num_gpus
    return {
        "model": res.model.name,
        "cluster": res.cluster.name,
        "num_gpus": n,
        "seq_len": res.model.seq_len,
        "objective": res.objective.value,
        "zero_stage": str(res.best_plan.zero_stage),
        "gamma": res.best_plan.gamma,
        "assumed_hfu": res.best_plan.assumed_hfu,
        "mfu": est.mfu,
        "hfu": est.hfu,
        "tgs": _tgs(est.throughput, args, n),
        "log10_tgs": math.log10(_tgs(est.throughput, args, n)),
        "tokens": est.tokens,
        "t_step": est.t_step,
        "r_fwd": est.r_fwd,
        "feasible_count": res.feasible_count,
        "evaluated_count": res.evaluated_count,
    }


def cmd_search(args) -> int:
    model, cluster = _load_inputs(args)
    grid = _grid_from_args(args)
    try:
        res = grid_search(
            model, cluster, grid, workers=args.workers, keep_frontier=bool(args.frontier)
        )
    except NoFeasibleConfig as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.frontier:
        with open(args.frontier, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["gamma", "zero_stage", "assumed_hfu", "tokens", "t_step", "tgs", "hfu", "mfu"])
            for r in res.frontier:
                writer.writerow(
                    [
                        _fmt("gamma", r.gamma, args.precision),
                        str(r.stage),
                        _fmt("assumed_hfu", r.alpha, args.precision),
                        r.tokens,
                        _fmt("t_step", r.t_step, args.precision),
                        _fmt("tgs", _tgs(r.throughput, args, cluster.num_gpus), args.precision),
                        _fmt("hfu", r.hfu, args.precision),
                        _fmt("mfu", r.mfu, args.precision),
                    ]
                )
    _emit(args, [_search_row(res, args)])
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.models:
        raise UsageError("--models must name at least one model")
    if not args.clusters:
        raise UsageError("--clusters must name at least one cluster")
    if not args.gpu_counts:
        raise UsageError("--gpu-counts must list at least one GPU count")
    models = [resolve_model(m) for m in args.models]
    clusters = [resolve_cluster(c) for c in args.clusters]
    rows = []
    for row in sweep(models, clusters, args.gpu_counts, _grid_from_args(args), args.seq_lens, workers=args.workers):
        n = row.cluster.num_gpus
        out = {
            "model": row.model.name,
            "params": row.params,
            "cluster": row.cluster.name,
            "N": n,
            "seq_len": row.model.seq_len,
            "stage": None,
            "gamma": None,
            "assumed_hfu": None,
            "mfu": None,
            "hfu": None,
            "tgs": None,
            "log10_tgs": None,
            "tokens": None,
            "binding_resource": None,
            "status": "ok" if row.feasible else "infeasible",
        }
        if row.feasible:
            est = row.result.best_estimate
            tgs = _tgs(est.throughput, args, n)
            out.update(
                stage=str(row.result.best_plan.zero_stage),
                gamma=row.result.best_plan.gamma,
                assumed_hfu=row.result.best_plan.assumed_hfu,
                mfu=est.mfu,
                hfu=est.hfu,
                tgs=tgs,
                log10_tgs=math.log10(tgs),
                tokens=est.tokens,
                binding_resource=str(row.binding),
            )
        rows.append(out)
    _emit(args, rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.measurements or bundled_measurements_path()
    records = load_measurements(path)
    report = validate_against_measurements(records, tolerance=args.tolerance)
    rows = []
    for r in report.rows:
        rec = r.record
        rows.append(
            {
                "source": rec.source,
                "model": rec.model_name,
                "cluster": rec.cluster_name,
                "num_gpus": rec.num_gpus,
                "context_length": rec.context_length,
                "measured_mfu": rec.mfu,
                "predicted_mfu": r.predicted_mfu,
                "ratio": r.ratio,
                "status": r.status,
            }
        )
    notes = [
        f"{len(report.checked)} records checked, {len(report.flagged)} flagged "
        f"(tolerance {args.tolerance:g})"
    ]
    _emit(args, rows, notes)
    if args.format != "table":
        print(notes[0], file=sys.stderr)
    return EXIT_FLAGGED if report.flagged else EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--out", default="-", help="output file (default: standard output)")
    common.add_argument("--precision", type=_precision, default=3, help="decimals for fractions")
    common.add_argument(
        "--global", dest="global_tgs", action="store_true", help="report TGS summed over all GPUs"
    )

    target = _Parser(add_help=False)
    target.add_argument("model", help="model preset name or config file")
    target.add_argument("cluster", help="cluster preset name or config file")
    target.add_argument("--gpus", type=int, help="override the cluster GPU count")
    target.add_argument("--seq-len", type=int, help="override the model sequence length")

    grid = _Parser(add_help=False)
    grid.add_argument("--alpha-min", type=float, default=0.01)
    grid.add_argument("--alpha-max", type=float, default=1.0)
    grid.add_argument("--alpha-step", type=float, default=0.01)
    grid.add_argument("--gamma-min", type=float, default=0.0)
    grid.add_argument("--gamma-max", type=float, default=1.0)
    grid.add_argument("--gamma-step", type=float, default=0.01)
    grid.add_argument("--stages", type=_str_list, default=["1/2", "3"], help="e.g. '1/2,3'")
    grid.add_argument("--objective", choices=("mfu", "hfu", "throughput"), default="mfu")
    grid.add_argument("--workers", type=int, default=1)

    parser = _Parser(prog="fsdp-plan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", parents=[target, common], help="evaluate one configuration")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--zero-stage", default="3")
    p.add_argument("--assumed-hfu", type=float, default=1.0)
    p.add_argument("--batch-tokens", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bounds", parents=[target, common], help="closed-form ceilings")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--zero-stage", default="3")
    p.add_argument("--verbose", action="store_true", help="also print the tight forms")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("search", parents=[target, grid, common], help="grid search one setup")
    p.add_argument("--frontier", help="write every feasible grid point to this CSV")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", parents=[grid, common], help="grid search many setups")
    p.add_argument("--models", type=_str_list, required=True)
    p.add_argument("--clusters", type=_str_list, default=["40GB-A100-200Gbps", "40GB-A100-100Gbps"])
    p.add_argument("--gpu-counts", type=_int_list, default=[512])
    p.add_argument("--seq-lens", type=_int_list, help="extra sequence-length axis")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common], help="compare measurements with predictions")
    p.add_argument("--measurements", help="CSV file (default: bundled dataset)")
    p.add_argument("--tolerance", type=float, default=0.02)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fsdp-plan: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValidationError, ValueError) as exc:
        print(f"fsdp-plan: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"fsdp-plan: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
