"""Model/cluster configuration files, named presets and the measurement dataset.

Config files are YAML. A model file looks like::

    model:
      preset: 13b          # optional base to override
      layers: 40
      hidden: 5_120
      heads: 40
      seq_len: 2048
      bytes_per_value: 2

and a cluster file like::

    cluster:
      preset: 40GB-A100-200Gbps
      num_gpus: 8
      gpu_mem: 40GiB
      reserved: 10GiB
      peak_flops: 312T
      bandwidth: 200Gbps
      latency: 0

The top-level ``model:``/``cluster:`` wrapper is optional. Memory accepts
B/KiB/MiB/GiB/GB (GB == GiB), bandwidth accepts bps/Mbps/Gbps or B/s forms,
FLOP rates accept a G/T/P suffix.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .core import ClusterSpec, ModelSpec
from .errors import NoFeasibleConfig, ParseError, UnknownPreset, ValidationError
from .search import GridParams, Objective, grid_search
from .units import parse_bandwidth, parse_bytes, parse_flops, parse_int, parse_seconds

PRESETS_ENV = "FSDP_PLAN_PRESETS"

MODEL_FIELDS = ("name", "layers", "hidden", "heads", "seq_len", "bytes_per_value")
CLUSTER_FIELDS = ("name", "num_gpus", "gpu_mem", "reserved", "peak_flops", "bandwidth", "latency")
# informational keys tolerated in cluster files and presets
CLUSTER_INFO_FIELDS = ("nodes", "gpus_per_node", "node_bandwidth", "aliases", "gpu")
MODEL_INFO_FIELDS = ("aliases",)

_PRECISIONS = {"fp16": 2, "bf16": 2, "half": 2, "fp32": 4, "float": 4, "single": 4}


def _read_text(path) -> tuple[str, str]:
    p = Path(path)
    try:
        return p.read_text(encoding="utf-8"), str(p)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", source=str(p)) from None


def _line_map(node, prefix=()) -> dict[tuple, int]:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = prefix + (str(key_node.value),)
            lines[key] = key_node.start_mark.line + 1
            lines.update(_line_map(value_node, key))
    return lines


def load_yaml(text: str, source: str = "<string>") -> tuple[dict, dict[tuple, int]]:
    """Parse YAML text, returning the mapping and a ``key path -> line`` map."""
    try:
        data = yaml.safe_load(text)
        lines = _line_map(yaml.compose(text))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(
            str(getattr(exc, "problem", None) or exc),
            source=source,
            line=mark.line + 1 if mark else None,
        ) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError("top level must be a mapping", source=source, line=1)
    return data, lines


def _convert(name: str, value, lines: Mapping, path: tuple, parser):
    try:
        return parser(value)
    except (ValueError, TypeError) as exc:
        raise ValidationError(str(exc), field=name, line=lines.get(path + (name,))) from None


def _model_precision(value) -> int:
    if isinstance(value, str) and value.strip().lower() in _PRECISIONS:
        return _PRECISIONS[value.strip().lower()]
    return parse_int(value)


def model_from_mapping(
    data: Mapping,
    *,
    catalog: "PresetCatalog | None" = None,
    lines: Mapping | None = None,
    path: tuple = (),
    default_name: str = "",
) -> ModelSpec:
    lines = lines or {}
    data = dict(data)
    unknown = set(data) - set(MODEL_FIELDS) - set(MODEL_INFO_FIELDS) - {"preset", "precision"}
    if unknown:
        key = sorted(unknown)[0]
        raise ValidationError("unknown model field", field=key, line=lines.get(path + (key,)))
    base: dict = {}
    if "preset" in data:
        base = dataclasses.asdict((catalog or default_catalog()).model(str(data.pop("preset"))))
    data.pop("aliases", None)
    if "precision" in data:
        data["bytes_per_value"] = data.pop("precision")
    values = {**base}
    for key, parser in (
        ("layers", parse_int),
        ("hidden", parse_int),
        ("heads", parse_int),
        ("seq_len", parse_int),
        ("bytes_per_value", _model_precision),
    ):
        if key in data:
            values[key] = _convert(key, data[key], lines, path, parser)
    values["name"] = str(data.get("name", base.get("name") or default_name))
    missing = [k for k in MODEL_FIELDS if k not in values and k != "bytes_per_value"]
    if missing:
        raise ValidationError("required field missing", field=missing[0])
    values.setdefault("bytes_per_value", 2)
    try:
        return ModelSpec(**values)
    except ValidationError as exc:
        raise ValidationError(
            str(exc).split(": ", 1)[-1], field=exc.field, line=lines.get(path + (exc.field,))
        ) from None


def cluster_from_mapping(
    data: Mapping,
    *,
    catalog: "PresetCatalog | None" = None,
    lines: Mapping | None = None,
    path: tuple = (),
    defaults: Mapping | None = None,
    default_name: str = "",
) -> ClusterSpec:
    lines = lines or {}
    data = dict(data)
    unknown = set(data) - set(CLUSTER_FIELDS) - set(CLUSTER_INFO_FIELDS) - {"preset"}
    if unknown:
        key = sorted(unknown)[0]
        raise ValidationError("unknown cluster field", field=key, line=lines.get(path + (key,)))
    values: dict = {}
    if "preset" in data:
        values = dataclasses.asdict((catalog or default_catalog()).cluster(str(data.pop("preset"))))
    merged = {**(defaults or {}), **data}
    for key, parser in (
        ("num_gpus", parse_int),
        ("gpu_mem", parse_bytes),
        ("reserved", parse_bytes),
        ("peak_flops", parse_flops),
        ("bandwidth", parse_bandwidth),
        ("latency", parse_seconds),
    ):
        if key in merged:
            values[key] = _convert(key, merged[key], lines, path, parser)
    values["name"] = str(merged.get("name", values.get("name") or default_name))
    values.setdefault("num_gpus", 512)
    values.setdefault("reserved", 10 * 2**30)
    values.setdefault("latency", 0.0)
    missing = [k for k in CLUSTER_FIELDS if k not in values]
    if missing:
        raise ValidationError("required field missing", field=missing[0])
    try:
        return ClusterSpec(**values)
    except ValidationError as exc:
        raise ValidationError(
            str(exc).split(": ", 1)[-1], field=exc.field, line=lines.get(path + (exc.field,))
        ) from None


def _unwrap(data: dict, key: str) -> tuple[dict, tuple]:
    if set(data) == {key} and isinstance(data[key], dict):
        return data[key], (key,)
    return data, ()


def load_model_config(path, catalog: "PresetCatalog | None" = None) -> ModelSpec:
    text, source = _read_text(path)
    data, lines = load_yaml(text, source)
    body, prefix = _unwrap(data, "model")
    return model_from_mapping(
        body, catalog=catalog, lines=lines, path=prefix, default_name=Path(path).stem
    )


def load_cluster_config(path, catalog: "PresetCatalog | None" = None) -> ClusterSpec:
    text, source = _read_text(path)
    data, lines = load_yaml(text, source)
    body, prefix = _unwrap(data, "cluster")
    return cluster_from_mapping(
        body, catalog=catalog, lines=lines, path=prefix, default_name=Path(path).stem
    )


def dump_model_config(model: ModelSpec) -> str:
    """Canonical YAML for a model; ``load_model_config`` reads it back unchanged."""
    body = {k: getattr(model, k) for k in MODEL_FIELDS}
    return yaml.safe_dump({"model": body}, sort_keys=False)


def dump_cluster_config(cluster: ClusterSpec) -> str:
    body = {k: getattr(cluster, k) for k in CLUSTER_FIELDS}
    body["gpu_mem"] = int(body["gpu_mem"])
    body["reserved"] = int(body["reserved"])
    body["peak_flops"] = float(body["peak_flops"])
    body["bandwidth"] = float(body["bandwidth"])
    body["latency"] = float(body["latency"])
    return yaml.safe_dump({"cluster": body}, sort_keys=False)


# --------------------------------------------------------------------------- presets


def _key(name: str) -> str:
    return name.strip().lower()


@dataclass
class PresetCatalog:
    models: dict[str, ModelSpec] = field(default_factory=dict)
    clusters: dict[str, ClusterSpec] = field(default_factory=dict)
    model_aliases: dict[str, str] = field(default_factory=dict)

    def model(self, name: str) -> ModelSpec:
        key = _key(name)
        key = self.model_aliases.get(key, key)
        for preset_name, spec in self.models.items():
            if _key(preset_name) == key:
                return spec
        raise UnknownPreset(f"unknown model preset {name!r}; known: {', '.join(self.models)}")

    def cluster(self, name: str) -> ClusterSpec:
        key = _key(name)
        for preset_name, spec in self.clusters.items():
            if _key(preset_name) == key:
                return spec
        raise UnknownPreset(f"unknown cluster preset {name!r}; known: {', '.join(self.clusters)}")


def load_catalog(directory=None) -> PresetCatalog:
    """Read ``models.yaml``/``clusters.yaml`` from ``directory``, the
    ``FSDP_PLAN_PRESETS`` directory, or the bundled presets."""
    directory = directory or os.environ.get(PRESETS_ENV)
    if directory:
        base = Path(directory)
        model_text, model_src = _read_text(base / "models.yaml")
        cluster_text, cluster_src = _read_text(base / "clusters.yaml")
    else:
        pkg = resources.files("fsdp_plan") / "data" / "presets"
        model_text, model_src = (pkg / "models.yaml").read_text("utf-8"), "models.yaml"
        cluster_text, cluster_src = (pkg / "clusters.yaml").read_text("utf-8"), "clusters.yaml"

    catalog = PresetCatalog()
    data, lines = load_yaml(model_text, model_src)
    for name, body in (data.get("models") or {}).items():
        name = str(name)
        catalog.models[name] = model_from_mapping(
            {**body, "name": name}, lines=lines, path=("models", name)
        )
        for alias in body.get("aliases") or ():
            catalog.model_aliases[_key(str(alias))] = _key(name)

    data, lines = load_yaml(cluster_text, cluster_src)
    defaults = data.get("defaults") or {}
    for name, body in (data.get("clusters") or {}).items():
        name = str(name)
        catalog.clusters[name] = cluster_from_mapping(
            {**body, "name": name}, lines=lines, path=("clusters", name), defaults=defaults
        )
    return catalog


_DEFAULT_CATALOG: PresetCatalog | None = None


def default_catalog() -> PresetCatalog:
    global _DEFAULT_CATALOG
    if os.environ.get(PRESETS_ENV):
        return load_catalog()
    if _DEFAULT_CATALOG is None:
        _DEFAULT_CATALOG = load_catalog()
    return _DEFAULT_CATALOG


def resolve_model(ref: str, catalog: PresetCatalog | None = None) -> ModelSpec:
    """Preset name, else path to a model config file."""
    catalog = catalog or default_catalog()
    try:
        return catalog.model(ref)
    except UnknownPreset:
        if Path(ref).is_file():
            return load_model_config(ref, catalog)
        raise


def resolve_cluster(ref: str, catalog: PresetCatalog | None = None) -> ClusterSpec:
    catalog = catalog or default_catalog()
    try:
        return catalog.cluster(ref)
    except UnknownPreset:
        if Path(ref).is_file():
            return load_cluster_config(ref, catalog)
        raise


# ----------------------------------------------------------------------- measurements

MEASUREMENT_COLUMNS = (
    "source",
    "model",
    "cluster",
    "num_gpus",
    "context_length",
    "batch_size",
    "tokens_per_batch",
    "activate_mem_gib",
    "reserved_mem_gib",
    "mfu",
    "throughput_tgs",
    "empty_cache",
)
_REQUIRED_COLUMNS = ("model", "cluster", "num_gpus", "mfu")


@dataclass(frozen=True)
class MeasurementRecord:
    model_name: str
    cluster_name: str
    num_gpus: int
    context_length: int | None
    batch_size: int | None
    tokens_per_batch: int | None
    mfu: float | None
    throughput_tgs: float | None
    activate_mem_gib: float | None = None
    reserved_mem_gib: float | None = None
    empty_cache: bool = False
    oom: bool = False
    source: str = ""

    def __post_init__(self):
        if self.num_gpus < 1:
            raise ValidationError("must be positive", field="num_gpus")
        if self.oom:
            return
        if self.mfu is None or not 0 < self.mfu < 1:
            raise ValidationError(f"must lie in (0, 1), got {self.mfu!r}", field="mfu")
        if self.throughput_tgs is not None and not self.throughput_tgs > 0:
            raise ValidationError("must be positive", field="throughput_tgs")
        if None not in (self.context_length, self.batch_size, self.tokens_per_batch):
            if self.context_length * self.batch_size != self.tokens_per_batch:
                raise ValidationError(
                    f"{self.context_length} x {self.batch_size} != {self.tokens_per_batch}",
                    field="tokens_per_batch",
                )


def bundled_measurements_path() -> Path:
    return Path(str(resources.files("fsdp_plan") / "data" / "measurements.csv"))


def _verify_checksum(path: Path, raw: bytes) -> None:
    sidecar = path.with_name(path.name + ".sha256")
    if not sidecar.exists():
        return
    expected = sidecar.read_text().split()[0].strip().lower()
    if hashlib.sha256(raw).hexdigest() != expected:
        raise ParseError("checksum mismatch against " + sidecar.name, source=str(path))


def _opt(parse, text: str):
    text = text.strip()
    return None if text == "" else parse(text)


def load_measurements(path=None) -> list[MeasurementRecord]:
    """Read a measurement CSV (default: the bundled dataset).

    Rows containing ``OOM`` in any numeric cell become records with
    ``oom=True`` and no MFU. A ``<file>.sha256`` sidecar, when present, is
    verified first.
    """
    path = Path(path) if path is not None else bundled_measurements_path()
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", source=str(path)) from None
    _verify_checksum(path, raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("not valid UTF-8", source=str(path)) from None

    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames or []
    missing = [c for c in _REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"header lacks column {missing[0]!r}", source=str(path), line=1)
    records = []
    for i, row in enumerate(reader, start=2):
        cells = {k: (row.get(k) or "") for k in MEASUREMENT_COLUMNS}
        if None in row.values() or None in row:
            raise ParseError("wrong number of cells", source=str(path), line=i)
        oom = any(v.strip().upper() == "OOM" for v in cells.values())
        num = lambda v: None if v.strip().upper() == "OOM" else _opt(float, v)  # noqa: E731
        try:
            record = MeasurementRecord(
                model_name=cells["model"].strip(),
                cluster_name=cells["cluster"].strip(),
                num_gpus=parse_int(cells["num_gpus"]),
                context_length=_opt(parse_int, cells["context_length"]),
                batch_size=_opt(parse_int, cells["batch_size"]),
                tokens_per_batch=_opt(parse_int, cells["tokens_per_batch"]),
                mfu=num(cells["mfu"]),
                throughput_tgs=num(cells["throughput_tgs"]),
                activate_mem_gib=num(cells["activate_mem_gib"]),
                reserved_mem_gib=num(cells["reserved_mem_gib"]),
                empty_cache=cells["empty_cache"].strip().upper() in {"Y", "YES", "TRUE", "1"},
                oom=oom,
                source=cells["source"].strip(),
            )
        except ValidationError as exc:
            raise ValidationError(str(exc), field=exc.field, line=i) from None
        except ValueError as exc:
            raise ParseError(str(exc), source=str(path), line=i) from None
        records.append(record)
    return records


@dataclass(frozen=True)
class ValidationRow:
    record: MeasurementRecord
    predicted_mfu: float | None
    ratio: float | None
    flagged: bool
    status: str  # "ok", "flagged", "oom", "infeasible"


@dataclass
class ValidationReport:
    rows: list[ValidationRow]
    tolerance: float

    @property
    def flagged(self) -> list[ValidationRow]:
        return [r for r in self.rows if r.flagged]

    @property
    def checked(self) -> list[ValidationRow]:
        return [r for r in self.rows if r.ratio is not None]


def validate_against_measurements(
    records: Iterable[MeasurementRecord],
    catalog: PresetCatalog | None = None,
    tolerance: float = 0.02,
    grid: GridParams | None = None,
) -> ValidationReport:
    """Compare each measured MFU with the grid-search maximum for its setup.

    The model's sequence length is set to the record's context length. A
    record is flagged when ``measured > predicted * (1 + tolerance)``.
    Raises UnknownPreset if a model or cluster name does not resolve.
    """
    catalog = catalog or default_catalog()
    grid = grid or GridParams(objective=Objective.MAX_MFU)
    if grid.objective is not Objective.MAX_MFU:
        grid = dataclasses.replace(grid, objective=Objective.MAX_MFU)
    cache: dict[tuple, float | None] = {}
    rows = []
    for rec in records:
        model = catalog.model(rec.model_name)
        cluster = catalog.cluster(rec.cluster_name)
        if rec.oom or rec.mfu is None:
            rows.append(ValidationRow(rec, None, None, False, "oom"))
            continue
        seq = rec.context_length or model.seq_len
        key = (model.name, cluster.name, rec.num_gpus, seq)
        if key not in cache:
            try:
                res = grid_search(
                    dataclasses.replace(model, seq_len=seq),
                    dataclasses.replace(cluster, num_gpus=rec.num_gpus),
                    grid,
                )
                cache[key] = res.best_estimate.mfu
            except NoFeasibleConfig:
                cache[key] = None
        predicted = cache[key]
        if predicted is None:
            # measured a run the model calls impossible: always a discrepancy
            rows.append(ValidationRow(rec, None, None, True, "infeasible"))
            continue
        ratio = rec.mfu / predicted
        flagged = rec.mfu > predicted * (1 + tolerance)
        rows.append(ValidationRow(rec, predicted, ratio, flagged, "flagged" if flagged else "ok"))
    return ValidationReport(rows=rows, tolerance=tolerance)
