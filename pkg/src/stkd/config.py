"""Run configuration: JSON schema, defaults, strict parsing, resolution.

Unknown keys anywhere in the document are rejected so a typo in a loss
weight cannot silently fall back to a default. The fully resolved config
(defaults merged, CLI/env overrides applied) is echoed to
``output_dir/config.resolved.json``; feeding that file back reproduces the
run bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, ParameterError

ENV_OUTPUT_DIR = "STKD_OUTPUT_DIR"


@dataclass
class PathsConfig:
    graph_csv: str | None = None
    readings_csv: str | None = None


@dataclass
class DataConfig:
    source: str = "synthetic"          # synthetic | csv
    paths: PathsConfig = field(default_factory=PathsConfig)
    n_nodes: int = 200
    n_steps: int = 2016
    step_minutes: int = 5
    radius: float = 0.15
    T_h: int = 12
    T_p: int = 3
    splits: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 42


@dataclass
class TeacherSection:
    L: int = 2
    h_T: int = 40
    K_t: int = 3
    lr: float = 1e-3
    epochs: int = 6
    patience: int = 10
    batch_size: int = 8
    grad_clip: float | None = 5.0


@dataclass
class StudentSection:
    h_S: int = 20
    d_e: int = 4
    n_layers: int = 2
    lr: float = 2e-3
    epochs: int = 25
    patience: int = 10
    batch_size: int = 8
    grad_clip: float | None = 5.0


@dataclass
class DistillSection:
    lambda_spatial: float = 1.0
    lambda_temporal: float = 1.0
    tau: float = 2.0
    rho_mode: str | float = "median"   # "median" or a positive number
    adaptive_mode: str = "error_softmax"
    teacher_rep_layer: int = -1


@dataclass
class BenchSection:
    reps: int = 100
    warmup: int = 10


@dataclass
class OversmoothingSection:
    depths: tuple[int, ...] = (0, 1, 2, 4, 8)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    student: StudentSection = field(default_factory=StudentSection)
    distill: DistillSection = field(default_factory=DistillSection)
    bench: BenchSection = field(default_factory=BenchSection)
    oversmoothing: OversmoothingSection = field(default_factory=OversmoothingSection)
    output_dir: str = "runs/default"


_LIST_FIELDS = {"splits", "depths"}


def _merge(cls, doc: dict, path: str):
    """Instantiate ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise FormatError(f"config: expected an object at {path or 'top level'}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        where = f"{path}." if path else ""
        raise FormatError(f"config: unknown key(s) {sorted(where + k for k in unknown)}")
    kwargs = {}
    for name in fields:
        if name not in doc:
            continue
        val = doc[name]
        here = f"{path}.{name}" if path else name
        if name in _SECTION_TYPES:
            kwargs[name] = _merge(_SECTION_TYPES[name], val, here)
        elif name in _LIST_FIELDS:
            if not isinstance(val, list):
                raise FormatError(f"config: {here} must be a list")
            kwargs[name] = tuple(val)
        else:
            kwargs[name] = val
    return cls(**kwargs)


_SECTION_TYPES = {
    "paths": PathsConfig,
    "data": DataConfig,
    "teacher": TeacherSection,
    "student": StudentSection,
    "distill": DistillSection,
    "bench": BenchSection,
    "oversmoothing": OversmoothingSection,
}


def _validate(cfg: RunConfig) -> None:
    d = cfg.data
    if d.source not in ("synthetic", "csv"):
        raise ParameterError(f"data.source must be 'synthetic' or 'csv', got {d.source!r}")
    if d.source == "csv" and (not d.paths.graph_csv or not d.paths.readings_csv):
        raise ParameterError("data.source 'csv' needs paths.graph_csv and paths.readings_csv")
    if d.n_nodes < 2 or d.n_steps < 1 or d.T_h < 1 or d.T_p < 1:
        raise ParameterError(f"invalid data block: {d}")
    if not (0.0 < d.radius <= 1.0):
        raise ParameterError(f"data.radius must be in (0, 1], got {d.radius}")
    if len(d.splits) != 3 or abs(sum(d.splits) - 1.0) > 1e-9 or any(s < 0 for s in d.splits):
        raise ParameterError(f"data.splits must be 3 fractions summing to 1, got {d.splits}")
    if d.seed < 0:
        raise ParameterError(f"data.seed must be >= 0, got {d.seed}")
    t, s = cfg.teacher, cfg.student
    for block, name in ((t, "teacher"), (s, "student")):
        if block.lr <= 0 or block.epochs < 1 or block.patience < 0 or block.batch_size < 1:
            raise ParameterError(f"invalid {name} block: {block}")
        if block.grad_clip is not None and block.grad_clip <= 0:
            raise ParameterError(f"{name}.grad_clip must be positive or null")
    if t.L < 1 or t.h_T < 1 or t.K_t < 1:
        raise ParameterError(f"invalid teacher dims: {t}")
    if d.T_h < t.L * (t.K_t - 1) + 1:
        raise ParameterError(
            f"T_h={d.T_h} too short for teacher L={t.L}, K_t={t.K_t} "
            f"(needs >= {t.L * (t.K_t - 1) + 1})")
    if s.h_S < 1 or s.d_e < 0 or s.n_layers < 1:
        raise ParameterError(f"invalid student dims: {s}")
    di = cfg.distill
    if di.lambda_spatial < 0 or di.lambda_temporal < 0 or di.tau <= 0:
        raise ParameterError(f"invalid distill block: {di}")
    if isinstance(di.rho_mode, str):
        if di.rho_mode != "median":
            raise ParameterError(f"distill.rho_mode must be 'median' or a number, got {di.rho_mode!r}")
    elif not isinstance(di.rho_mode, (int, float)) or di.rho_mode <= 0:
        raise ParameterError(f"distill.rho_mode number must be > 0, got {di.rho_mode}")
    if di.adaptive_mode not in ("uniform", "error_softmax"):
        raise ParameterError(f"unknown distill.adaptive_mode {di.adaptive_mode!r}")
    if cfg.bench.reps < 30 or cfg.bench.warmup < 0:
        raise ParameterError(f"invalid bench block: {cfg.bench}")
    o = cfg.oversmoothing
    if not o.depths or any(x < 0 for x in o.depths) or list(o.depths) != sorted(o.depths):
        raise ParameterError(f"oversmoothing.depths must be ascending and >= 0, got {o.depths}")


def load_run_config(path, seed_override: int | None = None,
                    no_kd: bool = False) -> RunConfig:
    """Parse, merge defaults, apply overrides, validate."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON: {exc}") from exc
    cfg = _merge(RunConfig, doc, "")
    if seed_override is not None:
        cfg.data.seed = seed_override
    if no_kd:
        cfg.distill.lambda_spatial = 0.0
        cfg.distill.lambda_temporal = 0.0
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if env_dir:
        cfg.output_dir = env_dir
    try:
        _validate(cfg)
    except TypeError as exc:
        raise FormatError(f"config: field has the wrong type: {exc}") from exc
    return cfg


def resolved_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_resolved(cfg: RunConfig, out_dir: Path) -> Path:
    out = out_dir / "config.resolved.json"
    out.write_text(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True) + "\n")
    return out
