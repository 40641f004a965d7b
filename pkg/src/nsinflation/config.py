"""Experiment configuration: a JSON document validated with pydantic.

Every key can be overridden from the environment with the ``NSINFL_``
prefix; nested keys join with a double underscore, and values are parsed as
JSON when possible (``NSINFL_GRID_POLICY__MAX_POINTS=512``,
``NSINFL_N_LIST=[3,4]``).
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator

from .besov import format_exponent, parse_exponent
from .solver import GridPolicy, TimePolicy

__all__ = [
    "ConfigError",
    "GridPolicyConfig",
    "TimeGridConfig",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "config_from_mapping",
    "env_overrides",
    "ENV_PREFIX",
]

ENV_PREFIX = "NSINFL_"


class ConfigError(ValueError):
    """Unreadable or invalid configuration."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridPolicyConfig(_Model):
    """Per-``N`` grid rule; ``points`` and ``L`` pin one grid for every ``N``."""

    box_offset: int = Field(2, ge=0)
    envelope_bandwidth: float = Field(4.0, gt=0)
    harmonics: int = Field(2, ge=0)
    max_points: int = Field(1024, gt=0)
    points: int | None = Field(None, gt=0)
    L: float | None = Field(None, gt=0)

    def build(self) -> GridPolicy:
        return GridPolicy(
            self.box_offset, self.envelope_bandwidth, self.harmonics, self.max_points, self.points, self.L
        )


class TimeGridConfig(_Model):
    """Geometric time grid: ratio ``rho`` and ``K = K_slope N + K_intercept`` intervals."""

    rho: float = Field(0.5, gt=0.3, lt=0.9)
    K_slope: int = Field(4, gt=0)
    K_intercept: int = Field(16, gt=0)

    def build(self) -> TimePolicy:
        return TimePolicy(self.rho, self.K_slope, self.K_intercept)


class ExperimentConfig(_Model):
    """One experiment run."""

    experiment: Literal["inflation", "identity-checks", "lemma-constants", "perturbation"] = "inflation"
    p: float = 2.0
    q: float = 1.0
    delta: float = Field(0.1, gt=0)
    N_list: tuple[int, ...] = (3, 4, 5)
    M: float = Field(10.0, ge=10)
    grid_policy: GridPolicyConfig = GridPolicyConfig()
    time_grid: TimeGridConfig = TimeGridConfig()
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(8, gt=0)
    output_dir: Path = Path("nsinflation-out")
    seed: int = Field(0, ge=0)
    samples: int = Field(30, ge=30)
    delta_sweep: tuple[float, ...] = ()
    record_runtime: bool = False

    @field_validator("p", "q", mode="before")
    @classmethod
    def _exponent(cls, v: Any) -> float:
        try:
            return parse_exponent(v)
        except (TypeError, ValueError) as exc:
            raise ValueError(str(exc)) from None

    @field_validator("p")
    @classmethod
    def _p_range(cls, v: float) -> float:
        if not 1.0 <= v <= 2.0:
            raise ValueError("p must lie in [1, 2]")
        return v

    @field_validator("q")
    @classmethod
    def _q_range(cls, v: float) -> float:
        if v < 1.0:
            raise ValueError("q must lie in [1, inf]")
        return v

    @field_validator("N_list")
    @classmethod
    def _n_list(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if not v:
            raise ValueError("N_list must not be empty")
        bad = [n for n in v if not 3 <= n <= 10]
        if bad:
            raise ValueError(f"N values {bad} outside 3..10")
        if len(set(v)) != len(v):
            raise ValueError("N_list has duplicates")
        return v

    @field_validator("delta_sweep")
    @classmethod
    def _sweep(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(not (d > 0 and math.isfinite(d)) for d in v):
            raise ValueError("delta_sweep values must be positive")
        return v

    @field_serializer("p", "q")
    def _dump_exponent(self, v: float) -> float | str:
        return format_exponent(v) if math.isinf(v) else v


def _error_text(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def _parse_env_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _canonical_path(parts: list[str]) -> list[str]:
    """Map lower-cased key parts onto the model's field names."""
    model: type[BaseModel] | None = ExperimentConfig
    out = []
    for part in parts:
        name = part
        if model is not None:
            lookup = {k.lower(): k for k in model.model_fields}
            name = lookup.get(part, part)
            ann = model.model_fields[name].annotation if name in model.model_fields else None
            model = ann if isinstance(ann, type) and issubclass(ann, BaseModel) else None
        out.append(name)
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """Nested override dictionary from ``NSINFL_*`` variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = _canonical_path(name[len(ENV_PREFIX):].lower().split("__"))
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = _parse_env_value(environ[name])
    return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_mapping(data: Mapping, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Validate a mapping after applying environment overrides."""
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a JSON object")
    merged = _merge(dict(data), env_overrides(environ))
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_error_text(exc)) from None


def load_config(path: str | Path, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Read and validate a JSON configuration file; unknown keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_mapping(data, environ)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write ``cfg`` as sorted, indented JSON (atomic replace)."""
    path = Path(path)
    text = json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
