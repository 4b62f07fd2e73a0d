"""Run configuration: pydantic models plus the flat key=value text format."""

import os
from typing import Any, Dict, Literal, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigError

SEED_ENV_VAR = "PERIMKIT_SEED"

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _check_range(v: Tuple[float, float]) -> Tuple[float, float]:
    if v[0] > v[1]:
        raise ValueError(f"range minimum {v[0]} exceeds maximum {v[1]}")
    return v


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    edge_length_range: Tuple[float, float] = (2.0, 8.0)
    height_range: Tuple[float, float] = (2.3, 3.0)
    points_per_m2: float = 100.0
    noise_sigma: float = 0.03
    hole_count_range: Tuple[int, int] = (0, 4)
    hole_radius_range: Tuple[float, float] = (0.2, 0.6)
    seed: int = 0
    shape_classes: Tuple[str, ...] = ("Rectangle", "L", "T", "U")
    rectilinear: bool = True
    corner_jitter: float = 0.3
    global_rotation: bool = True

    @field_validator("edge_length_range", "height_range", "hole_count_range", "hole_radius_range")
    @classmethod
    def check_ranges(cls, v):
        return _check_range(v)

    @field_validator("noise_sigma", "corner_jitter")
    @classmethod
    def check_non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("points_per_m2")
    @classmethod
    def check_density(cls, v):
        if v <= 0:
            raise ValueError("points_per_m2 must be positive")
        return v

    @field_validator("shape_classes")
    @classmethod
    def check_shapes(cls, v):
        unknown = set(v) - {"Rectangle", "L", "T", "U"}
        if unknown or not v:
            raise ValueError(f"unknown shape classes: {sorted(unknown)}")
        return v

    @field_validator("hole_count_range")
    @classmethod
    def check_hole_counts(cls, v):
        if v[0] < 0:
            raise ValueError("hole counts must be non-negative")
        return v


class ClusterParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k: int = 12
    beta: float = 1.0
    beta_scaling: Literal["scene", "none"] = "scene"
    regularizer: Literal["any", "columns"] = "any"
    lr: float = 0.05
    iters: int = 400
    seed: int = 0
    min_cluster_points: int = 20

    @model_validator(mode="after")
    def check_params(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")
        if self.min_cluster_points < 0:
            raise ValueError("min_cluster_points must be non-negative")
        return self


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # hull
    alpha: float = 0.5
    d_cull: float = 0.5
    contour_step: float = 0.05
    n_points: int = 1280
    voxel: float = 0.02
    # cluster
    k_nn: int = 16
    k: int = 12
    beta: float = 1.0
    beta_scaling: Literal["scene", "none"] = "scene"
    regularizer: Literal["any", "columns"] = "any"
    lr: float = 0.05
    iters: int = 400
    min_cluster_points: int = 20
    cluster_method: Literal["optimizer", "ransac"] = "optimizer"
    ransac_inlier_tol: float = 0.08
    ransac_min_inliers: int = 30
    ransac_max_planes: int = 16
    ransac_iterations: int = 500
    # perimeter
    theta_merge_deg: float = 30.0
    e_merge: float = 0.3
    split_gap: float = 0.4
    tour_metric: Literal["extent", "median"] = "extent"
    snap_enabled: bool = True
    # metrics
    tau_match: float = 0.5
    iou_resolution: float = 0.01
    # ingest and run control
    frame_stride: int = 1
    use_mask: bool = True
    use_alpha: bool = True
    seed: int = 0
    workers: int = 0

    @model_validator(mode="after")
    def check_stage_preconditions(self):
        positive = ("alpha", "d_cull", "contour_step", "voxel", "lr", "e_merge",
                    "iou_resolution", "ransac_inlier_tol", "split_gap")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if self.k_nn < 3:
            raise ValueError("k_nn must be at least 3")
        if self.k < 1 or self.iters < 1:
            raise ValueError("k and iters must be at least 1")
        if self.beta < 0 or self.tau_match < 0:
            raise ValueError("beta and tau_match must be non-negative")
        if not 0 < self.theta_merge_deg <= 90:
            raise ValueError("theta_merge_deg must lie in (0, 90]")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be at least 1")
        if self.workers < 0:
            raise ValueError("workers must be non-negative")
        return self

    def cluster_params(self, seed: int) -> ClusterParams:
        return ClusterParams(k=self.k, beta=self.beta, beta_scaling=self.beta_scaling,
                             regularizer=self.regularizer, lr=self.lr, iters=self.iters, seed=seed,
                             min_cluster_points=self.min_cluster_points)


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse UTF-8 ``key=value`` lines; '#' starts a comment."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        values[key] = value
    return values


def _coerce(model: Type[BaseModel], key: str, value: str) -> Any:
    """Turn a text value into something pydantic can validate for ``key``."""
    field = model.model_fields[key]
    origin = getattr(field.annotation, "__origin__", None)
    if origin is tuple:
        return tuple(part for part in value.replace(",", " ").split())
    if field.annotation is bool:
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"'{key}' expects a boolean, got '{value}'")
    return value


def build_config(model: Type[ConfigT], values: Dict[str, Any]) -> ConfigT:
    unknown = sorted(set(values) - set(model.model_fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {k: _coerce(model, k, v) if isinstance(v, str) else v for k, v in values.items()}
    try:
        return model(**coerced)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(model: Type[ConfigT], path: str = None, overrides: Dict[str, Any] = None,
                env: Dict[str, str] = None) -> ConfigT:
    """Defaults < config file < PERIMKIT_SEED < explicit overrides."""
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                values.update(parse_config_text(f.read()))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
    env = os.environ if env is None else env
    if SEED_ENV_VAR in env and "seed" in model.model_fields:
        values["seed"] = env[SEED_ENV_VAR]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(model, values)


def dump_config(config: BaseModel) -> str:
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, (tuple, list)):
            value = " ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
