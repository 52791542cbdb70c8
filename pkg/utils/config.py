"""
GeoFlow: Configuration Models
=============================
Validated experiment configurations. Unknown keys are rejected, and every
validation failure surfaces as a SchemaError that lists the offending keys.
"""

import json
import os
from typing import List, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from utils.errors import ArtifactIOError, SchemaError

DEFAULT_RUNS_DIR = "runs"
RUNS_ENV_VAR = "GEOFLOW_RUNS"

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class ExperimentConfig(BaseModel):
    """Base for all experiment configurations."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0


class TrainConfig(ExperimentConfig):
    """ResNet training setup (defaults follow the circles/spirals protocol)."""
    dataset: Literal["spirals", "circles"] = "circles"
    n_points: int = Field(1000, gt=0)
    n_layers: int = Field(50, ge=1)
    dt: float = Field(0.075, gt=0)
    gamma: float = Field(1.0, gt=0)
    iterations: int = Field(5000, ge=0)
    learning_rate: float = Field(0.05, gt=0)
    integrator: Literal["euler", "rk4", "symplectic"] = "symplectic"
    loss: Literal["squared", "cross_entropy"] = "squared"
    tol: float = Field(1e-12, gt=0)
    max_iter: int = Field(500, ge=1)
    init_scale: float = Field(0.1, ge=0)
    snapshots: Tuple[int, ...] = (20, 30, 50)
    log_every: int = Field(100, ge=1)

    @field_validator("snapshots")
    @classmethod
    def _non_negative_layers(cls, v):
        if any(k < 0 for k in v):
            raise ValueError("snapshot layers must be non-negative")
        return tuple(sorted(set(v)))


class RigidBodyConfig(ExperimentConfig):
    integrator: Literal["euler", "rk4", "lphj"] = "lphj"
    dt: float = Field(0.01, gt=0)
    steps: int = Field(100000, ge=0)
    inertia: Tuple[float, float, float] = (1.0, 2.0, 3.0)
    implicit: bool = True
    tol: float = Field(1e-14, gt=0)
    max_iter: int = Field(100, ge=1)
    every: int = Field(1, ge=1)

    @field_validator("inertia")
    @classmethod
    def _positive_inertia(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("inertia entries must be positive")
        return v


class PeakonConfig(ExperimentConfig):
    kernel: Literal["gaussian", "exponential"] = "exponential"
    n: int = Field(3, ge=1)
    dt: float = Field(1e-3, gt=0)
    t_final: float = Field(20.0, ge=0)
    order: int = Field(2, ge=1, le=3)
    kernel_scale: float = Field(1.0, gt=0)
    exponent_scale: Optional[float] = None
    every: int = Field(100, ge=1)

    @field_validator("exponent_scale")
    @classmethod
    def _known_convention(cls, v):
        if v is not None and v not in (1.0, 0.5):
            raise ValueError("exponent_scale must be 1 or 0.5")
        return v


class LPFieldConfig(ExperimentConfig):
    variant: Literal["literal", "conservative"] = "conservative"
    nx: int = Field(128, ge=4)
    dt: float = Field(1e-3, gt=0)
    steps: int = Field(200, ge=0)
    nu: float = Field(0.5, ge=0)
    every: int = Field(100, ge=1)


class MadelungConfig(ExperimentConfig):
    nx: int = Field(256, ge=4)
    nu: float = Field(0.5, ge=0)
    seeds: int = Field(20, ge=1)
    bandlimit: int = Field(8, ge=1)
    phase_scaling: Literal["plain", "sqrt_hbar"] = "sqrt_hbar"
    derivative: Literal["spectral", "finite_difference"] = "spectral"
    n_jobs: int = 1


class PsoCheckConfig(ExperimentConfig):
    trials: int = Field(100, ge=1)
    nx: int = Field(64, ge=4)


class GradCheckConfig(ExperimentConfig):
    h_fd: float = Field(1e-5, gt=0)
    n: int = Field(4, ge=1)
    d: int = Field(2, ge=1)


def _offending_keys(exc: ValidationError) -> List[str]:
    keys = []
    for err in exc.errors():
        loc = err.get("loc") or ("<root>",)
        keys.append(str(loc[0]))
    return keys


def build_config(model: Type[ConfigT], values: dict) -> ConfigT:
    """Validate a mapping against a config model, raising SchemaError."""
    if not isinstance(values, dict):
        raise SchemaError(f"{model.__name__} expects a JSON object")
    try:
        return model(**values)
    except ValidationError as exc:
        raise SchemaError(f"invalid {model.__name__}", _offending_keys(exc)) from None


def load_config(path: str, model: Type[ConfigT]) -> ConfigT:
    """
    Read a JSON configuration file.

    Args:
        path: Path to a JSON object
        model: Config model to validate against

    Returns:
        Validated config instance
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise ArtifactIOError(path, exc.strerror or str(exc)) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON ({exc.msg})") from None
    return build_config(model, values)


def runs_root(override: Optional[str] = None) -> str:
    """Artifact root: explicit override, then GEOFLOW_RUNS, then ./runs."""
    return override or os.environ.get(RUNS_ENV_VAR, DEFAULT_RUNS_DIR)
