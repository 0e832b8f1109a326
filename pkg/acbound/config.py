"""
Experiment Configuration
========================

Strict pydantic models for the JSON experiment document, dotted-path
overrides and the ACBOUND_SEED environment override.
"""

import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

SEED_ENV = "ACBOUND_SEED"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ============================================================================
# Sections
# ============================================================================

class HolderSection(Section):
    """Smoothness used to size the family grid: q = ceil(c5 delta^(-1/((1+alpha) beta)))"""
    beta: float = Field(gt=0)
    L: float = Field(gt=0)
    c5: float = Field(default=1.0, gt=0)


class FamilySection(Section):
    """Lower-bound family parameters"""
    d: int = Field(ge=1, le=3)
    q: Optional[int] = Field(default=None, ge=1)
    holder: Optional[HolderSection] = None
    delta: float = Field(gt=0, lt=1)
    alpha: float = Field(gt=0)
    C: float = Field(gt=0, le=1)
    c2: float = Field(gt=0, lt=0.5)
    code_mode: Literal["exhaustive", "randomized"] = "exhaustive"
    min_hamming: Optional[int] = Field(default=None, ge=1)
    code_seed: int = 0
    code_budget: Optional[int] = Field(default=None, ge=1)
    target_C_M: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _grid_source(self) -> "FamilySection":
        if (self.q is None) == (self.holder is None):
            raise ValueError("exactly one of q and holder must be given")
        if math.isinf(self.alpha):
            raise ValueError("alpha must be finite")
        return self


class ScheduleSection(Section):
    """epsilon = n^(-1/(2+alpha+r))"""
    r: float = Field(gt=0)


class NetSection(Section):
    """Net for net_erm: a Hölder lattice or the family's own regression functions"""
    source: Literal["holder", "codes"] = "holder"
    beta: float = Field(default=1.0, gt=0, le=1)
    L: float = Field(default=1.0, ge=0)
    epsilon: Optional[float] = Field(default=None, gt=0, lt=1)
    schedule: Optional[ScheduleSection] = None
    max_members: int = Field(default=200_000, ge=1)

    @model_validator(mode="after")
    def _radius(self) -> "NetSection":
        if self.source == "holder" and (self.epsilon is None) == (self.schedule is None):
            raise ValueError("holder nets need exactly one of epsilon and schedule")
        return self


class ClassifierSection(Section):
    kind: Literal["net_erm", "class_erm"]
    net: Optional[NetSection] = None

    @model_validator(mode="after")
    def _net_present(self) -> "ClassifierSection":
        if self.kind == "net_erm" and self.net is None:
            raise ValueError("net_erm needs a net section")
        return self


class LambdaSection(Section):
    """Level grid; with unit excess_unit the bounds are multiples of a*w"""
    min: float = Field(ge=0)
    max: float = Field(ge=0)
    points: int = Field(ge=1)
    scale: Literal["linear", "geometric"] = "linear"
    unit: Literal["absolute", "excess_unit"] = "absolute"

    @model_validator(mode="after")
    def _ordered(self) -> "LambdaSection":
        if self.max < self.min:
            raise ValueError("max must not be below min")
        if self.scale == "geometric" and self.min <= 0:
            raise ValueError("geometric grids need min > 0")
        return self


class RunSection(Section):
    n_list: List[int] = Field(min_length=1)
    m: int = Field(ge=1)
    lambda_: LambdaSection = Field(alias="lambda")
    sigma_subset_size: int = Field(default=10, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    workers: int = Field(default=1, ge=1)
    r_prime: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _sizes(self) -> "RunSection":
        if any(n < 1 for n in self.n_list):
            raise ValueError("every n must be >= 1")
        return self


class ExperimentConfig(Section):
    """Complete experiment document"""
    family: FamilySection
    classifier: Optional[ClassifierSection] = None
    run: Optional[RunSection] = None

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


# ============================================================================
# Loading
# ============================================================================

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(document: Dict[str, Any], assignment: str) -> None:
    """Apply one ``a.b.c=value`` override in place"""
    if "=" not in assignment:
        raise ConfigError("override must look like path=value", assignment)
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigError("empty key in override path", path)
    node = document
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError("override descends into a non-object", path)
        node = child
    node[keys[-1]] = _parse_value(raw)


def _field_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def validate_document(document: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first.get("msg", "invalid value"), _field_path(first)) from exc


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Read, override and validate an experiment document.

    Args:
        path: UTF-8 JSON file
        overrides: ``dotted.path=value`` strings; values are parsed as JSON
            when possible, as strings otherwise

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: naming the offending field
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError("config file not found", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})", str(path)) from exc
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object", str(path))

    for assignment in overrides:
        apply_override(document, assignment)

    load_dotenv()
    seed = os.getenv(SEED_ENV)
    if seed is not None and isinstance(document.get("run"), dict):
        try:
            document["run"]["master_seed"] = int(seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer", "run.master_seed") from exc

    return validate_document(document)
