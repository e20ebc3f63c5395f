"""Pydantic schemas for API v1."""

from datetime import datetime
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, root_validator

from syndist.schemas import ExperimentConfig


class ExperimentIn(BaseModel):
    """Request to run an experiment: a preset name or an inline config, plus overrides."""

    preset: Optional[str] = None
    config: Optional[ExperimentConfig] = None
    iterations: Optional[int] = Field(None, ge=0)
    seed: Optional[int] = None
    ablate: Optional[List[str]] = None

    @root_validator(skip_on_failure=True)
    def _one_source(cls, values):
        if (values.get("preset") is None) == (values.get("config") is None):
            raise ValueError("give exactly one of 'preset' or 'config'")
        return values


class ExperimentOut(BaseModel):
    """State of a submitted experiment."""

    id: str
    name: str
    status: str
    created_at: datetime
    finished_at: Optional[datetime] = None
    out_dir: Optional[str] = None
    metrics: List[Dict] = []
    failures: List[str] = []
    error: Optional[str] = None


class VerifyIn(BaseModel):
    fd_tol: float = Field(1e-3, gt=0.0)


class CheckOut(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyOut(BaseModel):
    passed: bool
    checks: List[CheckOut]
