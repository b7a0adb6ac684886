# harness/schemas.py
"""Row schemas for every report table, plus the run manifest."""
import math
from typing import Dict, Iterable, List, Optional

import pandas as pd
from pydantic import BaseModel, Field, field_validator


class ConvergenceRow(BaseModel):
    T: float
    n: int
    marginal_w1: float
    marginal_stderr: float
    functional_lb: Optional[float] = None
    functional_stderr: Optional[float] = None
    increment_lb: Optional[float] = None
    envelope: float
    fitted_C: Optional[float] = None
    slope: Optional[float] = None
    pi_shape: Optional[float] = None
    below_envelope: Optional[bool] = None

    @field_validator("marginal_stderr", "functional_stderr")
    @classmethod
    def _finite(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not math.isfinite(value):
            raise ValueError("standard errors must be finite")
        return value


class FunctionalRow(BaseModel):
    T: float
    n: int
    geometry: str  # "path" or "increments"
    functional: str
    estimate: float
    stderr: float


class LemmaRow(BaseModel):
    lemma: str
    T: float
    n: int
    lhs: float
    stderr: float
    shape: float
    ratio: float
    constant: float


class DiscretizationRow(BaseModel):
    T: float
    n: int
    mean_sup_gap: float
    stderr: float
    fourth_moment: float
    grid_mean_sup_gap: float
    brownian_gap: float
    slope: Optional[float] = None


class Sigma2Row(BaseModel):
    sigma2: float
    stderr: float
    closed_form: Optional[float] = None
    mean_intensity_bound: float
    sigma_tilde2: float
    replicas: int
    burn_in: float
    horizon: float


class ControlRow(BaseModel):
    cell: str
    value: float
    tolerance: float
    passed: bool


class RunManifest(BaseModel):
    subcommand: str
    config: Optional[str] = None
    config_sha256: Optional[str] = None
    seed: int
    replicas: Optional[int] = None
    workers: int = 1
    versions: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)


def rows_to_frame(rows: Iterable[BaseModel]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows])
