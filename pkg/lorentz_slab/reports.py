"""
Report models and writers

CSV tables go through pandas with round-trip float formatting; JSON bodies
are pydantic models, and summary.json is validated against
report.schema.json before it is written.
"""
from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from jsonschema import Draft202012Validator
from pydantic import BaseModel, ConfigDict, Field

from .debug import get_logger
from .estimators import DensityProfile, FluxEstimate

logger = get_logger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "report.schema.json"
FLOAT_FORMAT = "%.17g"

# Column order of every CSV the experiments write
PROFILE_COLUMNS = ["x_center", "density", "density_stderr", "flux_x", "flux_stderr", "capped_fraction", "n_samples"]
FICK_COLUMNS = ["x_center", "flux_x", "flux_stderr", "fick_prediction", "z_score"]
GK_COLUMNS = ["mu", "D", "D_expected", "offdiag", "spectral_gap"]
SURVIVAL_COLUMNS = ["x1", "t", "survival", "stderr", "reference", "z_score"]
DIFFUSIVE_COLUMNS = ["eta", "t", "sup_error", "stderr_at_sup"]
REMAINDER_COLUMNS = ["eta", "l2_norm", "boundary_term", "excluded_measure", "spectral_gap"]
CLOSENESS_COLUMNS = ["x1", "phi", "kind", "micro", "micro_stderr", "kinetic", "kinetic_stderr", "z_score"]
EQUIVALENCE_COLUMNS = ["x1", "phi", "kind", "value_a", "stderr_a", "value_b", "stderr_b", "z_score"]


class ReportError(ValueError):
    """A report failed schema validation"""


class RunSummary(BaseModel):
    """Contents of summary.json"""

    experiment: str
    version: str
    timestamp: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    seed: int
    config: Dict[str, Any]
    sampling: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float
    checks: Dict[str, bool] = Field(default_factory=dict)
    passed: bool
    results: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    files: List[str] = Field(default_factory=list)


class PathologyReport(BaseModel):
    """Frequencies at one epsilon; int_* come from the jump-process surrogate"""

    epsilon: float
    eta: float
    t: float
    n: int
    rec_freq: float
    rec_stderr: float
    int_freq: float
    int_stderr: float
    strip_freq: float
    strip_stderr: float
    surrogate_rec_freq: float = 0.0
    surrogate_rec_stderr: float = 0.0
    memory_freq: float = 0.0
    memory_stderr: float = 0.0


class PathologySweep(BaseModel):
    points: List[PathologyReport]
    fit: Optional[Dict[str, Any]] = None


class ErrorDetail(BaseModel):
    error_type: str
    error_message: str


class ErrorMeta(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    continue_: bool = Field(False, alias="continue")
    stop_reason: str = "error"


class ErrorReport(BaseModel):
    state: str = "error"
    error: ErrorDetail
    meta: ErrorMeta = Field(default_factory=ErrorMeta)


def create_error_report(error_message: str, error_type: str = "runtime_error") -> Dict[str, Any]:
    """Error body in the envelope shape, ready for json.dumps"""
    report = ErrorReport(error=ErrorDetail(error_type=error_type, error_message=error_message))
    return report.model_dump(by_alias=True)


def pathology_report(measurement) -> PathologyReport:
    """Flatten a diagnostics.PathologyMeasurement"""
    micro = measurement.micro.frequencies()
    surrogate = measurement.surrogate.frequencies()
    memory, memory_se = measurement.memory_frequency()
    return PathologyReport(
        epsilon=measurement.epsilon,
        eta=measurement.eta,
        t=measurement.t,
        n=measurement.n,
        rec_freq=micro["rec"][0],
        rec_stderr=micro["rec"][1],
        int_freq=surrogate["int"][0],
        int_stderr=surrogate["int"][1],
        strip_freq=micro["strip"][0],
        strip_stderr=micro["strip"][1],
        surrogate_rec_freq=surrogate["rec"][0],
        surrogate_rec_stderr=surrogate["rec"][1],
        memory_freq=memory,
        memory_stderr=memory_se,
    )


# Validation

def load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError:
        return json.loads(path.read_text(encoding="utf-8-sig"))


def validate_report(report: Dict[str, Any], schema_path: Path = SCHEMA_PATH) -> Tuple[bool, List[str]]:
    validator = Draft202012Validator(load_json(schema_path))
    errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
    msgs = []
    for e in errors:
        loc = "/".join(str(p) for p in e.path) or "<root>"
        msgs.append(f"ERROR at {loc}: {e.message}")
    return not msgs, msgs


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path: Path, body: Dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_summary(out_dir: Path, summary: RunSummary) -> Path:
    body = _jsonable(summary.model_dump())
    ok, errors = validate_report(body)
    if not ok:
        raise ReportError("summary.json failed validation: " + "; ".join(errors))
    return write_json(Path(out_dir) / "summary.json", body)


# CSV tables

def write_table(path: Path, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> Path:
    """Rows to CSV in the given column order; missing keys are an error"""
    missing = set(columns) - set(rows[0]) if rows else set()
    if missing:
        raise KeyError(f"rows lack columns {sorted(missing)}")
    frame = pd.DataFrame(list(rows), columns=list(columns))
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def profile_rows(profile: DensityProfile, flux: FluxEstimate) -> List[Dict[str, Any]]:
    return [
        {
            "x_center": float(profile.x_centers[i]),
            "density": float(profile.density[i]),
            "density_stderr": float(profile.density_stderr[i]),
            "flux_x": float(flux.flux_x[i]),
            "flux_stderr": float(flux.flux_stderr[i]),
            "capped_fraction": float(profile.capped_fraction[i]),
            "n_samples": int(profile.n_samples[i]),
        }
        for i in range(len(profile.x_centers))
    ]


def write_profile(path: Path, profile: DensityProfile, flux: FluxEstimate) -> Path:
    return write_table(path, profile_rows(profile, flux), PROFILE_COLUMNS)
