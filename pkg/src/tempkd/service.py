"""HTTP facade over the experiment harness.

Requests carry a fully-defaulted :class:`ExperimentConfig`; responses
return run summaries plus per-epoch metrics. Runs execute synchronously
within the request, which is fine at desk scale.
"""
from __future__ import annotations

from dataclasses import asdict

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ExperimentConfig
from .harness import compare_controllers, run_ablations, run_experiment, train_teacher_only


class HealthResponse(BaseModel):
    status: str
    version: str


class DistillRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)


class EpochMetricsModel(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    temperature_mean: float
    temperature_min: float
    temperature_max: float
    reward_raw_mean: float
    reward_shaped_mean: float
    corrector_loss: float
    actor_loss: float
    critic_loss: float
    clip_fraction: float
    wall_seconds: float


class RunSummaryModel(BaseModel):
    controller: str
    seed: int
    epochs: int
    teacher_train_accuracy: float
    final_train_loss: float
    final_train_accuracy: float
    final_val_loss: float
    final_val_accuracy: float
    wall_seconds: float
    skipped_steps: int
    warnings: list[str]
    out_dir: str | None


class DistillResponse(BaseModel):
    summary: RunSummaryModel
    metrics: list[EpochMetricsModel]


class TeacherResponse(BaseModel):
    train_accuracy: float
    parameter_count: int
    path: str | None


class CompareRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])


class CompareRow(BaseModel):
    seed: int
    fixed_val_accuracy: float
    rlkd_val_accuracy: float
    delta: float


class CompareResponse(BaseModel):
    rows: list[CompareRow]
    fixed_mean: float
    fixed_std: float
    rlkd_mean: float
    rlkd_std: float
    delta: float


class AblateRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seeds: list[int] = Field(default_factory=lambda: [0])


class AblateRow(BaseModel):
    variant: str
    seeds: list[int]
    mean_val_accuracy: float
    std_val_accuracy: float


class AblateResponse(BaseModel):
    rows: list[AblateRow]


app = FastAPI(title="tempkd", version=__version__)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/config/resolve", response_model=ExperimentConfig)
def resolve_config(config: ExperimentConfig) -> ExperimentConfig:
    """Echo the fully-resolved configuration (all defaults applied)."""
    return config


@app.post("/runs/distill", response_model=DistillResponse)
def distill(request: DistillRequest) -> DistillResponse:
    try:
        result = run_experiment(request.config)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return DistillResponse(
        summary=RunSummaryModel(**result.summary),
        metrics=[EpochMetricsModel(**asdict(m)) for m in result.metrics],
    )


@app.post("/runs/train-teacher", response_model=TeacherResponse)
def train_teacher_endpoint(request: DistillRequest) -> TeacherResponse:
    try:
        info = train_teacher_only(request.config)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return TeacherResponse(**info)


@app.post("/runs/compare", response_model=CompareResponse)
def compare(request: CompareRequest) -> CompareResponse:
    try:
        result = compare_controllers(request.config, request.seeds)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return CompareResponse(
        rows=[CompareRow(**row) for row in result["rows"]],
        fixed_mean=result["fixed_mean"],
        fixed_std=result["fixed_std"],
        rlkd_mean=result["rlkd_mean"],
        rlkd_std=result["rlkd_std"],
        delta=result["delta"],
    )


@app.post("/runs/ablate", response_model=AblateResponse)
def ablate(request: AblateRequest) -> AblateResponse:
    try:
        result = run_ablations(request.config, request.seeds)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return AblateResponse(rows=[AblateRow(**row) for row in result["rows"]])
