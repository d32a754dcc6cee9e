"""Run configuration: pydantic models with full defaults.

A resolved ``ExperimentConfig`` round-trips through JSON unchanged, which
is what makes re-running a persisted ``config.json`` reproduce a run.
"""
from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator


class BlobsDataset(BaseModel):
    kind: Literal["blobs"] = "blobs"
    classes: int = Field(5, ge=2)
    dim: int = Field(6, ge=1)
    size: int = Field(3000, ge=20)
    spread: float = Field(0.3, gt=0)


class CsvDataset(BaseModel):
    kind: Literal["csv"] = "csv"
    path: str


class IdxDataset(BaseModel):
    kind: Literal["idx"] = "idx"
    images_path: str
    labels_path: str
    subsample: int = Field(2000, ge=1)


DatasetSpec = Annotated[Union[BlobsDataset, CsvDataset, IdxDataset], Field(discriminator="kind")]


class KDSettings(BaseModel):
    """Distillation loss weights and the fixed-controller baseline temperature."""

    alpha: float = Field(0.5, ge=0.0, le=1.0)
    default_temperature: float = Field(4.0, gt=0.0, le=10.0)
    student_lr: float = Field(0.05, gt=0)
    teacher_lr: float = Field(0.1, gt=0)
    batch_size: int = Field(32, ge=1)


class PPOSettings(BaseModel):
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    clip_epsilon: float = Field(0.2, gt=0.0, lt=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    actor_lr: float = Field(1e-3, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    update_epochs: int = Field(4, ge=1)
    sigma_floor: float = Field(0.05, gt=0)


class RewardSettings(BaseModel):
    """Reward warm-up horizon, probe size, and calibration-model training knobs."""

    warmup_n: int = Field(5, ge=1)
    probe_size: int = Field(256, ge=1)
    alpha_c: float = Field(1.0, ge=0)
    beta_c: float = Field(0.5, ge=0)
    corrector_lr: float = Field(0.01, gt=0)
    updater_lr: float = Field(0.01, gt=0)
    history_window: int = Field(64, ge=1)


class ExplorationSettings(BaseModel):
    """Entropy-band selection and mix-up used for extra early agent updates.

    ``phase_epochs=None`` ties the exploration phase to the reward warm-up
    horizon; both target the early stage of training.
    """

    phase_epochs: Optional[int] = Field(None, ge=0)
    lambda_mix: float = Field(0.7, gt=0.5, le=1.0)
    band_high: tuple[float, float] = (0.10, 0.20)
    band_low: tuple[float, float] = (0.40, 0.50)
    extra_steps_per_batch: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _check_bands(self):
        for lo, hi in (self.band_high, self.band_low):
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"band ({lo}, {hi}) must satisfy 0 <= start < stop <= 1")
        if max(self.band_high[0], self.band_low[0]) < min(self.band_high[1], self.band_low[1]):
            raise ValueError("entropy bands must not overlap")
        return self


class AblationFlags(BaseModel):
    uncertainty_off: bool = False
    calibration_off: bool = False
    exploration_off: bool = False


class ExperimentConfig(BaseModel):
    dataset: DatasetSpec = Field(default_factory=BlobsDataset)
    teacher_layers: list[int] = Field(default_factory=lambda: [64, 64])
    student_layers: list[int] = Field(default_factory=lambda: [8])
    teacher_epochs: int = Field(40, ge=0)
    teacher_path: Optional[str] = None
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    kd: KDSettings = Field(default_factory=KDSettings)
    ppo: PPOSettings = Field(default_factory=PPOSettings)
    reward: RewardSettings = Field(default_factory=RewardSettings)
    exploration: ExplorationSettings = Field(default_factory=ExplorationSettings)
    ablations: AblationFlags = Field(default_factory=AblationFlags)
    controller: Literal["fixed", "rlkd"] = "rlkd"
    force_default_temperature: bool = False
    epochs: int = Field(30, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    out_dir: Optional[str] = None

    @property
    def phase_epochs(self) -> int:
        if self.exploration.phase_epochs is not None:
            return self.exploration.phase_epochs
        return self.reward.warmup_n
