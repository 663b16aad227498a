from pathlib import Path
from typing import List

from pydantic import BaseModel, Field, field_validator

from models.training import TrainerConfig, TrainMode
from services.errors import DataFileError

DEFAULT_ARMS = ["msa-guided", "so-routes", "ksp:10", "ksp:15"]


class ExperimentConfig(BaseModel):
    """One benchmark run: data files, solver limits, trainer settings and arms."""

    net_file: Path = Field(..., description="Link file of the network")
    trips_file: Path = Field(..., description="Trips file with the OD demand")
    out_dir: Path = Field(Path("runs"), description="Directory receiving CSV and JSON outputs")
    max_iters: int = Field(10_000, ge=1)
    gap_tol: float = Field(1e-4, ge=0.0)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    arms: List[str] = Field(default_factory=lambda: list(DEFAULT_ARMS))
    show_progress: bool = False

    @field_validator("net_file", "trips_file")
    @classmethod
    def _exists(cls, value: Path) -> Path:
        if not Path(value).is_file():
            raise DataFileError("file not found", path=str(value))
        return Path(value)

    @field_validator("arms")
    @classmethod
    def _valid_arms(cls, value: List[str]) -> List[str]:
        for arm in value:
            TrainMode.parse(arm)
        return value

    @property
    def base_seed(self) -> int:
        return self.trainer.seed

    def modes(self) -> List[TrainMode]:
        return [TrainMode.parse(arm) for arm in self.arms]
