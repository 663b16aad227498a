from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from services.errors import ConfigError


class TrainerConfig(BaseModel):
    """Hyperparameters of the deep-Q learner and the guided training loop."""

    gamma: float = Field(0.95, ge=0.0, le=1.0)
    batch_size: int = Field(128, ge=1)
    learning_rate: float = Field(2e-5, gt=0.0)
    buffer_capacity: int = Field(100_000, ge=1)
    target_sync: int = Field(1000, ge=1, description="Update steps between target copies")
    warmup: int = Field(2000, ge=0, description="Transitions stored before the first update")
    episodes: int = Field(3000, ge=0)
    epsilon_start: float = Field(1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(0.05, ge=0.0, le=1.0)
    epsilon_decay_fraction: float = Field(0.6, gt=0.0, le=1.0)
    seed: int = 0
    hidden_sizes: List[int] = Field(default_factory=lambda: [512, 256])
    k_max: int = Field(20, ge=1)
    target: Literal["double", "vanilla"] = "double"
    guidance: Literal["msa", "uniform"] = "msa"
    guide_costs: Literal["so", "ue"] = "so"
    grow_routes: bool = True
    marginal_eval: Literal["post", "pre"] = "post"
    normalize_rewards: bool = Field(True, description="Divide stored rewards by the time scale")
    train_every: int = Field(1, ge=1)
    eval_every: int = Field(0, ge=0, description="Greedy evaluation period in episodes, 0 = off")
    log_every: int = Field(100, ge=1)
    show_progress: bool = False

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_layers(cls, value: List[int]) -> List[int]:
        if not value or any(size < 1 for size in value):
            raise ValueError("hidden_sizes needs at least one positive layer width")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        if self.batch_size > self.buffer_capacity:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds buffer_capacity {self.buffer_capacity}"
            )
        if self.epsilon_end > self.epsilon_start:
            raise ConfigError("epsilon_end must not exceed epsilon_start")
        return self


class TrainMode(BaseModel):
    """Action-set configuration: msa-guided, ksp:K, so-routes or all-routes."""

    kind: Literal["msa-guided", "ksp", "so-routes", "all-routes"]
    k: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "TrainMode":
        text = text.strip().lower()
        if text.startswith("ksp"):
            _, _, k = text.partition(":")
            if not k.isdigit() or int(k) < 1:
                raise ConfigError(f"Mode '{text}' must look like ksp:K with K >= 1")
            return cls(kind="ksp", k=int(k))
        if text in ("msa-guided", "so-routes", "all-routes"):
            return cls(kind=text)
        raise ConfigError(f"Unknown mode '{text}'; use msa-guided, ksp:K, so-routes or all-routes")

    @property
    def label(self) -> str:
        if self.kind == "ksp":
            return f"RL-{self.k}-SP"
        if self.kind == "so-routes":
            return "RL-SO"
        if self.kind == "all-routes":
            return "RL-all-routes"
        return "MSA-guided RL"

    def __str__(self) -> str:
        return f"ksp:{self.k}" if self.kind == "ksp" else self.kind


class EpisodeRecord(BaseModel):
    episode: int
    total_travel_time: float
    mean_loss: Optional[float] = None
    epsilon: float
    routes_per_od: Dict[str, int]
    greedy_tstt: Optional[float] = None


class TrainLog(BaseModel):
    records: List[EpisodeRecord] = Field(default_factory=list)

    def curve_rows(self) -> List[dict]:
        return [
            {
                "episode": r.episode,
                "tstt": r.total_travel_time,
                "loss": r.mean_loss,
                "epsilon": r.epsilon,
                "greedy_tstt": r.greedy_tstt,
            }
            for r in self.records
        ]


class Baselines(BaseModel):
    ue_tstt: float
    so_tstt: float


class EvaluationReport(BaseModel):
    tstt: float
    route_shares: Dict[str, Dict[str, float]]
    route_counts: Dict[str, Dict[str, int]]
    ue_tstt: Optional[float] = None
    so_tstt: Optional[float] = None
    improvement_over_ue: Optional[float] = Field(None, description="(UE - x) / UE")
    gap_to_so: Optional[float] = Field(None, description="(x - SO) / SO")


def od_key(od: Tuple[str, str]) -> str:
    return f"{od[0]}->{od[1]}"
