from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, Field

from models.network import OD, Route


class Objective(str, Enum):
    UE = "ue"
    SO = "so"


class Method(str, Enum):
    MSA = "msa"
    FW = "fw"


class RouteFlow(BaseModel):
    route: Route
    flow: float


class ODRouteFlows(BaseModel):
    origin: str
    destination: str
    demand: float
    routes: List[RouteFlow]

    @property
    def od(self) -> OD:
        return (self.origin, self.destination)


class IterationRecord(BaseModel):
    iteration: int
    tstt: float
    objective: float = Field(..., description="Beckmann objective for UE, TSTT for SO")
    relative_gap: float


class AssignmentResult(BaseModel):
    """Outcome of a classical solve."""

    method: Method
    objective: Objective
    flows: List[float]
    tstt: float
    iterations: int
    relative_gap: float
    converged: bool
    route_flows: List[ODRouteFlows]
    history: List[IterationRecord] = Field(default_factory=list)

    def flow_state(self) -> np.ndarray:
        return np.asarray(self.flows, dtype=float)
