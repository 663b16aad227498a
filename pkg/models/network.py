from functools import cached_property
from typing import Annotated, Dict, Iterable, List, Literal, NamedTuple, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.errors import NetworkValidationError

# (origin, destination)
OD = Tuple[str, str]

# Per-link vehicle counts, indexed by link id.
FlowState = np.ndarray


class BPRCost(BaseModel):
    """Bureau of Public Roads delay: t0 * (1 + alpha * (x / capacity) ** beta)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["bpr"] = "bpr"
    t0: float = Field(..., gt=0, description="Free-flow travel time in minutes")
    capacity: float = Field(..., gt=0, description="Practical capacity in vehicles")
    alpha: float = Field(0.15, ge=0)
    beta: float = Field(4.0, ge=1)


class AffineCost(BaseModel):
    """Linear delay a + b * x."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["affine"] = "affine"
    a: float = Field(..., ge=0, description="Minutes at zero flow")
    b: float = Field(..., ge=0, description="Minutes per vehicle")


CostFunction = Annotated[Union[BPRCost, AffineCost], Field(discriminator="kind")]


class Link(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    tail: str
    head: str
    cost_fn: CostFunction

    @model_validator(mode="after")
    def _no_self_loop(self):
        if self.tail == self.head:
            raise NetworkValidationError(
                f"Link {self.id} is a self-loop on node '{self.tail}'"
            )
        return self


class CostArrays(NamedTuple):
    """Link cost parameters laid out for vectorized evaluation."""

    is_bpr: np.ndarray
    t0: np.ndarray
    capacity: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    b: np.ndarray


class Network(BaseModel):
    """Directed road network. Link ids are the positions 0..|E|-1."""

    model_config = ConfigDict(frozen=True)

    name: str = "network"
    nodes: List[str]
    links: List[Link]

    @model_validator(mode="after")
    def _check_structure(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise NetworkValidationError(f"Network '{self.name}' has duplicate node ids")

        known = set(self.nodes)
        for position, link in enumerate(self.links):
            if link.id != position:
                raise NetworkValidationError(
                    f"Link ids must run 0..{len(self.links) - 1} in order; "
                    f"found id {link.id} at position {position}"
                )
            for endpoint in (link.tail, link.head):
                if endpoint not in known:
                    raise NetworkValidationError(
                        f"Link {link.id} references unknown node '{endpoint}'"
                    )
        return self

    @property
    def num_links(self) -> int:
        return len(self.links)

    @cached_property
    def adjacency(self) -> Dict[str, List[int]]:
        """Outgoing link ids per node, in ascending id order."""
        outgoing = {node: [] for node in self.nodes}
        for link in self.links:
            outgoing[link.tail].append(link.id)
        return outgoing

    @cached_property
    def cost_arrays(self) -> CostArrays:
        n = self.num_links
        is_bpr = np.zeros(n, dtype=bool)
        params = {key: np.zeros(n) for key in ("t0", "a", "b", "alpha", "beta")}
        # Affine slots keep a dummy capacity so the BPR branch never divides by zero.
        capacity = np.ones(n)
        for link in self.links:
            fn = link.cost_fn
            if isinstance(fn, BPRCost):
                is_bpr[link.id] = True
                params["t0"][link.id] = fn.t0
                capacity[link.id] = fn.capacity
                params["alpha"][link.id] = fn.alpha
                params["beta"][link.id] = fn.beta
            else:
                params["a"][link.id] = fn.a
                params["b"][link.id] = fn.b
                params["beta"][link.id] = 1.0
        return CostArrays(is_bpr=is_bpr, capacity=capacity, **params)

    def link(self, link_id: int) -> Link:
        return self.links[link_id]

    def to_networkx(self) -> nx.MultiDiGraph:
        """MultiDiGraph view keyed by link id."""
        graph = nx.MultiDiGraph(name=self.name)
        graph.add_nodes_from(self.nodes)
        for link in self.links:
            graph.add_edge(link.tail, link.head, key=link.id)
        return graph

    def without_links(self, link_ids: Iterable[int], name: str = None) -> "Network":
        """Copy of the network with the given links removed and ids renumbered."""
        dropped = set(link_ids)
        kept = [link for link in self.links if link.id not in dropped]
        return Network(
            name=name or self.name,
            nodes=list(self.nodes),
            links=[
                link.model_copy(update={"id": position})
                for position, link in enumerate(kept)
            ],
        )


class DemandEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    origin: str
    destination: str
    demand: float = Field(..., ge=0, description="Vehicles")

    @property
    def od(self) -> OD:
        return (self.origin, self.destination)


class DemandTable(BaseModel):
    """Ordered OD demand sequence."""

    model_config = ConfigDict(frozen=True)

    entries: List[DemandEntry]

    @model_validator(mode="after")
    def _unique_pairs(self):
        seen = set()
        for entry in self.entries:
            if entry.origin == entry.destination:
                raise NetworkValidationError(
                    f"Demand entry {entry.od} has identical origin and destination"
                )
            if entry.od in seen:
                raise NetworkValidationError(f"Duplicate demand entry for OD {entry.od}")
            seen.add(entry.od)
        return self

    @property
    def od_pairs(self) -> List[OD]:
        return [entry.od for entry in self.entries]

    @property
    def total(self) -> float:
        return float(sum(entry.demand for entry in self.entries))

    def demand_of(self, od: OD) -> float:
        for entry in self.entries:
            if entry.od == od:
                return entry.demand
        return 0.0

    def is_integral(self) -> bool:
        return all(float(entry.demand).is_integer() for entry in self.entries)


class Route(BaseModel):
    """Loopless walk from od[0] to od[1], given as link ids."""

    model_config = ConfigDict(frozen=True)

    od: Tuple[str, str]
    links: Tuple[int, ...]

    def nodes(self, net: Network) -> List[str]:
        if not self.links:
            return [self.od[0]]
        sequence = [net.link(self.links[0]).tail]
        for link_id in self.links:
            sequence.append(net.link(link_id).head)
        return sequence

    def label(self, net: Network) -> str:
        """ACB-style name on single-letter networks, 1-3-6-9-12 otherwise."""
        separator = "" if all(len(node) == 1 for node in net.nodes) else "-"
        return separator.join(self.nodes(net))
