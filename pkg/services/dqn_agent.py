"""Dueling double deep-Q learner on torch.

QNetwork: input -> hidden ReLU layers -> value head (1) + advantage head (k_max).
Q(s, a) = V(s) + A(s, a) - mean of A over the unmasked actions of s.
"""

import copy
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from models.training import TrainerConfig
from services.errors import DataFileError, NumericalAbort, StructuralError
from services.sequential_env import StateVector
from utils.outputs import dumps, loads

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 2


class QNetwork(nn.Module):
    def __init__(
        self,
        input_dim: int,
        n_actions: int,
        hidden_sizes: Sequence[int] = (512, 256),
        seed: int = 0,
        zero_init_heads: bool = True,
    ):
        super().__init__()
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_sizes = list(hidden_sizes)

        # initialization draws from its own generator state and leaves the global one alone
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            layers = []
            fan_in = input_dim
            for width in self.hidden_sizes:
                layers += [nn.Linear(fan_in, width), nn.ReLU()]
                fan_in = width
            self.body = nn.Sequential(*layers)
            self.value = nn.Linear(fan_in, 1)
            self.advantage = nn.Linear(fan_in, n_actions)

        if zero_init_heads:
            for head in (self.value, self.advantage):
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.value.weight.dtype

    def as_tensor(self, array, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
        return torch.as_tensor(np.asarray(array), dtype=dtype if dtype is not None else self.dtype)

    def forward(self, states: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        if states.ndim != 2 or states.shape[1] != self.input_dim:
            raise StructuralError(
                f"State batch has shape {tuple(states.shape)}, network expects (*, {self.input_dim})"
            )
        h = self.body(states)
        value = self.value(h)
        advantage = self.advantage(h)
        mask = masks.to(advantage.dtype)
        valid = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        mean_advantage = (advantage * mask).sum(dim=1, keepdim=True) / valid
        return value + advantage - mean_advantage

    def q_values(self, states: np.ndarray, masks: np.ndarray) -> np.ndarray:
        """Batch Q values as numpy; masked slots are -inf."""
        mask = self.as_tensor(masks, torch.bool)
        with torch.no_grad():
            q = self(self.as_tensor(states), mask)
            q = q.masked_fill(~mask, float("-inf"))
        return q.double().numpy()

    def td_loss(
        self,
        states: np.ndarray,
        masks: np.ndarray,
        actions: np.ndarray,
        targets: np.ndarray,
    ) -> torch.Tensor:
        """Mean squared TD error over the batch, differentiable in the parameters."""
        q = self(self.as_tensor(states), self.as_tensor(masks, torch.bool))
        chosen = q.gather(1, self.as_tensor(actions, torch.int64).view(-1, 1)).squeeze(1)
        return F.mse_loss(chosen, self.as_tensor(targets))


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions backed by preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int, dtype=np.float32):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.masks = np.zeros((capacity, n_actions), dtype=bool)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.terminals = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(
        self,
        state: np.ndarray,
        mask: np.ndarray,
        action: int,
        reward: float,
        next_state: Optional[np.ndarray],
        next_mask: Optional[np.ndarray],
        terminal: bool,
    ) -> None:
        i = self._next
        self.states[i] = state
        self.masks[i] = mask
        self.actions[i] = action
        self.rewards[i] = reward
        if terminal or next_state is None:
            self.next_states[i] = 0.0
            self.next_masks[i] = False
        else:
            self.next_states[i] = next_state
            self.next_masks[i] = next_mask
        self.terminals[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        if batch_size > self._size:
            raise StructuralError(
                f"Cannot sample {batch_size} transitions from a buffer holding {self._size}"
            )
        index = rng.choice(self._size, size=batch_size, replace=False)
        return {
            "states": self.states[index].astype(float),
            "masks": self.masks[index],
            "actions": self.actions[index],
            "rewards": self.rewards[index],
            "next_states": self.next_states[index].astype(float),
            "next_masks": self.next_masks[index],
            "terminals": self.terminals[index],
        }


def _as_batch(state: StateVector) -> Tuple[np.ndarray, np.ndarray]:
    return state.features[None, :], state.mask[None, :]


def q_values(q: QNetwork, s: StateVector) -> np.ndarray:
    states, masks = _as_batch(s)
    return q.q_values(states, masks)[0]


def act_greedy(q: QNetwork, s: StateVector) -> int:
    """Best unmasked slot; ties go to the lowest index."""
    if not np.any(s.mask):
        raise StructuralError(f"State for OD {s.od} has no valid route slot")
    return int(np.argmax(q_values(q, s)))


def td_targets(
    rewards: np.ndarray,
    next_states: np.ndarray,
    next_masks: np.ndarray,
    terminals: np.ndarray,
    online: QNetwork,
    target: QNetwork,
    gamma: float,
    mode: str = "double",
) -> np.ndarray:
    """Bootstrapped targets; double mode picks with online, values with target."""
    target_q = target.q_values(next_states, next_masks)
    if mode == "double":
        choice = np.argmax(online.q_values(next_states, next_masks), axis=1)
        bootstrap = target_q[np.arange(len(choice)), choice]
    else:
        bootstrap = target_q.max(axis=1)
    stop = np.asarray(terminals, dtype=bool) | ~np.any(next_masks, axis=1)
    bootstrap = np.where(stop, 0.0, bootstrap)
    return np.asarray(rewards, dtype=float) + gamma * bootstrap


def td_target(
    r: float,
    next_state: Optional[StateVector],
    terminal: bool,
    q: QNetwork,
    q_target: QNetwork,
    gamma: float,
    mode: str = "double",
) -> float:
    if terminal or next_state is None:
        return float(r)
    states, masks = _as_batch(next_state)
    return float(td_targets(np.array([r]), states, masks, np.array([False]), q, q_target, gamma, mode)[0])


class DQNLearner:
    """Online and target networks, optimizer, replay buffer and RNG of one run."""

    def __init__(self, state_dim: int, config: TrainerConfig, rng: np.random.Generator = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.online = QNetwork(state_dim, config.k_max, config.hidden_sizes, seed=config.seed)
        self.target = copy.deepcopy(self.online)
        self.target.requires_grad_(False)
        self.optimizer = torch.optim.Adam(self.online.parameters(), lr=config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity, state_dim, config.k_max)
        self.update_steps = 0

    @property
    def ready(self) -> bool:
        return len(self.buffer) >= max(self.config.warmup, self.config.batch_size)

    def update(self, batch: Dict[str, np.ndarray]) -> float:
        """One gradient step on a batch; returns the loss before the step."""
        targets = td_targets(
            batch["rewards"],
            batch["next_states"],
            batch["next_masks"],
            batch["terminals"],
            self.online,
            self.target,
            self.config.gamma,
            self.config.target,
        )
        loss = self.online.td_loss(batch["states"], batch["masks"], batch["actions"], targets)
        value = float(loss.item())
        if not math.isfinite(value):
            raise NumericalAbort(
                f"Non-finite loss at update {self.update_steps}: loss={value}, "
                f"reward range=({batch['rewards'].min():.3f}, {batch['rewards'].max():.3f}), "
                f"target range=({np.nanmin(targets):.3f}, {np.nanmax(targets):.3f})"
            )
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.update_steps += 1
        if self.update_steps % self.config.target_sync == 0:
            self.sync_target()
        return value

    def train_step(self) -> float:
        return self.update(self.buffer.sample(self.config.batch_size, self.rng))

    def sync_target(self) -> None:
        self.target.load_state_dict(self.online.state_dict())
        logger.debug(f"Target network synchronized at update {self.update_steps}")


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = copy.deepcopy(rng.bit_generator.state)
    inner = state["state"]
    state["state"] = {key: str(value) for key, value in inner.items()}
    return state


def _rng_state_from_json(data: dict) -> np.random.Generator:
    state = copy.deepcopy(data)
    state["state"] = {key: int(value) for key, value in state["state"].items()}
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def save_checkpoint(path: Path, network: QNetwork, metadata: dict, rng: np.random.Generator = None) -> None:
    """State-dict tensors plus a JSON metadata entry in one npz archive."""
    meta = dict(metadata)
    meta["format_version"] = CHECKPOINT_VERSION
    meta["input_dim"] = network.input_dim
    meta["n_actions"] = network.n_actions
    meta["hidden_sizes"] = network.hidden_sizes
    if rng is not None:
        meta["rng_state"] = _rng_state_to_json(rng)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param_{key}": value.detach().cpu().numpy() for key, value in network.state_dict().items()}
    with open(path, "wb") as file:
        np.savez(file, meta=np.array(dumps(meta).decode("utf-8")), **arrays)


def load_checkpoint(path: Path) -> Tuple[QNetwork, dict]:
    if not Path(path).is_file():
        raise DataFileError("checkpoint not found", path=str(path))
    with np.load(Path(path), allow_pickle=False) as archive:
        meta = loads(str(archive["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise StructuralError(
                f"Checkpoint {path} has format version {meta.get('format_version')}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        network = QNetwork(meta["input_dim"], meta["n_actions"], meta["hidden_sizes"])
        state = {
            key[len("param_") :]: torch.from_numpy(archive[key].copy())
            for key in archive.files
            if key.startswith("param_")
        }
    try:
        network.load_state_dict(state)
    except RuntimeError as e:
        raise StructuralError(f"Checkpoint {path} does not fit its recorded architecture: {e}")
    network.eval()
    if "rng_state" in meta:
        meta["rng"] = _rng_state_from_json(meta["rng_state"])
    return network, meta
