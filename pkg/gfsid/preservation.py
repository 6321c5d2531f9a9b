"""
Knowledge Preservation
Parameter snapshots for the L2 penalty and replay memory with distillation soft labels
"""
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from config import TAU_KD
from gfsid.model import IntentModel
from gfsid.prototype_space import PROTOTYPES, SEEN_PROTOTYPES, PrototypeStore, Stage
from gfsid.text_pipeline import Utterance
from numeric import ModelParams, Param, Rng, Tensor, cosine_matrix, softmax
from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ParameterSnapshot:
    """Read-only copies of the phase-1 encoder, projection and seen prototypes."""

    tensors: Mapping[str, Tensor]
    seen_intents: tuple

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Tensor], seen_intents: Sequence[str]) -> "ParameterSnapshot":
        frozen: Dict[str, Tensor] = {}
        for name, value in tensors.items():
            copy = np.array(value, dtype=np.float64, copy=True)
            copy.setflags(write=False)
            frozen[name] = copy
        return cls(MappingProxyType(frozen), tuple(seen_intents))


def take_snapshot(params: ModelParams, store: PrototypeStore) -> ParameterSnapshot:
    """Deep copy of every live parameter plus the seen prototype block."""
    tensors = dict(params.as_dict())
    tensors[SEEN_PROTOTYPES] = store.seen_block()
    snapshot = ParameterSnapshot.from_tensors(tensors, store.seen_intents)
    logger.info(f"Snapshot taken over {len(tensors)} tensors ({store.n_seen} seen prototypes)")
    return snapshot


def restore_snapshot_model(snapshot: ParameterSnapshot, like: IntentModel) -> IntentModel:
    """Frozen phase-1 model rebuilt from a snapshot, sharing encoder and vocab with `like`."""
    params = ModelParams(
        Param(name, np.array(value)) for name, value in snapshot.tensors.items() if name != SEEN_PROTOTYPES
    )
    seen = snapshot.tensors[SEEN_PROTOTYPES]
    store = PrototypeStore(
        list(snapshot.seen_intents),
        [Stage.SEEN] * len(snapshot.seen_intents),
        Param(PROTOTYPES, np.array(seen)),
    )
    return IntentModel(like.encoder, like.vocab, params, store)


@dataclass
class ReplayMemory:
    """
    Fixed-size store of seen-intent utterances; `soft_labels` rows follow
    `items` and are distributions over `seen_intents`.
    """

    items: List[Utterance]
    capacity: int
    seen_intents: List[str]
    soft_labels: Optional[Tensor] = None

    def __post_init__(self):
        if len(self.items) > self.capacity:
            raise ConfigError(f"memory holds {len(self.items)} items, capacity is {self.capacity}")
        unknown = {u.label for u in self.items} - set(self.seen_intents)
        if unknown:
            raise ConfigError(f"replay memory may only hold seen intents, got {sorted(unknown)}")
        if self.soft_labels is not None:
            if self.soft_labels.shape != (len(self.items), len(self.seen_intents)):
                raise ConfigError(
                    f"soft labels of shape {self.soft_labels.shape} do not match "
                    f"{len(self.items)} items x {len(self.seen_intents)} intents"
                )
            if not np.allclose(self.soft_labels.sum(axis=1), 1.0, atol=1e-9):
                raise ConfigError("every soft label must sum to 1")

    def __len__(self) -> int:
        return len(self.items)

    def label_indices(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.seen_intents)}
        return np.array([index[u.label] for u in self.items], dtype=np.int64)


def build_memory(
    seen_data: Sequence[Utterance],
    ratio: float,
    rng: Rng,
    seen_intents: Optional[Sequence[str]] = None,
) -> ReplayMemory:
    """
    Class-stratified sample of `seen_data` without replacement.

    Capacity is max(1, floor(ratio * |D|)). Each intent contributes
    max(1, floor(ratio * count)) items; overshoot is truncated uniformly at
    random, undershoot is topped up uniformly from the unselected items, so the
    memory always holds exactly `capacity` items.
    """
    if not seen_data:
        raise ConfigError("cannot build a replay memory from no data")
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"memory ratio must be in (0, 1], got {ratio}")

    capacity = max(1, int(np.floor(ratio * len(seen_data))))

    groups: Dict[str, List[int]] = {}
    for i, u in enumerate(seen_data):
        groups.setdefault(u.label, []).append(i)

    chosen: List[int] = []
    for label, members in groups.items():
        quota = max(1, int(np.floor(ratio * len(members))))
        picks = rng.choice(len(members), size=quota, replace=False)
        chosen.extend(members[int(p)] for p in picks)

    if len(chosen) > capacity:
        keep = rng.choice(len(chosen), size=capacity, replace=False)
        chosen = [chosen[int(k)] for k in sorted(keep)]
    elif len(chosen) < capacity:
        taken = set(chosen)
        rest = [i for i in range(len(seen_data)) if i not in taken]
        extra = rng.choice(len(rest), size=capacity - len(chosen), replace=False)
        chosen.extend(rest[int(e)] for e in sorted(extra))

    intents = list(seen_intents) if seen_intents is not None else list(groups)
    memory = ReplayMemory([seen_data[i] for i in chosen], capacity, intents)
    logger.info(f"Replay memory built: {len(memory)} of {len(seen_data)} seen utterances (ratio {ratio})")
    return memory


def compute_soft_labels(memory: ReplayMemory, snapshot_model: IntentModel, tau_kd: float = TAU_KD) -> ReplayMemory:
    """
    Soft labels softmax(cos(v, c_seen) / tau_kd) from the snapshot model,
    computed once and frozen.
    """
    if tau_kd <= 0:
        raise ConfigError(f"tau_kd must be positive, got {tau_kd}")
    if list(snapshot_model.store.intents[: snapshot_model.store.n_seen]) != list(memory.seen_intents):
        raise ConfigError("snapshot seen intents do not match the replay memory")

    V, _ = snapshot_model.embed(memory.items)
    sims = cosine_matrix(V, snapshot_model.store.seen_block())
    soft = softmax(sims / tau_kd)
    soft.setflags(write=False)
    return ReplayMemory(list(memory.items), memory.capacity, list(memory.seen_intents), soft)
