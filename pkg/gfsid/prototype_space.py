"""
Prototype Space
Projection of h_[MASK] into R^c, prototype storage and cosine classification
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from numeric import (
    Param,
    Rng,
    Tensor,
    cosine_matrix,
    matmul_rows,
    matmul_rows_backward,
    matvec,
    row_norms,
)
from utils.error_handler import ConfigError, DegenerateVectorError, DimensionMismatchError
from utils.logger import get_logger

logger = get_logger(__name__)

PROJECTION = "projection"
PROTOTYPES = "prototypes"
# Snapshot key for the seen block of the prototype matrix
SEEN_PROTOTYPES = "prototypes.seen"


class Stage(str, Enum):
    SEEN = "seen"
    NOVEL = "novel"


def init_projection(hidden_dim: int, c: int, rng: Rng) -> Param:
    """W in R^{c x h}, uniform in [-1/sqrt(h), 1/sqrt(h)]."""
    if hidden_dim < 1 or c < 1:
        raise ConfigError(f"projection dims must be >= 1, got c={c}, h={hidden_dim}")
    bound = 1.0 / np.sqrt(hidden_dim)
    return Param(PROJECTION, rng.uniform(-bound, bound, size=(c, hidden_dim)))


def project(h: Tensor, W: Tensor) -> Tensor:
    """v = W h."""
    return matvec(W, h)


def project_batch(H: Tensor, W: Tensor) -> Tensor:
    return matmul_rows(H, W)


def project_batch_backward(H: Tensor, W: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    """Returns (dH, dW)."""
    return matmul_rows_backward(H, W, grad_out)


@dataclass
class PrototypeStore:
    """
    One trainable vector per intent; the seen block precedes the novel block.
    """

    intents: List[str]
    stages: List[Stage]
    vectors: Param

    def __post_init__(self):
        if len(set(self.intents)) != len(self.intents):
            raise ConfigError(f"duplicate intent names in prototype store: {self.intents}")
        if len(self.intents) != len(self.stages) or len(self.intents) != self.vectors.value.shape[0]:
            raise DimensionMismatchError(
                "prototype store", (len(self.intents), len(self.stages)), self.vectors.value.shape
            )
        ordered = [s == Stage.SEEN for s in self.stages]
        if ordered != sorted(ordered, reverse=True):
            raise ConfigError("seen prototypes must precede novel prototypes")
        if len(self.intents):
            row_norms(self.vectors.value)

    def __len__(self) -> int:
        return len(self.intents)

    @property
    def dim(self) -> int:
        return self.vectors.value.shape[1]

    @property
    def n_seen(self) -> int:
        return sum(1 for s in self.stages if s == Stage.SEEN)

    @property
    def seen_intents(self) -> List[str]:
        return self.intents[: self.n_seen]

    @property
    def novel_intents(self) -> List[str]:
        return self.intents[self.n_seen:]

    def seen_block(self) -> Tensor:
        return self.vectors.value[: self.n_seen]

    def index_of(self, intent: str) -> int:
        try:
            return self.intents.index(intent)
        except ValueError:
            raise ConfigError(f"intent '{intent}' is not in the prototype store") from None

    def copy(self) -> "PrototypeStore":
        return PrototypeStore(list(self.intents), list(self.stages), self.vectors.copy())


def init_seen_prototypes(intents: Sequence[str], c: int, rng: Rng) -> PrototypeStore:
    """Unit-norm prototypes from entries uniform in [-0.5, 0.5], tagged seen."""
    if not intents:
        raise ConfigError("at least one seen intent is required")
    if len(set(intents)) != len(intents):
        raise ConfigError(f"duplicate intent names: {list(intents)}")
    raw = rng.uniform(-0.5, 0.5, size=(len(intents), c))
    vectors = raw / row_norms(raw)[:, None]
    return PrototypeStore(list(intents), [Stage.SEEN] * len(intents), Param(PROTOTYPES, vectors))


def init_novel_prototypes(store: PrototypeStore, support: Mapping[str, Sequence[Tensor]]) -> PrototypeStore:
    """
    Append one prototype per novel intent: the mean of its projected supports.

    Returns a new store; the input store is left untouched.
    """
    rows = []
    names = []
    for intent, vectors in support.items():
        if intent in store.intents:
            raise ConfigError(f"novel intent '{intent}' collides with an existing prototype")
        if len(vectors) == 0:
            raise ConfigError(f"novel intent '{intent}' has no support vectors")
        mean = np.mean(np.stack(vectors), axis=0)
        if mean.shape != (store.dim,):
            raise DimensionMismatchError("init_novel_prototypes", mean.shape, (store.dim,))
        try:
            row_norms(mean)
        except DegenerateVectorError:
            raise DegenerateVectorError(f"mean of supports for '{intent}' is degenerate") from None
        rows.append(mean)
        names.append(intent)

    matrix = np.vstack([store.vectors.value] + rows) if rows else store.vectors.value.copy()
    logger.info(f"Initialized {len(names)} novel prototypes next to {len(store)} existing ones")
    return PrototypeStore(
        store.intents + names,
        store.stages + [Stage.NOVEL] * len(names),
        Param(PROTOTYPES, matrix),
    )


def classify(v: Tensor, store: PrototypeStore) -> Tuple[str, Tensor]:
    """
    Nearest prototype by cosine over every prototype, seen and novel jointly.

    Ties go to the lowest store index.
    """
    if len(store) == 0:
        raise ConfigError("cannot classify against an empty prototype store")
    scores = cosine_matrix(v[None, :], store.vectors.value)[0]
    return store.intents[int(np.argmax(scores))], scores


def classify_batch(V: Tensor, prototypes: Tensor) -> Tuple[np.ndarray, Tensor]:
    """Argmax indices and score matrix for every row of V."""
    scores = cosine_matrix(V, prototypes)
    return np.argmax(scores, axis=1), scores
