"""
Losses
Classification, instance-instance and instance-prototype contrastive losses,
the L2 parameter penalty and knowledge distillation

Batch losses return gradients w.r.t. the batch vectors ("vectors", T x c) and
the prototype matrix ("prototypes", C x c); the caller chains them into the
encoder and projection.
"""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Optional

import numpy as np

from config import TAU, TAU_KD
from gfsid.prototype_space import SEEN_PROTOTYPES, PrototypeStore
from numeric import (
    ModelParams,
    Tensor,
    cosine_matrix,
    cosine_matrix_backward,
    log_softmax,
    softmax,
)
from utils.error_handler import ConfigError, DimensionMismatchError, NumericalError

if TYPE_CHECKING:
    from gfsid.preservation import ParameterSnapshot

VECTORS = "vectors"
PROTOTYPES = "prototypes"


@dataclass
class Batch:
    """Projected vectors with label indices into the prototype store."""

    vectors: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.labels.shape[0]:
            raise DimensionMismatchError("batch", self.vectors.shape, self.labels.shape)
        if self.size < 1:
            raise ConfigError("a batch needs at least one instance")

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class LossValue:
    value: float
    grads: Dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NumericalError(f"loss evaluated to {self.value}")


def _check_labels(batch: Batch, n_classes: int) -> None:
    if batch.labels.min() < 0 or batch.labels.max() >= n_classes:
        raise ConfigError(f"batch labels must index one of {n_classes} prototypes")


def _prototype_cross_entropy(batch: Batch, prototypes: Tensor, tau: float, scale: float) -> LossValue:
    """scale * mean_j -log softmax(cos(v_j, c_k) / tau)[y_j]."""
    _check_labels(batch, prototypes.shape[0])
    sims = cosine_matrix(batch.vectors, prototypes)
    logits = sims / tau
    rows = np.arange(batch.size)
    value = -scale * float(np.mean(log_softmax(logits)[rows, batch.labels]))

    d_logits = softmax(logits)
    d_logits[rows, batch.labels] -= 1.0
    d_sims = d_logits * (scale / (batch.size * tau))
    d_vectors, d_prototypes = cosine_matrix_backward(batch.vectors, prototypes, d_sims)
    return LossValue(max(value, 0.0), {VECTORS: d_vectors, PROTOTYPES: d_prototypes})


def loss_cls(batch: Batch, store: PrototypeStore, tau: float = TAU) -> LossValue:
    """Softmax cross-entropy over cosine similarities to every prototype, temperature tau."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    return _prototype_cross_entropy(batch, store.vectors.value, tau, 1.0)


def loss_is(batch: Batch, store: PrototypeStore) -> LossValue:
    """
    Instance-prototype contrastive loss: the gold-prototype log-softmax averaged
    over instances and scaled by 1/C.
    """
    if len(store) == 0:
        raise ConfigError("instance-prototype loss needs a non-empty store")
    return _prototype_cross_entropy(batch, store.vectors.value, 1.0, 1.0 / len(store))


def loss_ii(batch: Batch) -> LossValue:
    """
    Supervised contrastive loss over ordered positive pairs (i != j, y_i == y_j);
    the denominator runs over k != i. Zero when no positive pair exists.
    """
    T = batch.size
    if T < 2:
        raise ConfigError(f"instance-instance loss needs at least 2 instances, got {T}")

    same = batch.labels[:, None] == batch.labels[None, :]
    off_diag = ~np.eye(T, dtype=bool)
    positives = same & off_diag
    n_pos = int(positives.sum())
    if n_pos == 0:
        return LossValue(0.0, {VECTORS: np.zeros_like(batch.vectors)})

    sims = cosine_matrix(batch.vectors, batch.vectors)
    masked = np.where(off_diag, sims, -np.inf)
    log_prob = log_softmax(masked)
    value = -float(np.sum(log_prob[positives])) / n_pos

    # d(-log p_ij)/d s_ik = p_ik - [k == j], summed over the anchor's positives
    prob = np.where(off_diag, np.exp(log_prob), 0.0)
    anchors = positives.sum(axis=1, keepdims=True)
    d_sims = (anchors * prob - positives) / n_pos
    d_left, d_right = cosine_matrix_backward(batch.vectors, batch.vectors, d_sims)
    return LossValue(max(value, 0.0), {VECTORS: d_left + d_right})


def loss_kd(q_logits: Tensor, p_soft: Tensor, tau_kd: float = TAU_KD) -> LossValue:
    """
    -(1/N) sum_i p_i log q_i with q = softmax(q_logits / tau_kd).

    Gradient is returned under "logits".
    """
    q_logits = np.asarray(q_logits, dtype=np.float64)
    p_soft = np.asarray(p_soft, dtype=np.float64)
    if q_logits.shape != p_soft.shape or q_logits.ndim != 1 or q_logits.shape[0] < 1:
        raise DimensionMismatchError("loss_kd", q_logits.shape, p_soft.shape)
    if tau_kd <= 0:
        raise ConfigError(f"tau_kd must be positive, got {tau_kd}")
    n = q_logits.shape[0]
    log_q = log_softmax(q_logits / tau_kd)
    value = -float(np.dot(p_soft, log_q)) / n
    d_logits = (np.exp(log_q) * p_soft.sum() - p_soft) / (n * tau_kd)
    return LossValue(value, {"logits": d_logits})


def loss_kd_batch(batch: Batch, store: PrototypeStore, soft_labels: Tensor, tau_kd: float = TAU_KD) -> LossValue:
    """
    Distillation averaged over replay instances, with logits restricted to the
    seen-prototype block.
    """
    n_seen = store.n_seen
    if soft_labels.shape != (batch.size, n_seen):
        raise DimensionMismatchError("loss_kd_batch", soft_labels.shape, (batch.size, n_seen))
    if tau_kd <= 0:
        raise ConfigError(f"tau_kd must be positive, got {tau_kd}")

    seen = store.seen_block()
    logits = cosine_matrix(batch.vectors, seen) / tau_kd
    log_q = log_softmax(logits)
    value = -float(np.sum(soft_labels * log_q)) / (n_seen * batch.size)

    d_logits = (np.exp(log_q) * soft_labels.sum(axis=1, keepdims=True) - soft_labels)
    d_sims = d_logits / (n_seen * batch.size * tau_kd)
    d_vectors, d_seen = cosine_matrix_backward(batch.vectors, seen, d_sims)
    d_prototypes = np.zeros_like(store.vectors.value)
    d_prototypes[:n_seen] = d_seen
    return LossValue(value, {VECTORS: d_vectors, PROTOTYPES: d_prototypes})


def loss_l2_penalty(
    current: ModelParams,
    store: Optional[PrototypeStore],
    snapshot: "ParameterSnapshot",
) -> LossValue:
    """
    sum over snapshotted tensors of ||p_joint - p_seen||^2; novel prototypes are
    never covered. Gradients are keyed by parameter name.
    """
    value = 0.0
    grads: Dict[str, Tensor] = {}
    for name, frozen in snapshot.tensors.items():
        if name == SEEN_PROTOTYPES:
            if store is None:
                raise ConfigError("snapshot covers seen prototypes but no store was given")
            live = store.vectors.value[: frozen.shape[0]]
            target = store.vectors.name
        else:
            if name not in current:
                raise ConfigError(f"snapshot parameter '{name}' missing from the live model")
            live = current[name].value
            target = name
        if live.shape != frozen.shape:
            raise DimensionMismatchError(f"l2 penalty on '{name}'", live.shape, frozen.shape)

        diff = live - frozen
        value += float(np.sum(diff * diff))
        if name == SEEN_PROTOTYPES:
            grad = np.zeros_like(store.vectors.value)
            grad[: frozen.shape[0]] = 2.0 * diff
        else:
            grad = 2.0 * diff
        grads[target] = grad
    return LossValue(value, grads)


def entropy(p: Tensor) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))
