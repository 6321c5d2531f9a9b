"""
Training
Phase 1 on abundant seen-intent data, phase 2 on few-shot joint data with
optional knowledge preservation (L2 penalty or replay distillation)
"""
import time
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import (
    DEFAULT_PRESET,
    DEFAULT_SEED,
    LAMBDA_L2,
    MEMORY_RATIO,
    PROTOTYPE_DIM,
    TAU,
    TAU_KD,
    TRAIN_PRESETS,
    VOCAB_SCOPE,
)
from gfsid.losses import (
    PROTOTYPES,
    VECTORS,
    Batch,
    loss_cls,
    loss_ii,
    loss_is,
    loss_kd_batch,
    loss_l2_penalty,
)
from gfsid.model import IntentModel
from gfsid.preservation import (
    ParameterSnapshot,
    ReplayMemory,
    build_memory,
    compute_soft_labels,
    restore_snapshot_model,
    take_snapshot,
)
from gfsid.prototype_space import (
    PrototypeStore,
    init_novel_prototypes,
    init_projection,
    init_seen_prototypes,
)
from gfsid.text_pipeline import (
    EncoderConfig,
    MeanPoolEncoder,
    PrecomputedEncoder,
    Utterance,
    build_vocab,
    init_encoder_params,
)
from numeric import Adam, ModelParams, Rng, Tensor
from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


class Preservation(str, Enum):
    NONE = "none"
    DAKP = "dakp"
    DDKP = "ddkp"


class TrainConfig(BaseModel):
    """Hyperparameters for both phases; `lambda` is the L2 penalty weight."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    phase1_lr: float = Field(default=TRAIN_PRESETS[DEFAULT_PRESET]["phase1_lr"], gt=0)
    phase2_lr: float = Field(default=TRAIN_PRESETS[DEFAULT_PRESET]["phase2_lr"], gt=0)
    phase1_epochs: int = Field(default=int(TRAIN_PRESETS[DEFAULT_PRESET]["phase1_epochs"]), ge=1)
    phase2_epochs: int = Field(default=int(TRAIN_PRESETS[DEFAULT_PRESET]["phase2_epochs"]), ge=1)
    batch_size: int = Field(default=int(TRAIN_PRESETS[DEFAULT_PRESET]["batch_size"]), ge=2)
    lambda_: float = Field(default=LAMBDA_L2, ge=0, alias="lambda")
    preservation: Preservation = Preservation.NONE
    memory_ratio: float = Field(default=MEMORY_RATIO, gt=0, le=1)
    tau: float = Field(default=TAU, gt=0)
    tau_kd: float = Field(default=TAU_KD, gt=0)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    prototype_dim: int = Field(default=PROTOTYPE_DIM, ge=1)
    encoder: EncoderConfig = EncoderConfig()
    vocab_scope: Literal["seen", "train"] = VOCAB_SCOPE

    @classmethod
    def from_preset(cls, preset: str = DEFAULT_PRESET, **overrides) -> "TrainConfig":
        """Preset values, then `overrides` (None values are ignored)."""
        if preset not in TRAIN_PRESETS:
            raise ConfigError(f"unknown preset '{preset}', expected one of {sorted(TRAIN_PRESETS)}")
        values = dict(TRAIN_PRESETS[preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.parse(values)

    @classmethod
    def parse(cls, values: Mapping) -> "TrainConfig":
        try:
            return cls.model_validate(dict(values))
        except ValidationError as e:
            raise ConfigError(f"invalid training configuration: {e}") from e


class EpochRecord(BaseModel):
    phase: int
    epoch: int
    l_cls: float = 0.0
    l_ii: float = 0.0
    l_is: float = 0.0
    l_kd: float = 0.0
    l_l2: float = 0.0
    total: float = 0.0


class TrainReport(BaseModel):
    phase: int
    preservation: Preservation
    epochs: List[EpochRecord]
    checksum: str
    wall_clock_seconds: float = 0.0


@dataclass
class PhaseOutput:
    model: IntentModel
    report: TrainReport

    @property
    def params(self) -> ModelParams:
        return self.model.params

    @property
    def store(self) -> PrototypeStore:
        return self.model.store


COMPONENTS = ("l_cls", "l_ii", "l_is", "l_kd", "l_l2")


# ============================================================================
# Shared objective
# ============================================================================

def accumulate_loss(
    model: IntentModel,
    utterances: Sequence[Utterance],
    labels: np.ndarray,
    cfg: TrainConfig,
    soft_labels: Optional[Tensor] = None,
    snapshot: Optional[ParameterSnapshot] = None,
) -> Dict[str, float]:
    """
    Evaluate L_cls + L_ii + L_is (+ L_KD on the trailing replay rows)
    (+ lambda * L2) and add its gradient to every trainable parameter.

    Returns the per-component values.
    """
    store = model.store
    V, cache = model.embed(utterances)
    batch = Batch(V, labels)

    parts = {name: 0.0 for name in COMPONENTS}
    grad_v = np.zeros_like(V)
    grad_p = np.zeros_like(store.vectors.value)

    terms = [("l_cls", loss_cls(batch, store, cfg.tau)), ("l_is", loss_is(batch, store))]
    if batch.size >= 2:
        terms.append(("l_ii", loss_ii(batch)))
    for name, loss in terms:
        parts[name] = loss.value
        grad_v += loss.grads[VECTORS]
        if PROTOTYPES in loss.grads:
            grad_p += loss.grads[PROTOTYPES]

    if soft_labels is not None and len(soft_labels):
        m = soft_labels.shape[0]
        replay = Batch(V[-m:], labels[-m:])
        kd = loss_kd_batch(replay, store, soft_labels, cfg.tau_kd)
        parts["l_kd"] = kd.value
        grad_v[-m:] += kd.grads[VECTORS]
        grad_p += kd.grads[PROTOTYPES]

    model.backward(cache, grad_v)
    store.vectors.grad += grad_p

    if snapshot is not None:
        l2 = loss_l2_penalty(model.params, store, snapshot)
        parts["l_l2"] = cfg.lambda_ * l2.value
        for name, grad in l2.grads.items():
            target = store.vectors if name == store.vectors.name else model.params[name]
            target.grad += cfg.lambda_ * grad

    return parts


def make_batches(n: int, batch_size: int, rng: Rng) -> List[np.ndarray]:
    """Shuffled index batches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _epoch_record(phase: int, epoch: int, sums: Dict[str, float], n_batches: int) -> EpochRecord:
    means = {name: sums[name] / n_batches for name in COMPONENTS}
    return EpochRecord(phase=phase, epoch=epoch, total=sum(means.values()), **means)


def _log_epoch(record: EpochRecord, epochs: int) -> None:
    logger.info(
        f"phase {record.phase} epoch {record.epoch}/{epochs}: total={record.total:.5f} "
        f"cls={record.l_cls:.5f} ii={record.l_ii:.5f} is={record.l_is:.5f} "
        f"kd={record.l_kd:.5f} l2={record.l_l2:.5f}"
    )


def _ordered_labels(data: Iterable[Utterance]) -> List[str]:
    seen: Dict[str, None] = {}
    for u in data:
        seen.setdefault(u.label, None)
    return list(seen)


# ============================================================================
# Phase 1
# ============================================================================

def run_phase1(
    data: Sequence[Utterance],
    cfg: TrainConfig,
    rng: Rng,
    vocab_texts: Optional[Sequence[str]] = None,
    vectors: Optional[Mapping[int, Tensor]] = None,
) -> PhaseOutput:
    """
    Train encoder, projection and seen prototypes on L_cls + L_ii + L_is.

    Args:
        data: Seen-intent training utterances
        cfg: Training configuration
        rng: Source of every stochastic choice (init, shuffles)
        vocab_texts: Texts the vocabulary is built from (defaults to `data`)
        vectors: Precomputed hidden vectors by uid; replaces the desk encoder

    Returns:
        Trained model and per-epoch report
    """
    if not data:
        raise ConfigError("phase 1 needs training data")
    intents = _ordered_labels(data)
    if len(intents) < 2:
        raise ConfigError(f"phase 1 needs at least 2 seen intents, got {intents}")

    started = time.perf_counter()
    vocab = build_vocab(vocab_texts if vocab_texts is not None else [u.text for u in data])

    if vectors is not None:
        encoder = PrecomputedEncoder(vectors)
        params = ModelParams()
    else:
        encoder = MeanPoolEncoder(cfg.encoder)
        params = init_encoder_params(len(vocab), cfg.encoder, rng)
    params.add(init_projection(encoder.hidden_dim, cfg.prototype_dim, rng))
    store = init_seen_prototypes(intents, cfg.prototype_dim, rng)
    model = IntentModel(encoder, vocab, params, store)

    labels = np.array([store.index_of(u.label) for u in data], dtype=np.int64)
    optimizer = Adam(cfg.phase1_lr)
    logger.info(
        f"Phase 1: {len(data)} utterances, {len(intents)} seen intents, "
        f"{cfg.phase1_epochs} epochs, lr={cfg.phase1_lr}"
    )

    records: List[EpochRecord] = []
    for epoch in range(1, cfg.phase1_epochs + 1):
        sums = {name: 0.0 for name in COMPONENTS}
        batches = make_batches(len(data), cfg.batch_size, rng)
        for idx in batches:
            model.zero_grad()
            parts = accumulate_loss(model, [data[i] for i in idx], labels[idx], cfg)
            optimizer.step(model.trainable())
            for name in COMPONENTS:
                sums[name] += parts[name]
        record = _epoch_record(1, epoch, sums, len(batches))
        records.append(record)
        _log_epoch(record, cfg.phase1_epochs)

    report = TrainReport(
        phase=1,
        preservation=Preservation.NONE,
        epochs=records,
        checksum=model.checksum(),
        wall_clock_seconds=time.perf_counter() - started,
    )
    logger.info(f"Phase 1 finished in {report.wall_clock_seconds:.2f}s, checksum {report.checksum[:12]}")
    return PhaseOutput(model, report)


# ============================================================================
# Phase 2
# ============================================================================

def prepare_preservation(
    phase1: PhaseOutput,
    cfg: TrainConfig,
    seen_data: Optional[Sequence[Utterance]],
    rng: Rng,
) -> Tuple[Optional[ParameterSnapshot], Optional[ReplayMemory]]:
    """Snapshot (dakp, ddkp) and soft-labelled replay memory (ddkp) for phase 2."""
    if cfg.preservation == Preservation.NONE:
        return None, None

    snapshot = take_snapshot(phase1.params, phase1.store)
    if cfg.preservation == Preservation.DAKP:
        return snapshot, None

    if not seen_data:
        raise ConfigError("replay distillation needs the seen-intent training data")
    memory = build_memory(seen_data, cfg.memory_ratio, rng, phase1.store.seen_intents)
    snapshot_model = restore_snapshot_model(snapshot, phase1.model)
    return snapshot, compute_soft_labels(memory, snapshot_model, cfg.tau_kd)


def run_phase2(
    joint_support: Sequence[Utterance],
    phase1: PhaseOutput,
    cfg: TrainConfig,
    rng: Rng,
    snapshot: Optional[ParameterSnapshot] = None,
    memory: Optional[ReplayMemory] = None,
) -> PhaseOutput:
    """
    Add novel prototypes from the supports, then fine-tune every parameter on
    the joint few-shot data with the configured preservation term.

    The phase-1 output is not modified.
    """
    if not joint_support:
        raise ConfigError("phase 2 needs joint support utterances")

    mode = cfg.preservation
    if mode in (Preservation.DAKP, Preservation.DDKP) and snapshot is None:
        raise ConfigError(f"preservation '{mode.value}' requires a parameter snapshot")
    if mode == Preservation.DDKP:
        if memory is None or memory.soft_labels is None:
            raise ConfigError("preservation 'ddkp' requires a replay memory with soft labels")
        if list(memory.seen_intents) != phase1.store.seen_intents:
            raise ConfigError("replay memory intents do not match the phase-1 prototypes")

    started = time.perf_counter()
    model = phase1.model.copy()

    novel: Dict[str, List[Utterance]] = {}
    for u in joint_support:
        if u.label not in model.store.intents:
            novel.setdefault(u.label, []).append(u)
    if not novel:
        raise ConfigError("phase 2 support contains no novel intent")

    support_vectors: Dict[str, List[Tensor]] = {}
    for intent, utterances in novel.items():
        V, _ = model.embed(utterances)
        support_vectors[intent] = list(V)
    model.store = init_novel_prototypes(model.store, support_vectors)

    labels = np.array([model.store.index_of(u.label) for u in joint_support], dtype=np.int64)
    replay_labels = memory.label_indices() if mode == Preservation.DDKP else None
    penalty = snapshot if mode == Preservation.DAKP else None

    optimizer = Adam(cfg.phase2_lr)
    logger.info(
        f"Phase 2 ({mode.value}): {len(joint_support)} supports, {len(novel)} novel intents, "
        f"{cfg.phase2_epochs} epochs, lr={cfg.phase2_lr}"
    )

    records: List[EpochRecord] = []
    for epoch in range(1, cfg.phase2_epochs + 1):
        sums = {name: 0.0 for name in COMPONENTS}
        batches = make_batches(len(joint_support), cfg.batch_size, rng)
        for idx in batches:
            utterances = [joint_support[i] for i in idx]
            batch_labels = labels[idx]
            soft = None
            if mode == Preservation.DDKP:
                take = min(len(idx), len(memory))
                picks = rng.choice(len(memory), size=take, replace=False)
                utterances += [memory.items[int(p)] for p in picks]
                batch_labels = np.concatenate([batch_labels, replay_labels[picks]])
                soft = memory.soft_labels[picks]

            model.zero_grad()
            parts = accumulate_loss(model, utterances, batch_labels, cfg, soft_labels=soft, snapshot=penalty)
            optimizer.step(model.trainable())
            for name in COMPONENTS:
                sums[name] += parts[name]
        record = _epoch_record(2, epoch, sums, len(batches))
        records.append(record)
        _log_epoch(record, cfg.phase2_epochs)

    report = TrainReport(
        phase=2,
        preservation=mode,
        epochs=records,
        checksum=model.checksum(),
        wall_clock_seconds=time.perf_counter() - started,
    )
    logger.info(f"Phase 2 finished in {report.wall_clock_seconds:.2f}s, checksum {report.checksum[:12]}")
    return PhaseOutput(model, report)
