"""
End-to-end experiment on the synthetic corpus: generate, split, train both
phases under every preservation mode, evaluate non-episodically and
optionally on joint C-way K-shot episodes
"""
import statistics
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from config import STREAM_DATA, STREAM_EVAL, STREAM_MEMORY, STREAM_PHASE1, STREAM_PHASE2, STREAM_SPLIT
from gfsid.evaluation import (
    DiagnosticRow,
    EpisodeSpec,
    GfsidSplit,
    eval_episodic,
    eval_nonepisodic,
    forgetting_diagnostics,
    make_split,
)
from gfsid.model import IntentModel
from gfsid.synthetic import generate_synthetic
from gfsid.training import PhaseOutput, Preservation, TrainConfig, prepare_preservation, run_phase1, run_phase2
from numeric import derive_rng
from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


class ExperimentConfig(BaseModel):
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    n_seen: int = Field(default=8, ge=2)
    n_novel: int = Field(default=4, ge=1)
    per_intent: int = Field(default=50, ge=10)
    k_shots: List[int] = Field(default_factory=lambda: [1, 5], min_length=1)
    modes: List[Preservation] = Field(default_factory=lambda: list(Preservation), min_length=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    # Episodes per joint (S+V)-way K-shot evaluation; None skips it
    episodes: Optional[int] = Field(default=None, ge=1)

    @classmethod
    def parse(cls, **values) -> "ExperimentConfig":
        try:
            return cls(**{k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise ConfigError(f"invalid experiment configuration: {e}") from e


class RunResult(BaseModel):
    seed: int
    k_shot: int
    preservation: Preservation
    phase1_seen_accuracy: float
    accuracy: float
    seen_accuracy: float
    novel_accuracy: float
    episodic_accuracy: Optional[float] = None
    checksum: str


class ExperimentSummary(BaseModel):
    k_shot: int
    preservation: Preservation
    median_accuracy: float
    median_seen_accuracy: float
    median_novel_accuracy: float
    median_episodic_accuracy: Optional[float] = None
    seeds: int


def vocab_texts(cfg: TrainConfig, split: GfsidSplit) -> List[str]:
    """
    Texts the vocabulary is built from under `cfg.vocab_scope`.

    Test pools never contribute; under "seen" every novel-only token maps to [UNK].
    """
    texts = [u.text for u in split.seen_train]
    if cfg.vocab_scope == "train":
        texts.extend(u.text for intent in split.novel_intents for u in split.novel_support[intent])
    return texts


def seen_test_accuracy(model: IntentModel, split: GfsidSplit) -> float:
    """Accuracy of a model on the seen test pool."""
    pred = model.predict(split.seen_test)
    return sum(p == u.label for p, u in zip(pred, split.seen_test)) / len(split.seen_test)


def train_phase1_for_split(
    split: GfsidSplit,
    cfg: TrainConfig,
    seed: int,
) -> PhaseOutput:
    return run_phase1(split.seen_train, cfg, derive_rng(seed, STREAM_PHASE1), vocab_texts(cfg, split))


def train_phase2_for_split(
    phase1: PhaseOutput,
    split: GfsidSplit,
    cfg: TrainConfig,
    seed: int,
) -> PhaseOutput:
    snapshot, memory = prepare_preservation(phase1, cfg, split.seen_train, derive_rng(seed, STREAM_MEMORY))
    return run_phase2(split.joint_support(), phase1, cfg, derive_rng(seed, STREAM_PHASE2), snapshot, memory)


def run_seed(seed: int, exp: ExperimentConfig) -> Tuple[List[RunResult], List[Tuple[int, List[DiagnosticRow]]]]:
    """
    All (K, preservation) runs for one seed.

    Phase 1 is trained once per distinct vocabulary: the seen train pool does
    not depend on K, the novel supports do.
    """
    data, seen, novel = generate_synthetic(exp.n_seen, exp.n_novel, exp.per_intent, derive_rng(seed, STREAM_DATA))
    splits = {k: make_split(data, seen, novel, k, derive_rng(seed, STREAM_SPLIT), seed) for k in exp.k_shots}

    base_cfg = exp.train.model_copy(update={"seed": seed})
    phase1_runs: Dict[Tuple[str, ...], Tuple[PhaseOutput, float]] = {}

    results: List[RunResult] = []
    diagnostics: List[Tuple[int, List[DiagnosticRow]]] = []
    for k, split in splits.items():
        texts = tuple(vocab_texts(base_cfg, split))
        if texts not in phase1_runs:
            phase1 = train_phase1_for_split(split, base_cfg, seed)
            phase1_acc = seen_test_accuracy(phase1.model, split)
            logger.info(f"Seed {seed}, K={k}: phase-1 seen-test accuracy {phase1_acc:.4f}")
            phase1_runs[texts] = (phase1, phase1_acc)
        phase1, phase1_acc = phase1_runs[texts]
        reports = {}
        for mode in exp.modes:
            cfg = base_cfg.model_copy(update={"preservation": mode})
            phase2 = train_phase2_for_split(phase1, split, cfg, seed)
            report = eval_nonepisodic(phase2.model, split, mode.value)
            reports[mode.value] = report
            episodic = None
            if exp.episodes is not None:
                spec = EpisodeSpec.create(ways=len(split.intents), shots=k, episodes=exp.episodes)
                episodic = eval_episodic(
                    phase2.model, split, spec, derive_rng(seed, STREAM_EVAL), preservation=mode.value
                )
            results.append(RunResult(
                seed=seed,
                k_shot=k,
                preservation=mode,
                phase1_seen_accuracy=phase1_acc,
                accuracy=report.accuracy,
                seen_accuracy=report.seen_accuracy or 0.0,
                novel_accuracy=report.novel_accuracy or 0.0,
                episodic_accuracy=episodic.accuracy if episodic is not None else None,
                checksum=phase2.report.checksum,
            ))
        if Preservation.NONE.value in reports:
            diagnostics.append((k, forgetting_diagnostics(reports)))
    return results, diagnostics


def summarize(results: Sequence[RunResult]) -> List[ExperimentSummary]:
    """Median over seeds per (K, preservation)."""
    def median_or_none(values: List[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return statistics.median(present) if present else None

    groups: Dict[Tuple[int, Preservation], List[RunResult]] = {}
    for r in results:
        groups.setdefault((r.k_shot, r.preservation), []).append(r)
    return [
        ExperimentSummary(
            k_shot=k,
            preservation=mode,
            median_accuracy=statistics.median(r.accuracy for r in runs),
            median_seen_accuracy=statistics.median(r.seen_accuracy for r in runs),
            median_novel_accuracy=statistics.median(r.novel_accuracy for r in runs),
            median_episodic_accuracy=median_or_none([r.episodic_accuracy for r in runs]),
            seeds=len(runs),
        )
        for (k, mode), runs in groups.items()
    ]


Diagnostics = List[Tuple[int, int, List[DiagnosticRow]]]


def run_experiment(exp: Optional[ExperimentConfig] = None) -> Tuple[List[RunResult], List[ExperimentSummary], Diagnostics]:
    """Every seed; returns per-run results, medians and (seed, K, rows) diagnostics."""
    exp = exp or ExperimentConfig()
    results: List[RunResult] = []
    diagnostics: Diagnostics = []
    for seed in exp.seeds:
        seed_results, seed_rows = run_seed(seed, exp)
        results.extend(seed_results)
        diagnostics.extend((seed, k, rows) for k, rows in seed_rows)
    summary = summarize(results)
    for row in summary:
        logger.info(
            f"K={row.k_shot} {row.preservation.value}: median accuracy {row.median_accuracy:.4f} "
            f"(seen {row.median_seen_accuracy:.4f}, novel {row.median_novel_accuracy:.4f})"
        )
    return results, summary, diagnostics
