"""
Evaluation
GFSID splits, non-episodic and episodic C-way K-shot evaluation, and
forgetting diagnostics across preservation modes
"""
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tabulate import tabulate

from config import DEFAULT_EPISODES, QUERIES_PER_CLASS, TEST_FRACTION
from gfsid.model import IntentModel
from gfsid.text_pipeline import Utterance
from numeric import Rng, Tensor, cosine_matrix, derive_rng, draw_seed
from utils.error_handler import ConfigError, EpisodeSpecError, SplitMismatchError
from utils.logger import get_logger

logger = get_logger(__name__)


# ============================================================================
# Splits
# ============================================================================

@dataclass(frozen=True)
class GfsidSplit:
    """
    Seen intents split 80/20 into train/test; novel intents split into K
    supports and a test pool. `seen_support` holds K items per seen intent
    drawn from the train pool for the phase-2 joint support.
    """

    seen_intents: List[str]
    novel_intents: List[str]
    seen_train: List[Utterance]
    seen_test: List[Utterance]
    seen_support: Dict[str, List[Utterance]]
    novel_support: Dict[str, List[Utterance]]
    novel_test: List[Utterance]
    k_shot: int
    seed: Optional[int] = None

    @property
    def intents(self) -> List[str]:
        return self.seen_intents + self.novel_intents

    def joint_support(self) -> List[Utterance]:
        """Seen supports followed by novel supports, in intent order."""
        items: List[Utterance] = []
        for intent in self.seen_intents:
            items.extend(self.seen_support[intent])
        for intent in self.novel_intents:
            items.extend(self.novel_support[intent])
        return items

    def test_pool(self) -> List[Utterance]:
        return self.seen_test + self.novel_test

    def fingerprint(self) -> str:
        """SHA-256 over intents, pool membership and K."""
        def ids(items: Sequence[Utterance]) -> List:
            return [[u.uid, u.label, u.text] for u in items]

        payload = {
            "seen": self.seen_intents,
            "novel": self.novel_intents,
            "seen_train": ids(self.seen_train),
            "seen_test": ids(self.seen_test),
            "novel_support": {k: ids(v) for k, v in self.novel_support.items()},
            "novel_test": ids(self.novel_test),
            "k_shot": self.k_shot,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _group(data: Sequence[Utterance]) -> Dict[str, List[Utterance]]:
    groups: Dict[str, List[Utterance]] = {}
    for u in data:
        groups.setdefault(u.label, []).append(u)
    return groups


def _pick(items: List[Utterance], count: int, rng: Rng) -> Tuple[List[Utterance], List[Utterance]]:
    """Uniform `count` items without replacement, and the rest; both keep input order."""
    chosen = set(int(i) for i in rng.choice(len(items), size=count, replace=False))
    picked = [u for i, u in enumerate(items) if i in chosen]
    rest = [u for i, u in enumerate(items) if i not in chosen]
    return picked, rest


def make_split(
    data: Sequence[Utterance],
    seen: Sequence[str],
    novel: Sequence[str],
    k: int,
    rng: Rng,
    seed: Optional[int] = None,
) -> GfsidSplit:
    """
    Build a GFSID split.

    The seen train/test partition is drawn first so that it does not depend
    on K under a fixed rng state. Test size per seen intent is
    max(1, floor(0.2 * n)).
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if set(seen) & set(novel):
        raise ConfigError(f"seen and novel intents overlap: {sorted(set(seen) & set(novel))}")
    if len(seen) < 2 or len(novel) < 1:
        raise ConfigError(f"need >= 2 seen and >= 1 novel intents, got {len(seen)} and {len(novel)}")

    groups = _group(data)
    uncovered = set(groups) - set(seen) - set(novel)
    if uncovered:
        raise ConfigError(f"labels not assigned to seen or novel: {sorted(uncovered)}")
    missing = (set(seen) | set(novel)) - set(groups)
    if missing:
        raise ConfigError(f"intents without any instance: {sorted(missing)}")

    seen_train: List[Utterance] = []
    seen_test: List[Utterance] = []
    train_by_intent: Dict[str, List[Utterance]] = {}
    for intent in seen:
        members = groups[intent]
        if len(members) < 2:
            raise ConfigError(f"seen intent '{intent}' needs >= 2 instances for a train/test split")
        n_test = max(1, int(np.floor(TEST_FRACTION * len(members))))
        test, train = _pick(members, n_test, rng)
        seen_test.extend(test)
        seen_train.extend(train)
        train_by_intent[intent] = train

    seen_support: Dict[str, List[Utterance]] = {}
    for intent in seen:
        pool = train_by_intent[intent]
        seen_support[intent], _ = _pick(pool, min(k, len(pool)), rng)

    novel_support: Dict[str, List[Utterance]] = {}
    novel_test: List[Utterance] = []
    for intent in novel:
        members = groups[intent]
        if len(members) <= k:
            raise ConfigError(f"novel intent '{intent}' has {len(members)} instances, needs more than K={k}")
        novel_support[intent], rest = _pick(members, k, rng)
        novel_test.extend(rest)

    split = GfsidSplit(
        seen_intents=list(seen),
        novel_intents=list(novel),
        seen_train=seen_train,
        seen_test=seen_test,
        seen_support=seen_support,
        novel_support=novel_support,
        novel_test=novel_test,
        k_shot=k,
        seed=seed,
    )
    logger.info(
        f"Split: {len(seen_train)} seen train, {len(seen_test)} seen test, "
        f"{len(novel)} x {k} novel supports, {len(novel_test)} novel test"
    )
    return split


# ============================================================================
# Reports
# ============================================================================

class EpisodeSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ways: int = Field(ge=2)
    shots: int = Field(ge=1)
    queries_per_class: int = Field(default=QUERIES_PER_CLASS, ge=1)
    episodes: int = Field(default=DEFAULT_EPISODES, ge=1)

    @classmethod
    def create(cls, **values) -> "EpisodeSpec":
        try:
            return cls(**values)
        except ValidationError as e:
            raise EpisodeSpecError(f"invalid episode spec: {e}") from e


class EvalReport(BaseModel):
    mode: Literal["noneps", "eps"]
    preservation: Optional[str] = None
    accuracy: float
    per_intent: Dict[str, float]
    per_intent_counts: Dict[str, int]
    seen_accuracy: Optional[float] = None
    novel_accuracy: Optional[float] = None
    confusion: Dict[str, Dict[str, int]]
    n_queries: int
    episodes: Optional[int] = None
    episode_mean: Optional[float] = None
    episode_std: Optional[float] = None
    split_fingerprint: str


class DiagnosticRow(BaseModel):
    preservation: str
    seen_accuracy: float
    novel_accuracy: float
    overall_accuracy: float
    seen_delta: float
    novel_delta: float


def _block_accuracy(gold: Sequence[str], pred: Sequence[str], block: set) -> Optional[float]:
    hits = [g == p for g, p in zip(gold, pred) if g in block]
    return float(np.mean(hits)) if hits else None


def _summarize(
    mode: str,
    gold: Sequence[str],
    pred: Sequence[str],
    split: GfsidSplit,
    preservation: Optional[str],
) -> Dict:
    intents = split.intents
    confusion = {g: {p: 0 for p in intents} for g in intents}
    for g, p in zip(gold, pred):
        confusion[g][p] += 1

    counts = {g: sum(row.values()) for g, row in confusion.items() if sum(row.values())}
    per_intent = {g: confusion[g][g] / n for g, n in counts.items()}
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    return dict(
        mode=mode,
        preservation=preservation,
        accuracy=correct / len(gold),
        per_intent=per_intent,
        per_intent_counts=counts,
        seen_accuracy=_block_accuracy(gold, pred, set(split.seen_intents)),
        novel_accuracy=_block_accuracy(gold, pred, set(split.novel_intents)),
        confusion=confusion,
        n_queries=len(gold),
        split_fingerprint=split.fingerprint(),
    )


# ============================================================================
# Protocols
# ============================================================================

def eval_nonepisodic(model: IntentModel, split: GfsidSplit, preservation: Optional[str] = None) -> EvalReport:
    """Classify every seen-test and novel-test instance once against the full store."""
    items = split.test_pool()
    if not items:
        raise ConfigError("non-episodic evaluation needs a non-empty test pool")
    absent = set(split.intents) - set(model.store.intents)
    if absent:
        raise ConfigError(f"model has no prototype for {sorted(absent)}; run phase 2 first")

    pred = model.predict(items)
    gold = [u.label for u in items]
    report = EvalReport(**_summarize("noneps", gold, pred, split, preservation))
    logger.info(
        f"Non-episodic accuracy {report.accuracy:.4f} over {report.n_queries} queries "
        f"(seen {report.seen_accuracy}, novel {report.novel_accuracy})"
    )
    return report


@dataclass
class _EpisodeResult:
    gold: List[str] = field(default_factory=list)
    pred: List[str] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return sum(g == p for g, p in zip(self.gold, self.pred)) / len(self.gold)


def _run_episode(
    index: int,
    base_seed: int,
    spec: EpisodeSpec,
    candidates: List[str],
    rows: Mapping[str, np.ndarray],
    V: Tensor,
) -> _EpisodeResult:
    rng = derive_rng(base_seed, index)
    ways = [candidates[int(i)] for i in rng.choice(len(candidates), size=spec.ways, replace=False)]

    prototypes = []
    query_rows: List[int] = []
    query_gold: List[str] = []
    for intent in ways:
        chosen = rows[intent][rng.permutation(len(rows[intent]))[: spec.shots + spec.queries_per_class]]
        supports, queries = chosen[: spec.shots], chosen[spec.shots:]
        prototypes.append(V[supports].mean(axis=0))
        query_rows.extend(int(q) for q in queries)
        query_gold.extend([intent] * len(queries))

    scores = cosine_matrix(V[query_rows], np.stack(prototypes))
    pred = [ways[int(i)] for i in np.argmax(scores, axis=1)]
    return _EpisodeResult(query_gold, pred)


def eval_episodic(
    model: IntentModel,
    split: GfsidSplit,
    spec: EpisodeSpec,
    rng: Rng,
    novel_only: bool = False,
    workers: int = 1,
    preservation: Optional[str] = None,
) -> EvalReport:
    """
    Mean accuracy over C-way K-shot episodes with episode-local prototypes.

    Seen intents draw supports and queries from the seen test pool, novel
    intents from their supports plus the novel test pool. Episode i uses the
    sub-stream derive_rng(base, i), so results do not depend on `workers`.
    """
    pools: Dict[str, List[Utterance]] = {}
    if not novel_only:
        for intent, items in _group(split.seen_test).items():
            pools[intent] = items
    novel_test = _group(split.novel_test)
    for intent in split.novel_intents:
        pools[intent] = split.novel_support[intent] + novel_test.get(intent, [])

    need = spec.shots + spec.queries_per_class
    candidates = [i for i in split.intents if len(pools.get(i, [])) >= need]
    skipped = [i for i in pools if i not in candidates]
    if skipped:
        logger.warning(f"Intents with fewer than {need} eval instances are not sampled: {skipped}")
    if len(candidates) < spec.ways:
        raise EpisodeSpecError(
            f"{spec.ways}-way {spec.shots}-shot needs {spec.ways} intents with >= {need} "
            f"instances each, only {len(candidates)} qualify"
        )

    items: List[Utterance] = []
    rows: Dict[str, np.ndarray] = {}
    for intent in candidates:
        rows[intent] = np.arange(len(items), len(items) + len(pools[intent]))
        items.extend(pools[intent])
    V, _ = model.embed(items)

    base_seed = draw_seed(rng)
    run = lambda i: _run_episode(i, base_seed, spec, candidates, rows, V)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(spec.episodes)))
    else:
        results = [run(i) for i in range(spec.episodes)]

    gold = [g for r in results for g in r.gold]
    pred = [p for r in results for p in r.pred]
    per_episode = np.array([r.accuracy for r in results])
    summary = _summarize("eps", gold, pred, split, preservation)
    report = EvalReport(
        **summary,
        episodes=spec.episodes,
        episode_mean=float(per_episode.mean()),
        episode_std=float(per_episode.std()),
    )
    logger.info(
        f"Episodic {spec.ways}-way {spec.shots}-shot: mean {report.episode_mean:.4f} "
        f"+/- {report.episode_std:.4f} over {spec.episodes} episodes ({report.n_queries} queries)"
    )
    return report


def forgetting_diagnostics(reports: Mapping[str, EvalReport]) -> List[DiagnosticRow]:
    """Seen/novel block accuracy of each preservation mode and its delta against 'none'."""
    if "none" not in reports:
        raise ConfigError("forgetting diagnostics need a report for preservation 'none'")
    fingerprints = {r.split_fingerprint for r in reports.values()}
    if len(fingerprints) != 1:
        raise SplitMismatchError("reports were computed on different splits")

    base = reports["none"]
    rows = []
    for mode, report in reports.items():
        seen = report.seen_accuracy or 0.0
        novel = report.novel_accuracy or 0.0
        rows.append(DiagnosticRow(
            preservation=mode,
            seen_accuracy=seen,
            novel_accuracy=novel,
            overall_accuracy=report.accuracy,
            seen_delta=seen - (base.seen_accuracy or 0.0),
            novel_delta=novel - (base.novel_accuracy or 0.0),
        ))
    return rows


def render_report(report: EvalReport) -> str:
    rows = [[intent, report.per_intent_counts[intent], f"{acc:.4f}"] for intent, acc in report.per_intent.items()]
    lines = [tabulate(rows, headers=["intent", "queries", "accuracy"], tablefmt="simple")]
    summary = [
        ["overall", f"{report.accuracy:.4f}"],
        ["seen block", "-" if report.seen_accuracy is None else f"{report.seen_accuracy:.4f}"],
        ["novel block", "-" if report.novel_accuracy is None else f"{report.novel_accuracy:.4f}"],
        ["queries", report.n_queries],
    ]
    if report.mode == "eps":
        summary.append(["episodes", report.episodes])
        summary.append(["episode mean +/- std", f"{report.episode_mean:.4f} +/- {report.episode_std:.4f}"])
    lines.append(tabulate(summary, tablefmt="simple"))
    return "\n\n".join(lines)


def render_diagnostics(rows: Sequence[DiagnosticRow]) -> str:
    table = [
        [r.preservation, f"{r.seen_accuracy:.4f}", f"{r.novel_accuracy:.4f}", f"{r.overall_accuracy:.4f}",
         f"{r.seen_delta:+.4f}", f"{r.novel_delta:+.4f}"]
        for r in rows
    ]
    return tabulate(table, headers=["preservation", "seen", "novel", "overall", "seen delta", "novel delta"])
