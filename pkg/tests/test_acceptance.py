"""
End-to-end runs on the synthetic corpus: 8 seen + 4 novel intents, 50
utterances each, three seeds. Deselected by default; run with `pytest -m slow`.

Novel signature tokens never occur in seen data, so the runs use vocab scope
"train" to let the novel supports into the vocabulary.
"""
import statistics

import pytest

from config import STREAM_DATA, STREAM_PHASE1, STREAM_SPLIT
from gfsid.evaluation import make_split
from gfsid.experiment import ExperimentConfig, run_experiment, vocab_texts
from gfsid.synthetic import generate_synthetic
from gfsid.training import Preservation, TrainConfig, run_phase1
from numeric import derive_rng

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def experiment():
    results, summary, _ = run_experiment(ExperimentConfig(train=TrainConfig(vocab_scope="train")))
    return results, {(s.k_shot, s.preservation): s for s in summary}


def test_phase1_learns_seen_intents(experiment):
    results, _ = experiment
    by_seed = {r.seed: r.phase1_seen_accuracy for r in results}
    assert statistics.mean(by_seed.values()) >= 0.95


def test_five_shot_joint_accuracy(experiment):
    results, _ = experiment
    for mode in Preservation:
        runs = [r.accuracy for r in results if r.k_shot == 5 and r.preservation == mode]
        assert statistics.mean(runs) >= 0.80, mode


@pytest.mark.parametrize("mode", [Preservation.DAKP, Preservation.DDKP])
def test_preservation_keeps_seen_intents_without_hurting_novel(experiment, mode):
    _, summary = experiment
    base, kept = summary[(1, Preservation.NONE)], summary[(1, mode)]
    assert kept.median_seen_accuracy >= base.median_seen_accuracy + 0.03
    assert kept.median_novel_accuracy >= base.median_novel_accuracy - 0.02


@pytest.mark.parametrize("mode", list(Preservation))
def test_more_shots_never_hurt(experiment, mode):
    _, summary = experiment
    assert summary[(5, mode)].median_accuracy >= summary[(1, mode)].median_accuracy


def test_phase1_loss_mostly_decreases():
    cfg = TrainConfig(seed=1)
    data, seen, novel = generate_synthetic(8, 4, 50, derive_rng(1, STREAM_DATA))
    split = make_split(data, seen, novel, 1, derive_rng(1, STREAM_SPLIT), 1)
    report = run_phase1(split.seen_train, cfg, derive_rng(1, STREAM_PHASE1), vocab_texts(cfg, split)).report
    totals = [r.total for r in report.epochs]
    steps = list(zip(totals, totals[1:]))
    assert sum(b <= a for a, b in steps) >= 0.8 * len(steps)
