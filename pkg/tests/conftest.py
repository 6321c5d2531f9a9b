from typing import Dict, List, Sequence

import numpy as np
import pytest

from gfsid.evaluation import make_split
from gfsid.model import IntentModel
from gfsid.prototype_space import PROJECTION, PROTOTYPES, PrototypeStore, Stage
from gfsid.synthetic import generate_synthetic
from gfsid.text_pipeline import EncoderConfig, PrecomputedEncoder, Utterance, Vocab
from gfsid.training import TrainConfig, run_phase1
from numeric import ModelParams, Param, derive_rng, make_rng


@pytest.fixture
def rng():
    return make_rng(0)


@pytest.fixture
def small_cfg() -> TrainConfig:
    return TrainConfig(
        phase1_epochs=3,
        phase2_epochs=2,
        batch_size=8,
        prototype_dim=8,
        encoder=EncoderConfig(embedding_dim=8, hidden_dim=8),
        seed=5,
    )


@pytest.fixture
def tiny_corpus():
    """(utterances, seen, novel): 3 seen + 2 novel intents, 20 utterances each."""
    return generate_synthetic(3, 2, 20, derive_rng(11, 0))


@pytest.fixture
def tiny_split(tiny_corpus):
    data, seen, novel = tiny_corpus
    return make_split(data, seen, novel, 2, derive_rng(11, 1), 11)


@pytest.fixture
def phase1_output(tiny_split, small_cfg):
    return run_phase1(tiny_split.seen_train, small_cfg, derive_rng(11, 2))


def labelled(labels: Sequence[str]) -> List[Utterance]:
    """Utterances with placeholder text, one per label, uid = position."""
    return [Utterance(f"utterance {i}", label, i) for i, label in enumerate(labels)]


def fixed_model(
    vectors: Dict[int, np.ndarray],
    intents: Sequence[str],
    prototypes: np.ndarray,
    n_seen: int,
) -> IntentModel:
    """Model over precomputed vectors with an identity projection."""
    encoder = PrecomputedEncoder(vectors)
    params = ModelParams([Param(PROJECTION, np.eye(encoder.hidden_dim))])
    stages = [Stage.SEEN] * n_seen + [Stage.NOVEL] * (len(intents) - n_seen)
    store = PrototypeStore(list(intents), stages, Param(PROTOTYPES, np.array(prototypes, dtype=np.float64)))
    return IntentModel(encoder, Vocab([]), params, store)


def one_hot_corpus(intents: Sequence[str], per_intent: int, noise: float, seed: int):
    """Utterances whose vectors are the intent's one-hot axis plus small noise."""
    rng = make_rng(seed)
    dim = len(intents)
    utterances, vectors = [], {}
    for k, intent in enumerate(intents):
        for _ in range(per_intent):
            uid = len(utterances)
            utterances.append(Utterance(f"{intent} sample {uid}", intent, uid))
            vec = np.zeros(dim)
            vec[k] = 1.0
            vectors[uid] = vec + noise * rng.normal(size=dim)
    return utterances, vectors
