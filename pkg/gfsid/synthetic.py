"""
Synthetic desk-scale intent corpus.

Each intent owns a disjoint set of signature tokens; all intents share a
pool of filler tokens. Utterances mix the two, so a handful of examples is
enough to learn an intent but a single one is often ambiguous.
"""
from typing import List, Set, Tuple

from faker import Faker

from config import (
    FILLER_TOKENS,
    MAX_UTTERANCE_LEN,
    MIN_UTTERANCE_LEN,
    SIGNATURE_PROB,
    SIGNATURE_TOKENS,
    TEMPLATE_SUFFIX,
)
from gfsid.text_pipeline import Utterance, split_tokens
from numeric import Rng, draw_seed
from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

LETTERS = "abcdefghijklmnopqrstuvwxyz"
TOKEN_PATTERN = "??????"


def _pseudo_words(fake: Faker, count: int, exclude: Set[str]) -> List[str]:
    """`count` distinct lowercase pseudo-words not in `exclude`."""
    words: List[str] = []
    taken = set(exclude)
    while len(words) < count:
        word = fake.lexify(text=TOKEN_PATTERN, letters=LETTERS)
        if word in taken:
            continue
        taken.add(word)
        words.append(word)
    return words


def intent_name(index: int) -> str:
    return f"Intent{index:02d}"


def generate_synthetic(
    n_seen: int,
    n_novel: int,
    per_intent: int,
    rng: Rng,
) -> Tuple[List[Utterance], List[str], List[str]]:
    """
    Generate (utterances, seen intent names, novel intent names).

    Utterances are shuffled and carry their list position as uid.
    """
    if n_seen < 2:
        raise ConfigError(f"need at least 2 seen intents, got {n_seen}")
    if n_novel < 1:
        raise ConfigError(f"need at least 1 novel intent, got {n_novel}")
    if per_intent < 10:
        raise ConfigError(f"need at least 10 utterances per intent, got {per_intent}")

    n_intents = n_seen + n_novel
    fake = Faker()
    fake.seed_instance(draw_seed(rng))
    reserved = {t.lower() for t in split_tokens(TEMPLATE_SUFFIX)}
    words = _pseudo_words(fake, n_intents * SIGNATURE_TOKENS + FILLER_TOKENS, reserved)
    fillers = words[:FILLER_TOKENS]
    signatures = [
        words[FILLER_TOKENS + i * SIGNATURE_TOKENS: FILLER_TOKENS + (i + 1) * SIGNATURE_TOKENS]
        for i in range(n_intents)
    ]

    names = [intent_name(i) for i in range(n_intents)]
    drafts: List[Tuple[str, str]] = []
    for name, signature in zip(names, signatures):
        for _ in range(per_intent):
            length = int(rng.integers(MIN_UTTERANCE_LEN, MAX_UTTERANCE_LEN + 1))
            tokens = [
                signature[int(rng.integers(SIGNATURE_TOKENS))]
                if rng.random() < SIGNATURE_PROB
                else fillers[int(rng.integers(FILLER_TOKENS))]
                for _ in range(length)
            ]
            drafts.append((" ".join(tokens), name))

    order = rng.permutation(len(drafts))
    utterances = [Utterance(drafts[j][0], drafts[j][1], uid) for uid, j in enumerate(order)]
    logger.info(
        f"Generated {len(utterances)} synthetic utterances: {n_seen} seen + {n_novel} novel intents, "
        f"{per_intent} each"
    )
    return utterances, names[:n_seen], names[n_seen:]
