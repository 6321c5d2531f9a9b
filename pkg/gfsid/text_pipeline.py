"""
Text Pipeline
Template wrapping, tokenization and swappable encoders producing h_[MASK]
"""
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import EMBEDDING_DIM, HIDDEN_DIM, MASK_TOKEN, PAD_TOKEN, TEMPLATE_SUFFIX, UNK_TOKEN
from numeric import ModelParams, Param, Rng, Tensor, matmul_rows, matmul_rows_backward
from utils.error_handler import ConfigError, DataFormatError, DimensionMismatchError
from utils.logger import get_logger

logger = get_logger(__name__)

# Split off trailing punctuation as separate tokens
TERMINAL_PUNCTUATION = ".,!?;:"

EMBEDDING = "encoder.embedding"
W1, B1 = "encoder.w1", "encoder.b1"
W2, B2 = "encoder.w2", "encoder.b2"
ENCODER_PARAM_NAMES = (EMBEDDING, W1, B1, W2, B2)


@dataclass(frozen=True)
class Utterance:
    """Raw text with its gold intent; `uid` is the zero-based dataset index."""

    text: str
    label: str
    uid: int = -1

    def __post_init__(self):
        if not self.text.strip():
            raise DataFormatError("utterance text is empty")
        if not self.label:
            raise DataFormatError("utterance label is empty")


class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embedding_dim: int = Field(default=EMBEDDING_DIM, ge=1)
    hidden_dim: int = Field(default=HIDDEN_DIM, ge=1)
    activation: Literal["tanh"] = "tanh"


# ============================================================================
# Template + tokenizer
# ============================================================================

def apply_template(text: str) -> str:
    """T(x): `<text>. The intent is to [MASK]`."""
    if not text or not text.strip():
        raise DataFormatError("cannot template an empty utterance")
    return f"{text}. {TEMPLATE_SUFFIX}"


def split_tokens(s: str) -> List[str]:
    """Lowercased whitespace tokens with terminal punctuation split off; [MASK] kept verbatim."""
    tokens: List[str] = []
    for raw in s.split():
        if raw == MASK_TOKEN:
            tokens.append(MASK_TOKEN)
            continue
        word = raw.lower()
        trailing: List[str] = []
        while word and word[-1] in TERMINAL_PUNCTUATION:
            trailing.insert(0, word[-1])
            word = word[:-1]
        if word:
            tokens.append(word)
        tokens.extend(trailing)
    return tokens


class Vocab:
    """
    Token <-> id bijection with reserved [PAD]=0, [UNK]=1, [MASK]=2.

    Ids are contiguous from 0; non-reserved tokens follow in sorted order.
    """

    RESERVED = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN)

    def __init__(self, tokens: Iterable[str]):
        ordered = list(self.RESERVED)
        seen = set(ordered)
        for token in tokens:
            if token in seen:
                continue
            seen.add(token)
            ordered.append(token)
        self._tokens: List[str] = ordered
        self._ids: Dict[str, int] = {token: i for i, token in enumerate(ordered)}

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK_TOKEN]

    @property
    def mask_id(self) -> int:
        return self._ids[MASK_TOKEN]

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens


def build_vocab(texts: Iterable[str]) -> Vocab:
    """Vocab over the templated form of `texts`."""
    tokens = set()
    for text in texts:
        tokens.update(split_tokens(apply_template(text)))
    tokens.difference_update(Vocab.RESERVED)
    vocab = Vocab(sorted(tokens))
    logger.debug(f"Built vocabulary of {len(vocab)} tokens")
    return vocab


def tokenize(s: str, vocab: Vocab) -> Tuple[int, ...]:
    """Token ids of a templated string; unknown tokens map to [UNK]."""
    return tuple(vocab.id_of(token) for token in split_tokens(s))


# ============================================================================
# Encoders
# ============================================================================

@dataclass(frozen=True)
class EncoderInput:
    ids: Tuple[int, ...]
    uid: int = -1


class Encoder(Protocol):
    """Pure function (templated token sequence, params) -> R^h."""

    hidden_dim: int
    kind: str

    def forward(self, inputs: Sequence[EncoderInput], params: ModelParams) -> Tuple[Tensor, Any]:
        ...

    def backward(self, cache: Any, grad_out: Tensor, params: ModelParams) -> None:
        ...


def init_encoder_params(vocab_size: int, cfg: EncoderConfig, rng: Rng) -> ModelParams:
    """
    Embedding uniform in [-0.1, 0.1]; affine weights uniform in
    [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases zero.
    """
    e, h = cfg.embedding_dim, cfg.hidden_dim
    bound1 = 1.0 / np.sqrt(e)
    bound2 = 1.0 / np.sqrt(h)
    return ModelParams([
        Param(EMBEDDING, rng.uniform(-0.1, 0.1, size=(vocab_size, e))),
        Param(W1, rng.uniform(-bound1, bound1, size=(h, e))),
        Param(B1, np.zeros(h)),
        Param(W2, rng.uniform(-bound2, bound2, size=(h, h))),
        Param(B2, np.zeros(h)),
    ])


@dataclass
class _MeanPoolCache:
    inputs: Sequence[EncoderInput]
    pooled: Tensor
    hidden: Tensor


class MeanPoolEncoder:
    """
    Desk-scale encoder: embedding lookup -> mean pool -> affine -> tanh -> affine.

    Mean pooling makes the output invariant to token order.
    """

    kind = "meanpool"

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        self.hidden_dim = cfg.hidden_dim

    def forward(self, inputs: Sequence[EncoderInput], params: ModelParams) -> Tuple[Tensor, _MeanPoolCache]:
        table = params[EMBEDDING].value
        pooled = np.empty((len(inputs), table.shape[1]))
        for row, item in enumerate(inputs):
            if not item.ids:
                raise DataFormatError("cannot encode an empty token sequence")
            ids = np.asarray(item.ids, dtype=np.int64)
            if ids.min() < 0 or ids.max() >= table.shape[0]:
                raise DimensionMismatchError("embedding lookup", (int(ids.max()),), table.shape)
            pooled[row] = table[ids].mean(axis=0)

        hidden = np.tanh(matmul_rows(pooled, params[W1].value) + params[B1].value)
        out = matmul_rows(hidden, params[W2].value) + params[B2].value
        return out, _MeanPoolCache(inputs, pooled, hidden)

    def backward(self, cache: _MeanPoolCache, grad_out: Tensor, params: ModelParams) -> None:
        d_hidden, d_w2 = matmul_rows_backward(cache.hidden, params[W2].value, grad_out)
        params[W2].grad += d_w2
        params[B2].grad += grad_out.sum(axis=0)

        d_pre = d_hidden * (1.0 - cache.hidden ** 2)
        d_pooled, d_w1 = matmul_rows_backward(cache.pooled, params[W1].value, d_pre)
        params[W1].grad += d_w1
        params[B1].grad += d_pre.sum(axis=0)

        table_grad = params[EMBEDDING].grad
        for row, item in enumerate(cache.inputs):
            ids = np.asarray(item.ids, dtype=np.int64)
            np.add.at(table_grad, ids, d_pooled[row] / len(ids))


class PrecomputedEncoder:
    """
    Fixed vectors produced offline (e.g. by a pretrained LM), looked up by uid.

    Has no trainable parameters; only the projection and prototypes adapt.
    """

    kind = "precomputed"

    def __init__(self, vectors: Mapping[int, Tensor]):
        if not vectors:
            raise ConfigError("precomputed encoder needs at least one vector")
        dims = {vec.shape for vec in vectors.values()}
        if len(dims) != 1:
            raise DataFormatError(f"precomputed vectors have mixed dimensions: {sorted(dims)}")
        self._vectors = dict(vectors)
        self.hidden_dim = next(iter(dims))[0]

    def forward(self, inputs: Sequence[EncoderInput], params: ModelParams) -> Tuple[Tensor, None]:
        rows = []
        for item in inputs:
            if item.uid not in self._vectors:
                raise DataFormatError(f"no precomputed vector for utterance {item.uid}")
            rows.append(self._vectors[item.uid])
        return np.array(rows, dtype=np.float64), None

    def backward(self, cache: None, grad_out: Tensor, params: ModelParams) -> None:
        return None


def encode(ids: Sequence[int], params: ModelParams, cfg: EncoderConfig) -> Tensor:
    """h_[MASK] for a single token sequence through the desk-scale encoder."""
    out, _ = MeanPoolEncoder(cfg).forward([EncoderInput(tuple(ids))], params)
    return out[0]


def make_encoder(kind: str, cfg: EncoderConfig, vectors: Optional[Mapping[int, Tensor]] = None) -> Encoder:
    if kind == MeanPoolEncoder.kind:
        return MeanPoolEncoder(cfg)
    if kind == PrecomputedEncoder.kind:
        if vectors is None:
            raise ConfigError("precomputed encoder requires an embeddings file")
        return PrecomputedEncoder(vectors)
    raise ConfigError(f"unknown encoder kind: {kind}")
