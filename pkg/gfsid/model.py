"""
Intent model: encoder + vocab + parameters + prototype store
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

from gfsid.prototype_space import (
    PROJECTION,
    PrototypeStore,
    classify_batch,
    project_batch,
    project_batch_backward,
)
from gfsid.text_pipeline import Encoder, EncoderInput, Utterance, Vocab, apply_template, tokenize
from numeric import ModelParams, Param, Tensor, tensor_checksum


@dataclass
class _EmbedCache:
    encoder_cache: Any
    hidden: Tensor


@dataclass
class IntentModel:
    """
    Everything needed to map utterances into prototype space and classify them.

    `params` holds the encoder weights and the projection W; the prototype
    matrix lives in `store.vectors`.
    """

    encoder: Encoder
    vocab: Vocab
    params: ModelParams
    store: PrototypeStore

    def inputs(self, utterances: Sequence[Utterance]) -> List[EncoderInput]:
        return [
            EncoderInput(tokenize(apply_template(u.text), self.vocab), u.uid)
            for u in utterances
        ]

    def embed(self, utterances: Sequence[Utterance]) -> Tuple[Tensor, _EmbedCache]:
        """Projected vectors v for every utterance plus the cache for `backward`."""
        hidden, encoder_cache = self.encoder.forward(self.inputs(utterances), self.params)
        V = project_batch(hidden, self.params[PROJECTION].value)
        return V, _EmbedCache(encoder_cache, hidden)

    def backward(self, cache: _EmbedCache, grad_v: Tensor) -> None:
        """Accumulate dL/dparams given dL/dV."""
        d_hidden, d_w = project_batch_backward(cache.hidden, self.params[PROJECTION].value, grad_v)
        self.params[PROJECTION].grad += d_w
        self.encoder.backward(cache.encoder_cache, d_hidden, self.params)

    def trainable(self) -> List[Param]:
        return list(self.params) + [self.store.vectors]

    def zero_grad(self) -> None:
        for param in self.trainable():
            param.zero_grad()

    def predict(self, utterances: Sequence[Utterance]) -> List[str]:
        V, _ = self.embed(utterances)
        indices, _ = classify_batch(V, self.store.vectors.value)
        return [self.store.intents[int(i)] for i in indices]

    def copy(self) -> "IntentModel":
        return IntentModel(self.encoder, self.vocab, self.params.copy(), self.store.copy())

    def checksum(self) -> str:
        tensors: Dict[str, Tensor] = dict(self.params.as_dict())
        tensors[self.store.vectors.name] = self.store.vectors.value
        return tensor_checksum(tensors)

