"""
Gradient oracle suite: every closed-form backward pass against central
finite differences on small randomized fixtures
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config import GRADCHECK_FIXTURES, GRADCHECK_MAX_DIMS, GRADCHECK_RTOL, GRADCHECK_STEP
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
from gfsid.preservation import take_snapshot
from gfsid.prototype_space import PrototypeStore, Stage, project_batch, project_batch_backward
from gfsid.text_pipeline import EncoderConfig, EncoderInput, MeanPoolEncoder, init_encoder_params
from numeric import GradCheckResult, ModelParams, Param, Rng, check_gradient, derive_rng, softmax
from utils.error_handler import ConfigError, safe_execute
from utils.logger import get_logger

logger = get_logger(__name__)

# (objective, analytic grads by param name, params to perturb)
Fixture = Tuple[Callable[[], float], Callable[[], Dict[str, np.ndarray]], List[Param]]


@dataclass
class SuiteResult:
    name: str
    fixtures: int
    max_rel_error: float
    passed: bool
    error: str = ""


def _dims(rng: Rng, max_dims: int) -> Tuple[int, int, int]:
    """(batch size, prototype count, prototype dim), each in [2, max_dims]."""
    return tuple(int(x) for x in rng.integers(2, max_dims + 1, size=3))


def _store(rng: Rng, n: int, c: int, n_seen: Optional[int] = None) -> PrototypeStore:
    n_seen = n if n_seen is None else n_seen
    stages = [Stage.SEEN] * n_seen + [Stage.NOVEL] * (n - n_seen)
    return PrototypeStore([f"i{k}" for k in range(n)], stages, Param(PROTOTYPES, rng.normal(size=(n, c))))


def _batch_fixture(loss_fn, rng: Rng, max_dims: int, paired: bool = False) -> Fixture:
    T, C, c = _dims(rng, max_dims)
    store = _store(rng, C, c)
    vectors = Param(VECTORS, rng.normal(size=(T, c)))
    if paired:
        labels = rng.integers(0, max(1, T // 2), size=T)
        labels[1] = labels[0]
    else:
        labels = rng.integers(0, C, size=T)

    def f() -> float:
        return loss_fn(Batch(vectors.value, labels), store).value

    def analytic() -> Dict[str, np.ndarray]:
        grads = loss_fn(Batch(vectors.value, labels), store).grads
        return {VECTORS: grads[VECTORS], PROTOTYPES: grads.get(PROTOTYPES, np.zeros_like(store.vectors.value))}

    return f, analytic, [vectors, store.vectors]


def fixture_cls(rng: Rng, max_dims: int) -> Fixture:
    return _batch_fixture(loss_cls, rng, max_dims)


def fixture_is(rng: Rng, max_dims: int) -> Fixture:
    return _batch_fixture(loss_is, rng, max_dims)


def fixture_ii(rng: Rng, max_dims: int) -> Fixture:
    return _batch_fixture(lambda batch, store: loss_ii(batch), rng, max_dims, paired=True)


def fixture_kd(rng: Rng, max_dims: int) -> Fixture:
    T, C, c = _dims(rng, max_dims)
    n_seen = int(rng.integers(1, C + 1))
    store = _store(rng, C, c, n_seen)
    vectors = Param(VECTORS, rng.normal(size=(T, c)))
    soft = softmax(rng.normal(size=(T, n_seen)))
    labels = rng.integers(0, n_seen, size=T)

    def f() -> float:
        return loss_kd_batch(Batch(vectors.value, labels), store, soft).value

    def analytic() -> Dict[str, np.ndarray]:
        grads = loss_kd_batch(Batch(vectors.value, labels), store, soft).grads
        return {VECTORS: grads[VECTORS], PROTOTYPES: grads[PROTOTYPES]}

    return f, analytic, [vectors, store.vectors]


def fixture_l2(rng: Rng, max_dims: int) -> Fixture:
    T, C, c = _dims(rng, max_dims)
    n_seen = int(rng.integers(1, C + 1))
    params = ModelParams([Param("a", rng.normal(size=(T, c))), Param("b", rng.normal(size=c))])
    store = _store(rng, C, c, n_seen)
    snapshot = take_snapshot(params, store)
    for p in list(params) + [store.vectors]:
        p.value += rng.normal(scale=0.1, size=p.value.shape)

    def f() -> float:
        return loss_l2_penalty(params, store, snapshot).value

    def analytic() -> Dict[str, np.ndarray]:
        return loss_l2_penalty(params, store, snapshot).grads

    return f, analytic, list(params) + [store.vectors]


def fixture_encode(rng: Rng, max_dims: int) -> Fixture:
    vocab_size, e, h = _dims(rng, max_dims)
    cfg = EncoderConfig(embedding_dim=e, hidden_dim=h)
    encoder = MeanPoolEncoder(cfg)
    params = init_encoder_params(vocab_size, cfg, rng)
    for p in params:
        p.value += rng.normal(scale=0.1, size=p.value.shape)
    inputs = [
        EncoderInput(tuple(int(t) for t in rng.integers(0, vocab_size, size=int(rng.integers(1, max_dims + 1)))))
        for _ in range(int(rng.integers(1, 4)))
    ]
    weights = rng.normal(size=(len(inputs), h))

    def f() -> float:
        out, _ = encoder.forward(inputs, params)
        return float(np.sum(weights * out))

    def analytic() -> Dict[str, np.ndarray]:
        params.zero_grad()
        _, cache = encoder.forward(inputs, params)
        encoder.backward(cache, weights, params)
        return {p.name: p.grad.copy() for p in params}

    return f, analytic, list(params)


def fixture_project(rng: Rng, max_dims: int) -> Fixture:
    T, h, c = _dims(rng, max_dims)
    hidden = Param("hidden", rng.normal(size=(T, h)))
    W = Param("projection", rng.normal(size=(c, h)))
    weights = rng.normal(size=(T, c))

    def f() -> float:
        return float(np.sum(weights * project_batch(hidden.value, W.value)))

    def analytic() -> Dict[str, np.ndarray]:
        d_hidden, d_w = project_batch_backward(hidden.value, W.value, weights)
        return {"hidden": d_hidden, "projection": d_w}

    return f, analytic, [hidden, W]


GRADIENT_CHECKS: Dict[str, Callable[[Rng, int], Fixture]] = {
    "cls": fixture_cls,
    "ii": fixture_ii,
    "is": fixture_is,
    "l2": fixture_l2,
    "kd": fixture_kd,
    "encode": fixture_encode,
    "project": fixture_project,
}


def check_one(
    name: str,
    seed: int,
    fixtures: int = GRADCHECK_FIXTURES,
    max_dims: int = GRADCHECK_MAX_DIMS,
    step: float = GRADCHECK_STEP,
    rtol: float = GRADCHECK_RTOL,
) -> SuiteResult:
    """Run `fixtures` randomized instances of one check; fixture i uses sub-stream (seed, i)."""
    if name not in GRADIENT_CHECKS:
        raise ConfigError(f"unknown gradient check '{name}', expected one of {sorted(GRADIENT_CHECKS)}")
    if max_dims < 2:
        raise ConfigError(f"fixture dims must be >= 2, got {max_dims}")

    worst = 0.0
    for i in range(fixtures):
        f, analytic, params = GRADIENT_CHECKS[name](derive_rng(seed, i), max_dims)
        result: GradCheckResult = check_gradient(name, f, analytic(), params, step, rtol)
        worst = max(worst, result.max_rel_error)
    return SuiteResult(name, fixtures, worst, worst < rtol)


def run_gradient_suite(
    seed: int,
    names: Optional[List[str]] = None,
    fixtures: int = GRADCHECK_FIXTURES,
    max_dims: int = GRADCHECK_MAX_DIMS,
    step: float = GRADCHECK_STEP,
    rtol: float = GRADCHECK_RTOL,
) -> List[SuiteResult]:
    """Every requested check; one failing or crashing check never hides the rest."""
    results = []
    for name in names or list(GRADIENT_CHECKS):
        ok, result, err = safe_execute(check_one, name, seed, fixtures, max_dims, step, rtol)
        if not ok:
            logger.error(f"Gradient check '{name}' raised: {err}")
            result = SuiteResult(name, 0, float("inf"), False, err)
        else:
            logger.info(f"Gradient check '{name}': max relative error {result.max_rel_error:.3e}")
        results.append(result)
    return results
