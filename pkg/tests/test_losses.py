import numpy as np
import pytest

from gfsid.losses import (
    PROTOTYPES,
    VECTORS,
    Batch,
    entropy,
    loss_cls,
    loss_ii,
    loss_is,
    loss_kd,
    loss_kd_batch,
    loss_l2_penalty,
)
from gfsid.preservation import take_snapshot
from gfsid.prototype_space import PrototypeStore, Stage, init_novel_prototypes
from numeric import ModelParams, Param, softmax
from utils.error_handler import ConfigError, DimensionMismatchError


def _store(rows, n_seen=None):
    rows = np.asarray(rows, dtype=np.float64)
    n_seen = len(rows) if n_seen is None else n_seen
    stages = [Stage.SEEN] * n_seen + [Stage.NOVEL] * (len(rows) - n_seen)
    return PrototypeStore([f"I{i}" for i in range(len(rows))], stages, Param(PROTOTYPES, rows))


def test_loss_cls_closed_form_on_orthogonal_prototypes():
    store = _store(np.eye(2))
    value = loss_cls(Batch(np.array([[1.0, 0.0]]), [0]), store, tau=0.1).value
    assert value == pytest.approx(np.log1p(np.exp(-10.0)), rel=1e-9)


def test_loss_cls_uniform_when_equidistant():
    store = _store([[1.0, 0.0], [-1.0, 0.0]])
    value = loss_cls(Batch(np.array([[0.0, 1.0]]), [1]), store).value
    assert value == pytest.approx(np.log(2.0), rel=1e-12)


def test_loss_cls_rejects_bad_labels_and_tau():
    store = _store(np.eye(2))
    with pytest.raises(ConfigError):
        loss_cls(Batch(np.ones((1, 2)), [2]), store)
    with pytest.raises(ConfigError):
        loss_cls(Batch(np.ones((1, 2)), [0]), store, tau=0.0)


def test_loss_is_is_unit_temperature_cross_entropy_over_c(rng):
    store = _store(rng.normal(size=(4, 3)))
    batch = Batch(rng.normal(size=(5, 3)), rng.integers(0, 4, size=5))
    assert loss_is(batch, store).value == pytest.approx(loss_cls(batch, store, tau=1.0).value / 4, rel=1e-12)


def test_loss_ii_zero_without_positive_pairs(rng):
    batch = Batch(rng.normal(size=(3, 4)), [0, 1, 2])
    loss = loss_ii(batch)
    assert loss.value == 0.0
    assert not loss.grads[VECTORS].any()


def test_loss_ii_needs_two_instances():
    with pytest.raises(ConfigError):
        loss_ii(Batch(np.ones((1, 2)), [0]))


def test_loss_ii_prefers_clustered_positives():
    tight = Batch(np.array([[1.0, 0.0], [0.99, 0.05], [0.0, 1.0], [0.05, 0.99]]), [0, 0, 1, 1])
    mixed = Batch(np.array([[1.0, 0.0], [0.0, 1.0], [0.99, 0.05], [0.05, 0.99]]), [0, 0, 1, 1])
    assert loss_ii(tight).value < loss_ii(mixed).value


def test_batch_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        Batch(np.ones((3, 2)), [0, 1])


def test_kd_gibbs_inequality(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(n))
        q_logits = rng.normal(size=n) * 3
        assert loss_kd(np.log(p), p).value <= loss_kd(q_logits, p).value + 1e-12


def test_kd_at_optimum_equals_entropy_over_n(rng):
    p = rng.dirichlet(np.ones(5))
    assert loss_kd(np.log(p), p).value == pytest.approx(entropy(p) / 5, rel=1e-10)


def test_kd_batch_touches_only_seen_prototypes(rng):
    store = _store(rng.normal(size=(5, 3)), n_seen=3)
    batch = Batch(rng.normal(size=(4, 3)), [0, 1, 2, 0])
    soft = softmax(rng.normal(size=(4, 3)))
    loss = loss_kd_batch(batch, store, soft)
    assert not loss.grads[PROTOTYPES][3:].any()
    assert loss.grads[PROTOTYPES][:3].any()
    with pytest.raises(DimensionMismatchError):
        loss_kd_batch(batch, store, softmax(rng.normal(size=(4, 5))))


def test_l2_penalty_zero_iff_equal(rng):
    params = ModelParams([Param("w", rng.normal(size=(3, 2)))])
    store = _store(rng.normal(size=(2, 2)))
    snapshot = take_snapshot(params, store)
    assert loss_l2_penalty(params, store, snapshot).value == 0.0

    params["w"].value[1, 1] += 0.5
    loss = loss_l2_penalty(params, store, snapshot)
    assert loss.value == pytest.approx(0.25)
    np.testing.assert_allclose(loss.grads["w"][1, 1], 1.0)


def test_l2_penalty_ignores_novel_prototypes(rng):
    params = ModelParams([Param("w", rng.normal(size=2))])
    store = _store(rng.normal(size=(2, 3)))
    snapshot = take_snapshot(params, store)
    joint = init_novel_prototypes(store, {"N": [np.array([1.0, 2.0, 3.0])]})
    joint.vectors.value[2] += 10.0
    loss = loss_l2_penalty(params, joint, snapshot)
    assert loss.value == 0.0
    assert not loss.grads[PROTOTYPES][2].any()


def test_entropy_of_uniform_is_log_n():
    assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))
    assert entropy(np.array([1.0, 0.0])) == 0.0


def test_loss_ii_hand_values():
    pair = Batch(np.array([[1.0, 2.0], [-3.0, 0.5]]), [0, 0])
    assert loss_ii(pair).value == pytest.approx(0.0, abs=1e-12)
    orthogonal = Batch(np.eye(3), [0, 0, 1])
    assert loss_ii(orthogonal).value == pytest.approx(np.log(2.0), rel=1e-12)


def test_loss_is_hand_values():
    single = _store([[0.3, 0.4]])
    assert loss_is(Batch(np.array([[1.0, 2.0]]), [0]), single).value == pytest.approx(0.0, abs=1e-12)
    pair = _store(np.eye(2))
    expected = -np.log(np.e / (np.e + 1.0)) / 2
    assert loss_is(Batch(np.array([[1.0, 0.0]]), [0]), pair).value == pytest.approx(expected, rel=1e-12)
    assert loss_is(Batch(np.array([[5.0, 0.0]]), [0]), _store(3 * np.eye(2))).value == pytest.approx(expected, rel=1e-12)


def test_loss_kd_hand_value():
    p = np.array([0.5, 0.5])
    assert loss_kd(np.zeros(2), p).value == pytest.approx(0.34657, abs=1e-5)


def test_loss_is_at_gold_prototype_hand_value():
    per_instance = np.log1p(np.exp(-1.0))
    assert per_instance == pytest.approx(0.31326, abs=1e-5)
    value = loss_is(Batch(np.array([[0.0, 2.0]]), [1]), _store(np.eye(2))).value
    assert value == pytest.approx(per_instance / 2, rel=1e-12)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
def test_contrastive_losses_are_scale_invariant(rng, alpha):
    vectors = rng.normal(size=(6, 4))
    labels = [0, 0, 1, 1, 2, 2]
    prototypes = rng.normal(size=(3, 4))
    base = Batch(vectors, labels)
    scaled = Batch(alpha * vectors, labels)
    assert loss_ii(scaled).value == pytest.approx(loss_ii(base).value, rel=1e-10)
    assert loss_is(scaled, _store(alpha * prototypes)).value == pytest.approx(
        loss_is(base, _store(prototypes)).value, rel=1e-10
    )
