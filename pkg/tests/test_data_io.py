import struct
from collections import Counter

import numpy as np
import pytest
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.neighbors import NearestCentroid
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import Normalizer

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from gfsid.data_io import (
    Checkpoint,
    DatasetManifest,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    load_dataset,
    load_embeddings,
    load_manifest,
    load_records,
    save_checkpoint,
    save_dataset,
    save_manifest,
    save_records,
)
from gfsid.preservation import build_memory, compute_soft_labels, restore_snapshot_model, take_snapshot
from gfsid.synthetic import generate_synthetic
from gfsid.training import EpochRecord
from numeric import derive_rng
from utils.error_handler import CheckpointError, ConfigError, DataFormatError


def _checkpoint(phase1_output, tiny_split, full=True):
    model = phase1_output.model
    if not full:
        return Checkpoint(model.params, model.store, model.vocab)
    snapshot = take_snapshot(model.params, model.store)
    memory = build_memory(tiny_split.seen_train, 0.1, derive_rng(2, 3), model.store.seen_intents)
    memory = compute_soft_labels(memory, restore_snapshot_model(snapshot, model))
    return Checkpoint(model.params, model.store, model.vocab, snapshot, memory, {"phase": 1, "seed": 11})


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def test_dataset_round_trip_skips_blank_lines(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"text": "play jazz", "label": "PlayMusic"}\n\n{"text": "wake me", "label": "Alarm"}\n')
    data = load_dataset(path)
    assert [(u.text, u.label, u.uid) for u in data] == [("play jazz", "PlayMusic", 0), ("wake me", "Alarm", 1)]

    again = load_dataset(save_dataset(data, tmp_path / "copy.jsonl"))
    assert again == data


@pytest.mark.parametrize(
    "content, line",
    [
        ('{"text": "a", "label": "A"}\n{"text": "b"\n', 2),
        ('{"text": "a", "label": 3}\n', 1),
        ('["a", "A"]\n', 1),
        ('{"text": "a", "label": "A"}\n\n{"text": "", "label": "B"}\n', 3),
    ],
)
def test_dataset_errors_carry_line_numbers(tmp_path, content, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(content)
    with pytest.raises(DataFormatError) as exc:
        load_dataset(path)
    assert exc.value.line == line
    assert f"bad.jsonl:{line}" in str(exc.value)


def test_empty_or_missing_dataset(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("\n\n")
    with pytest.raises(DataFormatError):
        load_dataset(empty)
    with pytest.raises(DataFormatError):
        load_dataset(tmp_path / "missing.jsonl")


def test_manifest_and_records_round_trip(tmp_path):
    dataset = tmp_path / "corpus.jsonl"
    manifest = DatasetManifest(seen=["A", "B"], novel=["C"], seed=4, per_intent=50)
    path = save_manifest(manifest, dataset)
    assert path.name == "corpus.manifest.json"
    assert load_manifest(dataset) == manifest

    records = [EpochRecord(phase=1, epoch=1, l_cls=0.5, total=0.5), EpochRecord(phase=1, epoch=2)]
    assert load_records(save_records(records, tmp_path / "r.jsonl"), EpochRecord) == records


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def test_embeddings_parse(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2\n1 0.5 -1\n0 1e-3 2\n")
    vectors = load_embeddings(path, expected_count=2)
    np.testing.assert_array_equal(vectors[0], [1e-3, 2.0])
    np.testing.assert_array_equal(vectors[1], [0.5, -1.0])


@pytest.mark.parametrize(
    "content, expected_count",
    [
        ("2 3\n0 1 2\n", None),
        ("2\n0 1\n", None),
        ("2\n0 1 2\n0 3 4\n", None),
        ("2\n-1 1 2\n", None),
        ("2\n0 nan 2\n", None),
        ("2\n0 1 2\n", 2),
        ("", None),
    ],
)
def test_embeddings_errors(tmp_path, content, expected_count):
    path = tmp_path / "emb.txt"
    path.write_text(content)
    with pytest.raises(DataFormatError):
        load_embeddings(path, expected_count)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_bytes_round_trip(phase1_output, tiny_split):
    data = checkpoint_bytes(_checkpoint(phase1_output, tiny_split))
    restored = checkpoint_from_bytes(data)
    assert checkpoint_bytes(restored) == data

    assert restored.store.intents == phase1_output.store.intents
    assert restored.vocab == phase1_output.model.vocab
    np.testing.assert_array_equal(restored.store.vectors.value, phase1_output.store.vectors.value)
    assert restored.config == {"phase": 1, "seed": 11}
    assert restored.memory.label_indices().tolist() == _checkpoint(phase1_output, tiny_split).memory.label_indices().tolist()
    assert not restored.memory.soft_labels.flags.writeable


def test_checkpoint_file_round_trip(tmp_path, phase1_output, tiny_split):
    ckpt = _checkpoint(phase1_output, tiny_split, full=False)
    path = save_checkpoint(ckpt, tmp_path / "nested" / "p1.ckpt")
    data = path.read_bytes()
    assert data.startswith(CHECKPOINT_MAGIC)
    assert data.endswith(b"\x00\x00\x00")
    loaded = load_checkpoint(path)
    assert loaded.snapshot is None and loaded.memory is None and loaded.config is None
    for p in phase1_output.params:
        np.testing.assert_array_equal(loaded.params[p.name].value, p.value)


def test_checkpoint_rejects_corruption(tmp_path, phase1_output, tiny_split):
    data = checkpoint_bytes(_checkpoint(phase1_output, tiny_split))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"X" + data[1:])

    header = len(CHECKPOINT_MAGIC)
    bumped = data[:header] + struct.pack("<I", 99) + data[header + 4:]
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_bytes(bumped)

    for cut in (len(data) - 1, len(data) // 2, header + 2):
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(data[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_from_bytes(data + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


@pytest.mark.parametrize("dims", [(2 ** 62, 4), (2 ** 63, 2), (2 ** 40, 2 ** 40)])
def test_checkpoint_rejects_oversized_tensor_shape(dims):
    data = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, 1)
    data += struct.pack("<I", 1) + b"x" + struct.pack("<I", len(dims))
    data += b"".join(struct.pack("<Q", d) for d in dims)
    with pytest.raises(CheckpointError, match="exceeds"):
        checkpoint_from_bytes(data)


def test_checkpoint_rejects_bad_presence_flag(phase1_output, tiny_split):
    data = checkpoint_bytes(_checkpoint(phase1_output, tiny_split, full=False))
    with pytest.raises(CheckpointError, match="flag"):
        checkpoint_from_bytes(data[:-1] + b"\x02")


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

def test_synthetic_sizes_and_determinism():
    first, seen, novel = generate_synthetic(8, 4, 50, derive_rng(7, 0))
    second, _, _ = generate_synthetic(8, 4, 50, derive_rng(7, 0))
    assert len(first) == 600
    assert len(seen) == 8 and len(novel) == 4
    assert Counter(u.label for u in first) == {name: 50 for name in seen + novel}
    assert [u.uid for u in first] == list(range(600))
    assert first == second


def test_synthetic_intents_own_few_exclusive_tokens():
    data, seen, novel = generate_synthetic(4, 2, 30, derive_rng(1, 0))
    owners = {}
    for u in data:
        for token in u.text.split():
            owners.setdefault(token, set()).add(u.label)
    exclusive = Counter(next(iter(labels)) for labels in owners.values() if len(labels) == 1)
    assert all(count <= 5 for count in exclusive.values())
    assert set(exclusive) == set(seen + novel)


def test_synthetic_corpus_is_learnable_by_nearest_centroid():
    data, _, _ = generate_synthetic(8, 4, 50, derive_rng(3, 0))
    train, test = data[:450], data[450:]
    oracle = make_pipeline(CountVectorizer(token_pattern=r"\S+"), Normalizer(), NearestCentroid())
    oracle.fit([u.text for u in train], [u.label for u in train])
    accuracy = np.mean(oracle.predict([u.text for u in test]) == np.array([u.label for u in test]))
    assert accuracy > 0.9


def test_synthetic_preconditions():
    with pytest.raises(ConfigError):
        generate_synthetic(1, 1, 50, derive_rng(0, 0))
    with pytest.raises(ConfigError):
        generate_synthetic(2, 0, 50, derive_rng(0, 0))
    with pytest.raises(ConfigError):
        generate_synthetic(2, 1, 9, derive_rng(0, 0))
