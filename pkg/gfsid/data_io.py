"""
Data I/O
Line-delimited datasets and records, split manifests, precomputed embeddings
and the binary checkpoint format
"""
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Dict, List, Optional, Sequence, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from gfsid.preservation import ParameterSnapshot, ReplayMemory
from gfsid.prototype_space import PROTOTYPES, PrototypeStore, Stage
from gfsid.text_pipeline import Utterance, Vocab
from numeric import ModelParams, Param, Tensor
from utils.error_handler import CheckpointError, DataFormatError
from utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
R = TypeVar("R", bound=BaseModel)


# ============================================================================
# Datasets
# ============================================================================

def load_dataset(path: PathLike) -> List[Utterance]:
    """
    One JSON object per line with string fields "text" and "label".

    Blank lines are skipped; `uid` is the zero-based record index.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError("dataset file not found", str(path))

    utterances: List[Utterance] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON: {e.msg}", str(path), line_no) from None
            if not isinstance(record, dict):
                raise DataFormatError("record must be an object", str(path), line_no)
            for key in ("text", "label"):
                if not isinstance(record.get(key), str):
                    raise DataFormatError(f"missing or non-string field '{key}'", str(path), line_no)
            try:
                utterances.append(Utterance(record["text"], record["label"], len(utterances)))
            except DataFormatError as e:
                raise DataFormatError(str(e), str(path), line_no) from None

    if not utterances:
        raise DataFormatError("dataset is empty", str(path))
    logger.info(f"Loaded {len(utterances)} utterances from {path}")
    return utterances


def save_dataset(utterances: Sequence[Utterance], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for u in utterances:
            f.write(json.dumps({"text": u.text, "label": u.label}, ensure_ascii=False) + "\n")
    logger.info(f"Wrote {len(utterances)} utterances to {path}")
    return path


class DatasetManifest(BaseModel):
    seen: List[str]
    novel: List[str]
    seed: int
    per_intent: Optional[int] = Field(default=None, ge=1)


def manifest_path(dataset_path: PathLike) -> Path:
    return Path(dataset_path).with_suffix(".manifest.json")


def save_manifest(manifest: DatasetManifest, dataset_path: PathLike) -> Path:
    path = manifest_path(dataset_path)
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_manifest(dataset_path: PathLike) -> DatasetManifest:
    path = manifest_path(dataset_path)
    if not path.is_file():
        raise DataFormatError("split manifest not found", str(path))
    try:
        return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataFormatError(f"invalid manifest: {e}", str(path)) from None


# ============================================================================
# Report records
# ============================================================================

def save_records(records: Sequence[BaseModel], path: PathLike) -> Path:
    """One JSON record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
    return path


def load_records(path: PathLike, model: Type[R]) -> List[R]:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError("record file not found", str(path))
    records: List[R] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as e:
                raise DataFormatError(f"invalid {model.__name__} record: {e}", str(path), line_no) from None
    return records


# ============================================================================
# Precomputed embeddings
# ============================================================================

def load_embeddings(path: PathLike, expected_count: Optional[int] = None) -> Dict[int, Tensor]:
    """
    First line holds the dimension h; each following line is a zero-based
    utterance index followed by h floats.

    With `expected_count`, indices must cover exactly 0..expected_count-1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError("embeddings file not found", str(path))

    vectors: Dict[int, Tensor] = {}
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if dim is None:
                if len(fields) != 1 or not fields[0].isdigit() or int(fields[0]) < 1:
                    raise DataFormatError("header must be a single positive dimension", str(path), line_no)
                dim = int(fields[0])
                continue
            if len(fields) != dim + 1:
                raise DataFormatError(f"expected index plus {dim} values, got {len(fields)} fields", str(path), line_no)
            try:
                index = int(fields[0])
                values = np.array([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError as e:
                raise DataFormatError(f"unparseable number: {e}", str(path), line_no) from None
            if index < 0:
                raise DataFormatError(f"negative index {index}", str(path), line_no)
            if index in vectors:
                raise DataFormatError(f"duplicate index {index}", str(path), line_no)
            if not np.all(np.isfinite(values)):
                raise DataFormatError("non-finite value", str(path), line_no)
            vectors[index] = values

    if dim is None:
        raise DataFormatError("embeddings file is empty", str(path))
    if expected_count is not None and set(vectors) != set(range(expected_count)):
        raise DataFormatError(
            f"embeddings cover {len(vectors)} indices, dataset has {expected_count} utterances", str(path)
        )
    logger.info(f"Loaded {len(vectors)} precomputed vectors of dimension {dim} from {path}")
    return vectors


# ============================================================================
# Checkpoints
# ============================================================================

@dataclass
class Checkpoint:
    """Everything needed to resume phase 2 or evaluate: tensors, store, vocab, optional sections."""

    params: ModelParams
    store: PrototypeStore
    vocab: Vocab
    snapshot: Optional[ParameterSnapshot] = None
    memory: Optional[ReplayMemory] = None
    config: Optional[Dict] = None
    version: int = CHECKPOINT_VERSION


class _Writer:
    u8: ClassVar[struct.Struct] = struct.Struct("<B")
    u32: ClassVar[struct.Struct] = struct.Struct("<I")
    u64: ClassVar[struct.Struct] = struct.Struct("<Q")
    i64: ClassVar[struct.Struct] = struct.Struct("<q")

    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, segment: struct.Struct, value: int) -> None:
        self.buf.write(segment.pack(value))

    def string(self, s: str) -> None:
        data = s.encode("utf-8")
        self.pack(self.u32, len(data))
        self.buf.write(data)

    def strings(self, items: Sequence[str]) -> None:
        self.pack(self.u32, len(items))
        for s in items:
            self.string(s)

    def tensor(self, name: str, value: Tensor) -> None:
        self.string(name)
        self.pack(self.u32, value.ndim)
        for d in value.shape:
            self.pack(self.u64, d)
        self.buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())

    def tensors(self, named: Dict[str, Tensor]) -> None:
        self.pack(self.u32, len(named))
        for name, value in named.items():
            self.tensor(name, value)


class _Reader:
    def __init__(self, data: bytes):
        self.view = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.view):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.view[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, segment: struct.Struct) -> int:
        return segment.unpack(self.take(segment.size))[0]

    def string(self) -> str:
        n = self.unpack(_Writer.u32)
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"invalid UTF-8 string in checkpoint: {e}") from None

    def strings(self) -> List[str]:
        return [self.string() for _ in range(self.unpack(_Writer.u32))]

    def tensor(self) -> tuple:
        name = self.string()
        rank = self.unpack(_Writer.u32)
        dims = tuple(self.unpack(_Writer.u64) for _ in range(rank))
        nbytes = math.prod(dims) * 8
        if nbytes > len(self.view) - self.pos:
            raise CheckpointError(f"tensor '{name}' of shape {dims} exceeds the remaining checkpoint bytes")
        raw = self.take(nbytes)
        return name, np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)

    def tensors(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for _ in range(self.unpack(_Writer.u32)):
            name, value = self.tensor()
            if name in out:
                raise CheckpointError(f"duplicate tensor '{name}' in checkpoint")
            out[name] = value
        return out

    def flag(self) -> bool:
        value = self.unpack(_Writer.u8)
        if value not in (0, 1):
            raise CheckpointError(f"invalid presence flag {value} at byte {self.pos - 1}")
        return value == 1


_STAGE_CODES = {Stage.SEEN: 0, Stage.NOVEL: 1}
_CODE_STAGES = {v: k for k, v in _STAGE_CODES.items()}


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.buf.write(CHECKPOINT_MAGIC)
    w.pack(w.u32, ckpt.version)

    named = dict(ckpt.params.as_dict())
    named[PROTOTYPES] = ckpt.store.vectors.value
    w.tensors(named)

    w.strings(ckpt.vocab.tokens)
    w.pack(w.u32, len(ckpt.store))
    for intent, stage in zip(ckpt.store.intents, ckpt.store.stages):
        w.string(intent)
        w.pack(w.u8, _STAGE_CODES[stage])

    w.pack(w.u8, int(ckpt.snapshot is not None))
    if ckpt.snapshot is not None:
        w.strings(list(ckpt.snapshot.seen_intents))
        w.tensors(dict(ckpt.snapshot.tensors))

    w.pack(w.u8, int(ckpt.memory is not None))
    if ckpt.memory is not None:
        memory = ckpt.memory
        w.pack(w.u32, memory.capacity)
        w.strings(memory.seen_intents)
        w.pack(w.u32, len(memory.items))
        for u in memory.items:
            w.pack(w.i64, u.uid)
            w.string(u.text)
            w.string(u.label)
        w.pack(w.u8, int(memory.soft_labels is not None))
        if memory.soft_labels is not None:
            w.tensor("soft_labels", memory.soft_labels)

    w.pack(w.u8, int(ckpt.config is not None))
    if ckpt.config is not None:
        w.string(json.dumps(ckpt.config, sort_keys=True))
    return w.buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if bytes(r.take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    version = r.unpack(_Writer.u32)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")

    named = r.tensors()
    if PROTOTYPES not in named:
        raise CheckpointError("checkpoint has no prototype tensor")
    prototypes = named.pop(PROTOTYPES)
    params = ModelParams(Param(name, value) for name, value in named.items())

    vocab = Vocab(r.strings())
    intents, stages = [], []
    for _ in range(r.unpack(_Writer.u32)):
        intents.append(r.string())
        code = r.unpack(_Writer.u8)
        if code not in _CODE_STAGES:
            raise CheckpointError(f"unknown stage tag {code}")
        stages.append(_CODE_STAGES[code])
    store = PrototypeStore(intents, stages, Param(PROTOTYPES, prototypes))

    snapshot = None
    if r.flag():
        seen_intents = r.strings()
        snapshot = ParameterSnapshot.from_tensors(r.tensors(), seen_intents)

    memory = None
    if r.flag():
        capacity = r.unpack(_Writer.u32)
        seen_intents = r.strings()
        items = []
        for _ in range(r.unpack(_Writer.u32)):
            uid = r.unpack(_Writer.i64)
            text = r.string()
            items.append(Utterance(text, r.string(), uid))
        soft = None
        if r.flag():
            _, soft = r.tensor()
            soft.setflags(write=False)
        memory = ReplayMemory(items, capacity, seen_intents, soft)

    config = None
    if r.flag():
        try:
            config = json.loads(r.string())
        except json.JSONDecodeError as e:
            raise CheckpointError(f"invalid config echo: {e.msg}") from None

    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(params, store, vocab, snapshot, memory, config, version)


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = checkpoint_bytes(ckpt)
    path.write_bytes(data)
    logger.info(f"Checkpoint written to {path} ({len(data)} bytes)")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = checkpoint_from_bytes(path.read_bytes())
    logger.info(f"Loaded checkpoint {path}: {len(ckpt.params)} tensors, {len(ckpt.store)} prototypes")
    return ckpt
