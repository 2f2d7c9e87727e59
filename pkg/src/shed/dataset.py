"""Embedded-corpus storage: binary embedding matrices, JSONL records, selection exports.

The embedding file is binary and bit-exact: 8 magic bytes ``SHEDEMB1``,
then two little-endian u32 values (row count N, dimension d), then N*d
float32 values in row-major order. The records file is UTF-8 JSON lines,
one object per embedding row, aligned by position.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    IoFailure,
    MagicMismatch,
    MalformedRecord,
    NonFiniteEmbedding,
    RecordCountMismatch,
    UnknownId,
)

MAGIC = b"SHEDEMB1"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

SELECTION_FORMAT = "shed-selection v1"


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def fnv1a64_file(path: Path | str) -> int:
    try:
        return fnv1a64(Path(path).read_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


@dataclass(frozen=True)
class InstanceRecord:
    """One corpus instance: identity plus a payload locator."""

    id: str
    payload_ref: str
    group_label: str | None = None
    label: str | None = None

    def to_json(self) -> str:
        obj: dict[str, str] = {"id": self.id, "payload_ref": self.payload_ref}
        if self.group_label is not None:
            obj["group_label"] = self.group_label
        if self.label is not None:
            obj["label"] = self.label
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def from_json(cls, line: str) -> "InstanceRecord":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid record line: {exc}") from exc
        if not isinstance(obj, dict) or "id" not in obj or "payload_ref" not in obj:
            raise MalformedRecord(f"record line missing id/payload_ref: {line[:80]}")
        if not obj["id"]:
            raise MalformedRecord("record has empty id")
        return cls(
            id=str(obj["id"]),
            payload_ref=str(obj["payload_ref"]),
            group_label=obj.get("group_label"),
            label=obj.get("label"),
        )


@dataclass
class EmbeddedDataset:
    """An embedded corpus: N records aligned row-for-row with an N x d float32 matrix.

    Read-only after construction; safe to share across threads.
    """

    records: list[InstanceRecord]
    embeddings: np.ndarray
    digest: int
    _row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        validate_dataset(self.records, self.embeddings)
        self._row_of = {rec.id: i for i, rec in enumerate(self.records)}

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def row_of(self, instance_id: str) -> int:
        try:
            return self._row_of[instance_id]
        except KeyError:
            raise UnknownId(f"id {instance_id!r} not in dataset") from None

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]


def validate_dataset(records: Sequence[InstanceRecord], embeddings: np.ndarray) -> None:
    if embeddings.ndim != 2:
        raise DimensionMismatch(f"embeddings must be 2-D, got shape {embeddings.shape}")
    n, d = embeddings.shape
    if n < 1 or d < 1:
        raise DimensionMismatch(f"embedding matrix must be non-empty, got {n}x{d}")
    if len(records) != n:
        raise RecordCountMismatch(f"{len(records)} records but {n} embedding rows")
    if not np.isfinite(embeddings).all():
        raise NonFiniteEmbedding("embedding matrix contains non-finite values")
    seen: set[str] = set()
    for rec in records:
        if not rec.id:
            raise MalformedRecord("record has empty id")
        if rec.id in seen:
            raise DuplicateId(f"duplicate instance id {rec.id!r}")
        seen.add(rec.id)


def load_embeddings(
    embedding_path: Path | str,
    records_path: Path | str,
    *,
    normalize: bool = False,
) -> EmbeddedDataset:
    """Load and validate an embedded corpus from its two on-disk files.

    Row i of the binary matrix pairs with line i of the records file.
    With ``normalize=True`` every embedding row is L2-normalized after the
    digest is taken, so the digest always reflects the raw bytes.
    """
    embedding_path = Path(embedding_path)
    records_path = Path(records_path)
    try:
        blob = embedding_path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {embedding_path}: {exc}") from exc

    if len(blob) < 8 or blob[:8] != MAGIC:
        raise MagicMismatch(f"{embedding_path} does not start with {MAGIC!r}")
    if len(blob) < 16:
        raise DimensionMismatch(f"{embedding_path} truncated before the shape header")
    n, d = struct.unpack_from("<II", blob, 8)
    payload = blob[16:]
    if n < 1 or d < 1:
        raise DimensionMismatch(f"header declares empty matrix {n}x{d}")
    expected = n * d * 4
    if len(payload) != expected:
        raise DimensionMismatch(
            f"header declares {n}x{d} float32 ({expected} bytes) but payload has {len(payload)}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    digest = fnv1a64(payload)

    try:
        text = records_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {records_path}: {exc}") from exc
    lines = text.splitlines()
    records = [InstanceRecord.from_json(line) for line in lines]
    if len(records) != n:
        raise RecordCountMismatch(
            f"{records_path} has {len(records)} records but matrix declares {n} rows"
        )

    matrix = np.array(matrix, dtype=np.float32)  # own the memory, drop buffer view
    if normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        np.divide(matrix, norms, out=matrix, where=norms > 0)
    return EmbeddedDataset(records=records, embeddings=matrix, digest=digest)


def write_embeddings(embeddings: np.ndarray, path: Path | str) -> None:
    """Write an N x d matrix in the binary embedding format."""
    arr = np.ascontiguousarray(embeddings, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    n, d = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", n, d))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_records(records: Iterable[InstanceRecord], path: Path | str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(rec.to_json())
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class SelectionResult:
    """Ordered selection of instance ids plus the provenance of the draw."""

    selected_ids: tuple[str, ...]
    method: str
    target_size: int
    seed: int
    source_digest: int
    scaling_factor: float | None = None

    def __post_init__(self) -> None:
        if len(set(self.selected_ids)) != len(self.selected_ids):
            raise DuplicateId("selection contains duplicate ids")


def export_selection(
    dataset: EmbeddedDataset,
    result: SelectionResult,
    out_path: Path | str,
) -> None:
    """Write the selected records, in selection order, behind a ``#`` metadata header.

    Byte-identical across re-runs with identical inputs.
    """
    rows = [dataset.row_of(i) for i in result.selected_ids]  # raises UnknownId
    header = [
        f"# {SELECTION_FORMAT}",
        f"# method={result.method}",
        f"# target_size={result.target_size}",
        f"# seed={result.seed}",
        f"# source_digest={result.source_digest:016x}",
    ]
    if result.scaling_factor is not None:
        header.insert(3, f"# scaling_factor={result.scaling_factor!r}")
    try:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            for line in header:
                fh.write(line)
                fh.write("\n")
            for row in rows:
                fh.write(dataset.records[row].to_json())
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {out_path}: {exc}") from exc


def read_selection(path: Path | str) -> tuple[dict[str, str], list[InstanceRecord]]:
    """Parse a selection export back into its metadata and ordered records."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    meta: dict[str, str] = {}
    records: list[InstanceRecord] = []
    for line in text.splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
        elif line.strip():
            records.append(InstanceRecord.from_json(line))
    return meta, records
