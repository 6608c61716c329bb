"""Pre-extracted feature tables and the COGF on-disk format.

COGF layout, all little-endian:

    magic "COGF" | u32 version = 1 | u64 n | u32 d | u32 flags
    n*d float32 row-major matrix
    n u32 labels
    if flags bit0: n image ids, each u16 byte length + UTF-8 bytes

Matrices are stored and kept as float32; training code upcasts to float64.
Tables are treated as immutable after construction.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from typing import IO, Mapping, Sequence

import numpy as np

from cogbench.errors import (
    BadMagic,
    DuplicateImageId,
    EmptyManifest,
    ImageIdsAbsent,
    InvalidHeader,
    LabelOutOfRange,
    MalformedLine,
    MissingImageId,
    TrailingData,
    TruncatedPayload,
    UnsupportedVersion,
)
from cogbench.taxonomy import _iter_lines

logger = logging.getLogger(__name__)

MAGIC = b"COGF"
VERSION = 1
FLAG_IMAGE_IDS = 0x1
_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True)
class FeatureTable:
    """n x d float32 features with integer labels and optional image ids.

    When concept_index is set, label k names concept_index[k] and every
    label must fall in [0, len(concept_index)).
    """

    matrix: np.ndarray
    labels: np.ndarray
    image_ids: tuple[str, ...] | None = None
    concept_index: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if self.matrix.dtype != np.float32:
            object.__setattr__(self, "matrix", self.matrix.astype(np.float32))
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        n = self.matrix.shape[0]
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
        if n and labels.min() < 0:
            raise LabelOutOfRange(int(labels.min()), 0)
        if self.image_ids is not None and len(self.image_ids) != n:
            raise ValueError(f"{len(self.image_ids)} image ids for {n} rows")
        if self.concept_index is not None and n:
            c = len(self.concept_index)
            if labels.max() >= c:
                raise LabelOutOfRange(int(labels.max()), c)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_classes(self) -> int:
        if self.concept_index is not None:
            return len(self.concept_index)
        return int(self.labels.max()) + 1 if self.n else 0


def _read_exact(stream: IO[bytes], size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise TruncatedPayload(what, size, len(data))
    return data


def load_features(stream: IO[bytes], expected_classes: int | None = None) -> FeatureTable:
    """Read a COGF stream, validating header, sizes, and (optionally) labels."""
    header = _read_exact(stream, _HEADER.size, "header")
    magic, version, n, d, flags = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(magic)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if flags & ~FLAG_IMAGE_IDS:
        raise UnsupportedVersion(f"unknown flag bits 0x{flags:x}")
    if n < 1 or d < 1:
        raise InvalidHeader(f"n = {n}, d = {d}")

    matrix = np.frombuffer(_read_exact(stream, n * d * 4, "feature matrix"), dtype="<f4")
    matrix = matrix.reshape(n, d).copy()
    labels = np.frombuffer(_read_exact(stream, n * 4, "labels"), dtype="<u4").astype(np.int64)

    image_ids = None
    if flags & FLAG_IMAGE_IDS:
        ids = []
        for i in range(n):
            (length,) = struct.unpack("<H", _read_exact(stream, 2, f"id length {i}"))
            ids.append(_read_exact(stream, length, f"id {i}").decode("utf-8"))
        image_ids = tuple(ids)
    if stream.read(1):
        raise TrailingData()

    if expected_classes is not None and labels.size and labels.max() >= expected_classes:
        raise LabelOutOfRange(int(labels.max()), expected_classes)
    return FeatureTable(matrix=matrix, labels=labels, image_ids=image_ids)


def write_features(table: FeatureTable, stream: IO[bytes]) -> None:
    """Write a table in COGF form; inverse of load_features bit-for-bit."""
    if table.n < 1 or table.dim < 1:
        raise InvalidHeader(f"refusing to write empty table (n={table.n}, d={table.dim})")
    if table.labels.max() >= 2**32:
        raise LabelOutOfRange(int(table.labels.max()), 2**32)
    flags = FLAG_IMAGE_IDS if table.image_ids is not None else 0
    stream.write(_HEADER.pack(MAGIC, VERSION, table.n, table.dim, flags))
    stream.write(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())
    stream.write(table.labels.astype("<u4").tobytes())
    if table.image_ids is not None:
        for image_id in table.image_ids:
            raw = image_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"image id longer than 65535 bytes: {image_id[:40]!r}...")
            stream.write(struct.pack("<H", len(raw)))
            stream.write(raw)


def l2_normalize(table: FeatureTable) -> FeatureTable:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    m64 = table.matrix.astype(np.float64)
    norms = np.linalg.norm(m64, axis=1)
    zero_rows = int((norms == 0.0).sum())
    if zero_rows:
        logger.warning("l2_normalize: %d all-zero rows left unnormalized", zero_rows)
    safe = np.where(norms == 0.0, 1.0, norms)
    return replace(table, matrix=(m64 / safe[:, None]).astype(np.float32))


def split_by_manifest(
    table: FeatureTable,
    manifest: Mapping[str, Mapping[str, Sequence[str]]],
) -> tuple[FeatureTable, FeatureTable]:
    """Partition rows into (train, test) per a {concept: {train, test}} map.

    Labels are re-indexed to the manifest's concept order; the table's own
    labels are ignored.
    """
    if table.image_ids is None:
        raise ImageIdsAbsent()
    if not manifest:
        raise EmptyManifest()

    row_of: dict[str, int] = {}
    for row, image_id in enumerate(table.image_ids):
        if image_id in row_of:
            raise DuplicateImageId(image_id, "feature table")
        row_of[image_id] = row

    concepts = list(manifest.keys())
    claimed: set[str] = set()
    missing: list[str] = []
    picks: dict[str, list[tuple[int, int]]] = {"train": [], "test": []}
    for label, concept in enumerate(concepts):
        for split in ("train", "test"):
            for image_id in manifest[concept].get(split, ()):
                if image_id in claimed:
                    raise DuplicateImageId(image_id, "manifest")
                claimed.add(image_id)
                row = row_of.get(image_id)
                if row is None:
                    missing.append(image_id)
                else:
                    picks[split].append((row, label))
    if missing:
        raise MissingImageId(missing[:10], len(missing))

    def take(pairs: list[tuple[int, int]]) -> FeatureTable:
        rows = np.array([r for r, _ in pairs], dtype=np.intp)
        labels = np.array([lab for _, lab in pairs], dtype=np.int64)
        return FeatureTable(
            matrix=table.matrix[rows] if len(pairs) else table.matrix[:0],
            labels=labels,
            image_ids=tuple(table.image_ids[r] for r, _ in pairs),
            concept_index=tuple(concepts),
        )

    return take(picks["train"]), take(picks["test"])


def pack_tsv(source, stream: IO[bytes]) -> FeatureTable:
    """Convert id<TAB>label<TAB>f1..fd TSV lines to a COGF stream."""
    ids: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    dim: int | None = None
    for line_no, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) < 3:
            raise MalformedLine(line_no, line, "expected id, label, and at least one feature")
        if dim is None:
            dim = len(fields) - 2
        elif len(fields) - 2 != dim:
            raise MalformedLine(line_no, line, f"expected {dim} features, found {len(fields) - 2}")
        try:
            label = int(fields[1])
            values = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise MalformedLine(line_no, line, str(exc)) from None
        if label < 0:
            raise MalformedLine(line_no, line, f"negative label {label}")
        ids.append(fields[0])
        labels.append(label)
        rows.append(values)
    if not rows:
        raise InvalidHeader("input TSV has no data rows")
    table = FeatureTable(
        matrix=np.array(rows, dtype=np.float32),
        labels=np.array(labels, dtype=np.int64),
        image_ids=tuple(ids),
    )
    write_features(table, stream)
    return table
