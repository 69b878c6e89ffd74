"""Shared data model and portable file formats.

CSV is the canonical text format: UTF-8, LF line endings, header row with
``id`` first and class (or dimension) names after.  Embeddings additionally
have a binary format: magic ``EMB1``, u32-LE count, u32-LE dim, then
count*dim float32-LE values row-major, with ids in a JSON sidecar
``<file>.ids.json``.

All structures are immutable after construction and safe for concurrent
reads.
"""

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCORE_KINDS = ("logits", "probabilities")

EMB_MAGIC = b"EMB1"


@dataclass
class LabelMatrix:
    """N x C binary ground-truth labels."""

    ids: list
    values: np.ndarray
    class_names: list

    def __post_init__(self):
        self.ids = list(self.ids)
        self.class_names = list(self.class_names)
        self.values = np.asarray(self.values, dtype=np.int8)
        if self.values.ndim != 2:
            raise ValueError("label values must be a 2-D matrix")
        n, c = self.values.shape
        if n != len(self.ids) or c != len(self.class_names):
            raise ValueError("label matrix shape does not match ids/class names")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate id in label matrix")
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("non-binary label value")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass
class ScoreMatrix:
    """N x C real-valued scores, tagged as logits or probabilities."""

    ids: list
    values: np.ndarray
    kind: str
    class_names: list

    def __post_init__(self):
        self.ids = list(self.ids)
        self.class_names = list(self.class_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.values.ndim != 2:
            raise ValueError("score values must be a 2-D matrix")
        n, c = self.values.shape
        if n != len(self.ids) or c != len(self.class_names):
            raise ValueError("score matrix shape does not match ids/class names")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate id in score matrix")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite score entry")
        if self.kind == "probabilities":
            if (self.values < 0).any() or (self.values > 1).any():
                raise ValueError("probability out of range [0, 1]")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


@dataclass
class ClassConfig:
    """Per-class quantities: counts, frequencies, weights, margins, repeat factors."""

    counts: np.ndarray
    frequencies: np.ndarray
    weights: np.ndarray = None
    margins: np.ndarray = None
    repeat_factors: np.ndarray = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("negative class count")
        c = self.counts.shape[0]
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        if self.frequencies.shape != (c,):
            raise ValueError("frequencies shape mismatch")
        if (self.frequencies < 0).any() or (self.frequencies > 1).any():
            raise ValueError("frequency outside [0, 1]")
        self.weights = (
            np.ones(c) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        )
        self.margins = (
            np.zeros(c) if self.margins is None else np.asarray(self.margins, dtype=np.float64)
        )
        self.repeat_factors = (
            np.ones(c)
            if self.repeat_factors is None
            else np.asarray(self.repeat_factors, dtype=np.float64)
        )
        if (self.weights <= 0).any():
            raise ValueError("class weights must be strictly positive")
        if (self.margins < 0).any():
            raise ValueError("margins must be non-negative")
        if (self.repeat_factors < 1).any():
            raise ValueError("repeat factors must be >= 1")


@dataclass
class EmbeddingSet:
    """Row-major real vectors, one per id.

    Held in float64 so downstream arithmetic keeps full precision; the
    binary file format is float32, applied at write time (exact for data
    that came from a file, since float32 -> float64 is lossless).
    """

    ids: list
    vectors: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.ids = list(self.ids)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("embedding vectors must be a 2-D matrix")
        if self.vectors.shape[0] != len(self.ids):
            raise ValueError("embedding count does not match ids")
        if not np.isfinite(self.vectors).all():
            raise ValueError("non-finite embedding entry")
        if self.normalized:
            norms = np.linalg.norm(self.vectors, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("normalized flag set but rows are not unit norm")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _read_csv_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def _check_header(rows, path):
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "id":
        raise ValueError(f"{path}: line 1: header must start with 'id'")
    names = header[1:]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: line 1: duplicate column name")
    return names


def load_labels(path) -> LabelMatrix:
    """Parse a labels CSV into a LabelMatrix.  Entries must be exactly 0 or 1."""
    rows = _read_csv_rows(path)
    class_names = _check_header(rows, path)
    ids, seen = [], set()
    values = np.zeros((len(rows) - 1, len(class_names)), dtype=np.int8)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(class_names) + 1:
            raise ValueError(f"{path}: line {lineno}: ragged row")
        sample_id = row[0]
        if sample_id in seen:
            raise ValueError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        ids.append(sample_id)
        for j, tok in enumerate(row[1:]):
            tok = tok.strip()
            if tok == "0":
                values[lineno - 2, j] = 0
            elif tok == "1":
                values[lineno - 2, j] = 1
            else:
                raise ValueError(f"{path}: line {lineno}: non-binary label {tok!r}")
    return LabelMatrix(ids=ids, values=values, class_names=class_names)


def save_labels(labels: LabelMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + labels.class_names)
        for i, sample_id in enumerate(labels.ids):
            writer.writerow([sample_id] + [str(int(v)) for v in labels.values[i]])


def load_scores(path, kind: str) -> ScoreMatrix:
    """Parse a scores CSV.  kind='probabilities' enforces entries in [0, 1]."""
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}")
    rows = _read_csv_rows(path)
    class_names = _check_header(rows, path)
    ids, seen = [], set()
    values = np.zeros((len(rows) - 1, len(class_names)), dtype=np.float64)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(class_names) + 1:
            raise ValueError(f"{path}: line {lineno}: header mismatch (ragged row)")
        sample_id = row[0]
        if sample_id in seen:
            raise ValueError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        ids.append(sample_id)
        for j, tok in enumerate(row[1:]):
            try:
                v = float(tok)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad number {tok!r}") from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: line {lineno}: non-finite score")
            if kind == "probabilities" and not 0.0 <= v <= 1.0:
                raise ValueError(f"{path}: line {lineno}: probability out of range")
            values[lineno - 2, j] = v
    return ScoreMatrix(ids=ids, values=values, kind=kind, class_names=class_names)


def save_scores(scores: ScoreMatrix, path) -> None:
    """Write a scores CSV with 9 significant digits per value."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + scores.class_names)
        for i, sample_id in enumerate(scores.ids):
            writer.writerow([sample_id] + [f"{v:.9g}" for v in scores.values[i]])


def class_stats(labels: LabelMatrix) -> ClassConfig:
    """Per-class counts and frequencies; weights/margins/repeat factors start neutral."""
    if labels.n_samples < 1:
        raise ValueError("need at least one sample")
    counts = labels.values.sum(axis=0, dtype=np.int64)
    frequencies = counts / float(labels.n_samples)
    return ClassConfig(counts=counts, frequencies=frequencies)


def load_embeddings(path) -> EmbeddingSet:
    """Load an embedding file, binary (EMB1 magic) or CSV, with normalized=False."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == EMB_MAGIC:
        return _load_embeddings_binary(path)
    # anything non-textual that is not EMB1 is a corrupt binary, not a CSV
    if b"\x00" in head:
        raise ValueError(f"{path}: bad magic {head!r}")
    return _load_embeddings_csv(path)


def _load_embeddings_binary(path: Path) -> EmbeddingSet:
    raw = path.read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise ValueError(f"{path}: bad magic")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * count * dim
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim).copy()
    if not np.isfinite(vectors).all():
        raise ValueError(f"{path}: non-finite embedding entry")
    sidecar = path.with_name(path.name + ".ids.json")
    if sidecar.exists():
        ids = json.loads(sidecar.read_text(encoding="utf-8"))
        if not isinstance(ids, list) or len(ids) != count:
            raise ValueError(f"{sidecar}: ids sidecar does not match count {count}")
    else:
        ids = [str(i) for i in range(count)]
    return EmbeddingSet(ids=ids, vectors=vectors, normalized=False)


def _load_embeddings_csv(path: Path) -> EmbeddingSet:
    rows = _read_csv_rows(path)
    _check_header(rows, path)
    dim = len(rows[0]) - 1
    ids, seen = [], set()
    vectors = np.zeros((len(rows) - 1, dim), dtype=np.float64)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise ValueError(f"{path}: line {lineno}: dimension mismatch")
        sample_id = row[0]
        if sample_id in seen:
            raise ValueError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        ids.append(sample_id)
        for j, tok in enumerate(row[1:]):
            try:
                v = float(tok)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad number {tok!r}") from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: line {lineno}: non-finite embedding entry")
            vectors[lineno - 2, j] = v
    return EmbeddingSet(ids=ids, vectors=vectors, normalized=False)


def save_embeddings_binary(emb: EmbeddingSet, path) -> None:
    """Write EMB1 binary plus the ids JSON sidecar.  Round trips bit-exactly."""
    path = Path(path)
    count, dim = emb.vectors.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", count, dim))
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())
    sidecar = path.with_name(path.name + ".ids.json")
    sidecar.write_text(json.dumps(list(emb.ids)), encoding="utf-8")


def save_embeddings_csv(emb: EmbeddingSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"d{j}" for j in range(emb.dim)])
        for i, sample_id in enumerate(emb.ids):
            writer.writerow([sample_id] + [f"{float(v):.9g}" for v in emb.vectors[i]])
