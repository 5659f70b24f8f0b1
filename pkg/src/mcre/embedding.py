"""Per-answer embedding vectors: storage, fetching, and similarity primitives.

Embeddings are inputs to this artifact, not computed here.  They arrive
either via a binary file (little-endian, magic ``MCRE``, f32 payload, with
a JSONL sidecar mapping rows to keys) or from an embedding service
(``POST /embed``).  All similarity math runs in float64 regardless of the
f32 storage format.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

MAGIC = b"MCRE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")

INDEX_SIDECAR = "embeddings.index.jsonl"

FETCH_ATTEMPTS = 3
FETCH_BACKOFF_SECONDS = 0.5


class EmbeddingFormatError(ValueError):
    """Malformed embedding file: bad magic, truncation, or size mismatch."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_tag: str = ""

    def __post_init__(self) -> None:
        # Zero-size vectors are allowed only as the concat identity; they
        # cannot enter a store and every similarity op rejects them.
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("embedding must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)


def _norm(vector: EmbeddingVector, name: str) -> float:
    norm = float(np.linalg.norm(vector.values))
    if norm == 0.0:
        raise ValueError(f"zero-norm vector: {name}")
    return norm


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """u.v / (|u||v|); raises on dimension mismatch or zero-norm input."""
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    return float(u.values @ v.values) / (_norm(u, "u") * _norm(v, "v"))


def concat_embeddings(a: EmbeddingVector, b: EmbeddingVector) -> EmbeddingVector:
    """Concatenate two source embeddings of one answer, first source first."""
    if a.values.size == 0:
        return b
    if b.values.size == 0:
        return a
    tag = "+".join(part for part in (a.source_tag, b.source_tag) if part)
    return EmbeddingVector(np.concatenate([a.values, b.values]), tag)


def centroid(vectors: list[EmbeddingVector]) -> EmbeddingVector:
    """Arithmetic mean per coordinate; raises on an empty list."""
    if not vectors:
        raise ValueError("centroid of empty list")
    dim = vectors[0].dim
    for vec in vectors:
        if vec.dim != dim:
            raise ValueError(f"dimension mismatch: {vec.dim} vs {dim}")
    stacked = np.stack([vec.values for vec in vectors])
    return EmbeddingVector(stacked.mean(axis=0), vectors[0].source_tag)


@dataclass
class EmbeddingStore:
    """Immutable map from (question_id, model_id) to one embedding row."""

    dim: int
    source_tag: str = ""
    _rows: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._rows

    def add(self, question_id: str, model_id: str, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size != self.dim:
            raise EmbeddingFormatError(
                f"dimension mismatch: expected {self.dim}, got {values.size}"
            )
        key = (question_id, model_id)
        if key in self._rows:
            raise EmbeddingFormatError(f"duplicate embedding key {key!r}")
        self._rows[key] = values

    def get(self, question_id: str, model_id: str) -> EmbeddingVector:
        key = (question_id, model_id)
        if key not in self._rows:
            raise KeyError(f"no embedding for {key!r}")
        return EmbeddingVector(self._rows[key], self.source_tag)

    def keys(self) -> list[tuple[str, str]]:
        return list(self._rows)


def write_embedding_file(store: EmbeddingStore, path: str | Path) -> None:
    """Write the binary store plus its row-index sidecar.

    Layout: magic ``MCRE``, u32 version, u32 count, u32 dim (all
    little-endian), then count*dim IEEE-754 f32 values row-major.
    """
    path = Path(path)
    keys = store.keys()
    payload = np.empty((len(keys), store.dim), dtype="<f4")
    for row, key in enumerate(keys):
        payload[row] = store._rows[key].astype("<f4")
    with path.open("wb") as handle:
        handle.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(keys), store.dim))
        handle.write(payload.tobytes())
    sidecar = path.parent / INDEX_SIDECAR
    with sidecar.open("w", encoding="utf-8") as handle:
        for row, (question_id, model_id) in enumerate(keys):
            handle.write(
                json.dumps(
                    {"row": row, "question_id": question_id, "model_id": model_id},
                    sort_keys=True,
                )
                + "\n"
            )


def load_embedding_file(path: str | Path, source_tag: str = "") -> EmbeddingStore:
    """Load a binary embedding file, resolving keys via the sidecar index."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(f"{path.name}: truncated header")
    magic, version, count, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path.name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path.name}: unsupported version {version}")
    if dim == 0:
        raise EmbeddingFormatError(f"{path.name}: zero dimension")
    expected = _HEADER.size + count * dim * 4
    if len(blob) < expected:
        raise EmbeddingFormatError(
            f"{path.name}: truncated payload ({len(blob)} bytes, expected {expected})"
        )
    payload = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=_HEADER.size)
    matrix = payload.reshape(count, dim)

    sidecar = path.parent / INDEX_SIDECAR
    if not sidecar.exists():
        raise EmbeddingFormatError(f"missing sidecar index {sidecar.name}")
    store = EmbeddingStore(dim=dim, source_tag=source_tag)
    rows_seen = 0
    with sidecar.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            row = int(obj["row"])
            if not 0 <= row < count:
                raise EmbeddingFormatError(
                    f"{sidecar.name}:{lineno}: row {row} outside payload"
                )
            store.add(obj["question_id"], obj["model_id"], matrix[row].astype(np.float64))
            rows_seen += 1
    if rows_seen != count:
        raise EmbeddingFormatError(
            f"{sidecar.name}: {rows_seen} index rows for {count} payload rows"
        )
    return store


def fetch_embeddings(
    texts: list[str],
    endpoint: str,
    timeout: float = 30.0,
    session: requests.Session | None = None,
) -> list[EmbeddingVector]:
    """Fetch one embedding per text from the service, order-preserving.

    Retries up to three times with exponential backoff; a response whose
    vector count differs from the request is an error.
    """
    if not texts:
        return []
    url = endpoint.rstrip("/") + "/embed"
    http = session or requests
    last_error: Exception | None = None
    for attempt in range(FETCH_ATTEMPTS):
        if attempt:
            time.sleep(FETCH_BACKOFF_SECONDS * 2 ** (attempt - 1))
        try:
            response = http.post(url, json={"texts": texts}, timeout=timeout)
            if response.status_code != 200:
                raise RuntimeError(f"embedding service returned {response.status_code}")
            rows = response.json()["embeddings"]
        except Exception as err:  # noqa: BLE001 - retry any transport failure
            last_error = err
            continue
        if len(rows) != len(texts):
            raise RuntimeError(
                f"count mismatch: sent {len(texts)} texts, got {len(rows)} embeddings"
            )
        return [EmbeddingVector(np.asarray(row, dtype=np.float64)) for row in rows]
    raise RuntimeError(f"embedding service failed after {FETCH_ATTEMPTS} attempts: {last_error}")
