"""Dense vector index over the candidate code snippets.

Built offline by encoding every candidate in fast PL mode; queried with
exact top-K search (full scan plus sort). Scores are inner products of
unit vectors, i.e. cosines. Ties are broken by ascending candidate id so
every ordering is total and retrieval metrics are deterministic.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import BimodalPair, Mode
from .model import SearchModel

INDEX_MAGIC = b"CSIX"
INDEX_FORMAT_VERSION = 1


class VectorIndexError(Exception):
    """Raised for invalid index construction or queries."""


class IndexFormatError(VectorIndexError):
    """Raised when an index file cannot be read back."""


@dataclass
class VectorIndex:
    """Immutable id-keyed matrix of unit-norm code embeddings."""

    ids: tuple[str, ...]
    matrix: np.ndarray  # [count, dim] float32, unit rows
    model_hash: str
    corpus_hash: str
    build_seconds: float = 0.0
    _id_array: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise VectorIndexError("embedding matrix must be 2-dimensional")
        if len(self.ids) != self.matrix.shape[0]:
            raise VectorIndexError("id count does not match matrix rows")
        if len(set(self.ids)) != len(self.ids):
            raise VectorIndexError("candidate ids must be unique")
        if self.matrix.dtype != np.float32:
            self.matrix = self.matrix.astype(np.float32)
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        if self.matrix.shape[0] and not np.allclose(norms, 1.0, atol=1e-5):
            raise VectorIndexError("index rows must be unit-norm (tolerance 1e-5)")
        self.matrix.setflags(write=False)
        self._id_array = np.asarray(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, candidate_id: str) -> bool:
        return candidate_id in self._id_set()

    def _id_set(self) -> frozenset:
        if not hasattr(self, "_ids_frozen"):
            self._ids_frozen = frozenset(self.ids)
        return self._ids_frozen

    def check_provenance(self, model: SearchModel) -> bool:
        """Warn (not fail) when the index was built by a different model."""
        if model.config_hash() != self.model_hash:
            warnings.warn(
                "index provenance mismatch: built with model config "
                f"{self.model_hash[:12]}.., queried with {model.config_hash()[:12]}..",
                stacklevel=2,
            )
            return False
        return True


def build_index(
    model: SearchModel,
    candidates: Sequence[BimodalPair],
    batch_size: int = 64,
    corpus_hash: str = "",
) -> VectorIndex:
    """Encode every candidate's code in fast PL mode, batched.

    Candidates with empty token sequences are skipped with a warning. The
    build wall-clock is recorded on the index, separate from query-time cost.
    """
    if not candidates:
        raise VectorIndexError("cannot build an index over zero candidates")
    usable: list[BimodalPair] = []
    skipped: list[str] = []
    for pair in candidates:
        if len(pair.pl_tokens) == 0:
            skipped.append(pair.id)
        else:
            usable.append(pair)
    if skipped:
        warnings.warn(
            f"skipped {len(skipped)} candidates with empty code tokens: {skipped[:5]}",
            stacklevel=2,
        )
    if not usable:
        raise VectorIndexError("no candidates survived tokenization")
    start = time.perf_counter()
    rows = []
    for lo in range(0, len(usable), batch_size):
        chunk = usable[lo : lo + batch_size]
        emb = model.encode_batch([p.pl_tokens for p in chunk], Mode.PL)
        rows.append(emb.to(dtype=torch.float32).numpy())
    matrix = np.concatenate(rows, axis=0).astype(np.float32)
    build_seconds = time.perf_counter() - start
    return VectorIndex(
        ids=tuple(p.id for p in usable),
        matrix=matrix,
        model_hash=model.config_hash(),
        corpus_hash=corpus_hash,
        build_seconds=build_seconds,
    )


def top_k(index: VectorIndex, query_embedding: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-K by descending inner product, ties by ascending id.

    Returns min(k, |C|) (id, score) pairs.
    """
    if k < 1:
        raise VectorIndexError("k must be >= 1")
    query = np.asarray(query_embedding, dtype=np.float32).reshape(-1)
    if query.shape[0] != index.dim:
        raise VectorIndexError(
            f"query dimension {query.shape[0]} does not match index dimension {index.dim}"
        )
    scores = index.matrix @ query
    # lexsort: last key is primary -> descending score, then ascending id
    order = np.lexsort((index._id_array, -scores))
    take = min(k, len(index))
    return [(str(index._id_array[i]), float(scores[i])) for i in order[:take]]


def save_index(index: VectorIndex, path: str | Path) -> None:
    """CSIX format: magic, u32 version, u32 dim, u64 count, provenance
    hashes, length-prefixed UTF-8 id table, then row-major float32 LE."""
    with open(path, "wb") as out:
        out.write(INDEX_MAGIC)
        out.write(struct.pack("<I", INDEX_FORMAT_VERSION))
        out.write(struct.pack("<I", index.dim))
        out.write(struct.pack("<Q", len(index)))
        for hash_value in (index.model_hash, index.corpus_hash):
            encoded = hash_value.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
        for candidate_id in index.ids:
            encoded = candidate_id.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
        out.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())


def load_index(path: str | Path) -> VectorIndex:
    raw = Path(path).read_bytes()
    offset = 0

    def read(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise IndexFormatError(f"truncated index file while reading {what}")
        data = raw[offset : offset + n]
        offset += n
        return data

    if read(4, "magic") != INDEX_MAGIC:
        raise IndexFormatError(f"not a {INDEX_MAGIC.decode()} index file: bad magic bytes")
    (version,) = struct.unpack("<I", read(4, "version"))
    if version != INDEX_FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version}")
    (dim,) = struct.unpack("<I", read(4, "dim"))
    (count,) = struct.unpack("<Q", read(8, "count"))
    hashes = []
    for what in ("model hash", "corpus hash"):
        (length,) = struct.unpack("<I", read(4, f"{what} length"))
        hashes.append(read(length, what).decode("utf-8"))
    ids = []
    for i in range(count):
        (length,) = struct.unpack("<I", read(4, f"id {i} length"))
        ids.append(read(length, f"id {i}").decode("utf-8"))
    data = read(4 * dim * count, "embedding rows")
    if offset != len(raw):
        raise IndexFormatError("trailing bytes after embedding rows")
    matrix = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
    return VectorIndex(
        ids=tuple(ids), matrix=matrix, model_hash=hashes[0], corpus_hash=hashes[1]
    )
