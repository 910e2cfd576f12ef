"""Vector index over tools: embed name+description, serve exact top-k queries.

The index is an exact scan, not an approximate structure: tens of thousands of
entries rank in milliseconds and exactness keeps query results reproducible.
Encoders are pluggable; a deterministic hashed bag-of-words encoder ships as
the dependency-free reference backend, with remote embedding endpoints
available through the gateway.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .jsonl import atomic_write_text, dumps_line, read_jsonl
from .registry import Library, ToolSpec


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    """A zero-norm vector reached a similarity computation."""


class EncoderFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector; all components finite."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class Encoder(Protocol):
    """Deterministic text encoder: same id and text always give the same vector."""

    id: str
    dim: int

    def encode(self, text: str) -> EmbeddingVector: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashedBagOfWordsEncoder:
    """Reference encoder: token counts hashed into ``dim`` buckets, l2-normalized.

    Deterministic across processes (bucket assignment uses sha1, not the
    salted builtin hash). Texts with no tokens encode to the zero vector,
    which downstream similarity code rejects loudly.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.id = f"hashed-bow-{dim}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha1(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def encode(self, text: str) -> EmbeddingVector:
        counts = [0.0] * self.dim
        for token in _TOKEN_RE.findall(text.lower()):
            counts[self._bucket(token)] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        if norm > 0.0:
            counts = [c / norm for c in counts]
        return EmbeddingVector(tuple(counts))


def embed_tool(spec: ToolSpec, encoder: Encoder) -> EmbeddingVector:
    """Encode the concatenated tool name and description."""
    try:
        vector = encoder.encode(f"{spec.name} {spec.description}")
    except Exception as exc:
        raise EncoderFailure(f"encoder {encoder.id!r} failed on tool {spec.name!r}: {exc}") from exc
    if vector.dim != encoder.dim:
        raise EncoderFailure(
            f"encoder {encoder.id!r} returned dim {vector.dim}, declared {encoder.dim}"
        )
    return vector


class VectorIndex:
    """Immutable name->vector index with exact cosine top-k."""

    def __init__(self, entries: Sequence[tuple[str, EmbeddingVector]], encoder_id: str):
        if not entries:
            raise ValueError("index needs at least one entry")
        names = [name for name, _ in entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tool names in index")
        dims = {vec.dim for _, vec in entries}
        if len(dims) != 1:
            raise ValueError(f"inconsistent dimensions in index: {sorted(dims)}")
        self.dim = dims.pop()
        self.encoder_id = encoder_id
        # Canonical name order makes the index independent of build order.
        ordered = sorted(entries, key=lambda e: e[0])
        self.names: list[str] = [name for name, _ in ordered]
        matrix = np.stack([vec.as_array() for _, vec in ordered])
        norms = np.linalg.norm(matrix, axis=1)
        zero = [self.names[i] for i in np.flatnonzero(norms == 0.0)]
        if zero:
            raise ZeroVector(f"zero-norm embeddings for tools: {zero}")
        self._unit_matrix = matrix / norms[:, None]

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def build(cls, library: Library, encoder: Encoder) -> "VectorIndex":
        entries = [(spec.name, embed_tool(spec, encoder)) for spec in library.tools]
        return cls(entries, encoder_id=encoder.id)

    def top_k(self, query: EmbeddingVector, k: int) -> list[tuple[str, float]]:
        """Top ``min(k, len(index))`` entries by cosine similarity.

        Ties break by ascending tool name, so rankings are prefix-stable and
        fully deterministic.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if query.dim != self.dim:
            raise DimensionMismatch(f"query dim {query.dim} != index dim {self.dim}")
        q = query.as_array()
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise ZeroVector("zero-norm query vector")
        # Row-local reduction instead of BLAS GEMV: identical entry vectors
        # must produce bit-identical scores so the name tie-break is exact.
        scores = (self._unit_matrix * (q / norm)).sum(axis=1)
        ranked = sorted(zip(self.names, scores.tolist()), key=lambda e: (-e[1], e[0]))
        return ranked[: min(k, len(ranked))]

    def save(self, path: str | Path) -> None:
        lines = [dumps_line({"encoder_id": self.encoder_id, "dim": self.dim})]
        for name, row in zip(self.names, self._unit_matrix):
            lines.append(dumps_line({"name": name, "values": row.tolist()}))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path, expected_encoder_id: str | None = None) -> "VectorIndex":
        rows = list(read_jsonl(path))
        if not rows or "encoder_id" not in rows[0]:
            raise ValueError(f"{path}: missing index header line")
        header = rows[0]
        if expected_encoder_id is not None and header["encoder_id"] != expected_encoder_id:
            raise ValueError(
                f"{path}: index built with encoder {header['encoder_id']!r}, "
                f"requested {expected_encoder_id!r}"
            )
        entries = [(r["name"], EmbeddingVector(tuple(r["values"]))) for r in rows[1:]]
        index = cls(entries, encoder_id=header["encoder_id"])
        if "dim" in header and header["dim"] != index.dim:
            raise ValueError(f"{path}: header dim {header['dim']} != entry dim {index.dim}")
        return index


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} != {b.dim}")
    va, vb = a.as_array(), b.as_array()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of zero-norm vector")
    return float(va @ vb / (na * nb))


def build_entries(
    specs: Iterable[ToolSpec], encoder: Encoder
) -> list[tuple[str, EmbeddingVector]]:
    return [(spec.name, embed_tool(spec, encoder)) for spec in specs]
