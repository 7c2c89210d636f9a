"""Embedded-vector knowledge base: storage, cosine retrieval, watermark injection.

Embeddings are plain numpy ``float32`` arrays validated by :func:`as_embedding`;
similarity is accumulated in float64 so large sums stay stable. A
:class:`KnowledgeBase` is immutable once built — injection returns a new base —
which makes concurrent read-only retrieval safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BackendError,
    ConflictError,
    DegenerateInputError,
    DimensionMismatchError,
    EmptyKnowledgeBaseError,
    InvalidIndexError,
    InvalidInputError,
    ParseError,
)

INDEX_FORMAT_VERSION = 1


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` and return the canonical float32 embedding array.

    Rejects empty, non-finite, and all-zero vectors; enforces ``dim`` when
    given. Zero vectors are refused here, at ingest, so retrieval never has
    to handle them.
    """
    vec = np.asarray(values, dtype=np.float32).reshape(-1)
    if vec.size == 0:
        raise InvalidInputError("embedding must have at least one element")
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("embedding contains non-finite values")
    if dim is not None and vec.size != dim:
        raise DimensionMismatchError(f"embedding has dim {vec.size}, expected {dim}")
    if not vec.any():
        raise DegenerateInputError("zero vector is not a valid embedding")
    return vec


def cosine_similarity(a, b) -> float:
    """Cosine similarity ``dot(a, b) / (|a| * |b|)``, accumulated in float64."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.size != bv.size:
        raise DimensionMismatchError(f"dims differ: {av.size} vs {bv.size}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vectors")
    return float(np.dot(av, bv) / (na * nb))


@dataclass(eq=False)
class ImageRecord:
    """One knowledge-base entry."""

    id: str
    asset_ref: str
    embedding: np.ndarray
    watermark_id: str | None = None


@dataclass(frozen=True)
class RetrievalResult:
    """Top-k retrieval outcome: (record id, score) pairs, best first."""

    query_id: str
    entries: tuple[tuple[str, float], ...]
    k: int


class KnowledgeBase:
    """Immutable collection of :class:`ImageRecord` with cosine top-k retrieval.

    Ties in similarity are broken by ascending record id so audits replay
    deterministically. Records keep their insertion order; injection appends.
    """

    def __init__(self, dim: int, records: Iterable[ImageRecord] = ()):
        if dim < 1:
            raise InvalidInputError("dim must be a positive integer")
        self.dim = int(dim)
        validated: list[ImageRecord] = []
        by_id: dict[str, int] = {}
        for rec in records:
            if rec.id in by_id:
                raise ConflictError(f"duplicate record id {rec.id!r}")
            vec = as_embedding(rec.embedding, dim=self.dim)
            by_id[rec.id] = len(validated)
            validated.append(ImageRecord(rec.id, rec.asset_ref, vec, rec.watermark_id))
        self._records = tuple(validated)
        self._by_id = by_id
        if validated:
            self._matrix = np.stack([r.embedding for r in validated]).astype(np.float64)
            self._norms = np.linalg.norm(self._matrix, axis=1)
            # rank of each record's id in ascending id order, for tie-breaking
            ids = np.asarray([r.id for r in validated])
            self._id_rank = np.empty(len(validated), dtype=np.int64)
            self._id_rank[np.argsort(ids)] = np.arange(len(validated))
        else:
            self._matrix = np.zeros((0, self.dim), dtype=np.float64)
            self._norms = np.zeros(0, dtype=np.float64)
            self._id_rank = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        if self.dim != other.dim or len(self) != len(other):
            return False
        for a, b in zip(self._records, other._records):
            if (a.id, a.asset_ref, a.watermark_id) != (b.id, b.asset_ref, b.watermark_id):
                return False
            if not np.array_equal(a.embedding, b.embedding):
                return False
        return True

    @property
    def records(self) -> tuple[ImageRecord, ...]:
        return self._records

    def get(self, record_id: str) -> ImageRecord:
        try:
            return self._records[self._by_id[record_id]]
        except KeyError:
            raise KeyError(f"no record with id {record_id!r}") from None

    def watermark_ids(self) -> set[str]:
        return {r.watermark_id for r in self._records if r.watermark_id is not None}

    def extended(self, new_records: Iterable[ImageRecord]) -> "KnowledgeBase":
        """New base with ``new_records`` appended; ``self`` is untouched."""
        return KnowledgeBase(self.dim, (*self._records, *new_records))

    def retrieve(self, query, k: int, query_id: str = "") -> RetrievalResult:
        """The ``k`` most cosine-similar records, ties broken by ascending id."""
        if len(self._records) == 0:
            raise EmptyKnowledgeBaseError("cannot retrieve from an empty knowledge base")
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.size != self.dim:
            raise DimensionMismatchError(f"query dim {q.size} != kb dim {self.dim}")
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise DegenerateInputError("zero query vector")
        sims = (self._matrix @ q) / (self._norms * qn)
        np.clip(sims, -1.0, 1.0, out=sims)
        order = np.lexsort((self._id_rank, -sims))[:k]
        entries = tuple((self._records[i].id, float(sims[i])) for i in order)
        return RetrievalResult(query_id=query_id, entries=entries, k=int(k))


def retrieve_top_k(kb: KnowledgeBase, query, k: int, query_id: str = "") -> RetrievalResult:
    return kb.retrieve(query, k, query_id=query_id)


def rank_of(target_id: str, result: RetrievalResult, k: int) -> int:
    """1-based position of ``target_id`` in ``result``; ``2*k`` when absent.

    Absence is the penalty case of the rank metric, not an error.
    """
    for pos, (rid, _score) in enumerate(result.entries, start=1):
        if rid == target_id:
            return pos
    return 2 * k


def inject_watermarks(kb: KnowledgeBase, specs: Sequence, embedder) -> KnowledgeBase:
    """Embed each spec's asset and append it as a watermark record.

    Pre-existing records are neither mutated nor reordered. Embedding is done
    per spec so a backend failure can name the spec that caused it.
    """
    specs = list(specs)
    seen: set[str] = set()
    for spec in specs:
        if spec.id in seen:
            raise ConflictError(f"duplicate watermark id {spec.id!r} in injection batch")
        if spec.id in kb:
            raise ConflictError(f"watermark id {spec.id!r} already present in knowledge base")
        seen.add(spec.id)
    if not specs:
        return kb
    from .backends.embedding import EmbedRequest  # local import avoids cycle

    new_records = []
    for spec in specs:
        try:
            vec = embedder.embed(EmbedRequest("image", (spec.asset_ref,)))[0]
        except Exception as exc:
            raise BackendError(f"embedding watermark {spec.id!r} failed: {exc}") from exc
        new_records.append(
            ImageRecord(id=spec.id, asset_ref=spec.asset_ref, embedding=vec, watermark_id=spec.id)
        )
    return kb.extended(new_records)


def save_index(kb: KnowledgeBase, path) -> None:
    """Write the line-delimited index: a header line, then one record per line.

    Floats are serialized with full round-trip precision, so
    ``load_index(save_index(kb))`` reproduces every embedding bit-exactly.
    """
    from pathlib import Path

    header = {"version": INDEX_FORMAT_VERSION, "dim": kb.dim, "count": len(kb)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in kb.records:
            line = {
                "id": rec.id,
                "asset_ref": rec.asset_ref,
                "watermark_id": rec.watermark_id,
                "embedding": [float(x) for x in rec.embedding],
            }
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def load_index(path) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("index file is empty (missing header)", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    for key in ("version", "dim", "count"):
        if key not in header:
            raise ParseError(f"header missing {key!r}", line=1)
    if header["version"] != INDEX_FORMAT_VERSION:
        raise InvalidIndexError(f"unsupported index version {header['version']!r}")
    dim = int(header["dim"])
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad record: {exc}", line=lineno) from exc
        try:
            rid = obj["id"]
            emb = obj["embedding"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"record missing field: {exc}", line=lineno) from exc
        if len(emb) != dim:
            raise InvalidIndexError(
                f"record {rid!r} has dim {len(emb)}, index header says {dim}"
            )
        records.append(
            ImageRecord(
                id=rid,
                asset_ref=obj.get("asset_ref", ""),
                embedding=np.asarray(emb, dtype=np.float32),
                watermark_id=obj.get("watermark_id"),
            )
        )
    if len(records) != int(header["count"]):
        raise InvalidIndexError(
            f"header count {header['count']} != {len(records)} records in file"
        )
    return KnowledgeBase(dim, records)
