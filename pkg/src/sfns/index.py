"""Inverted index over quantized sparse document vectors with exact top-k.

Document weights are stored as binary16 bit patterns (the only lossy step in
the engine); query weights stay full precision. Search is term-at-a-time with
float64 accumulation in ascending token order, which makes scores bit-identical
to the document-at-a-time brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import _binio
from .sparse import (
    SparseVector,
    ValidationError,
    VocabStats,
    dequantize_weights,
    dot_score,
    quantize_weights,
)

_MAGIC = b"SFNS"
_VERSION = 1


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class DocEntry:
    ext_id: str
    text: str
    payload: str | None = None


@dataclass(frozen=True)
class SearchHit:
    # External string id from index searches; integer position from the
    # linear-scan fuzzy matcher, which has no doc table.
    doc_id: str | int
    score: float
    rank: int


class InvertedIndex:
    """token_id -> (doc_id array, binary16 weight bits), plus a doc table.

    Internal doc ids are assigned by ingestion order (0..N-1); callers'
    external string ids live in the doc table.
    """

    def __init__(
        self,
        postings: dict[int, tuple[np.ndarray, np.ndarray]],
        doc_table: list[DocEntry],
        stats: VocabStats,
    ):
        self.postings = postings
        self.doc_table = doc_table
        self.stats = stats
        self._ext_to_internal = {e.ext_id: i for i, e in enumerate(doc_table)}

    # -- introspection -----------------------------------------------------

    @property
    def doc_count(self) -> int:
        return len(self.doc_table)

    @property
    def token_count(self) -> int:
        return len(self.postings)

    @property
    def posting_count(self) -> int:
        return sum(int(ids.shape[0]) for ids, _ in self.postings.values())

    @property
    def avg_nonzero_dims(self) -> float:
        if not self.doc_table:
            return 0.0
        return self.posting_count / self.doc_count

    def external_id(self, doc_id: int) -> str:
        return self.doc_table[doc_id].ext_id

    def internal_id(self, ext_id: str) -> int | None:
        return self._ext_to_internal.get(ext_id)

    def iter_doc_vectors(self) -> list[SparseVector]:
        """Reconstruct every document's dequantized vector from the postings."""
        per_doc_ids: list[list[int]] = [[] for _ in self.doc_table]
        per_doc_w: list[list[float]] = [[] for _ in self.doc_table]
        for token in sorted(self.postings):
            ids, bits = self.postings[token]
            weights = dequantize_weights(bits)
            for d, w in zip(ids.tolist(), weights.tolist()):
                per_doc_ids[d].append(token)
                per_doc_w[d].append(w)
        return [
            SparseVector._raw(np.array(i, dtype=np.int64), np.array(w, dtype=np.float64))
            for i, w in zip(per_doc_ids, per_doc_w)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        if self.doc_table != other.doc_table or self.stats != other.stats:
            return False
        if set(self.postings) != set(other.postings):
            return False
        return all(
            np.array_equal(self.postings[t][0], other.postings[t][0])
            and np.array_equal(self.postings[t][1], other.postings[t][1])
            for t in self.postings
        )

    # -- search ------------------------------------------------------------

    def search(self, query: SparseVector, k: int) -> list[SearchHit]:
        """Exact top-k by dot product; ties break on ascending doc id.

        Zero-score documents never appear, so fewer than k hits is normal.
        """
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        if not query or not self.doc_table:
            return []
        scores = np.zeros(self.doc_count, dtype=np.float64)
        # Ascending token order keeps per-doc accumulation order fixed.
        for token, qw in query.items():
            post = self.postings.get(token)
            if post is None:
                continue
            ids, bits = post
            scores[ids] += qw * dequantize_weights(bits)
        order = np.lexsort((np.arange(self.doc_count), -scores))
        hits: list[SearchHit] = []
        for d in order.tolist():
            if len(hits) >= k or scores[d] <= 0.0:
                break
            hits.append(
                SearchHit(
                    doc_id=self.doc_table[d].ext_id,
                    score=float(scores[d]),
                    rank=len(hits) + 1,
                )
            )
        return hits

    # -- persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        body = bytearray()
        body += _MAGIC
        body += _binio.pack_u16(_VERSION)

        doc_sec = bytearray(_binio.pack_u64(len(self.doc_table)))
        for entry in self.doc_table:
            doc_sec += _binio.pack_utf8(entry.ext_id)
            doc_sec += _binio.pack_utf8(entry.text)
            if entry.payload is None:
                doc_sec += _binio.pack_u32(0xFFFFFFFF)
            else:
                doc_sec += _binio.pack_utf8(entry.payload)

        post_sec = bytearray(_binio.pack_u64(len(self.postings)))
        for token in sorted(self.postings):
            ids, bits = self.postings[token]
            post_sec += _binio.pack_u64(token)
            post_sec += _binio.pack_u64(int(ids.shape[0]))
            post_sec += ids.astype("<u8").tobytes()
            post_sec += bits.astype("<u2").tobytes()

        stats_sec = bytearray(_binio.pack_u64(self.stats.doc_count))
        df = self.stats.doc_freq
        stats_sec += _binio.pack_u64(len(df))
        for token in sorted(df):
            stats_sec += _binio.pack_u64(token) + _binio.pack_u64(df[token])

        for section in (doc_sec, post_sec, stats_sec):
            body += _binio.pack_u64(len(section))
            body += section
        _binio.write_checksummed(path, bytes(body))

    @classmethod
    def load(cls, path: str) -> "InvertedIndex":
        reader = _binio.read_checksummed(path, _MAGIC)
        version = reader.u16()
        if version != _VERSION:
            raise _binio.VersionError(f"{path}: format version {version}, expected {_VERSION}")

        sections = []
        for _ in range(3):
            length = reader.u64()
            sections.append(_binio.ByteReader(reader.take(length)))
        if reader.remaining():
            raise _binio.TruncatedError(f"{path}: {reader.remaining()} trailing bytes")

        doc_r, post_r, stats_r = sections
        doc_table = []
        for _ in range(doc_r.u64()):
            ext_id = doc_r.utf8()
            text = doc_r.utf8()
            plen = doc_r.u32()
            payload = None if plen == 0xFFFFFFFF else doc_r.take(plen).decode("utf-8")
            doc_table.append(DocEntry(ext_id, text, payload))

        postings: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for _ in range(post_r.u64()):
            token = post_r.u64()
            n = post_r.u64()
            ids = np.frombuffer(post_r.take(8 * n), dtype="<u8").astype(np.int64)
            bits = np.frombuffer(post_r.take(2 * n), dtype="<u2").astype(np.uint16)
            postings[token] = (ids, bits)

        doc_count = stats_r.u64()
        df = {}
        for _ in range(stats_r.u64()):
            token = stats_r.u64()
            df[token] = stats_r.u64()
        stats = VocabStats(doc_count, df)
        return cls(postings, doc_table, stats)


def build(docs: Iterable[tuple]) -> InvertedIndex:
    """Build an index from (ext_id, text, SparseVector[, payload]) records.

    Weights are quantized to binary16 here; entries whose quantized weight
    underflows to zero are dropped so scores stay strictly positive. Duplicate
    external ids are a build error.
    """
    doc_table: list[DocEntry] = []
    token_docs: dict[int, list[int]] = {}
    token_weights: dict[int, list[float]] = {}
    seen: set[str] = set()
    for record in docs:
        if len(record) == 3:
            ext_id, text, vec = record
            payload = None
        elif len(record) == 4:
            ext_id, text, vec, payload = record
        else:
            raise BuildError(f"expected 3- or 4-field doc records, got {len(record)} fields")
        ext_id = str(ext_id)
        if ext_id in seen:
            raise BuildError(f"duplicate doc_id {ext_id!r}")
        seen.add(ext_id)
        if not isinstance(vec, SparseVector):
            raise BuildError(f"doc {ext_id!r}: vector must be a SparseVector")
        internal = len(doc_table)
        doc_table.append(DocEntry(ext_id, str(text), payload))
        for token, weight in vec.items():
            token_docs.setdefault(token, []).append(internal)
            token_weights.setdefault(token, []).append(weight)

    postings: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    df: dict[int, int] = {}
    for token, ids in token_docs.items():
        bits = quantize_weights(np.array(token_weights[token], dtype=np.float64))
        keep = bits != 0  # quantization underflow to zero would score nothing
        ids_arr = np.array(ids, dtype=np.int64)[keep]
        bits_arr = bits[keep]
        if ids_arr.shape[0] == 0:
            continue
        postings[token] = (ids_arr, bits_arr)
        df[token] = int(ids_arr.shape[0])
    stats = VocabStats(len(doc_table), df)
    return InvertedIndex(postings, doc_table, stats)


def brute_force_search(index: InvertedIndex, query: SparseVector, k: int) -> list[SearchHit]:
    """Document-at-a-time reference scorer, independent of posting traversal."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    scored = [
        (dot_score(query, vec), doc_id)
        for doc_id, vec in enumerate(index.iter_doc_vectors())
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    hits = []
    for score, doc_id in scored:
        if len(hits) >= k or score <= 0.0:
            break
        hits.append(
            SearchHit(
                doc_id=index.doc_table[doc_id].ext_id, score=score, rank=len(hits) + 1
            )
        )
    return hits
