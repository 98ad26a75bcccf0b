"""Embedding persistence and exact top-K cosine retrieval.

Embeddings live in ``.nrec`` files (magic ``NREC``): a row-major float32
matrix bound to one string id per row.  Caption rows use the id convention
``"<article_id>#<caption_idx>"`` so that retrieval can deduplicate hits at
the article level.  All vectors are stored pre-normalized; dot products are
accumulated in float64.
"""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import xxhash

MAGIC_EMBEDDINGS = b"NREC"
FORMAT_VERSION = 1

# Stored rows must be unit length within this tolerance; worse rows are
# renormalized on load with a warning.
NORM_TOLERANCE = 1e-4


class FormatError(ValueError):
    """Raised when a binary artifact does not match its declared format.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def checksum64(data: bytes) -> int:
    """64-bit content checksum used by every binary artifact (XXH64, seed 0)."""
    return xxhash.xxh64(data, seed=0).intdigest()


@dataclass
class EmbeddingMatrix:
    """Row-major float32 matrix with one entity id per row."""

    ids: list[str]
    data: np.ndarray  # shape (rows, dim), float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"embedding data must be 2-D, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids for {self.data.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in embedding matrix")
        self._row_index: dict[str, int] = {i: r for r, i in enumerate(self.ids)}

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, entity_id: str) -> np.ndarray:
        """Vector for one id; KeyError names the id if absent."""
        try:
            return self.data[self._row_index[entity_id]]
        except KeyError:
            raise KeyError(f"no embedding for id {entity_id!r}") from None

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._row_index


@dataclass(frozen=True)
class SearchHit:
    article_id: str
    caption_idx: int
    score: float


def split_row_id(row_id: str) -> tuple[str, int]:
    """Split ``"article#idx"`` row ids; ids without ``#`` map to caption 0."""
    head, sep, tail = row_id.rpartition("#")
    if sep and tail.isdigit():
        return head, int(tail)
    return row_id, 0


def normalize_rows(data: np.ndarray) -> np.ndarray:
    """L2-normalize rows (float64 arithmetic, float32 result)."""
    wide = data.astype(np.float64)
    norms = np.sqrt((wide * wide).sum(axis=1, keepdims=True))
    norms[norms == 0.0] = 1.0
    return (wide / norms).astype(np.float32)


def save_matrix(matrix: EmbeddingMatrix, path) -> None:
    """Write the matrix in the ``NREC`` binary format. Byte-exact round-trip."""
    _write_artifact(path, MAGIC_EMBEDDINGS, _encode_matrix_body(matrix))


def _encode_matrix_body(matrix: EmbeddingMatrix) -> bytes:
    parts = [struct.pack("<IQ", matrix.dim, matrix.rows)]
    parts.append(matrix.data.astype("<f4").tobytes())
    for entity_id in matrix.ids:
        raw = entity_id.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _write_artifact(path, magic: bytes, body: bytes) -> None:
    head = magic + struct.pack("<H", FORMAT_VERSION)
    blob = head + body
    blob += struct.pack("<Q", checksum64(blob))
    with open(path, "wb") as fh:
        fh.write(blob)


def _check_head(blob: bytes, magic: bytes) -> None:
    if len(blob) < 14:
        raise FormatError(f"file truncated: {len(blob)} bytes", offset=len(blob))
    if blob[:4] != magic:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {magic!r}", offset=0)
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)


def _check_checksum(blob: bytes) -> None:
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    actual = checksum64(blob[:-8])
    if stored != actual:
        raise FormatError(
            f"checksum mismatch: stored {stored:#018x}, computed {actual:#018x}",
            offset=len(blob) - 8,
        )


def read_artifact(path, magic: bytes) -> bytes:
    """Validate magic/version/checksum of a binary artifact; return its body."""
    with open(path, "rb") as fh:
        blob = fh.read()
    _check_head(blob, magic)
    _check_checksum(blob)
    return blob[6:-8]


def load_matrix(path) -> EmbeddingMatrix:
    """Load and validate an ``NREC`` file.

    Validation is staged so errors name the actual problem: magic and
    version first, then structure (a truncated payload reports the row
    shortfall), then the trailing checksum.  Rows whose L2 norm is off by
    more than ``NORM_TOLERANCE`` are renormalized with a warning.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    _check_head(blob, MAGIC_EMBEDDINGS)
    body = blob[6:-8]
    offset = 6  # absolute file offset of the body, for error messages
    if len(body) < 12:
        raise FormatError("header truncated", offset=offset + len(body))
    dim, rows = struct.unpack_from("<IQ", body, 0)
    pos = 12
    need = rows * dim * 4
    if len(body) - pos < need:
        have_rows = (len(body) - pos) // (dim * 4) if dim else 0
        raise FormatError(
            f"declared {rows} rows but payload holds at most {have_rows}",
            offset=offset + len(body),
        )
    data = np.frombuffer(body, dtype="<f4", count=rows * dim, offset=pos)
    data = data.reshape(rows, dim).copy()
    pos += need
    ids = []
    for r in range(rows):
        if len(body) - pos < 4:
            raise FormatError(
                f"id block truncated: {r} of {rows} ids present",
                offset=offset + pos,
            )
        (length,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if len(body) - pos < length:
            raise FormatError(
                f"id {r} truncated: declared {length} bytes", offset=offset + pos
            )
        ids.append(body[pos : pos + length].decode("utf-8"))
        pos += length
    if pos != len(body):
        raise FormatError(
            f"{len(body) - pos} trailing bytes after id block", offset=offset + pos
        )
    _check_checksum(blob)

    if rows:
        norms = np.linalg.norm(data.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > NORM_TOLERANCE
        if bad.any():
            warnings.warn(
                f"renormalized {int(bad.sum())} rows with out-of-tolerance norms",
                stacklevel=2,
            )
            data[bad] = normalize_rows(data[bad])
    return EmbeddingMatrix(ids=ids, data=data)


# Rows are scanned in fixed-size blocks: float32 storage stays compact while
# each block's dot products accumulate in float64.
_BLOCK_ROWS = 8192


class _ArticleIndex:
    """Row -> article grouping, precomputed once per matrix."""

    def __init__(self, matrix: EmbeddingMatrix):
        parsed = [split_row_id(row_id) for row_id in matrix.ids]
        self.article_ids = sorted({aid for aid, _ in parsed})
        code_of = {aid: c for c, aid in enumerate(self.article_ids)}
        self.row_code = np.array([code_of[aid] for aid, _ in parsed], dtype=np.int64)
        self.row_caption = np.array([cidx for _, cidx in parsed], dtype=np.int64)
        self.rows_of: list[np.ndarray] = [
            np.empty(0, dtype=np.int64) for _ in self.article_ids
        ]
        order = np.argsort(self.row_code, kind="stable")
        bounds = np.searchsorted(self.row_code[order], np.arange(len(self.article_ids) + 1))
        for c in range(len(self.article_ids)):
            self.rows_of[c] = order[bounds[c] : bounds[c + 1]]


def _article_index(matrix: EmbeddingMatrix) -> _ArticleIndex:
    index = getattr(matrix, "_article_index_cache", None)
    if index is None:
        index = _ArticleIndex(matrix)
        matrix._article_index_cache = index
    return index


def row_scores(query: np.ndarray, matrix: EmbeddingMatrix) -> np.ndarray:
    """Cosine of the query against every row (float64, blocked accumulation)."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != matrix.dim:
        raise ValueError(f"query dim {query.shape[0]} != matrix dim {matrix.dim}")
    scores = np.empty(matrix.rows, dtype=np.float64)
    for start in range(0, matrix.rows, _BLOCK_ROWS):
        block = matrix.data[start : start + _BLOCK_ROWS].astype(np.float64)
        scores[start : start + block.shape[0]] = block @ query
    return scores


def top_k(query: np.ndarray, matrix: EmbeddingMatrix, k: int) -> list[SearchHit]:
    """Exact top-K cosine retrieval with article-level deduplication.

    Returns ``min(k, #distinct articles)`` hits in descending score order.
    When several caption rows of one article match, the article scores the
    max over its captions and appears once.  Ties break by ascending
    article id, then caption index.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if matrix.rows == 0:
        return []
    scores = row_scores(query, matrix)
    index = _article_index(matrix)
    n_articles = len(index.article_ids)
    art_max = np.full(n_articles, -np.inf)
    np.maximum.at(art_max, index.row_code, scores)
    # Stable sort on -score; codes are in ascending article-id order, so ties
    # resolve by ascending article id.
    order = np.argsort(-art_max, kind="stable")[: min(k, n_articles)]
    hits = []
    for code in order:
        rows = index.rows_of[code]
        at_max = rows[scores[rows] == art_max[code]]
        caption_idx = int(index.row_caption[at_max].min())
        hits.append(
            SearchHit(
                article_id=index.article_ids[code],
                caption_idx=caption_idx,
                score=float(art_max[code]),
            )
        )
    return hits


def batch_top_k(
    queries: EmbeddingMatrix, matrix: EmbeddingMatrix, k: int
) -> dict[str, list[SearchHit]]:
    """top_k for every row of ``queries``, keyed by query id."""
    return {qid: top_k(queries.data[i], matrix, k) for i, qid in enumerate(queries.ids)}


def fake_embedding(payload: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-random unit vector derived from a payload string.

    The scheme is fixed so independent tools can emit bit-identical vectors:
    SHA-256 of ``"{seed}:{payload}"`` keys a counter-mode byte stream (the
    key followed by a little-endian u32 counter, hashed per block); each
    4-byte little-endian word w maps to w / 2^31 - 1 in [-1, 1); the vector
    is L2-normalized with left-to-right float64 accumulation and rounded to
    float32.
    """
    key = hashlib.sha256(f"{seed}:{payload}".encode("utf-8")).digest()
    raw = bytearray()
    counter = 0
    while len(raw) < dim * 4:
        raw += hashlib.sha256(key + struct.pack("<I", counter)).digest()
        counter += 1
    words = struct.unpack(f"<{dim}I", bytes(raw[: dim * 4]))
    values = [(w / 2147483648.0) - 1.0 for w in words]
    norm = math.sqrt(sum(v * v for v in values))
    if norm == 0.0:
        values[0] = 1.0
        norm = 1.0
    return np.array([v / norm for v in values], dtype=np.float32)


def fake_matrix(entries: list[tuple[str, str]], dim: int, seed: int = 0) -> EmbeddingMatrix:
    """Fake embeddings for (id, payload) pairs; offline stand-in for a real encoder."""
    data = np.stack([fake_embedding(payload, dim, seed) for _, payload in entries])
    return EmbeddingMatrix(ids=[i for i, _ in entries], data=data)
