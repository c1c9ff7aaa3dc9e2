"""Token encoders: a trainable hashed character-3-gram table for desk-scale
experiments, and a loader/saver for externally computed embeddings.

The hashed backend maps each token string to the sum of table rows selected by
hashing the 3-grams of the boundary-padded token ("^text$") with FNV-1a 64.
The hash is pinned exactly so that saved models stay portable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .corpus import Document, Token, TokenizedDocument

EMB_FORMAT = "spantag-emb"
EMB_VERSION = 1

DEFAULT_TABLE_SIZE = 65536
DEFAULT_DIM = 32
DEFAULT_MAX_CONTEXT = 8192

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV64_PRIME) & _MASK64
    return h


def token_trigrams(text: str) -> list[str]:
    """Character 3-grams of the boundary-padded token string."""
    padded = "^" + text + "$"
    if len(padded) < 3:
        return []
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


@lru_cache(maxsize=None)
def trigram_rows(text: str, table_size: int) -> tuple[int, ...]:
    """Table row indices for a token string (FNV-1a 64 of each 3-gram, mod V)."""
    return tuple(fnv1a64(g.encode("utf-8")) % table_size for g in token_trigrams(text))


@dataclass
class EncoderConfig:
    backend: str = "hashed-ngram"  # or "external"
    dim: int = DEFAULT_DIM
    table_size: int = DEFAULT_TABLE_SIZE
    max_context_tokens: int = DEFAULT_MAX_CONTEXT

    def __post_init__(self) -> None:
        if self.backend not in ("hashed-ngram", "external"):
            raise ValueError(f"unknown encoder backend {self.backend!r}")
        if self.max_context_tokens < 1:
            raise ValueError("max_context_tokens must be >= 1")


@dataclass
class HashedNGramTable:
    rows: np.ndarray  # (V, D), float64
    trainable: bool = True

    @property
    def table_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def create(cls, table_size: int, dim: int, rng: np.random.Generator,
               trainable: bool = True) -> "HashedNGramTable":
        scale = 1.0 / math.sqrt(dim)
        rows = rng.normal(0.0, scale, size=(table_size, dim))
        return cls(rows=rows, trainable=trainable)


@dataclass
class EncoderOutput:
    doc_id: str
    dim: int
    vectors: np.ndarray  # (N, D), float64
    tokens: tuple[Token, ...]
    token_texts: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def window(self, start: int, end: int) -> "EncoderOutput":
        """View of a token range, used for overlapping-window inference."""
        return EncoderOutput(
            doc_id=self.doc_id,
            dim=self.dim,
            vectors=self.vectors[start:end],
            tokens=self.tokens[start:end],
            token_texts=None if self.token_texts is None else self.token_texts[start:end],
        )


def _texts_of(tdoc) -> tuple[str, ...]:
    if isinstance(tdoc, TokenizedDocument):
        return tuple(tdoc.token_texts())
    return tuple(tdoc)


def encode_hashed(tdoc: TokenizedDocument, table: HashedNGramTable) -> EncoderOutput:
    """Encode every token as the sum of its hashed 3-gram rows."""
    V, D = table.rows.shape
    texts = tuple(tdoc.token_texts())
    vectors = np.zeros((len(texts), D))
    for i, text in enumerate(texts):
        rows = trigram_rows(text, V)
        if rows:
            vectors[i] = table.rows[list(rows)].sum(axis=0)
    return EncoderOutput(doc_id=tdoc.doc.id, dim=D, vectors=vectors, tokens=tdoc.tokens,
                         token_texts=texts)


def encode_hashed_backward_sparse(
    grad_vectors: np.ndarray, tdoc, table: HashedNGramTable
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse gradient of encode_hashed w.r.t. the table rows.

    Returns (row_indices, row_grads): unique sorted row indices paired with the
    summed incoming gradients of all (token, 3-gram) pairs hashing to each row.
    """
    V, D = table.rows.shape
    texts = _texts_of(tdoc)
    grad_vectors = np.asarray(grad_vectors, dtype=float)
    if grad_vectors.shape != (len(texts), D):
        raise ValueError(
            f"gradient shape {grad_vectors.shape} does not match "
            f"({len(texts)}, {D}) tokens x dim"
        )
    all_rows: list[int] = []
    src: list[int] = []
    for i, text in enumerate(texts):
        for r in trigram_rows(text, V):
            all_rows.append(r)
            src.append(i)
    if not all_rows:
        return np.zeros(0, dtype=np.intp), np.zeros((0, D))
    rows_arr = np.asarray(all_rows, dtype=np.intp)
    uniq, inverse = np.unique(rows_arr, return_inverse=True)
    grads = np.zeros((len(uniq), D))
    np.add.at(grads, inverse, grad_vectors[np.asarray(src, dtype=np.intp)])
    return uniq, grads


def encode_hashed_backward(
    grad_vectors: np.ndarray, tdoc, table: HashedNGramTable
) -> np.ndarray:
    """Dense (V, D) gradient of encode_hashed w.r.t. the table rows."""
    uniq, grads = encode_hashed_backward_sparse(grad_vectors, tdoc, table)
    out = np.zeros_like(table.rows)
    if len(uniq):
        out[uniq] = grads
    return out


# ---------------------------------------------------------------------------
# External embeddings file (JSONL with a header line)


class EmbeddingsError(ValueError):
    """An embeddings file violates the format contract."""


def save_external(outputs: list[EncoderOutput], path: str | Path, dim: int | None = None) -> None:
    """Write embeddings in the interchange format read by load_external."""
    if dim is None:
        if not outputs:
            raise EmbeddingsError("cannot infer dim from an empty output list")
        dim = outputs[0].dim
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": EMB_FORMAT, "version": EMB_VERSION, "dim": dim}) + "\n")
        for out in outputs:
            if out.dim != dim:
                raise EmbeddingsError(
                    f"doc '{out.doc_id}': dim {out.dim} differs from header dim {dim}")
            obj = {
                "doc_id": out.doc_id,
                "tokens": [[t.start, t.end] for t in out.tokens],
                "vectors": [[float(x) for x in row] for row in out.vectors],
            }
            f.write(json.dumps(obj) + "\n")


def load_external(
    path: str | Path, docs_by_id: dict[str, Document] | None = None
) -> list[EncoderOutput]:
    """Read an embeddings file, adopting its token offsets verbatim.

    When ``docs_by_id`` is given, token offsets are checked to be in-bounds,
    sorted, and non-overlapping for the referenced documents, and token texts
    are filled in from the document text.
    """
    outputs: list[EncoderOutput] = []
    with open(path, encoding="utf-8") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise EmbeddingsError(f"{path}:1: malformed header ({e.msg})") from e
        if not isinstance(header, dict) or header.get("format") != EMB_FORMAT:
            raise EmbeddingsError(f"{path}:1: not a {EMB_FORMAT} file")
        if header.get("version") != EMB_VERSION:
            raise EmbeddingsError(f"{path}:1: unsupported version {header.get('version')!r}")
        dim = header.get("dim")
        if not isinstance(dim, int) or dim < 1:
            raise EmbeddingsError(f"{path}:1: missing or invalid 'dim'")

        for lineno, line in enumerate(f, 2):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise EmbeddingsError(f"{where}: malformed JSON ({e.msg})") from e
            doc_id = obj.get("doc_id")
            if not isinstance(doc_id, str) or not doc_id:
                raise EmbeddingsError(f"{where}: missing 'doc_id'")
            raw_tokens = obj.get("tokens")
            raw_vectors = obj.get("vectors")
            if not isinstance(raw_tokens, list) or not isinstance(raw_vectors, list):
                raise EmbeddingsError(f"{where}: missing 'tokens' or 'vectors'")
            if len(raw_tokens) != len(raw_vectors):
                raise EmbeddingsError(
                    f"{where}: doc '{doc_id}' has {len(raw_tokens)} tokens "
                    f"but {len(raw_vectors)} vectors"
                )
            tokens = []
            for i, pair in enumerate(raw_tokens):
                if (not isinstance(pair, list) or len(pair) != 2
                        or not all(isinstance(x, int) for x in pair)):
                    raise EmbeddingsError(f"{where}: doc '{doc_id}' token {i} is not [start, end]")
                tokens.append(Token(pair[0], pair[1]))
            try:
                vectors = np.asarray(raw_vectors, dtype=float)
            except (TypeError, ValueError) as e:
                raise EmbeddingsError(
                    f"{where}: doc '{doc_id}' has malformed vectors ({e})") from e
            if vectors.size == 0:
                vectors = vectors.reshape(0, dim)
            if vectors.ndim != 2 or vectors.shape[1] != dim:
                raise EmbeddingsError(
                    f"{where}: doc '{doc_id}' vectors do not have dim {dim}")
            bad = np.argwhere(~np.isfinite(vectors))
            if len(bad):
                raise EmbeddingsError(
                    f"{where}: doc '{doc_id}' token {int(bad[0][0])}: non-finite value")

            token_texts = None
            if docs_by_id is not None:
                doc = docs_by_id.get(doc_id)
                if doc is None:
                    raise EmbeddingsError(f"{where}: unknown document '{doc_id}'")
                prev_end = 0
                for i, tok in enumerate(tokens):
                    if not (0 <= tok.start < tok.end <= len(doc.text)):
                        raise EmbeddingsError(
                            f"{where}: doc '{doc_id}' token {i} offsets "
                            f"({tok.start},{tok.end}) out of bounds")
                    if tok.start < prev_end:
                        raise EmbeddingsError(
                            f"{where}: doc '{doc_id}' token {i} overlaps the previous token")
                    prev_end = tok.end
                token_texts = tuple(doc.text[t.start:t.end] for t in tokens)

            outputs.append(EncoderOutput(doc_id=doc_id, dim=dim, vectors=vectors,
                                         tokens=tuple(tokens), token_texts=token_texts))
    return outputs
