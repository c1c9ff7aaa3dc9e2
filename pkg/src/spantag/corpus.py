"""Corpus handling: documents, span annotations, offset-preserving tokenization,
and projection of character spans onto BIO token labels.

All character offsets are Unicode code point offsets into the document text,
end-exclusive.  This keeps annotations independent of the on-disk encoding.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

CANONICAL_TYPES = ("PROCEDURE", "DISORDER", "SYMPTOM")

# The shared-task data labels the disorder class DISEASE in some files.
TYPE_ALIASES = {"DISEASE": "DISORDER"}


class CorpusError(ValueError):
    """A document or annotation violates the corpus contracts."""


def canonical_type(entity_type: str) -> str:
    """Map alias entity-type names onto their canonical form."""
    return TYPE_ALIASES.get(entity_type, entity_type)


@dataclass(frozen=True)
class Document:
    id: str
    lang: str
    text: str


@dataclass(frozen=True)
class EntitySpan:
    doc_id: str
    entity_type: str
    start: int
    end: int
    surface: str | None = None

    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Token:
    start: int
    end: int


@dataclass(frozen=True)
class TokenizedDocument:
    doc: Document
    tokens: tuple[Token, ...]

    def token_text(self, i: int) -> str:
        tok = self.tokens[i]
        return self.doc.text[tok.start:tok.end]

    def token_texts(self) -> list[str]:
        return [self.token_text(i) for i in range(len(self.tokens))]


def tokenize(doc: Document) -> TokenizedDocument:
    """Split a document into offset-preserving tokens.

    A token is either a maximal run of Unicode alphanumeric characters or a
    single non-whitespace, non-alphanumeric character.  Whitespace is never
    part of a token, so the tokens partition the non-whitespace characters.
    """
    text = doc.text
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch.isalnum():
            j = i + 1
            while j < n and text[j].isalnum():
                j += 1
            tokens.append(Token(i, j))
            i = j
        else:
            tokens.append(Token(i, i + 1))
            i += 1
    return TokenizedDocument(doc=doc, tokens=tuple(tokens))


def _overlaps(tok: Token, span: EntitySpan) -> bool:
    return tok.start < span.end and span.start < tok.end


def validate_span(span: EntitySpan, doc: Document, where: str = "") -> None:
    """Check one annotation against its document; raise CorpusError if invalid."""
    prefix = f"{where}: " if where else ""
    if span.doc_id != doc.id:
        raise CorpusError(f"{prefix}span references doc '{span.doc_id}', got doc '{doc.id}'")
    if not span.entity_type:
        raise CorpusError(f"{prefix}span ({span.start},{span.end}) in doc '{doc.id}' has empty type")
    if not (0 <= span.start < span.end <= len(doc.text)):
        raise CorpusError(
            f"{prefix}span ({span.start},{span.end}) out of bounds for doc '{doc.id}' "
            f"(text length {len(doc.text)})"
        )
    if span.surface is not None and span.surface != doc.text[span.start:span.end]:
        raise CorpusError(
            f"{prefix}surface mismatch in doc '{doc.id}' at ({span.start},{span.end}): "
            f"annotation says {span.surface!r}, text says {doc.text[span.start:span.end]!r}"
        )


def project_bio(tdoc: TokenizedDocument, spans: list[EntitySpan]) -> list[str]:
    """Project character-offset gold spans of one entity type onto BIO token labels.

    A token overlapping a span is labeled B if it is the first token overlapping
    that span, I otherwise.  When several spans overlap one token, the longest
    span wins it (ties broken toward the earlier start).
    """
    types = {s.entity_type for s in spans}
    if len(types) > 1:
        raise CorpusError(f"project_bio expects one entity type, got {sorted(types)}")
    for span in spans:
        validate_span(span, tdoc.doc)

    labels = ["O"] * len(tdoc.tokens)
    if not spans:
        return labels

    first_tok: dict[int, int] = {}
    for si, span in enumerate(spans):
        for ti, tok in enumerate(tdoc.tokens):
            if _overlaps(tok, span):
                first_tok[si] = ti
                break

    for ti, tok in enumerate(tdoc.tokens):
        candidates = [si for si, span in enumerate(spans) if _overlaps(tok, span)]
        if not candidates:
            continue
        winner = min(
            candidates,
            key=lambda si: (-spans[si].length(), spans[si].start, spans[si].end, si),
        )
        labels[ti] = "B" if first_tok[winner] == ti else "I"
    return labels


# ---------------------------------------------------------------------------
# File formats


def load_documents(path: str | Path) -> list[Document]:
    """Read a documents JSONL file: one {"id","lang","text"} object per line."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise CorpusError(f"{where}: expected a JSON object")
            for key in ("id", "lang", "text"):
                if not isinstance(obj.get(key), str):
                    raise CorpusError(f"{where}: missing or non-string field {key!r}")
            if not obj["id"]:
                raise CorpusError(f"{where}: empty document id")
            if obj["id"] in seen:
                raise CorpusError(f"{where}: duplicate document id '{obj['id']}'")
            seen.add(obj["id"])
            docs.append(Document(id=obj["id"], lang=obj["lang"], text=obj["text"]))
    return docs


def read_spans_jsonl(
    path: str | Path, docs_by_id: dict[str, Document] | None = None
) -> list[EntitySpan]:
    """Read a span JSONL file ({"doc_id","type","start","end","surface"?}).

    Used for both gold annotations and predictions; validation against the
    documents happens when ``docs_by_id`` is given.
    """
    spans: list[EntitySpan] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise CorpusError(f"{where}: expected a JSON object")
            if not isinstance(obj.get("doc_id"), str) or not obj.get("doc_id"):
                raise CorpusError(f"{where}: missing or non-string field 'doc_id'")
            if not isinstance(obj.get("type"), str) or not obj.get("type"):
                raise CorpusError(f"{where}: missing or non-string field 'type'")
            for key in ("start", "end"):
                if not isinstance(obj.get(key), int) or isinstance(obj.get(key), bool):
                    raise CorpusError(f"{where}: missing or non-integer field {key!r}")
            surface = obj.get("surface")
            if surface is not None and not isinstance(surface, str):
                raise CorpusError(f"{where}: field 'surface' must be a string when present")
            span = EntitySpan(
                doc_id=obj["doc_id"],
                entity_type=obj["type"],
                start=obj["start"],
                end=obj["end"],
                surface=surface,
            )
            if docs_by_id is not None:
                doc = docs_by_id.get(span.doc_id)
                if doc is None:
                    raise CorpusError(f"{where}: unknown document '{span.doc_id}'")
                validate_span(span, doc, where=where)
            spans.append(span)
    return spans


def write_documents(docs: list[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(json.dumps({"id": doc.id, "lang": doc.lang, "text": doc.text},
                               ensure_ascii=False) + "\n")


def write_spans_jsonl(spans: list[EntitySpan], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in spans:
            obj = {"doc_id": s.doc_id, "type": s.entity_type, "start": s.start, "end": s.end}
            if s.surface is not None:
                obj["surface"] = s.surface
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def parse_brat(text: str, doc: Document, source: str = "<ann>") -> list[EntitySpan]:
    """Parse BRAT standoff entity lines ``T<k>\\t<TYPE> <start> <end>\\t<surface>``.

    Non-entity lines (relations, attributes, notes) are skipped.  Discontinuous
    spans (';' in the offsets) are not supported.
    """
    spans: list[EntitySpan] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or not line.startswith("T"):
            continue
        where = f"{source}:{lineno}"
        fields = line.split("\t")
        if len(fields) < 2:
            raise CorpusError(f"{where}: entity line needs at least two tab-separated fields")
        mid = fields[1]
        if ";" in mid:
            raise CorpusError(f"{where}: discontinuous spans are not supported")
        parts = mid.split()
        if len(parts) != 3:
            raise CorpusError(f"{where}: expected '<TYPE> <start> <end>', got {mid!r}")
        etype, start_s, end_s = parts
        try:
            start, end = int(start_s), int(end_s)
        except ValueError as e:
            raise CorpusError(f"{where}: non-integer offsets in {mid!r}") from e
        surface = fields[2] if len(fields) > 2 else None
        span = EntitySpan(doc_id=doc.id, entity_type=etype, start=start, end=end,
                          surface=surface)
        if surface is not None:
            # brat writes newlines inside a span as spaces
            slice_ = doc.text[start:end]
            if surface != slice_ and surface != slice_.replace("\n", " "):
                raise CorpusError(
                    f"{where}: surface mismatch at ({start},{end}): "
                    f"annotation says {surface!r}, text says {slice_!r}"
                )
            span = EntitySpan(doc_id=doc.id, entity_type=etype, start=start, end=end,
                              surface=slice_)
        validate_span(span, doc, where=where)
        spans.append(span)
    return spans


def load_brat_dir(dir_path: str | Path, docs_by_id: dict[str, Document]) -> list[EntitySpan]:
    """Read every ``<doc id>.ann`` file in a directory of BRAT annotations."""
    spans: list[EntitySpan] = []
    for name in sorted(os.listdir(dir_path)):
        if not name.endswith(".ann"):
            continue
        doc_id = name[:-4]
        doc = docs_by_id.get(doc_id)
        if doc is None:
            raise CorpusError(f"{dir_path}/{name}: no document with id '{doc_id}'")
        path = Path(dir_path) / name
        spans.extend(parse_brat(path.read_text(encoding="utf-8"), doc, source=str(path)))
    return spans


def load_annotations(path: str | Path, docs_by_id: dict[str, Document]) -> list[EntitySpan]:
    """Read annotations from a JSONL file or a directory of BRAT .ann files."""
    if Path(path).is_dir():
        return load_brat_dir(path, docs_by_id)
    return read_spans_jsonl(path, docs_by_id)


def load_corpus(docs_path: str | Path, anns_path: str | Path) -> tuple[list[Document], list[EntitySpan]]:
    """Load and validate documents plus their annotations."""
    docs = load_documents(docs_path)
    by_id = {d.id: d for d in docs}
    spans = load_annotations(anns_path, by_id)
    return docs, spans
