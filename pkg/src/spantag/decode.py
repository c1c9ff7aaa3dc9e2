"""Turn BIO label sequences back into character-offset entity spans.

Two reading rules are provided:

* ``paper`` (default): spans are maximal ``B?I+`` matches.  A B immediately
  followed by I opens a span through the I-run; a B with no following I yields
  no span at all; an orphan I-run is a span on its own.
* ``standard``: conventional lenient IOB2 — B starts a span through the
  following I-run, a lone B is a single-token span, and an orphan I-run also
  counts.

In both modes a B splits adjacent mentions: ``I I B I`` is two spans.
"""

from __future__ import annotations

from .corpus import EntitySpan, TokenizedDocument

PAPER = "paper"
STANDARD = "standard"
MODES = (PAPER, STANDARD)
DEFAULT_MODE = PAPER


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown decode mode {mode!r}; expected one of {MODES}")
    return mode


def token_spans(labels, mode: str = DEFAULT_MODE) -> list[tuple[int, int]]:
    """Token-index extents [first, last) of every span readable from labels."""
    _check_mode(mode)
    spans = []
    n = len(labels)
    i = 0
    while i < n:
        lab = labels[i]
        if lab == "I":
            j = i + 1
            while j < n and labels[j] == "I":
                j += 1
            spans.append((i, j))
            i = j
        elif lab == "B":
            j = i + 1
            while j < n and labels[j] == "I":
                j += 1
            if j > i + 1 or mode == STANDARD:
                spans.append((i, j))
            i = j
        elif lab == "O":
            i += 1
        else:
            raise ValueError(f"unknown label {lab!r} at position {i}")
    return spans


def spans_to_char(extents, tdoc: TokenizedDocument,
                  entity_type: str) -> list[EntitySpan]:
    """Map token extents to character-offset spans over the document text."""
    out = []
    n = len(tdoc.tokens)
    for first, last in extents:
        if last <= first:
            raise ValueError(f"empty token span [{first},{last})")
        if first < 0 or last > n:
            raise ValueError(f"token span [{first},{last}) outside [0,{n})")
        start = tdoc.tokens[first].start
        end = tdoc.tokens[last - 1].end
        out.append(EntitySpan(doc_id=tdoc.doc.id, entity_type=entity_type,
                              start=start, end=end,
                              surface=tdoc.doc.text[start:end]))
    return out


def decode(labels, tdoc: TokenizedDocument, entity_type: str,
           mode: str = DEFAULT_MODE) -> list[EntitySpan]:
    """Read entity spans for one document from its per-token labels."""
    if len(labels) != len(tdoc.tokens):
        raise ValueError(f"{len(labels)} labels for {len(tdoc.tokens)} tokens "
                         f"in doc '{tdoc.doc.id}'")
    return spans_to_char(token_spans(labels, mode), tdoc, entity_type)
