"""Strict and character-overlap scoring, per-language aggregation, and
multi-system competition ranking.

Strict metrics credit a predicted span only when its (doc, start, end)
exactly equals a gold span.  Character metrics score the overlap of the
character-position sets covered by gold and predicted spans, giving partial
credit for inexact boundaries; counts are micro-aggregated over documents.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

from .corpus import (CANONICAL_TYPES, Document, EntitySpan, canonical_type,
                     validate_span)

# Table column order: character metrics first, recall before precision.
METRIC_KEYS = ("char_r", "char_p", "char_f1",
               "strict_r", "strict_p", "strict_f1")


@dataclass(frozen=True)
class MetricCell:
    precision: float
    recall: float
    f1: float


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _cell(matched: int, n_pred: int, n_gold: int) -> MetricCell:
    """Apply the empty-denominator convention shared by both metrics."""
    if n_pred == 0 and n_gold == 0:
        return MetricCell(precision=1.0, recall=1.0, f1=1.0)
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    return MetricCell(precision=p, recall=r, f1=_f1(p, r))


def _one_type(gold, pred) -> None:
    types = {canonical_type(s.entity_type) for s in gold}
    types |= {canonical_type(s.entity_type) for s in pred}
    if len(types) > 1:
        raise ValueError(f"mixed entity types in one call: {sorted(types)}")


def strict_metrics(gold, pred) -> MetricCell:
    """Exact-boundary precision/recall/F1 over deduplicated spans."""
    _one_type(gold, pred)
    gold_keys = {(s.doc_id, s.start, s.end) for s in gold}
    pred_keys = {(s.doc_id, s.start, s.end) for s in pred}
    return _cell(len(gold_keys & pred_keys), len(pred_keys), len(gold_keys))


def _merge(intervals) -> list[tuple[int, int]]:
    """Union of half-open intervals as a sorted disjoint list."""
    merged: list[list[int]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def _merged_size(merged) -> int:
    return sum(e - s for s, e in merged)


def _overlap_size(a, b) -> int:
    """Size of the intersection of two merged interval lists."""
    total = 0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo < hi:
            total += hi - lo
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def _docs_by_id(docs) -> dict[str, Document]:
    if isinstance(docs, dict):
        return docs
    return {d.id: d for d in docs}


def char_metrics(gold, pred, docs) -> MetricCell:
    """Character-overlap precision/recall/F1, micro-aggregated over documents.

    Within a document each side's spans are collapsed to a set of character
    positions first, so overlapping or duplicate spans never count twice.
    """
    _one_type(gold, pred)
    by_id = _docs_by_id(docs)
    per_doc: dict[str, tuple[list, list]] = {}
    for side, spans in enumerate((gold, pred)):
        for s in spans:
            doc = by_id.get(s.doc_id)
            if doc is None:
                raise ValueError(f"span references unknown doc '{s.doc_id}'")
            validate_span(s, doc)
            per_doc.setdefault(s.doc_id, ([], []))[side].append((s.start, s.end))
    matched = n_gold = n_pred = 0
    for g_iv, p_iv in per_doc.values():
        g = _merge(g_iv)
        p = _merge(p_iv)
        matched += _overlap_size(g, p)
        n_gold += _merged_size(g)
        n_pred += _merged_size(p)
    return _cell(matched, n_pred, n_gold)


def aggregate(values) -> tuple[float, float]:
    """Mean and population standard deviation of per-language scores."""
    values = list(values)
    if len(values) < 2:
        raise ValueError(f"aggregate needs at least 2 values, got {len(values)}")
    return statistics.fmean(values), statistics.pstdev(values)


def rank_systems(scores: dict, higher_better: bool = True) -> dict:
    """Competition ranks: best = 1, ties share a rank, next rank skips."""
    if not scores:
        raise ValueError("rank_systems needs at least one system")
    for name, v in scores.items():
        if math.isnan(v):
            raise ValueError(f"system '{name}' has NaN score")
    vals = list(scores.values())
    if higher_better:
        return {name: 1 + sum(1 for v in vals if v > score)
                for name, score in scores.items()}
    return {name: 1 + sum(1 for v in vals if v < score)
            for name, score in scores.items()}


# ---------------------------------------------------------------------------
# Full report


@dataclass
class MetricsReport:
    languages: tuple
    entity_types: tuple
    # cells[lang][type] = {"strict": MetricCell, "char": MetricCell, "support": {...}}
    cells: dict
    # aggregates[type][metric_key] = (mean, std)
    aggregates: dict
    # alias -> canonical, for any alias actually seen in the inputs
    aliases: dict = field(default_factory=dict)

    def cell_value(self, lang: str, etype: str, key: str) -> float:
        return _cell_value(self.cells[lang][etype], key)

    def to_json_dict(self) -> dict:
        def cell_dict(c: MetricCell) -> dict:
            return {"p": c.precision, "r": c.recall, "f1": c.f1}

        out = {
            "cells": {
                lang: {
                    etype: {
                        "strict": cell_dict(entry["strict"]),
                        "char": cell_dict(entry["char"]),
                        "support": dict(entry["support"]),
                    }
                    for etype, entry in by_type.items()
                }
                for lang, by_type in self.cells.items()
            },
            "aggregates": {
                etype: {key: {"mean": m, "std": s}
                        for key, (m, s) in by_key.items()}
                for etype, by_key in self.aggregates.items()
            },
        }
        if self.aliases:
            out["aliases"] = dict(self.aliases)
        return out


def build_report(gold, pred, docs, languages=None, entity_types=None) -> MetricsReport:
    """Score every (language, entity type) slice and aggregate across languages."""
    by_id = _docs_by_id(docs)
    aliases = {}

    def canon(spans):
        out = []
        for s in spans:
            c = canonical_type(s.entity_type)
            if c != s.entity_type:
                aliases[s.entity_type] = c
                s = EntitySpan(s.doc_id, c, s.start, s.end, s.surface)
            if s.doc_id not in by_id:
                raise ValueError(f"span references unknown doc '{s.doc_id}'")
            out.append(s)
        return out

    gold = canon(gold)
    pred = canon(pred)

    if languages is None:
        languages = sorted({d.lang for d in by_id.values()})
    languages = tuple(languages)
    if entity_types is None:
        seen = {s.entity_type for s in gold} | {s.entity_type for s in pred}
        entity_types = [t for t in CANONICAL_TYPES if t in seen] or list(CANONICAL_TYPES)
    entity_types = tuple(canonical_type(t) for t in entity_types)

    lang_of = {doc_id: d.lang for doc_id, d in by_id.items()}
    cells: dict = {lang: {} for lang in languages}
    for lang in languages:
        for etype in entity_types:
            g = [s for s in gold
                 if s.entity_type == etype and lang_of[s.doc_id] == lang]
            p = [s for s in pred
                 if s.entity_type == etype and lang_of[s.doc_id] == lang]
            strict = strict_metrics(g, p)
            char = char_metrics(g, p, by_id)
            g_iv: dict[str, list] = {}
            p_iv: dict[str, list] = {}
            for s in g:
                g_iv.setdefault(s.doc_id, []).append((s.start, s.end))
            for s in p:
                p_iv.setdefault(s.doc_id, []).append((s.start, s.end))
            support = {
                "gold_spans": len({(s.doc_id, s.start, s.end) for s in g}),
                "pred_spans": len({(s.doc_id, s.start, s.end) for s in p}),
                "gold_chars": sum(_merged_size(_merge(iv)) for iv in g_iv.values()),
                "pred_chars": sum(_merged_size(_merge(iv)) for iv in p_iv.values()),
            }
            cells[lang][etype] = {"strict": strict, "char": char, "support": support}

    aggregates: dict = {}
    for etype in entity_types:
        by_key = {}
        for key in METRIC_KEYS:
            values = [_cell_value(cells[lang][etype], key) for lang in languages]
            if len(values) >= 2:
                by_key[key] = aggregate(values)
            else:
                by_key[key] = (values[0], 0.0)
        aggregates[etype] = by_key

    return MetricsReport(languages=languages, entity_types=entity_types,
                         cells=cells, aggregates=aggregates, aliases=aliases)


def _cell_value(entry: dict, key: str) -> float:
    which, what = key.split("_")
    cell = entry[which]
    return {"r": cell.recall, "p": cell.precision, "f1": cell.f1}[what]


# ---------------------------------------------------------------------------
# Text rendering


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])]
        cells += [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def render_aggregates(aggregates: dict, digits: int = 2) -> str:
    """One row per entity type, mean±std for each of the six metrics."""
    header = ["entity_type"] + list(METRIC_KEYS)
    rows = [header]
    for etype, by_key in aggregates.items():
        row = [etype]
        for key in METRIC_KEYS:
            m, s = by_key[key]
            row.append(f"{m:.{digits}f}±{s:.{digits}f}")
        rows.append(row)
    return format_table(rows)


def render_report(report: MetricsReport, digits: int = 2) -> str:
    """Per-language tables per entity type, then the cross-language summary."""
    blocks = []
    for etype in report.entity_types:
        rows = [["language"] + list(METRIC_KEYS)]
        for lang in report.languages:
            entry = report.cells[lang][etype]
            rows.append([lang] + [f"{_cell_value(entry, k):.{digits}f}"
                                  for k in METRIC_KEYS])
        if len(report.languages) > 1:
            agg = report.aggregates[etype]
            rows.append(["mean±std"] + [f"{m:.{digits}f}±{s:.{digits}f}"
                                        for m, s in (agg[k] for k in METRIC_KEYS)])
        blocks.append(f"== {etype} ==\n" + format_table(rows))
    if report.aliases:
        notes = ", ".join(f"{a} -> {c}" for a, c in sorted(report.aliases.items()))
        blocks.append(f"note: input entity types aliased: {notes}")
    return "\n\n".join(blocks)
