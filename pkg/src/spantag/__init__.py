"""Multilingual clinical span tagging: offset-preserving tokenization, hashed
character-3-gram encoding, a from-scratch CNN tagger, overlapping-window
inference, BIO span decoding, and strict/character-overlap evaluation.
"""

from .corpus import (CANONICAL_TYPES, CorpusError, Document, EntitySpan, Token,
                     TokenizedDocument, canonical_type, load_annotations,
                     load_corpus, load_documents, project_bio, read_spans_jsonl,
                     tokenize, validate_span, write_documents, write_spans_jsonl)
# the span reader itself lives at spantag.decode.decode; re-exporting it here
# would shadow the submodule
from .decode import token_spans
from .encoder import (EmbeddingsError, EncoderOutput, HashedNGramTable,
                      encode_hashed, load_external, save_external)
from .evaluation import (MetricCell, MetricsReport, aggregate, build_report,
                         char_metrics, rank_systems, render_report,
                         strict_metrics)
from .head import (LABELS, TaggerParams, TrainConfig, backward, forward,
                   load_checkpoint, loss, predict, save_checkpoint, train)
from .window import WindowPlan, plan_windows, predict_windowed, reconcile

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_TYPES", "CorpusError", "Document", "EntitySpan", "Token",
    "TokenizedDocument", "canonical_type", "load_annotations", "load_corpus",
    "load_documents", "project_bio", "read_spans_jsonl", "tokenize",
    "validate_span", "write_documents", "write_spans_jsonl",
    "token_spans",
    "EmbeddingsError", "EncoderOutput", "HashedNGramTable", "encode_hashed",
    "load_external", "save_external",
    "MetricCell", "MetricsReport", "aggregate", "build_report", "char_metrics",
    "rank_systems", "render_report", "strict_metrics",
    "LABELS", "TaggerParams", "TrainConfig", "backward", "forward",
    "load_checkpoint", "loss", "predict", "save_checkpoint", "train",
    "WindowPlan", "plan_windows", "predict_windowed", "reconcile",
    "__version__",
]
