"""Command-line interface: train, predict, eval, compare, tokenize, validate.

All failures exit nonzero with a single ``error: ...`` line on stderr; the
``SPANTAG_SEED`` environment variable overrides ``--seed`` everywhere.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import corpus, decode, encoder, evaluation, head, window

PROG = "spantag"


def _checked_seed(args) -> int:
    env = os.environ.get("SPANTAG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"SPANTAG_SEED must be an integer, got {env!r}")
    return args.seed


def _window_arg(value: str) -> int:
    if value in ("inf", "none"):
        return sys.maxsize
    return int(value)


def _load_docs(path):
    docs = corpus.load_documents(path)
    return docs, {d.id: d for d in docs}


def _load_embeddings(path, docs_by_id):
    return {e.doc_id: e for e in encoder.load_external(path, docs_by_id)}


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    docs, by_id = _load_docs(args.docs)
    spans = corpus.load_annotations(args.annotations, by_id)
    cfg = head.TrainConfig(
        epochs=args.epochs, lr=args.lr, batch=args.batch, seed=_checked_seed(args),
        hidden=args.hidden, dim=args.dim, table_size=args.table_size,
        kernel=args.kernel, freeze_encoder=args.freeze_encoder,
    )
    emb_list = None
    if args.embeddings:
        emb_list = encoder.load_external(args.embeddings, by_id)
    params, trace = head.train(docs, spans, args.entity_type, cfg, emb_list)
    head.save_checkpoint(params, args.model)
    trace_path = args.loss_trace or f"{args.model}.loss.csv"
    head.write_loss_trace(trace, trace_path)
    print(f"model: {args.model}")
    print(f"loss trace: {trace_path} ({len(trace)} points)")
    if trace:
        print(f"first logged loss: {trace[0][1]:.4f}")
        print(f"final logged loss: {trace[-1][1]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# predict


def _truncate(enc, tdoc, limit):
    if limit and len(enc) > limit:
        print(f"warning: doc '{tdoc.doc.id}' truncated to {limit} tokens",
              file=sys.stderr)
        return enc.window(0, limit), corpus.TokenizedDocument(
            doc=tdoc.doc, tokens=tdoc.tokens[:limit])
    return enc, tdoc


def _predict_doc(doc, params, emb_by_id, entity_type, mode, win, stride, limit):
    if emb_by_id is not None:
        enc = emb_by_id.get(doc.id)
        if enc is None:
            raise ValueError(f"no embeddings for document '{doc.id}'")
        tdoc = corpus.TokenizedDocument(doc=doc, tokens=enc.tokens)
    else:
        tdoc = corpus.tokenize(doc)
        enc = encoder.encode_hashed(tdoc, params.table)
    enc, tdoc = _truncate(enc, tdoc, limit)
    if not tdoc.tokens:
        return []
    labels = window.predict_windowed(enc, params, win, stride)
    return decode.decode(labels, tdoc, entity_type, mode)


_POOL_CTX: dict = {}


def _pool_init(model, docs_path, emb_path, entity_type, mode, win, stride, limit):
    docs, by_id = _load_docs(docs_path)
    emb = _load_embeddings(emb_path, by_id) if emb_path else None
    _POOL_CTX.update(
        by_id=by_id, params=head.load_checkpoint(model), emb=emb,
        entity_type=entity_type, mode=mode, win=win, stride=stride, limit=limit,
    )


def _pool_task(doc_id):
    c = _POOL_CTX
    return _predict_doc(c["by_id"][doc_id], c["params"], c["emb"],
                        c["entity_type"], c["mode"], c["win"], c["stride"],
                        c["limit"])


def cmd_predict(args) -> int:
    docs, by_id = _load_docs(args.docs)
    params = head.load_checkpoint(args.model)
    emb_by_id = None
    if args.embeddings:
        if params.table is not None:
            raise ValueError("model carries its own encoder table; "
                             "--embeddings does not apply")
        emb_by_id = _load_embeddings(args.embeddings, by_id)
        dims = {e.dim for e in emb_by_id.values()}
        if dims and dims != {params.dim}:
            raise ValueError(f"dimension mismatch: model dim {params.dim}, "
                             f"embeddings dim {dims.pop()}")
    elif params.table is None:
        raise ValueError("model was trained on external embeddings; "
                         "--embeddings is required")

    win = args.window if args.window is not None else window.DEFAULT_WINDOW
    stride = args.stride
    spans = []
    if args.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=args.jobs, initializer=_pool_init,
            initargs=(args.model, args.docs, args.embeddings, args.entity_type,
                      args.mode, win, stride, args.max_doc_tokens),
        ) as pool:
            for doc_spans in pool.map(_pool_task, [d.id for d in docs]):
                spans.extend(doc_spans)
    else:
        for doc in docs:
            spans.extend(_predict_doc(doc, params, emb_by_id, args.entity_type,
                                      args.mode, win, stride,
                                      args.max_doc_tokens))
    spans.sort(key=lambda s: (s.doc_id, s.start, s.end))
    corpus.write_spans_jsonl(spans, args.out)
    print(f"predictions: {args.out} ({len(spans)} spans, {len(docs)} docs)")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    docs, by_id = _load_docs(args.docs)
    gold = corpus.load_annotations(args.gold, by_id)
    pred = corpus.load_annotations(args.pred, by_id)
    report = evaluation.build_report(gold, pred, docs)
    print(evaluation.render_report(report, digits=args.digits))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, ensure_ascii=False, indent=2)
            f.write("\n")
        print(f"report json: {args.json}")
    return 0


# ---------------------------------------------------------------------------
# compare


def _read_scores_csv(path):
    """CSV columns entity_type,lang,metric,value -> {etype: {metric: [values]}}."""
    table: dict = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"entity_type", "lang", "metric", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV columns "
                             f"{', '.join(sorted(required))}")
        for i, row in enumerate(reader, 2):
            metric = row["metric"]
            if metric not in evaluation.METRIC_KEYS:
                raise ValueError(f"{path}:{i}: unknown metric {metric!r}")
            try:
                value = float(row["value"])
            except ValueError:
                raise ValueError(f"{path}:{i}: non-numeric value {row['value']!r}")
            etype = corpus.canonical_type(row["entity_type"])
            table.setdefault(etype, {}).setdefault(metric, []).append(value)
    if not table:
        raise ValueError(f"{path}: no score rows")
    return table


def _aggregate_only(args) -> int:
    table = _read_scores_csv(args.scores)
    aggregates = {}
    for etype, by_metric in table.items():
        aggregates[etype] = {}
        for key in evaluation.METRIC_KEYS:
            values = by_metric.get(key)
            if not values:
                continue
            aggregates[etype][key] = (evaluation.aggregate(values)
                                      if len(values) >= 2 else (values[0], 0.0))
        missing = [k for k in evaluation.METRIC_KEYS if k not in aggregates[etype]]
        for k in missing:
            aggregates[etype][k] = (float("nan"), float("nan"))
    print(evaluation.render_aggregates(aggregates, digits=args.digits))
    return 0


def cmd_compare(args) -> int:
    if args.aggregate_only:
        if not args.scores:
            raise ValueError("--aggregate-only requires --scores")
        return _aggregate_only(args)
    if not (args.docs and args.gold and args.pred):
        raise ValueError("compare requires --docs, --gold and at least one --pred "
                         "(or --aggregate-only with --scores)")
    docs, by_id = _load_docs(args.docs)
    gold = corpus.load_annotations(args.gold, by_id)

    names = []
    for path in args.pred:
        stem = os.path.splitext(os.path.basename(path))[0]
        name = stem
        k = 2
        while name in names:
            name = f"{stem}-{k}"
            k += 1
        names.append(name)

    reports = {}
    for name, path in zip(names, args.pred):
        pred = corpus.load_annotations(path, by_id)
        reports[name] = evaluation.build_report(gold, pred, docs)

    langs = sorted({d.lang for d in docs})
    etypes = sorted({t for r in reports.values() for t in r.entity_types},
                    key=lambda t: corpus.CANONICAL_TYPES.index(t))
    rows = [["entity_type", "language", "metric"] + names]
    for etype in etypes:
        for lang in langs:
            for key in evaluation.METRIC_KEYS:
                scores = {}
                for name, rep in reports.items():
                    if etype in rep.entity_types:
                        scores[name] = rep.cell_value(lang, etype, key)
                ranks = evaluation.rank_systems(scores)
                row = [etype, lang, key]
                for name in names:
                    if name in scores:
                        row.append(f"{scores[name]:.{args.digits}f} ({ranks[name]})")
                    else:
                        row.append("-")
                rows.append(row)
    print(evaluation.format_table(rows))
    return 0


# ---------------------------------------------------------------------------
# tokenize / validate


def cmd_tokenize(args) -> int:
    docs, _ = _load_docs(args.docs)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for doc in docs:
            tdoc = corpus.tokenize(doc)
            obj = {"doc_id": doc.id,
                   "tokens": [[t.start, t.end] for t in tdoc.tokens],
                   "texts": list(tdoc.token_texts())}
            out.write(json.dumps(obj, ensure_ascii=False) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_validate(args) -> int:
    docs, by_id = _load_docs(args.docs)
    langs = sorted({d.lang for d in docs})
    print(f"docs: {len(docs)} (langs: {', '.join(langs)})")
    if args.annotations:
        spans = corpus.load_annotations(args.annotations, by_id)
        by_type: dict[str, int] = {}
        for s in spans:
            c = corpus.canonical_type(s.entity_type)
            by_type[c] = by_type.get(c, 0) + 1
        detail = ", ".join(f"{t}: {n}" for t, n in sorted(by_type.items()))
        print(f"spans: {len(spans)}" + (f" ({detail})" if detail else ""))
    if args.embeddings:
        emb = encoder.load_external(args.embeddings, by_id)
        dims = {e.dim for e in emb}
        dim = dims.pop() if dims else "-"
        print(f"embeddings: {len(emb)} docs, dim {dim}")
    print("ok")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Train, apply and score BIO span taggers over "
                    "offset-annotated corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=0,
                       help="RNG seed (env SPANTAG_SEED overrides)")

    p = sub.add_parser("train", help="train one tagger for one entity type")
    p.add_argument("--docs", required=True, help="documents JSONL")
    p.add_argument("--annotations", required=True,
                   help="gold spans (JSONL file or brat directory)")
    p.add_argument("--entity-type", required=True)
    p.add_argument("--model", required=True, help="checkpoint output path")
    p.add_argument("--loss-trace", help="loss CSV path (default <model>.loss.csv)")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--table-size", type=int, default=encoder.DEFAULT_TABLE_SIZE)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--freeze-encoder", action="store_true",
                   help="do not update the hashed 3-gram table")
    p.add_argument("--embeddings", help="external embeddings JSONL")
    add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag documents with a trained model")
    p.add_argument("--docs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--entity-type", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--mode", choices=decode.MODES, default=decode.DEFAULT_MODE)
    p.add_argument("--window", type=_window_arg, default=None,
                   help=f"max tokens per forward pass (default "
                        f"{window.DEFAULT_WINDOW}; 'inf' disables splitting)")
    p.add_argument("--stride", type=int, default=None,
                   help="window stride (default window/2)")
    p.add_argument("--embeddings", help="external embeddings JSONL")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers (output order is canonical)")
    p.add_argument("--max-doc-tokens", type=int, default=None,
                   help="truncate absurdly long documents with a warning")
    add_seed(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold spans")
    p.add_argument("--docs", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--digits", type=int, default=2)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="rank several prediction files, or "
                                       "aggregate per-language scores")
    p.add_argument("--docs")
    p.add_argument("--gold")
    p.add_argument("--pred", action="append",
                   help="prediction file (repeatable)")
    p.add_argument("--aggregate-only", action="store_true",
                   help="aggregate a per-language score CSV instead of ranking")
    p.add_argument("--scores",
                   help="CSV with columns entity_type,lang,metric,value")
    p.add_argument("--digits", type=int, default=2)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tokenize", help="dump token offsets per document")
    p.add_argument("--docs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("validate", help="check corpus, annotation and "
                                        "embedding files")
    p.add_argument("--docs", required=True)
    p.add_argument("--annotations")
    p.add_argument("--embeddings")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
