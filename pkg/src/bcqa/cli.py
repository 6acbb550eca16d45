"""Command-line front end.

Exit status: 0 success, 1 runtime failure, 2 usage or validation error.
Data goes to stdout (or --output); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from bcqa import bench as B
from bcqa import metrics as M
from bcqa.corpus import clean, corpus_from_contexts, corpus_from_text, dataset_stats, load_cqa
from bcqa.dense import FileBackedProvider, FlatIndex, HashedNGramProvider, Metric, build_forest, flat_search, forest_search
from bcqa.sparse import Bm25Params, IdfVariant, Scorer, SearchEngine, build_index, load_index, phrase_search, save_index, search
from bcqa.textkit import AnalysisChain, load_stopwords

log = logging.getLogger("bcqa")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _k_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_provider(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--provider", metavar="hashed[:DIM]", help="hashed character-trigram embeddings (default hashed:256)")
    g.add_argument("--embeddings", type=Path, metavar="JSONL", help="precomputed vectors keyed by exact text")


def _provider(args):
    if getattr(args, "embeddings", None):
        _require_file(args.embeddings)
        return FileBackedProvider.from_jsonl(args.embeddings)
    spec = getattr(args, "provider", None) or "hashed:256"
    kind, _, dim = spec.partition(":")
    if kind != "hashed":
        raise UsageError(f"unknown provider {spec!r}; use hashed[:DIM] or --embeddings")
    try:
        return HashedNGramProvider(int(dim) if dim else 256)
    except ValueError:
        raise UsageError(f"bad provider dimension in {spec!r}") from None


def _add_bm25(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--idf", choices=[v.value for v in IdfVariant], default=IdfVariant.ROBERTSON_LUCENE.value)


def _bm25(args) -> Bm25Params:
    return Bm25Params(args.k1, args.b, IdfVariant(args.idf))


def _add_forest(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=_positive_int, default=10)
    p.add_argument("--leaf-size", type=int, default=16)
    p.add_argument("--search-k", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=42)


def _require_file(path: Path) -> None:
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _load_corpus(args):
    chain = AnalysisChain(lowercase=True, stem=not args.no_stem, stopwords=load_stopwords(args.stopwords) if args.stopwords else frozenset())
    if args.cqa:
        _require_file(args.cqa)
        triplets, dropped = clean(load_cqa(args.cqa))
        for tid, reason in dropped:
            log.warning("dropped triplet %s: %s", tid, reason)
        if not triplets:
            raise UsageError(f"{args.cqa}: no complete triplets")
        return corpus_from_contexts(triplets, dedupe=True, chain=chain), chain
    _require_file(args.text)
    if args.chunk_words <= args.overlap:
        raise UsageError("--chunk-words must exceed --overlap")
    return corpus_from_text(args.text, args.chunk_words, args.overlap, chain), chain


def cmd_index(args) -> int:
    corpus, chain = _load_corpus(args)
    index = build_index(corpus, chain)
    if args.out:
        save_index(index, args.out)
    if args.dense_out:
        provider = _provider(args)
        flat = FlatIndex.from_texts([c.id for c in corpus], [c.text for c in corpus], provider)
        flat.save(args.dense_out)
    print(f"N\t{index.N}")
    print(f"avg_len\t{index.avg_len:.3f}")
    print(f"vocab\t{index.vocab_size}")
    return 0


def cmd_search(args) -> int:
    sparse_kinds = {"tfidf", "bm25", "engine", "phrase"}
    if args.retriever in sparse_kinds:
        if not args.index:
            raise UsageError(f"--index is required for retriever {args.retriever!r}")
        _require_file(args.index)
        index = load_index(args.index)
        params = _bm25(args)
        if args.retriever == "tfidf":
            hits = search(index, args.query, args.k, Scorer.TFIDF)
        elif args.retriever == "bm25":
            hits = search(index, args.query, args.k, Scorer.BM25, params)
        elif args.retriever == "engine":
            hits = SearchEngine(index, params).search(args.query, args.k)
        else:
            hits = phrase_search(index, args.query, args.k, params)
    else:
        if not args.dense_index:
            raise UsageError(f"--dense-index is required for retriever {args.retriever!r}")
        _require_file(args.dense_index)
        flat = FlatIndex.load(args.dense_index)
        q = _provider(args).embed(args.query)
        if args.retriever == "forest":
            forest = build_forest(flat, args.trees, args.leaf_size, args.seed)
            hits = forest_search(forest, flat, q, args.k, args.search_k)
        else:
            metric = Metric.DOT if args.retriever == "flat-dot" else Metric.COSINE
            hits = flat_search(flat, q, args.k, metric)
    for rank, h in enumerate(hits, 1):
        print(f"{rank}\t{h.chunk_id}\t{h.score:.6f}")
    return 0


def cmd_bench_retrieval(args) -> int:
    _require_file(args.cqa)
    triplets, dropped = clean(load_cqa(args.cqa))
    for tid, reason in dropped:
        log.warning("dropped triplet %s: %s", tid, reason)
    if not triplets:
        raise UsageError(f"{args.cqa}: no complete triplets")
    config = B.RetrievalBenchConfig(
        retrievers=args.retrievers,
        k_values=args.k_values,
        metric=args.metric,
        provider=_provider(args),
        bm25=_bm25(args),
        n_trees=args.trees,
        leaf_size=args.leaf_size,
        search_k=args.search_k,
        seed=args.seed,
        threads=args.threads,
    )
    corpus = corpus_from_contexts(triplets, dedupe=True)
    queries = [(t.question, t.context) for t in triplets]
    report = B.run_retrieval_bench(corpus, queries, config)
    log.info("seed=%d queries=%d", report.seed, report.query_count)
    for name, secs in report.timings.items():
        log.info("%s: %.3fs", name, secs)
    _emit(B.render_report(report, args.format), args.output)
    return 0


def _load_pairs(path: Path) -> list[M.ScorePair]:
    _require_file(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(M.ScorePair(str(rec["prediction"]), str(rec["reference"]), str(rec.get("id", lineno))))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise UsageError(f"{path}:{lineno}: bad record ({exc})") from None
    if not pairs:
        raise UsageError(f"{path}: no prediction records")
    return pairs


def cmd_bench_generation(args) -> int:
    unknown = [m for m in args.metrics if m not in M.METRIC_NAMES]
    if unknown:
        raise UsageError(f"unknown metric(s) {unknown}")
    provider = _provider(args) if set(args.metrics) & {"sms", "bert"} else None
    post = B.run_generation_eval(_load_pairs(args.predictions), args.metrics, provider, args.threads)
    for pid, name, msg in post.errors:
        log.warning("pair %s excluded from %s: %s", pid, name, msg)
    if args.baseline:
        pre = B.run_generation_eval(_load_pairs(args.baseline), args.metrics, provider, args.threads)
        report = B.compare(pre, post)
    else:
        report = post
    _emit(B.render_report(report, args.format), args.output)
    return 0


def cmd_stats(args) -> int:
    _require_file(args.cqa)
    triplets, dropped = clean(load_cqa(args.cqa))
    if not triplets:
        raise UsageError(f"{args.cqa}: no complete triplets")
    stats = dataset_stats(triplets, top=args.top)
    print(f"triplets\t{stats.triplet_count}")
    print(f"dropped\t{len(dropped)}")
    print(f"extractive\t{stats.extractive_count}")
    print(f"abstractive\t{stats.abstractive_count}")
    for name, (lo, mean, hi) in stats.length_summary().items():
        print(f"{name}_words\tmin={lo}\tmean={mean:.1f}\tmax={hi}")
    for gram, count in stats.top_trigrams:
        print(f"trigram\t{' '.join(gram)}\t{count}")
    return 0


def _fmt_components(comps: dict) -> str:
    parts = []
    for key in sorted(comps):
        v = comps[key]
        if isinstance(v, (list, tuple)):
            parts.append(f"{key}=" + "/".join(f"{x:.6f}" for x in v))
        elif isinstance(v, float):
            parts.append(f"{key}={v:.6f}")
        else:
            parts.append(f"{key}={v}")
    return ";".join(parts)


def cmd_score(args) -> int:
    if args.input:
        pairs = _load_pairs(args.input)
    elif args.prediction is not None and args.reference is not None:
        pairs = [M.ScorePair(args.prediction, args.reference, "0")]
    else:
        raise UsageError("give --input FILE or both --prediction and --reference")
    provider = _provider(args) if set(args.metrics) & {"sms", "bert"} else None
    out = ["id,metric,value,components"]
    status = 0
    for pair in pairs:
        for name in args.metrics:
            try:
                v = M.score(name, pair.prediction, pair.reference, provider)
            except ValueError as exc:
                log.error("pair %s, %s: %s", pair.id, name, exc)
                status = 1
                continue
            out.append(f"{pair.id},{name},{v.value:.6f},{_fmt_components(v.components)}")
    _emit("\n".join(out) + "\n", args.output)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcqa", description="Retrieval and evaluation toolkit for regulatory QA corpora.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a sparse (and optionally dense) index")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cqa", type=Path, help="CQA JSON file; contexts become chunks")
    src.add_argument("--text", type=Path, help="raw UTF-8 text to chunk")
    p.add_argument("--chunk-words", type=_positive_int, default=200)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--no-stem", action="store_true")
    p.add_argument("--stopwords", type=Path)
    p.add_argument("--out", type=Path, help="sparse index output file")
    p.add_argument("--dense-out", type=Path, help="flat embedding index output (.npz)")
    _add_provider(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="query an index")
    p.add_argument("query")
    p.add_argument("--retriever", default="bm25", choices=["tfidf", "bm25", "engine", "phrase", "flat-dot", "flat-cosine", "forest"])
    p.add_argument("--index", type=Path)
    p.add_argument("--dense-index", type=Path)
    p.add_argument("-k", type=_positive_int, default=10)
    _add_bm25(p)
    _add_forest(p)
    _add_provider(p)
    p.set_defaults(func=cmd_search)

    pb = sub.add_parser("bench", help="run a benchmark harness")
    bsub = pb.add_subparsers(dest="mode", required=True)

    p = bsub.add_parser("retrieval", help="top-k retrieval benchmark over a CQA file")
    p.add_argument("--cqa", type=Path, required=True)
    p.add_argument("--retrievers", type=_names, default=B.RETRIEVERS)
    p.add_argument("--k-values", type=_k_list, default=(1, 3, 5, 10))
    p.add_argument("--metric", choices=B.BENCH_METRICS, default="bert")
    p.add_argument("--format", choices=["csv", "md"], default="csv")
    p.add_argument("--output", type=Path)
    p.add_argument("--threads", type=_positive_int, default=None)
    _add_bm25(p)
    _add_forest(p)
    _add_provider(p)
    p.set_defaults(func=cmd_bench_retrieval)

    p = bsub.add_parser("generation", help="average metrics over prediction/reference pairs")
    p.add_argument("--predictions", type=Path, required=True, help="JSONL with id, prediction, reference")
    p.add_argument("--baseline", type=Path, help="pre-fine-tuning predictions; produces a comparison table")
    p.add_argument("--metrics", type=_names, default=M.METRIC_NAMES)
    p.add_argument("--format", choices=["csv", "md"], default="csv")
    p.add_argument("--output", type=Path)
    p.add_argument("--threads", type=_positive_int, default=None)
    _add_provider(p)
    p.set_defaults(func=cmd_bench_generation)

    p = sub.add_parser("stats", help="dataset statistics for a CQA file")
    p.add_argument("cqa", type=Path)
    p.add_argument("--top", type=_positive_int, default=20)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", help="score prediction/reference pairs")
    p.add_argument("--prediction")
    p.add_argument("--reference")
    p.add_argument("--input", type=Path, help="JSONL with id, prediction, reference")
    p.add_argument("--metrics", type=_names, default=("f1", "bleu", "rouge1", "meteor"))
    p.add_argument("--output", type=Path)
    _add_provider(p)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"bcqa: error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"bcqa: runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
