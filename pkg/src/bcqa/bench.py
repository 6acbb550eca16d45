"""Retrieval top-k benchmark and pre/post generation comparison."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from bcqa import metrics as M
from bcqa.corpus import Corpus
from bcqa.dense import FlatIndex, HashedNGramProvider, Metric, build_forest, flat_search, forest_search
from bcqa.sparse import Bm25Params, Hit, Scorer, SearchEngine, build_index, search
from bcqa.textkit import INDEX_CHAIN, AnalysisChain

log = logging.getLogger(__name__)

RETRIEVERS = ("tfidf", "bm25", "engine", "flat-dot", "flat-cosine", "forest")
BENCH_METRICS = ("bert", "f1")

# Baseline lexical retrievers match surface forms; the engine stems.
PLAIN_CHAIN = AnalysisChain(lowercase=True, stem=False)

Retriever = Callable[[str, int], list[Hit]]


@dataclass
class RetrievalBenchConfig:
    retrievers: tuple[str, ...] = RETRIEVERS
    k_values: tuple[int, ...] = (1, 3, 5, 10)
    metric: str = "bert"
    provider: object = field(default_factory=HashedNGramProvider)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    n_trees: int = 10
    leaf_size: int = 16
    search_k: int | None = None
    seed: int = 42
    threads: int | None = None

    def __post_init__(self):
        self.retrievers = tuple(self.retrievers)
        self.k_values = tuple(self.k_values)
        unknown = [r for r in self.retrievers if r not in RETRIEVERS]
        if unknown:
            raise ValueError(f"unknown retriever(s) {unknown}; choose from {', '.join(RETRIEVERS)}")
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ValueError("k values must be positive")
        if any(b <= a for a, b in zip(self.k_values, self.k_values[1:])):
            raise ValueError("k values must be strictly increasing")
        if self.metric not in BENCH_METRICS:
            raise ValueError(f"bench metric must be one of {BENCH_METRICS}, got {self.metric!r}")


def build_retrievers(corpus: Corpus, config: RetrievalBenchConfig) -> dict[str, Retriever]:
    """Index ``corpus`` once per configured retriever family."""
    out: dict[str, Retriever] = {}
    names = set(config.retrievers)
    if names & {"tfidf", "bm25"}:
        plain = build_index(corpus, PLAIN_CHAIN)
        out["tfidf"] = lambda q, k: search(plain, q, k, Scorer.TFIDF)
        out["bm25"] = lambda q, k: search(plain, q, k, Scorer.BM25, config.bm25)
    if "engine" in names:
        engine = SearchEngine(build_index(corpus, INDEX_CHAIN), config.bm25)
        out["engine"] = engine.search
    if names & {"flat-dot", "flat-cosine", "forest"}:
        provider = config.provider
        flat = FlatIndex.from_texts([c.id for c in corpus], [c.text for c in corpus], provider)
        out["flat-dot"] = lambda q, k: flat_search(flat, provider.embed(q), k, Metric.DOT)
        out["flat-cosine"] = lambda q, k: flat_search(flat, provider.embed(q), k, Metric.COSINE)
        if "forest" in names:
            forest = build_forest(flat, config.n_trees, config.leaf_size, config.seed)

            def _forest(q, k):
                sk = config.search_k if config.search_k is not None else forest.n_trees * k
                return forest_search(forest, flat, provider.embed(q), k, max(sk, k))

            out["forest"] = _forest
    return {name: out[name] for name in config.retrievers}


@dataclass(frozen=True)
class BenchRow:
    retriever: str
    k: int
    precision: float
    recall: float
    f1: float


@dataclass
class RetrievalBenchReport:
    rows: list[BenchRow]
    query_count: int
    timings: dict[str, float] = field(default_factory=dict)
    empty_results: dict[str, int] = field(default_factory=dict)
    seed: int = 42


def _score_text(metric: str, prediction: str, reference: str, provider) -> tuple[float, float, float]:
    if metric == "f1":
        v = M.token_f1(prediction, reference)
    else:
        v = M.bert_style_text(prediction, reference, provider)
    return v.components["precision"], v.components["recall"], v.value


def run_retrieval_bench(
    corpus: Corpus,
    queries: Sequence[tuple[str, str]],
    config: RetrievalBenchConfig,
    retrievers: dict[str, Retriever] | None = None,
) -> RetrievalBenchReport:
    """Score every (retriever, k) cell averaged over ``queries``.

    Each query is retrieved once at the largest k; the top-k prediction for
    a smaller k is the prefix of that list. Retrieved chunk texts are joined
    by newlines in rank order and scored against the reference context.
    """
    for q, ref in queries:
        if not ref.strip():
            raise ValueError(f"query {q!r} has an empty reference")
    if retrievers is None:
        retrievers = build_retrievers(corpus, config)
    kmax = config.k_values[-1]
    rows = []
    timings = {}
    empties = {}

    for name in config.retrievers:
        retrieve = retrievers[name]

        def one(item, retrieve=retrieve, name=name):
            question, reference = item
            try:
                hits = retrieve(question, kmax)
            except (ValueError, KeyError) as exc:
                log.warning("%s: no results for %r (%s)", name, question, exc)
                hits = []
            texts = [corpus.text_of(h.chunk_id) for h in hits]
            scores = [_score_text(config.metric, "\n".join(texts[:k]), reference, config.provider) for k in config.k_values]
            return scores, not hits

        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, queries))
        timings[name] = time.perf_counter() - t0
        empties[name] = sum(empty for _, empty in results)
        if empties[name]:
            log.warning("%s returned no results for %d of %d queries", name, empties[name], len(queries))

        n = len(results)
        for ki, k in enumerate(config.k_values):
            if n == 0:
                continue
            p = sum(r[0][ki][0] for r in results) / n
            rc = sum(r[0][ki][1] for r in results) / n
            f = sum(r[0][ki][2] for r in results) / n
            rows.append(BenchRow(name, k, p, rc, f))
    return RetrievalBenchReport(rows, len(queries), timings, empties, config.seed)


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    mean: float
    n: int
    excluded: int
    components: dict = field(default_factory=dict)


@dataclass
class GenerationReport:
    summaries: dict[str, MetricSummary]
    errors: list[tuple[str, str, str]] = field(default_factory=list)  # (pair id, metric, message)


def run_generation_eval(
    pairs: Sequence[M.ScorePair], metric_names: Sequence[str] = M.METRIC_NAMES, provider=None, threads: int | None = None
) -> GenerationReport:
    """Mean of each metric over all pairs; failing pairs are excluded and recorded."""
    if not pairs:
        raise ValueError("need at least one prediction/reference pair")
    for name in metric_names:
        if name not in M.METRIC_NAMES:
            raise ValueError(f"unknown metric {name!r}")
    if provider is None and any(n in ("sms", "bert") for n in metric_names):
        provider = HashedNGramProvider()

    def one(pair):
        out = {}
        for name in metric_names:
            try:
                out[name] = M.score(name, pair.prediction, pair.reference, provider)
            except ValueError as exc:
                out[name] = exc
        return out

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(one, pairs))

    summaries = {}
    errors = []
    for name in metric_names:
        ok = []
        for pair, res in zip(pairs, results):
            v = res[name]
            if isinstance(v, Exception):
                errors.append((pair.id, name, str(v)))
            else:
                ok.append(v)
        if ok:
            avg = M.average(ok)
            summaries[name] = MetricSummary(name, avg.value, len(ok), len(pairs) - len(ok), avg.components)
        else:
            summaries[name] = MetricSummary(name, float("nan"), 0, len(pairs))
    return GenerationReport(summaries, errors)


def improvement_pct(pre: float, post: float, direction: M.Direction = M.Direction.HIGHER_BETTER) -> float:
    """Relative change in percent, signed so that positive means better."""
    if pre == 0:
        raise ZeroDivisionError("improvement is undefined for a zero baseline")
    if direction is M.Direction.LOWER_BETTER:
        return 100.0 * (pre - post) / pre
    return 100.0 * (post - pre) / pre


@dataclass(frozen=True)
class ComparisonRow:
    metric: str
    pre: float
    post: float
    improvement: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]


def compare(pre: GenerationReport, post: GenerationReport) -> ComparisonReport:
    """Pair up metrics present in both reports; a zero baseline yields NaN improvement."""
    rows = []
    for name, before in pre.summaries.items():
        after = post.summaries.get(name)
        if after is None:
            continue
        try:
            imp = improvement_pct(before.mean, after.mean, M.DIRECTIONS[name])
        except ZeroDivisionError:
            log.warning("%s: zero baseline, improvement undefined", name)
            imp = float("nan")
        rows.append(ComparisonRow(name, before.mean, after.mean, imp))
    return ComparisonReport(rows)


def _table(report) -> tuple[list[str], list[list[str]]]:
    if isinstance(report, RetrievalBenchReport):
        header = ["retriever", "k", "precision", "recall", "f1"]
        body = [[r.retriever, str(r.k), f"{r.precision:.3f}", f"{r.recall:.3f}", f"{r.f1:.3f}"] for r in report.rows]
    elif isinstance(report, ComparisonReport):
        header = ["metric", "pre", "post", "improvement_pct"]
        body = [[r.metric, f"{r.pre:.3f}", f"{r.post:.3f}", f"{r.improvement:.2f}"] for r in report.rows]
    elif isinstance(report, GenerationReport):
        header = ["metric", "mean", "n", "excluded"]
        body = [[s.metric, f"{s.mean:.3f}", str(s.n), str(s.excluded)] for s in report.summaries.values()]
    else:
        raise TypeError(f"cannot render {type(report).__name__}")
    return header, body


def render_report(report, fmt: str = "csv") -> str:
    """CSV or Markdown table with a fixed column order; output is byte-stable."""
    header, body = _table(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
