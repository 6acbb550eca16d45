"""CQA dataset loading, cleaning, characterisation and corpus construction."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from bcqa.textkit import INDEX_CHAIN, METRIC_CHAIN, AnalysisChain, analyze, ngrams, token_spans, tokenize


class SchemaError(ValueError):
    """A CQA record is missing a field or has a field of the wrong type."""


class CqaParseError(ValueError):
    """The CQA file is not valid JSON."""


@dataclass(frozen=True)
class CqaTriplet:
    id: str
    context: str
    question: str
    answer: str


@dataclass(frozen=True)
class Chunk:
    id: str
    text: str


@dataclass(frozen=True)
class Corpus:
    """Ordered, immutable chunk collection with its length statistics.

    ``avg_len`` is the mean analyzed token count per chunk under ``chain``.
    """

    chunks: tuple[Chunk, ...]
    chain: AnalysisChain = INDEX_CHAIN
    avg_len: float = field(init=False)
    _text_by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        chunks = tuple(self.chunks)
        object.__setattr__(self, "chunks", chunks)
        seen = set()
        for c in chunks:
            if c.id in seen:
                raise ValueError(f"duplicate chunk id {c.id!r}")
            if not c.text:
                raise ValueError(f"chunk {c.id!r} has empty text")
            seen.add(c.id)
        total = sum(len(analyze(c.text, self.chain)) for c in chunks)
        object.__setattr__(self, "avg_len", total / len(chunks) if chunks else 0.0)
        object.__setattr__(self, "_text_by_id", {c.id: c.text for c in chunks})

    @property
    def N(self) -> int:
        return len(self.chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)

    def text_of(self, chunk_id: str) -> str:
        return self._text_by_id[chunk_id]


_FIELDS = ("Context", "Question", "Answer")


def load_cqa(path: str | Path) -> list[CqaTriplet]:
    """Load a CQA JSON file (top-level array of Context/Question/Answer objects).

    Records without an ``Id`` get their 0-based position as id. Raises
    ``FileNotFoundError``, :class:`CqaParseError` (with the offending line) or
    :class:`SchemaError`.
    """
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        lines = raw.splitlines() or [""]
        line = lines[min(exc.lineno, len(lines)) - 1].strip()
        raise CqaParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg} near {line[:80]!r}") from None
    if not isinstance(data, list):
        raise SchemaError(f"{path}: top-level value must be an array of records")

    out = []
    ids = set()
    for idx, rec in enumerate(data):
        if not isinstance(rec, dict):
            raise SchemaError(f"record {idx}: expected an object")
        for name in _FIELDS:
            if name not in rec:
                raise SchemaError(f"record {idx}: missing field {name!r}")
            if not isinstance(rec[name], str):
                raise SchemaError(f"record {idx}: field {name!r} must be a string")
        rid = rec.get("Id", str(idx))
        if not isinstance(rid, (str, int)):
            raise SchemaError(f"record {idx}: field 'Id' must be a string")
        rid = str(rid)
        if rid in ids:
            raise SchemaError(f"record {idx}: duplicate Id {rid!r}")
        ids.add(rid)
        out.append(CqaTriplet(rid, rec["Context"], rec["Question"], rec["Answer"]))
    return out


def clean(triplets: Sequence[CqaTriplet]) -> tuple[list[CqaTriplet], list[tuple[str, str]]]:
    """Drop triplets with any blank field; report each drop as (id, reason)."""
    kept, dropped = [], []
    for t in triplets:
        for name in ("context", "question", "answer"):
            if not getattr(t, name).strip():
                dropped.append((t.id, f"empty {name}"))
                break
        else:
            kept.append(t)
    return kept, dropped


class AnswerKind(enum.Enum):
    EXTRACTIVE = "extractive"
    ABSTRACTIVE = "abstractive"


def classify_answer(answer: str, context: str) -> tuple[AnswerKind, float]:
    """Label an answer extractive when > 50% of its distinct tokens occur in the context."""
    answer_types = set(analyze(answer, METRIC_CHAIN))
    if not answer_types:
        raise ValueError("answer has no tokens after analysis")
    context_types = set(analyze(context, METRIC_CHAIN))
    ratio = len(answer_types & context_types) / len(answer_types)
    kind = AnswerKind.EXTRACTIVE if ratio > 0.5 else AnswerKind.ABSTRACTIVE
    return kind, ratio


@dataclass(frozen=True)
class DatasetStats:
    triplet_count: int
    length_histograms: dict[str, dict[int, int]]
    extractive_count: int
    abstractive_count: int
    top_trigrams: list[tuple[tuple[str, str, str], int]]

    def length_summary(self) -> dict[str, tuple[int, float, int]]:
        """(min, mean, max) word length per field."""
        out = {}
        for name, hist in self.length_histograms.items():
            total = sum(hist.values())
            mean = sum(k * v for k, v in hist.items()) / total
            out[name] = (min(hist), mean, max(hist))
        return out


def dataset_stats(triplets: Sequence[CqaTriplet], top: int = 20) -> DatasetStats:
    if not triplets:
        raise ValueError("dataset_stats needs at least one triplet")
    hists = {name: Counter() for name in ("context", "question", "answer")}
    n_extractive = 0
    trigram_counts = Counter()
    for t in triplets:
        for name, hist in hists.items():
            hist[len(tokenize(getattr(t, name)))] += 1
        kind, _ = classify_answer(t.answer, t.context)
        n_extractive += kind is AnswerKind.EXTRACTIVE
        trigram_counts.update(ngrams(analyze(t.question, METRIC_CHAIN), 3))
    # ties keep first-occurrence order (Counter preserves insertion order)
    ranked = sorted(trigram_counts.items(), key=lambda kv: -kv[1])
    return DatasetStats(
        triplet_count=len(triplets),
        length_histograms={k: dict(sorted(v.items())) for k, v in hists.items()},
        extractive_count=n_extractive,
        abstractive_count=len(triplets) - n_extractive,
        top_trigrams=ranked[:top],
    )


def corpus_from_contexts(
    triplets: Sequence[CqaTriplet], dedupe: bool = True, chain: AnalysisChain = INDEX_CHAIN
) -> Corpus:
    """Pool triplet contexts into a corpus, one chunk per (unique) context.

    Chunk ids are the source triplet ids joined with ``+`` when deduplicated
    contexts are shared by several triplets.
    """
    if not triplets:
        raise ValueError("corpus_from_contexts needs at least one triplet")
    if not dedupe:
        return Corpus(tuple(Chunk(t.id, t.context) for t in triplets), chain)
    groups: dict[str, list[str]] = {}
    for t in triplets:
        groups.setdefault(t.context, []).append(t.id)
    return Corpus(tuple(Chunk("+".join(ids), text) for text, ids in groups.items()), chain)


def context_chunk_ids(corpus: Corpus) -> dict[str, str]:
    """Map each source triplet id to the id of the chunk holding its context."""
    out = {}
    for c in corpus.chunks:
        for tid in c.id.split("+"):
            out[tid] = c.id
    return out


def corpus_from_text(
    path: str | Path, chunk_words: int, overlap_words: int = 0, chain: AnalysisChain = INDEX_CHAIN
) -> Corpus:
    """Chunk a text file into sliding windows of ``chunk_words`` tokens.

    Windows start every ``chunk_words - overlap_words`` tokens; each chunk's
    text is the original slice from its first to its last token, separators
    included. Ids are ``<file stem>:<word offset>``.
    """
    if not (chunk_words > overlap_words >= 0):
        raise ValueError(f"need chunk_words > overlap_words >= 0, got {chunk_words}, {overlap_words}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    spans = token_spans(text)
    if not spans:
        raise ValueError(f"{path}: no words to chunk")
    stride = chunk_words - overlap_words
    chunks = []
    for start in range(0, len(spans), stride):
        window = spans[start : start + chunk_words]
        chunks.append(Chunk(f"{path.stem}:{start}", text[window[0][1] : window[-1][2]]))
    return Corpus(tuple(chunks), chain)
