"""Inverted index with TF-IDF and BM25 ranking, phrase matching and a binary on-disk format."""

from __future__ import annotations

import enum
import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from bcqa.corpus import Corpus
from bcqa.textkit import INDEX_CHAIN, AnalysisChain, analyze

log = logging.getLogger(__name__)


class Hit(NamedTuple):
    chunk_id: str
    score: float


def rank_hits(scored: Iterable[tuple[str, float]], k: int) -> list[Hit]:
    """Order by descending score, ties by ascending chunk id, and cut at k."""
    return [Hit(cid, s) for cid, s in sorted(scored, key=lambda h: (-h[1], h[0]))[:k]]


@dataclass(frozen=True)
class Posting:
    chunk_id: str
    term_freq: int
    positions: tuple[int, ...]


@dataclass
class InvertedIndex:
    postings: dict[str, list[Posting]]
    doc_len: dict[str, int]
    chain: AnalysisChain = INDEX_CHAIN
    warnings: list[str] = field(default_factory=list)
    _tf: dict[str, dict[str, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._tf = {t: {p.chunk_id: p.term_freq for p in plist} for t, plist in self.postings.items()}

    @property
    def N(self) -> int:
        return len(self.doc_len)

    @property
    def avg_len(self) -> float:
        return sum(self.doc_len.values()) / len(self.doc_len) if self.doc_len else 0.0

    @property
    def vocab_size(self) -> int:
        return len(self.postings)

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_freq(self, term: str, chunk_id: str) -> int:
        return self._tf.get(term, {}).get(chunk_id, 0)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self.doc_len


class IdfVariant(enum.Enum):
    CLASSIC = "classic"  # ln(N / (n_t + 1)); can go negative
    ROBERTSON_LUCENE = "lucene"  # ln(1 + (N - n_t + 0.5) / (n_t + 0.5))


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    idf_variant: IdfVariant = IdfVariant.ROBERTSON_LUCENE

    def __post_init__(self):
        if not self.k1 >= 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


class Scorer(enum.Enum):
    TFIDF = "tfidf"
    BM25 = "bm25"


def build_index(corpus: Corpus, chain: AnalysisChain = INDEX_CHAIN) -> InvertedIndex:
    postings: dict[str, list[Posting]] = {}
    doc_len: dict[str, int] = {}
    warnings = []
    for chunk in corpus.chunks:
        tokens = analyze(chunk.text, chain)
        if not tokens:
            msg = f"chunk {chunk.id!r} has no tokens after analysis; excluded"
            log.warning(msg)
            warnings.append(msg)
            continue
        doc_len[chunk.id] = len(tokens)
        positions: dict[str, list[int]] = {}
        for pos, tok in enumerate(tokens):
            positions.setdefault(tok, []).append(pos)
        for term, plist in positions.items():
            postings.setdefault(term, []).append(Posting(chunk.id, len(plist), tuple(plist)))
    return InvertedIndex(postings, doc_len, chain, warnings)


def _query_terms(index: InvertedIndex, query: str) -> list[str]:
    # distinct terms, first-occurrence order; fixes the summation order
    return list(dict.fromkeys(analyze(query, index.chain)))


def classic_idf(N: int, n_t: int) -> float:
    return math.log(N / (n_t + 1))


def lucene_idf(N: int, n_t: int) -> float:
    return math.log(1 + (N - n_t + 0.5) / (n_t + 0.5))


def _tfidf_term(tf: int, dl: int, N: int, n_t: int) -> float:
    return (tf / dl) * classic_idf(N, n_t)


def _bm25_term(tf: int, dl: int, avg_len: float, N: int, n_t: int, params: Bm25Params) -> float:
    idf = classic_idf(N, n_t) if params.idf_variant is IdfVariant.CLASSIC else lucene_idf(N, n_t)
    norm = params.k1 * (1 - params.b + params.b * dl / avg_len)
    return idf * (tf * (params.k1 + 1)) / (tf + norm)


def _check_chunk(index: InvertedIndex, chunk_id: str) -> None:
    if chunk_id not in index.doc_len:
        raise KeyError(f"chunk {chunk_id!r} is not in the index")


def tfidf_score(index: InvertedIndex, query: str, chunk_id: str) -> float:
    """Sum over shared terms of (f_t / |C|) * ln(N / (n_t + 1))."""
    _check_chunk(index, chunk_id)
    dl = index.doc_len[chunk_id]
    score = 0.0
    for t in _query_terms(index, query):
        tf = index.term_freq(t, chunk_id)
        if tf:
            score += _tfidf_term(tf, dl, index.N, index.doc_freq(t))
    return score


def bm25_score(index: InvertedIndex, query: str, chunk_id: str, params: Bm25Params = Bm25Params()) -> float:
    """BM25 with raw term counts; IDF form chosen by ``params.idf_variant``."""
    _check_chunk(index, chunk_id)
    dl = index.doc_len[chunk_id]
    avg = index.avg_len
    score = 0.0
    for t in _query_terms(index, query):
        tf = index.term_freq(t, chunk_id)
        if tf:
            score += _bm25_term(tf, dl, avg, index.N, index.doc_freq(t), params)
    return score


def _accumulate(index, terms, scorer, params, allowed=None):
    acc: dict[str, float] = {}
    N, avg = index.N, index.avg_len
    for t in terms:
        plist = index.postings.get(t)
        if not plist:
            continue
        n_t = len(plist)
        for p in plist:
            if allowed is not None and p.chunk_id not in allowed:
                continue
            dl = index.doc_len[p.chunk_id]
            if scorer is Scorer.TFIDF:
                w = _tfidf_term(p.term_freq, dl, N, n_t)
            else:
                w = _bm25_term(p.term_freq, dl, avg, N, n_t, params)
            acc[p.chunk_id] = acc.get(p.chunk_id, 0.0) + w
    return acc


def search(
    index: InvertedIndex,
    query: str,
    k: int,
    scorer: Scorer = Scorer.BM25,
    params: Bm25Params = Bm25Params(),
) -> list[Hit]:
    """Term-at-a-time top-k over the postings.

    BM25 keeps chunks scoring > 0; TF-IDF keeps any non-zero score, since
    its IDF is negative for terms found in nearly every chunk.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = _query_terms(index, query)
    if not terms:
        raise ValueError(f"query {query!r} has no terms after analysis")
    acc = _accumulate(index, terms, scorer, params)
    if scorer is Scorer.TFIDF:
        eligible = ((c, s) for c, s in acc.items() if s != 0)
    else:
        eligible = ((c, s) for c, s in acc.items() if s > 0)
    return rank_hits(eligible, k)


def phrase_matches(index: InvertedIndex, terms: list[str]) -> set[str]:
    """Chunks containing ``terms`` at consecutive positions."""
    if not terms:
        return set()
    pos_maps = []
    for t in terms:
        plist = index.postings.get(t)
        if not plist:
            return set()
        pos_maps.append({p.chunk_id: p.positions for p in plist})
    candidates = set(pos_maps[0])
    for pm in pos_maps[1:]:
        candidates &= pm.keys()
    hits = set()
    for cid in candidates:
        starts = set(pos_maps[0][cid])
        for offset, pm in enumerate(pos_maps[1:], start=1):
            starts &= {p - offset for p in pm[cid]}
            if not starts:
                break
        if starts:
            hits.add(cid)
    return hits


def phrase_search(index: InvertedIndex, phrase: str, k: int, params: Bm25Params = Bm25Params()) -> list[Hit]:
    """Chunks containing the whole phrase in order, ranked by BM25 of its terms."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = analyze(phrase, index.chain)
    if not terms:
        raise ValueError(f"phrase {phrase!r} has no terms after analysis")
    allowed = phrase_matches(index, terms)
    acc = _accumulate(index, list(dict.fromkeys(terms)), Scorer.BM25, params, allowed)
    return rank_hits(((c, s) for c, s in acc.items() if s > 0), k)


_QUOTED = re.compile(r'"([^"]*)"')


class SearchEngine:
    """Embedded full-text engine: stemmed analysis, BM25 ranking, quoted phrases.

    ``"fire separation" doors`` ranks by BM25 over all three terms but only
    keeps chunks containing the quoted words adjacently and in order.
    """

    def __init__(self, index: InvertedIndex, params: Bm25Params = Bm25Params()):
        self.index = index
        self.params = params

    @classmethod
    def from_corpus(cls, corpus: Corpus, chain: AnalysisChain = INDEX_CHAIN, params: Bm25Params = Bm25Params()):
        return cls(build_index(corpus, chain), params)

    def search(self, query: str, k: int) -> list[Hit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        phrases = [analyze(p, self.index.chain) for p in _QUOTED.findall(query)]
        phrases = [p for p in phrases if len(p) > 1]
        if not phrases:
            return search(self.index, query.replace('"', " "), k, Scorer.BM25, self.params)
        terms = _query_terms(self.index, query.replace('"', " "))
        allowed = None
        for p in phrases:
            m = phrase_matches(self.index, p)
            allowed = m if allowed is None else allowed & m
        acc = _accumulate(self.index, terms, Scorer.BM25, self.params, allowed)
        return rank_hits(((c, s) for c, s in acc.items() if s > 0), k)


# ---- persistence -----------------------------------------------------------
#
# Layout (all integers little-endian):
#   magic  b"SPIX" | u16 version | u8 flags (bit0 lowercase, bit1 stem)
#   u32 n_stopwords, then n_stopwords strings
#   u32 n_chunks, then per chunk: string id, u32 doc_len
#   u32 n_terms, then per term: string term, u32 n_postings,
#       per posting: u32 chunk ordinal, u32 tf, tf x u32 positions
# string = u32 byte length + UTF-8 bytes. Terms are written in sorted order,
# postings in chunk order.

MAGIC = b"SPIX"
FORMAT_VERSION = 1


class IndexFormatError(ValueError):
    pass


def _put_str(buf: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    buf += struct.pack("<I", len(b))
    buf += b


def serialize_index(index: InvertedIndex) -> bytes:
    buf = bytearray(MAGIC)
    flags = (1 if index.chain.lowercase else 0) | (2 if index.chain.stem else 0)
    buf += struct.pack("<HB", FORMAT_VERSION, flags)
    buf += struct.pack("<I", len(index.chain.stopwords))
    for w in sorted(index.chain.stopwords):
        _put_str(buf, w)
    ordinal = {}
    buf += struct.pack("<I", len(index.doc_len))
    for i, (cid, dl) in enumerate(index.doc_len.items()):
        ordinal[cid] = i
        _put_str(buf, cid)
        buf += struct.pack("<I", dl)
    buf += struct.pack("<I", len(index.postings))
    for term in sorted(index.postings):
        plist = index.postings[term]
        _put_str(buf, term)
        buf += struct.pack("<I", len(plist))
        for p in plist:
            buf += struct.pack(f"<II{len(p.positions)}I", ordinal[p.chunk_id], p.term_freq, *p.positions)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def unpack(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.data, self.off)
        except struct.error as exc:
            raise IndexFormatError(f"truncated index at byte {self.off}") from exc
        self.off += struct.calcsize(fmt)
        return vals

    def string(self) -> str:
        (n,) = self.unpack("<I")
        if self.off + n > len(self.data):
            raise IndexFormatError(f"truncated string at byte {self.off}")
        s = self.data[self.off : self.off + n].decode("utf-8")
        self.off += n
        return s


def deserialize_index(data: bytes) -> InvertedIndex:
    if data[:4] != MAGIC:
        raise IndexFormatError("not a sparse index file (bad magic)")
    r = _Reader(data)
    r.off = 4
    version, flags = r.unpack("<HB")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version}")
    (n_stop,) = r.unpack("<I")
    stopwords = frozenset(r.string() for _ in range(n_stop))
    chain = AnalysisChain(lowercase=bool(flags & 1), stem=bool(flags & 2), stopwords=stopwords)
    (n_chunks,) = r.unpack("<I")
    ids = []
    doc_len = {}
    for _ in range(n_chunks):
        cid = r.string()
        (doc_len[cid],) = r.unpack("<I")
        ids.append(cid)
    (n_terms,) = r.unpack("<I")
    postings = {}
    for _ in range(n_terms):
        term = r.string()
        (n_post,) = r.unpack("<I")
        plist = []
        for _ in range(n_post):
            ordv, tf = r.unpack("<II")
            positions = r.unpack(f"<{tf}I")
            plist.append(Posting(ids[ordv], tf, tuple(positions)))
        postings[term] = plist
    if r.off != len(data):
        raise IndexFormatError(f"{len(data) - r.off} trailing bytes after index")
    return InvertedIndex(postings, doc_len, chain)


def save_index(index: InvertedIndex, path: str | Path) -> None:
    Path(path).write_bytes(serialize_index(index))


def load_index(path: str | Path) -> InvertedIndex:
    return deserialize_index(Path(path).read_bytes())
