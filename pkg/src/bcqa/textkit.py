"""Deterministic text analysis shared by the retrievers and the metrics."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from bcqa.porter import stem as porter_stem

# Letters and digits of any script; underscore is a separator.
_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class AnalysisChain:
    """Per-token normalisation applied after tokenization.

    Order is lowercase, stopword removal, then stemming.
    """

    lowercase: bool = True
    stem: bool = True
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.stopwords, frozenset):
            object.__setattr__(self, "stopwords", frozenset(self.stopwords))


# Metrics compare surface forms.
METRIC_CHAIN = AnalysisChain(lowercase=True, stem=False)
INDEX_CHAIN = AnalysisChain(lowercase=True, stem=True)


def tokenize(text: str) -> list[str]:
    """Split text into maximal runs of letters/digits.

    >>> tokenize("A-3.8.2.5")
    ['A', '3', '8', '2', '5']
    """
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[str, int, int]]:
    """Like :func:`tokenize` but keeps each token's (start, end) offsets."""
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def analyze(text: str, chain: AnalysisChain = INDEX_CHAIN) -> list[str]:
    out = []
    for tok in _TOKEN_RE.findall(text):
        if chain.lowercase:
            tok = tok.lower()
        if tok in chain.stopwords:
            continue
        if chain.stem:
            tok = porter_stem(tok)
        out.append(tok)
    return out


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a UTF-8 stopword file, one word per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())

