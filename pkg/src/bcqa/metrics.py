"""Sentence-pair evaluation metrics: token F1, BLEU, ROUGE-1, SMS, METEOR and greedy embedding matching.

All token-level metrics analyze text with lowercasing and no stemming.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bcqa.porter import stem as porter_stem
from bcqa.textkit import METRIC_CHAIN, analyze, ngrams
from bcqa.transport import uniform_transport


@dataclass(frozen=True)
class ScorePair:
    prediction: str
    reference: str
    id: str = ""


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    components: dict = field(default_factory=dict)


def _tokens(text: str) -> list[str]:
    return analyze(text, METRIC_CHAIN)


def _ref_tokens(reference: str) -> list[str]:
    toks = _tokens(reference)
    if not toks:
        raise ValueError("reference has no tokens after analysis")
    return toks


def _overlap(pred: Sequence, ref: Sequence) -> int:
    cp, cr = Counter(pred), Counter(ref)
    return sum(min(c, cr[w]) for w, c in cp.items())


def _harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def token_f1(prediction: str, reference: str) -> MetricValue:
    """Unigram F1 with clipped (multiset) overlap."""
    ref = _ref_tokens(reference)
    pred = _tokens(prediction)
    if not pred:
        return MetricValue("f1", 0.0, {"precision": 0.0, "recall": 0.0})
    common = _overlap(pred, ref)
    p, r = common / len(pred), common / len(ref)
    return MetricValue("f1", _harmonic(p, r), {"precision": p, "recall": r})


def bleu(
    prediction: str,
    reference: str,
    max_n: int = 2,
    weights: Sequence[float] | None = None,
    smoothing: float | None = None,
) -> MetricValue:
    """Sentence BLEU with clipped n-gram precision and brevity penalty min(1, |P|/|R|).

    Without ``smoothing`` any zero n-gram precision makes the score 0. With
    ``smoothing=eps`` a zero match count is replaced by ``eps``.
    """
    if weights is None:
        weights = [1 / max_n] * max_n
    if len(weights) != max_n:
        raise ValueError(f"need {max_n} weights, got {len(weights)}")
    if not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
        raise ValueError(f"weights must sum to 1, got {sum(weights)}")
    ref = _ref_tokens(reference)
    pred = _tokens(prediction)
    bp = min(1.0, len(pred) / len(ref))
    precisions = []
    for n in range(1, max_n + 1):
        cand = ngrams(pred, n)
        if not cand:
            precisions.append(0.0)
            continue
        matches = _overlap(cand, ngrams(ref, n))
        if matches == 0 and smoothing:
            matches = smoothing
        precisions.append(matches / len(cand))
    comps = {"precisions": precisions, "bp": bp}
    if min(precisions) == 0:
        return MetricValue("bleu", 0.0, comps)
    score = bp * math.exp(sum(w * math.log(p) for w, p in zip(weights, precisions)))
    return MetricValue("bleu", score, comps)


def rouge1(prediction: str, reference: str) -> MetricValue:
    """Clipped unigram recall against the reference."""
    ref = _ref_tokens(reference)
    return MetricValue("rouge1", _overlap(_tokens(prediction), ref) / len(ref))


def _token_vectors(tokens: Sequence[str], provider) -> tuple[list[str], np.ndarray]:
    kept, vecs = [], []
    for tok in tokens:
        v = np.asarray(provider.embed(tok), dtype=float)
        if np.linalg.norm(v) > 0:
            kept.append(tok)
            vecs.append(v / np.linalg.norm(v))
    return kept, np.array(vecs).reshape(len(vecs), provider.dim)


def sms(prediction: str, reference: str, provider) -> MetricValue:
    """Word-level optimal transport cost with cosine distance (lower is more similar).

    Each side carries uniform mass over its tokens; tokens whose embedding
    is the zero vector are dropped first. Repeated tokens are merged into one
    node with their combined mass, which leaves the optimum unchanged.
    """
    pred_toks, _ = _token_vectors(_tokens(prediction), provider)
    ref_toks, _ = _token_vectors(_tokens(reference), provider)
    if not pred_toks or not ref_toks:
        raise ValueError("SMS needs at least one embeddable token on each side")
    pc, rc = Counter(pred_toks), Counter(ref_toks)
    p_types, r_types = list(pc), list(rc)
    _, P = _token_vectors(p_types, provider)
    _, R = _token_vectors(r_types, provider)
    cost = np.clip(1.0 - P @ R.T, 0.0, 2.0)
    same = np.array([[a == b for b in r_types] for a in p_types])
    cost[same] = 0.0
    value, _ = uniform_transport(cost, [pc[t] for t in p_types], [rc[t] for t in r_types])
    return MetricValue("sms", value)


def _align(pred: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Two-pass one-to-one alignment: exact forms, then Porter stems; leftmost-first."""
    used_ref: set[int] = set()
    pairs: dict[int, int] = {}
    for key in (lambda w: w, porter_stem):
        ref_keys = [key(w) for w in ref]
        for i, w in enumerate(pred):
            if i in pairs:
                continue
            k = key(w)
            for j, rk in enumerate(ref_keys):
                if j not in used_ref and rk == k:
                    pairs[i] = j
                    used_ref.add(j)
                    break
    return sorted(pairs.items())


def _count_chunks(alignment: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(prediction: str, reference: str, gamma: float = 0.5, theta: float = 3.0) -> MetricValue:
    """F_mean (beta = 1) times a fragmentation penalty gamma * (chunks / matches) ** theta."""
    ref = _ref_tokens(reference)
    pred = _tokens(prediction)
    alignment = _align(pred, ref)
    m = len(alignment)
    if m == 0:
        return MetricValue("meteor", 0.0, {"precision": 0.0, "recall": 0.0, "f_mean": 0.0, "penalty": 0.0})
    p, r = m / len(pred), m / len(ref)
    f_mean = _harmonic(p, r)
    chunks = _count_chunks(alignment)
    penalty = gamma * (chunks / m) ** theta
    comps = {"precision": p, "recall": r, "f_mean": f_mean, "penalty": penalty, "chunks": chunks}
    return MetricValue("meteor", f_mean * (1 - penalty), comps)


@dataclass
class TokenEmbeddingSet:
    tokens: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("need exactly one vector per token")

    @classmethod
    def from_text(cls, text: str, provider) -> "TokenEmbeddingSet":
        toks, vecs = _token_vectors(_tokens(text), provider)
        return cls(toks, vecs)


def bert_style_score(pred: TokenEmbeddingSet, ref: TokenEmbeddingSet) -> MetricValue:
    """Greedy matching: each token takes its best cosine on the other side."""
    if not pred.tokens or not ref.tokens:
        raise ValueError("greedy matching needs non-empty token sets")
    if pred.vectors.shape[1] != ref.vectors.shape[1]:
        raise ValueError("embedding dimensions differ")
    pn = np.linalg.norm(pred.vectors, axis=1)
    rn = np.linalg.norm(ref.vectors, axis=1)
    if np.any(pn == 0) or np.any(rn == 0):
        raise ValueError("zero vector in token embeddings")
    sim = (pred.vectors / pn[:, None]) @ (ref.vectors / rn[:, None]).T
    sim = np.clip(sim, -1.0, 1.0)
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MetricValue("bert", f1, {"precision": p, "recall": r})


def bert_style_text(prediction: str, reference: str, provider) -> MetricValue:
    """:func:`bert_style_score` on provider embeddings of each token; empty prediction scores 0."""
    ref = TokenEmbeddingSet.from_text(reference, provider)
    pred = TokenEmbeddingSet.from_text(prediction, provider)
    if not ref.tokens:
        raise ValueError("reference has no embeddable tokens")
    if not pred.tokens:
        return MetricValue("bert", 0.0, {"precision": 0.0, "recall": 0.0})
    return bert_style_score(pred, ref)


def average(values: Sequence[MetricValue]) -> MetricValue:
    """Arithmetic mean of values and of the components every item shares."""
    if not values:
        raise ValueError("cannot average an empty list")
    names = {v.name for v in values}
    if len(names) != 1:
        raise ValueError(f"cannot average mixed metrics: {sorted(names)}")
    n = len(values)
    shared = set(values[0].components)
    for v in values[1:]:
        shared &= set(v.components)
    comps = {}
    for key in sorted(shared):
        items = [v.components[key] for v in values]
        if all(isinstance(x, (list, tuple)) for x in items) and len({len(x) for x in items}) == 1:
            comps[key] = [sum(col) / n for col in zip(*items)]
        elif all(isinstance(x, (int, float)) for x in items):
            comps[key] = sum(items) / n
    return MetricValue(names.pop(), sum(v.value for v in values) / n, comps)


class Direction(enum.Enum):
    HIGHER_BETTER = "higher"
    LOWER_BETTER = "lower"


METRIC_NAMES = ("f1", "bleu", "rouge1", "sms", "meteor", "bert")
DIRECTIONS = {name: Direction.HIGHER_BETTER for name in METRIC_NAMES}
DIRECTIONS["sms"] = Direction.LOWER_BETTER


def score(name: str, prediction: str, reference: str, provider=None) -> MetricValue:
    """Dispatch a metric by name; ``sms`` and ``bert`` need an embedding provider."""
    if name == "f1":
        return token_f1(prediction, reference)
    if name == "bleu":
        return bleu(prediction, reference)
    if name == "rouge1":
        return rouge1(prediction, reference)
    if name == "meteor":
        return meteor(prediction, reference)
    if name in ("sms", "bert"):
        if provider is None:
            raise ValueError(f"metric {name!r} needs an embedding provider")
        return sms(prediction, reference, provider) if name == "sms" else bert_style_text(prediction, reference, provider)
    raise ValueError(f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}")
