"""Embedding providers, exact inner-product / cosine search, and a random-projection forest."""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from bcqa.sparse import Hit, rank_hits
from bcqa.textkit import METRIC_CHAIN, analyze

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedNGramProvider:
    """Signed feature hashing of character trigrams, L2-normalised.

    Each lowercased token is padded as ``#token#``; every trigram is hashed
    with 64-bit FNV-1a over its UTF-8 bytes, bucketed by ``h % dim`` and
    signed by bit 63.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._cache: dict[str, tuple[tuple[int, float], ...]] = {}

    def _token_features(self, token: str):
        feats = self._cache.get(token)
        if feats is None:
            padded = f"#{token}#"
            out = []
            for i in range(len(padded) - 2):
                h = fnv1a_64(padded[i : i + 3].encode("utf-8"))
                out.append((h % self.dim, -1.0 if h >> 63 else 1.0))
            feats = tuple(out)
            self._cache[token] = feats
        return feats

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in analyze(text, METRIC_CHAIN):
            for bucket, sign in self._token_features(tok):
                vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def __repr__(self):
        return f"HashedNGramProvider(dim={self.dim})"


class FileBackedProvider:
    """Precomputed vectors keyed by exact text."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise ValueError("no vectors supplied")
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        self.vectors = vectors

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "FileBackedProvider":
        """Load ``{"id": str, "vector": [numbers]}`` lines."""
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key, vec = rec["id"], np.asarray(rec["vector"], dtype=float)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad embedding record ({exc})") from None
                if not isinstance(key, str) or vec.ndim != 1 or vec.size == 0:
                    raise ValueError(f"{path}:{lineno}: bad embedding record")
                if not np.all(np.isfinite(vec)):
                    raise ValueError(f"{path}:{lineno}: non-finite vector component")
                if key in vectors:
                    raise ValueError(f"{path}:{lineno}: duplicate id {key!r}")
                vectors[key] = vec
        try:
            return cls(vectors)
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.vectors[text].copy()
        except KeyError:
            raise KeyError(f"no embedding for id {text!r}") from None

    def __repr__(self):
        return f"FileBackedProvider(n={len(self.vectors)}, dim={self.dim})"


def _as_vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {a.shape}")
    return a


def dot(q, p) -> float:
    q, p = _as_vec(q), _as_vec(p)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape[0]} vs {p.shape[0]}")
    return float(q @ p)


def cosine(q, p) -> float:
    q, p = _as_vec(q), _as_vec(p)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape[0]} vs {p.shape[0]}")
    nq, np_ = np.linalg.norm(q), np.linalg.norm(p)
    if nq == 0 or np_ == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float((q @ p) / (nq * np_))


class Metric(enum.Enum):
    DOT = "dot"
    COSINE = "cosine"


def _row_dots(mat: np.ndarray, q: np.ndarray) -> np.ndarray:
    # Row-wise reduction; a row's value depends only on that row, so
    # subsets and the full matrix give bit-identical scores.
    return (mat * q).sum(axis=1)


@dataclass
class FlatIndex:
    ids: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"need one row per id: {len(self.ids)} ids, shape {self.vectors.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in flat index")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite vector component")
        self._unit = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_texts(cls, ids: Sequence[str], texts: Sequence[str], provider: EmbeddingProvider) -> "FlatIndex":
        vecs = np.array([provider.embed(t) for t in texts], dtype=float).reshape(len(ids), provider.dim)
        return cls(list(ids), vecs)

    def unit_vectors(self) -> np.ndarray:
        if self._unit is None:
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.any(norms == 0):
                bad = [self.ids[i] for i in np.flatnonzero(norms == 0)[:3]]
                raise ValueError(f"zero vector(s) under cosine metric: {bad}")
            self._unit = self.vectors / norms[:, None]
        return self._unit

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, ids=np.array(self.ids, dtype=str), vectors=self.vectors)

    @classmethod
    def load(cls, path: str | Path) -> "FlatIndex":
        with np.load(path, allow_pickle=False) as data:
            return cls([str(i) for i in data["ids"]], data["vectors"])


def _check_query(index: FlatIndex, q) -> np.ndarray:
    q = _as_vec(q)
    if q.shape[0] != index.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs index {index.dim}")
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite query component")
    return q


def flat_search(index: FlatIndex, q, k: int, metric: Metric = Metric.DOT) -> list[Hit]:
    """Exact top-k by scanning every stored vector."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _check_query(index, q)
    if metric is Metric.COSINE:
        nq = np.linalg.norm(q)
        if nq == 0:
            raise ValueError("cosine is undefined for a zero query vector")
        scores = _row_dots(index.unit_vectors(), q / nq)
    else:
        scores = _row_dots(index.vectors, q)
    return rank_hits(zip(index.ids, scores.tolist()), k)


@dataclass
class _Split:
    normal: np.ndarray
    offset: float
    left: object
    right: object


@dataclass
class _Leaf:
    items: np.ndarray  # row numbers into the FlatIndex


_SPLIT_RETRIES = 20


class RpForest:
    """Annoy-style forest of random two-point hyperplane trees over a FlatIndex.

    Each split picks two distinct items, takes their (unit-scaled) difference
    as the normal and the midpoint as the offset. Items with positive margin go
    right. A node becomes a leaf at ``leaf_size`` items or after 20 failed
    attempts to split it into two non-empty halves.
    """

    def __init__(self, index: FlatIndex, n_trees: int = 10, leaf_size: int = 16, seed: int = 42):
        if n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {n_trees}")
        if leaf_size < 2:
            raise ValueError(f"leaf_size must be >= 2, got {leaf_size}")
        if len(index) == 0:
            raise ValueError("cannot build a forest over an empty index")
        self.index = index
        self.n_trees = n_trees
        self.leaf_size = leaf_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        all_items = np.arange(len(index))
        self.trees = [self._build_tree(all_items, rng) for _ in range(n_trees)]

    def _build_tree(self, items: np.ndarray, rng: np.random.Generator):
        X = self.index.vectors
        root_holder: list = [None]
        # (items, parent, side) work list; parent None means root
        stack = [(items, None, None)]
        while stack:
            items, parent, side = stack.pop()
            node = self._split(X, items, rng)
            if parent is None:
                root_holder[0] = node
            else:
                setattr(parent, side, node)
            if isinstance(node, _Split):
                left_items, right_items = node.left, node.right
                node.left = node.right = None
                stack.append((right_items, node, "right"))
                stack.append((left_items, node, "left"))
        return root_holder[0]

    def _split(self, X, items, rng):
        if len(items) <= self.leaf_size:
            return _Leaf(items)
        for _ in range(_SPLIT_RETRIES):
            i, j = rng.choice(len(items), size=2, replace=False)
            a, b = X[items[i]], X[items[j]]
            normal = a - b
            norm = np.linalg.norm(normal)
            if norm == 0:
                continue
            normal = normal / norm
            offset = float(normal @ ((a + b) / 2))
            side = _row_dots(X[items], normal) - offset > 0
            n_right = int(side.sum())
            if 0 < n_right < len(items):
                return _Split(normal, offset, items[~side], items[side])
        return _Leaf(items)

    def leaves(self, tree):
        """Yield every leaf's item rows of one tree."""
        stack = [tree]
        while stack:
            node = stack.pop()
            if isinstance(node, _Leaf):
                yield node.items
            else:
                stack.extend((node.left, node.right))

    def candidates(self, q: np.ndarray, search_k: int) -> set[int]:
        """Best-first walk over all trees, ordered by the smallest margin seen on the path."""
        seen: set[int] = set()
        heap = [(-np.inf, i, self.trees[i]) for i in range(self.n_trees)]
        counter = self.n_trees
        n_total = len(self.index)
        while heap and len(seen) < search_k and len(seen) < n_total:
            neg_prio, _, node = heapq.heappop(heap)
            prio = -neg_prio
            if isinstance(node, _Leaf):
                seen.update(node.items.tolist())
                continue
            margin = float(node.normal @ q) - node.offset
            heapq.heappush(heap, (-min(prio, margin), counter, node.right))
            heapq.heappush(heap, (-min(prio, -margin), counter + 1, node.left))
            counter += 2
        return seen


def build_forest(index: FlatIndex, n_trees: int = 10, leaf_size: int = 16, seed: int = 42) -> RpForest:
    return RpForest(index, n_trees, leaf_size, seed)


def forest_search(forest: RpForest, index: FlatIndex, q, k: int, search_k: int | None = None) -> list[Hit]:
    """Approximate top-k by dot product; ``search_k`` defaults to ``n_trees * k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if forest.index is not index:
        raise ValueError("forest was built over a different index")
    if search_k is None:
        search_k = forest.n_trees * k
    if search_k < k:
        raise ValueError(f"search_k ({search_k}) must be >= k ({k})")
    q = _check_query(index, q)
    rows = np.array(sorted(forest.candidates(q, search_k)), dtype=int)
    scores = _row_dots(index.vectors[rows], q)
    return rank_hits(zip((index.ids[r] for r in rows), scores.tolist()), k)
