import json

import numpy as np
import pytest

from _oracles import random_unit_vectors
from bcqa.dense import (
    FileBackedProvider,
    FlatIndex,
    HashedNGramProvider,
    Metric,
    RpForest,
    build_forest,
    cosine,
    dot,
    flat_search,
    fnv1a_64,
    forest_search,
)


def test_fnv1a_reference_values():
    # published FNV-1a 64 test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_hashed_provider_basics():
    p = HashedNGramProvider(64)
    v = p.embed("fire door")
    assert v.shape == (64,)
    assert np.array_equal(v, HashedNGramProvider(64).embed("fire door"))
    assert np.linalg.norm(v) == pytest.approx(1, abs=1e-9)
    assert not p.embed("").any()
    assert not p.embed("--").any()
    assert np.array_equal(p.embed("Fire"), p.embed("fire"))


def test_hashed_provider_by_hand():
    p = HashedNGramProvider(16)
    expected = np.zeros(16)
    for g in ("#ab", "ab#"):
        h = fnv1a_64(g.encode())
        expected[h % 16] += -1 if h >> 63 else 1
    expected /= np.linalg.norm(expected)
    assert np.array_equal(p.embed("ab"), expected)


def test_hashed_provider_bad_dim():
    with pytest.raises(ValueError):
        HashedNGramProvider(0)


def test_file_backed(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"id": "a", "vector": [1, 0]}\n\n{"id": "b", "vector": [0, 2]}\n', encoding="utf-8")
    p = FileBackedProvider.from_jsonl(path)
    assert p.dim == 2
    assert p.embed("b").tolist() == [0, 2]
    with pytest.raises(KeyError):
        p.embed("c")


@pytest.mark.parametrize(
    "lines",
    [
        ['{"id": "a", "vector": [1, 0]}', '{"id": "a", "vector": [0, 1]}'],
        ['{"id": "a", "vector": [1, 0]}', '{"id": "b", "vector": [0, 1, 2]}'],
        ['{"id": "a", "vector": [NaN, 0]}'],
        ['{"id": "a"}'],
        ["not json"],
    ],
)
def test_file_backed_rejects(tmp_path, lines):
    path = tmp_path / "emb.jsonl"
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(ValueError):
        FileBackedProvider.from_jsonl(path)


def test_dot_and_cosine():
    assert dot([1, 0], [0.5, 0.5]) == 0.5
    assert dot([1, 0], [0, 1]) == 0
    assert dot([1, 2], [3, 4]) == dot([3, 4], [1, 2])
    assert cosine([3, 4], [3, 4]) == pytest.approx(1)
    assert cosine([1, 0], [0, 1]) == 0
    assert cosine([1, 0], [-1, 0]) == -1
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])
    with pytest.raises(ValueError):
        dot([1, 0], [1, 0, 0])


def test_flat_search_cases():
    idx = FlatIndex(["only"], [[-1.0, 0.0]])
    assert [h.chunk_id for h in flat_search(idx, [1, 0], 3)] == ["only"]
    dup = FlatIndex(["b", "a", "c"], [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert [h.chunk_id for h in flat_search(dup, [1, 0], 2)] == ["a", "b"]
    with pytest.raises(ValueError):
        flat_search(dup, [1, 0, 0], 2)
    with pytest.raises(ValueError):
        flat_search(dup, [1, 0], 0)


def test_flat_cosine_vs_dot():
    idx = FlatIndex(["long", "short"], [[10.0, 1.0], [1.0, 0.0]])
    assert flat_search(idx, [1, 0], 1, Metric.DOT)[0].chunk_id == "long"
    assert flat_search(idx, [1, 0], 1, Metric.COSINE)[0].chunk_id == "short"
    with pytest.raises(ValueError):
        flat_search(FlatIndex(["z"], [[0.0, 0.0]]), [1, 0], 1, Metric.COSINE)


def test_flat_search_brute_force():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 8))
    ids = [f"v{i:03d}" for i in range(200)]
    idx = FlatIndex(ids, X)
    for _ in range(20):
        q = rng.standard_normal(8)
        scores = [float(sum(a * b for a, b in zip(row, q))) for row in X]
        order = sorted(range(200), key=lambda i: (-scores[i], ids[i]))[:10]
        got = flat_search(idx, q, 10)
        assert [h.chunk_id for h in got] == [ids[i] for i in order]
        assert [h.score for h in got] == pytest.approx([scores[i] for i in order], abs=1e-12)


def test_flat_index_save_load(tmp_path):
    idx = FlatIndex(["a", "b"], [[1.0, 2.0], [3.0, 4.0]])
    p = tmp_path / "flat.npz"
    idx.save(p)
    back = FlatIndex.load(p)
    assert back.ids == ["a", "b"] and np.array_equal(back.vectors, idx.vectors)


def test_flat_index_validation():
    with pytest.raises(ValueError):
        FlatIndex(["a", "a"], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        FlatIndex(["a"], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        FlatIndex(["a"], [[np.inf]])


def _random_index(rng, n, d):
    return FlatIndex([f"i{i:04d}" for i in range(n)], random_unit_vectors(rng, n, d))


def test_forest_small_is_single_leaf():
    idx = _random_index(np.random.default_rng(1), 10, 4)
    forest = build_forest(idx, n_trees=3, leaf_size=16)
    assert all(len(list(forest.leaves(t))) == 1 for t in forest.trees)


def test_forest_partitions_and_is_deterministic():
    idx = _random_index(np.random.default_rng(2), 300, 8)
    f1 = build_forest(idx, 5, 8, seed=9)
    f2 = build_forest(idx, 5, 8, seed=9)
    for t1, t2 in zip(f1.trees, f2.trees):
        leaves = list(f1.leaves(t1))
        assert sorted(np.concatenate(leaves).tolist()) == list(range(300))
        assert all(len(leaf) <= 8 for leaf in leaves)
        assert [leaf.tolist() for leaf in leaves] == [leaf.tolist() for leaf in f2.leaves(t2)]


def test_forest_identical_vectors_become_leaf():
    idx = FlatIndex([f"d{i}" for i in range(40)], np.ones((40, 3)))
    forest = build_forest(idx, 2, 4)
    assert [len(leaf) for leaf in forest.leaves(forest.trees[0])] == [40]


def test_forest_exhaustive_equals_flat():
    rng = np.random.default_rng(5)
    for _ in range(10):
        idx = _random_index(rng, int(rng.integers(1, 300)), 16)
        forest = build_forest(idx, 4, 8, seed=int(rng.integers(1 << 30)))
        q = rng.standard_normal(16)
        assert forest_search(forest, idx, q, 10, len(idx)) == flat_search(idx, q, 10)


def test_forest_finds_stored_item():
    rng = np.random.default_rng(6)
    idx = _random_index(rng, 500, 16)
    forest = build_forest(idx)
    for row in (0, 17, 499):
        assert forest_search(forest, idx, idx.vectors[row], 1)[0].chunk_id == idx.ids[row]


def test_forest_argument_checks():
    idx = _random_index(np.random.default_rng(7), 50, 4)
    other = _random_index(np.random.default_rng(8), 50, 4)
    forest = build_forest(idx, 2, 4)
    with pytest.raises(ValueError):
        forest_search(forest, other, np.ones(4), 3)
    with pytest.raises(ValueError):
        forest_search(forest, idx, np.ones(4), 5, search_k=2)
    with pytest.raises(ValueError):
        RpForest(idx, n_trees=0)
    with pytest.raises(ValueError):
        RpForest(idx, leaf_size=1)


def test_provider_with_flat_index():
    p = HashedNGramProvider()
    texts = ["fire door", "exit stairs", "smoke alarm"]
    idx = FlatIndex.from_texts(["a", "b", "c"], texts, p)
    assert flat_search(idx, p.embed("exit stair"), 1)[0].chunk_id == "b"
