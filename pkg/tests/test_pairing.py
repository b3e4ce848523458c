"""TopK retrieval and greedy no-replacement pairing against oracles."""

from __future__ import annotations

import numpy as np
import pytest

from wildharvest.errors import EmptyPoolError, PairExhaustionError, ValidationError
from wildharvest.pairing import RealPoolIndex, assign_pairs, topk_matches
from wildharvest.retrieval import cosine_similarity


def brute_force_topk(fake_vec, entries, k):
    """Oracle: full sort of every cosine similarity, truncated to k."""
    sims = [(rid, cosine_similarity(fake_vec, vec)) for rid, vec in entries]
    sims.sort(key=lambda t: (-t[1], t[0]))
    return sims[:k]


def greedy_oracle(fakes, entries, k, m):
    """Oracle for global no-replacement: sequential greedy by fake id."""
    consumed: set[str] = set()
    out = {}
    for fake_id, vec in sorted(fakes, key=lambda t: t[0]):
        ranked = brute_force_topk(vec, entries, k)
        chosen = [(r, s) for r, s in ranked if r not in consumed][:m]
        consumed.update(r for r, _ in chosen)
        out[fake_id] = chosen
    return out


def _random_entries(rng, n, dim=8):
    return [(f"real-{i:04d}", rng.randn(dim)) for i in range(n)]


def test_k_exceeding_pool_returns_whole_pool_sorted():
    rng = np.random.RandomState(0)
    entries = _random_entries(rng, 3)
    idx = RealPoolIndex(entries)
    got = topk_matches(rng.randn(8), idx, k=5)
    assert len(got) == 3
    sims = [s for _, s in got]
    assert sims == sorted(sims, reverse=True)


def test_ties_break_by_ascending_image_id():
    # two identical pool vectors tie exactly; order must follow the id
    v = np.array([1.0, 2.0, 3.0])
    idx = RealPoolIndex([("real-b", v), ("real-a", v), ("real-c", -v)])
    got = topk_matches(np.array([1.0, 1.0, 1.0]), idx, k=3)
    assert [r for r, _ in got] == ["real-a", "real-b", "real-c"]


def test_topk_matches_brute_force_on_random_pools():
    rng = np.random.RandomState(42)
    for _ in range(30):
        entries = _random_entries(rng, int(rng.randint(2, 40)))
        idx = RealPoolIndex(entries)
        fake = rng.randn(8)
        k = int(rng.randint(1, len(entries) + 3))
        got = topk_matches(fake, idx, k)
        want = brute_force_topk(fake, entries, k)
        assert [r for r, _ in got] == [r for r, _ in want]
        for (_, a), (_, b) in zip(got, want):
            assert abs(a - b) < 1e-12


def test_empty_pool_is_an_error():
    with pytest.raises(EmptyPoolError):
        topk_matches(np.ones(4), RealPoolIndex([]), k=1)


def test_mixed_dimensions_rejected():
    with pytest.raises(ValidationError):
        RealPoolIndex([("a", np.ones(4)), ("b", np.ones(5))])


def test_spec_fixture_greedy_assignment():
    # engineered similarities: f1 {r1: .9, r2: .8, r3: .1}, f2 {r1: .95, r2: .2, r3: .3}
    # greedy in fake-id order must give f1 -> r1 and f2 -> r3
    def unit(theta):
        return np.array([np.cos(theta), np.sin(theta)])

    f1, f2 = unit(0.0), unit(1.2)
    entries = [
        ("r1", unit(np.arccos(0.9))),
        ("r2", unit(-np.arccos(0.8))),
        ("r3", unit(1.2 + np.arccos(0.3))),
    ]
    sims_f1 = {r: cosine_similarity(f1, v) for r, v in entries}
    sims_f2 = {r: cosine_similarity(f2, v) for r, v in entries}
    assert sims_f1["r1"] > sims_f1["r2"] > sims_f1["r3"]
    assert sims_f2["r1"] > sims_f2["r3"] > sims_f2["r2"]

    idx = RealPoolIndex(entries)
    pairs = assign_pairs([("f1", f1), ("f2", f2)], idx, k=3)
    by_fake = {p.fake_id: p.real_ids for p in pairs}
    assert by_fake == {"f1": ("r1",), "f2": ("r3",)}

    # per-fake reading: both independently take r1
    idx2 = RealPoolIndex(entries)
    pairs2 = assign_pairs(
        [("f1", f1), ("f2", f2)], idx2, k=3, global_without_replacement=False
    )
    assert {p.fake_id: p.real_ids for p in pairs2} == {"f1": ("r1",), "f2": ("r1",)}


def test_single_fake_single_real():
    v = np.array([0.5, 0.5])
    idx = RealPoolIndex([("r1", v)])
    (pair,) = assign_pairs([("f1", v)], idx, k=1)
    assert pair.real_ids == ("r1",)
    assert pair.similarities[0] == pytest.approx(1.0)


def test_global_assignment_matches_greedy_oracle_and_is_duplicate_free():
    rng = np.random.RandomState(7)
    for _ in range(15):
        n_fakes = int(rng.randint(1, 10))
        entries = _random_entries(rng, n_fakes + int(rng.randint(2, 30)))
        fakes = [(f"fake-{i:03d}", rng.randn(8)) for i in range(n_fakes)]
        k = len(entries)
        idx = RealPoolIndex(entries)
        pairs = assign_pairs(fakes, idx, k=k, reals_per_fake=2)
        oracle = greedy_oracle(fakes, entries, k, m=2)
        assigned = [r for p in pairs for r in p.real_ids]
        assert len(assigned) == len(set(assigned))  # globally duplicate-free
        for p in pairs:
            assert list(p.real_ids) == [r for r, _ in oracle[p.fake_id]]


def test_assignment_order_independent_of_input_order():
    rng = np.random.RandomState(9)
    entries = _random_entries(rng, 12)
    fakes = [(f"fake-{i}", rng.randn(8)) for i in range(5)]
    a = assign_pairs(list(fakes), RealPoolIndex(entries), k=12)
    b = assign_pairs(list(reversed(fakes)), RealPoolIndex(entries), k=12)
    assert a == b


def test_pool_size_precondition():
    rng = np.random.RandomState(1)
    entries = _random_entries(rng, 3)
    fakes = [(f"f{i}", rng.randn(8)) for i in range(4)]
    with pytest.raises(ValidationError, match="without replacement"):
        assign_pairs(fakes, RealPoolIndex(entries), k=3)


def test_pair_exhaustion_names_the_fake():
    # k=1 and both fakes rank the same real first -> second fake starves
    v = np.array([1.0, 0.0])
    entries = [("r-best", v), ("r-other", np.array([0.0, 1.0]))]
    fakes = [("f-a", v), ("f-b", v)]
    with pytest.raises(PairExhaustionError) as excinfo:
        assign_pairs(fakes, RealPoolIndex(entries), k=1)
    assert excinfo.value.fake_id == "f-b"
