import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgadapt.kg import KnowledgeGraph
from kgadapt.subgraph import Extractor, GraphBatch, extract_context_graph, kg_checksum, khop_nodes, pair_rng

from conftest import random_kg


def chain():
    return KnowledgeGraph.from_named([("a", "r", "b"), ("b", "r", "c")])


def brute_khop(kg, v, n):
    """Repeated relaxation over the full triplet list."""
    reach = {v}
    for _ in range(n):
        reach |= {t for h, _, t in kg.triplets() if h in reach} | {h for h, _, t in kg.triplets() if t in reach}
    return reach


class TestKhop:
    def test_zero_hops(self):
        assert khop_nodes(chain(), 0, 0) == {0}

    def test_one_hop(self):
        assert khop_nodes(chain(), 0, 1) == {0, 1}

    def test_two_hops(self):
        assert khop_nodes(chain(), 0, 2) == {0, 1, 2}

    def test_invalid(self):
        with pytest.raises(KeyError):
            khop_nodes(chain(), 9, 1)
        with pytest.raises(ValueError):
            khop_nodes(chain(), 0, -1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 3))
    def test_matches_brute_force(self, seed, n):
        kg = random_kg(np.random.default_rng(seed), 10, 14)
        for v in range(kg.num_entities):
            assert khop_nodes(kg, v, n) == brute_khop(kg, v, n)


class TestExtract:
    def test_isolated_pair(self):
        kg = KnowledgeGraph(["h", "t", "x", "y"], ["r"], [(2, 0, 3)])
        g = extract_context_graph(kg, 0, 1, 1)
        assert g.num_nodes == 2 and g.num_edges == 0

    def test_path_example(self):
        kg = KnowledgeGraph.from_named([("h", "r1", "a"), ("a", "r2", "t")])
        g = extract_context_graph(kg, 0, 2, 1)
        assert set(g.nodes.tolist()) == {0, 1, 2}
        assert sorted(g.edge_triplets()) == sorted(kg.triplets())
        assert g.nodes[g.head_idx] == 0 and g.nodes[g.tail_idx] == 2

    def test_mask_removes_target_edge(self):
        kg = KnowledgeGraph.from_named([("h", "r", "t"), ("h", "s", "t")])
        g = extract_context_graph(kg, 0, 1, 1, mask=[(0, 0, 1)])
        assert g.edge_triplets() == [(0, 1, 1)]

    def test_direction_preserved(self):
        kg = KnowledgeGraph.from_named([("t", "r", "h")])
        g = extract_context_graph(kg, 1, 0, 1)
        assert g.edge_triplets() == [(0, 0, 1)]
        assert g.src[0] == g.tail_idx and g.dst[0] == g.head_idx

    def test_deterministic(self):
        kg = random_kg(np.random.default_rng(4), 30, 60)
        a = extract_context_graph(kg, 0, 1, 1, extra_sample=5, rng=pair_rng(3, 0, 1))
        b = extract_context_graph(kg, 0, 1, 1, extra_sample=5, rng=pair_rng(3, 0, 1))
        for f in ("nodes", "src", "dst", "rel"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))

    def test_extra_sample_adds_ring_nodes(self):
        kg = random_kg(np.random.default_rng(4), 40, 60)
        base = set(extract_context_graph(kg, 0, 1, 1).nodes.tolist())
        more = set(extract_context_graph(kg, 0, 1, 1, extra_sample=3, rng=pair_rng(0, 0, 1)).nodes.tolist())
        assert base < more and len(more - base) <= 3

    def test_cap_truncates_by_distance_then_id(self, caplog):
        kg = KnowledgeGraph.from_named([("h", "r", "a"), ("h", "r", "b"), ("a", "r", "c"), ("t", "r", "d")])
        with caplog.at_level(logging.WARNING):
            g = extract_context_graph(kg, 0, kg.entity_index["t"], 2, cap=4)
        assert "truncated" in caplog.text
        names = [kg.entities[i] for i in g.nodes]
        assert names == ["h", "t", "a", "b"]

    def test_hop_zero_rejected(self):
        with pytest.raises(ValueError):
            extract_context_graph(chain(), 0, 1, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 2))
    def test_induced_subgraph_property(self, seed, n):
        rng = np.random.default_rng(seed)
        kg = random_kg(rng, int(rng.integers(5, 50)), int(rng.integers(1, 80)), 3)
        h, t = (int(x) for x in rng.choice(kg.num_entities, size=2, replace=False))
        g = extract_context_graph(kg, h, t, n)
        nodes = set(g.nodes.tolist())
        assert nodes == khop_nodes(kg, h, n) | khop_nodes(kg, t, n)
        expected = sorted(tr for tr in map(tuple, kg.triplets()) if tr[0] in nodes and tr[2] in nodes)
        assert sorted(g.edge_triplets()) == expected
        assert g.nodes[g.head_idx] == h and g.nodes[g.tail_idx] == t

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_hop_monotone(self, seed):
        rng = np.random.default_rng(seed)
        kg = random_kg(rng, 30, 40)
        h, t = 0, 1
        small = set(extract_context_graph(kg, h, t, 1).nodes.tolist())
        big = set(extract_context_graph(kg, h, t, 2).nodes.tolist())
        assert small <= big


class TestExtractorCache:
    def test_memoized_and_persisted(self, tmp_path):
        kg = random_kg(np.random.default_rng(1), 20, 30)
        ex = Extractor(kg, 1, extra_sample=2, seed=5)
        g = ex(0, 1)
        assert ex(0, 1) is g
        ex.save(tmp_path / "c.pkl")
        other = Extractor(kg, 1, extra_sample=2, seed=5)
        assert other.load(tmp_path / "c.pkl")
        np.testing.assert_array_equal(other(0, 1).nodes, g.nodes)

    def test_stale_cache_ignored(self, tmp_path):
        kg = random_kg(np.random.default_rng(1), 20, 30)
        Extractor(kg, 1).save(tmp_path / "c.pkl")
        assert not Extractor(kg, 2).load(tmp_path / "c.pkl")
        kg2 = random_kg(np.random.default_rng(2), 20, 30)
        assert kg_checksum(kg) != kg_checksum(kg2)
        assert not Extractor(kg2, 1).load(tmp_path / "c.pkl")

    def test_extraction_independent_of_call_order(self):
        kg = random_kg(np.random.default_rng(1), 40, 60)
        a, b = Extractor(kg, 1, extra_sample=3, seed=2), Extractor(kg, 1, extra_sample=3, seed=2)
        a(0, 1), a(2, 3)
        b(2, 3), b(0, 1)
        np.testing.assert_array_equal(a(0, 1).nodes, b(0, 1).nodes)


class TestBatch:
    def test_offsets_and_degrees(self):
        kg = KnowledgeGraph.from_named([("h", "r", "a"), ("a", "r", "t")])
        g = extract_context_graph(kg, 0, 2, 1)
        b = GraphBatch.of([g, g])
        assert b.num_nodes == 6 and b.num_edges == 4
        np.testing.assert_array_equal(b.heads, [g.head_idx, g.head_idx + 3])
        np.testing.assert_array_equal(b.degree[:3], np.bincount(np.r_[g.src, g.dst], minlength=3))
