"""Matching engine: exactness against the enumeration oracle, block
decoding with open boundaries, and fusion."""
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockmatch.engine import (
    BLOCK_LEADING,
    BLOCK_TRAILING,
    GRAPH_BOUNDARY,
    EngineError,
    RegionFactory,
    decode_block,
    decode_exact,
    fuse,
)
from blockmatch.harness import oracle_decode
from blockmatch.model import BOUNDARY, Edge, MatchingGraph
from conftest import chain_model, random_instance


def small_graph(edge_specs, n, observables=2):
    edges = [
        Edge(i, u, v, 0.1, w, obs)
        for i, (u, v, w, obs) in enumerate(edge_specs)
    ]
    return MatchingGraph(num_nodes=n, num_observables=observables, edges=edges)


class TestDecodeExact:
    def test_empty_events(self):
        g = small_graph([(0, 1, 1.0, 0)], 2)
        m = decode_exact(g, [])
        assert m.records == [] and m.total_weight == 0.0 and m.observable_mask == 0

    def test_cheap_pair_beats_boundaries(self):
        g = small_graph([(0, 1, 1.0, 1), (0, BOUNDARY, 3.0, 0), (1, BOUNDARY, 3.0, 0)], 2)
        m = decode_exact(g, [0, 1])
        assert m.pairs == [(0, ("event", 1))]
        assert m.total_weight == pytest.approx(1.0)
        assert m.observable_mask == 1

    def test_boundaries_beat_expensive_pair(self):
        g = small_graph([(0, 1, 7.0, 1), (0, BOUNDARY, 3.0, 2), (1, BOUNDARY, 3.0, 0)], 2)
        m = decode_exact(g, [0, 1])
        assert m.pairs == [(0, GRAPH_BOUNDARY), (1, GRAPH_BOUNDARY)]
        assert m.total_weight == pytest.approx(6.0)
        assert m.observable_mask == 2

    def test_path_through_unfired_node(self):
        g = small_graph(
            [(0, 1, 1.0, 1), (1, 2, 1.0, 2), (0, BOUNDARY, 9.0, 0), (2, BOUNDARY, 9.0, 0)],
            3,
        )
        m = decode_exact(g, [0, 2])
        assert m.pairs == [(0, ("event", 2))]
        assert m.total_weight == pytest.approx(2.0)
        assert m.observable_mask == 3

    def test_equal_weight_tie_prefers_pair(self):
        g = small_graph([(0, 1, 2.0, 1), (0, BOUNDARY, 1.0, 0), (1, BOUNDARY, 1.0, 0)], 2)
        m = decode_exact(g, [0, 1])
        assert m.pairs == [(0, ("event", 1))]

    def test_odd_parity_without_boundary_rejected(self):
        g = small_graph([(0, 1, 1.0, 0)], 2)
        with pytest.raises(EngineError, match="odd"):
            decode_exact(g, [0])

    def test_event_outside_graph_rejected(self):
        g = small_graph([(0, 1, 1.0, 0)], 2)
        with pytest.raises(EngineError, match="outside"):
            decode_exact(g, [0, 5])

    def test_deterministic_across_repeats(self):
        rng = random.Random(3)
        g, events = random_instance(rng)
        first = decode_exact(g, events)
        for _ in range(3):
            again = decode_exact(g, events)
            assert again.records == first.records
            assert again.total_weight == first.total_weight


class TestOracleAgreement:
    def test_seeded_batch(self):
        rng = random.Random(12345)
        for _ in range(200):
            g, events = random_instance(rng)
            engine = decode_exact(g, events)
            oracle = oracle_decode(g, events)
            assert engine.total_weight == pytest.approx(oracle.total_weight, abs=1e-9)

    def test_every_event_matched_exactly_once(self):
        rng = random.Random(99)
        for _ in range(50):
            g, events = random_instance(rng)
            m = decode_exact(g, events)
            covered = [e for r in m.records for e in r.endpoints()]
            assert sorted(covered) == events
            assert len(covered) - len(m.records) == sum(r.is_pair for r in m.records)

    def test_record_weights_are_shortest_paths(self):
        from blockmatch.harness import _oracle_paths

        rng = random.Random(7)
        for _ in range(40):
            g, events = random_instance(rng)
            dist, _ = _oracle_paths(g)
            m = decode_exact(g, events)
            for r in m.records:
                if r.is_pair:
                    assert r.weight == pytest.approx(dist[r.event][r.target[1]], abs=1e-9)
                else:
                    assert r.weight == pytest.approx(dist[r.event][g.num_nodes], abs=1e-9)

    def test_mask_is_xor_of_records(self):
        rng = random.Random(21)
        for _ in range(40):
            g, events = random_instance(rng)
            m = decode_exact(g, events)
            mask = 0
            for r in m.records:
                mask ^= r.observables
            assert mask == m.observable_mask

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_property_matches_oracle(self, seed):
        g, events = random_instance(random.Random(seed), max_nodes=16, max_events=8)
        engine = decode_exact(g, events)
        oracle = oracle_decode(g, events)
        assert engine.total_weight == pytest.approx(oracle.total_weight, abs=1e-9)


@pytest.fixture(scope="module")
def chain_factory():
    # 30 cycles, one detector per cycle, no graph boundary; edge weight 1.
    p = 1.0 / (1.0 + math.e)
    return RegionFactory(chain_model(30, p), 30)


class TestDecodeBlock:
    def test_no_events(self, chain_factory):
        view = chain_factory.view(10, 20)
        res = decode_block(view, [], bounds=(True, True), block_index=1)
        assert res.records == [] and res.open_regions == []

    def test_event_near_trailing_cut(self, chain_factory):
        view = chain_factory.view(0, 10)
        res = decode_block(view, [9], bounds=(False, True))
        (r,) = res.records
        assert r.target == BLOCK_TRAILING
        assert r.weight == pytest.approx(0.0)
        assert res.open_regions == [r]

    def test_event_near_leading_cut(self, chain_factory):
        view = chain_factory.view(10, 20)
        res = decode_block(view, [10], bounds=(True, True))
        (r,) = res.records
        assert r.target == BLOCK_LEADING

    def test_interior_pair_stays_closed(self, chain_factory):
        view = chain_factory.view(10, 20)
        res = decode_block(view, [14, 15], bounds=(True, True))
        assert res.matching.pairs == [(14, ("event", 15))]
        assert res.open_regions == []

    def test_closed_bounds_ignore_cuts(self, chain_factory):
        view = chain_factory.view(0, 10)
        with pytest.raises(EngineError, match="odd"):
            decode_block(view, [9], bounds=(False, False))


class TestFuse:
    def test_disjoint_results_concatenate(self, chain_factory):
        a = decode_block(chain_factory.view(0, 10), [2, 3], bounds=(False, True), block_index=0)
        b = decode_block(chain_factory.view(10, 20), [14, 15], bounds=(True, True), block_index=1)
        joined = chain_factory.view(0, 20)
        fused = fuse(a, b, joined)
        assert fused.block_lo == 0 and fused.block_hi == 2
        assert fused.matching.pairs == [(2, ("event", 3)), (14, ("event", 15))]
        assert fused.matching.total_weight == pytest.approx(
            a.matching.total_weight + b.matching.total_weight
        )

    def test_pair_across_shared_cut(self, chain_factory):
        a = decode_block(chain_factory.view(0, 10), [9], bounds=(False, True), block_index=0)
        b = decode_block(chain_factory.view(10, 20), [10], bounds=(True, True), block_index=1)
        fused = fuse(a, b, chain_factory.view(0, 20))
        assert fused.matching.pairs == [(9, ("event", 10))]
        # One weight-1 edge crosses the now-interior cut.
        assert fused.matching.total_weight == pytest.approx(1.0, abs=1e-9)
        assert fused.open_regions == []

    def test_unpartnered_event_moves_to_outer_cut(self, chain_factory):
        a = decode_block(chain_factory.view(0, 10), [8], bounds=(False, True), block_index=0)
        b = decode_block(chain_factory.view(10, 20), [], bounds=(True, True), block_index=1)
        assert a.records[0].target == BLOCK_TRAILING
        fused = fuse(a, b, chain_factory.view(0, 20))
        (r,) = fused.records
        assert r.target == BLOCK_TRAILING  # herald candidate for the next layer
        assert r.weight == pytest.approx(11.0)

    def test_non_adjacent_blocks_rejected(self, chain_factory):
        a = decode_block(chain_factory.view(0, 10), [], bounds=(False, True), block_index=0)
        b = decode_block(chain_factory.view(20, 30), [], bounds=(True, True), block_index=2)
        with pytest.raises(EngineError, match="adjacent"):
            fuse(a, b, chain_factory.view(0, 30))

    def test_fuse_never_worsens_weight(self, chain_factory):
        rng = random.Random(5)
        for _ in range(20):
            ev = sorted(rng.sample(range(20), rng.choice([2, 4, 6])))
            a = decode_block(
                chain_factory.view(0, 10), [e for e in ev if e < 10], bounds=(False, True), block_index=0
            )
            b = decode_block(
                chain_factory.view(10, 20), [e for e in ev if e >= 10], bounds=(True, True), block_index=1
            )
            fused = fuse(a, b, chain_factory.view(0, 20))
            before = a.matching.total_weight + b.matching.total_weight
            # The fused solution may pay the true cross-cut cost but never
            # more than closing both provisional cut matches the direct way.
            exact = decode_block(
                chain_factory.view(0, 20), ev, bounds=(False, True), block_index=0
            )
            assert fused.matching.total_weight == pytest.approx(
                exact.matching.total_weight, abs=1e-9
            )
            assert fused.matching.total_weight >= before - 1e-9
