"""Max-flow/min-cut against exhaustive cut enumeration."""

import itertools

import numpy as np
import pytest

from renovor.maxflow import FlowNetwork, max_flow_min_cut


def brute_force_min_cut(n, arcs, source, sink):
    """Minimum over all 2^(n-2) source/sink partitions of crossing capacity."""
    others = [v for v in range(n) if v not in (source, sink)]
    best = float("inf")
    for bits in itertools.product([0, 1], repeat=len(others)):
        side = {source}
        for v, b in zip(others, bits):
            if b:
                side.add(v)
        weight = sum(c for u, v, c in arcs if u in side and v not in side)
        best = min(best, weight)
    return best


class TestChainAndTrivial:
    def test_two_arc_chain(self):
        net = FlowNetwork(3, source=0, sink=2)
        net.add_arc(0, 1, 3.0)
        net.add_arc(1, 2, 2.0)
        flow, side = max_flow_min_cut(net)
        assert flow == 2.0
        assert side.tolist() == [True, True, False]

    def test_disconnected(self):
        net = FlowNetwork(4, source=0, sink=3)
        net.add_arc(0, 1, 5.0)  # 2 and 3 unreachable
        flow, side = max_flow_min_cut(net)
        assert flow == 0.0
        assert side.tolist() == [True, True, False, False]

    def test_no_arcs_at_all(self):
        net = FlowNetwork(2, source=0, sink=1)
        flow, side = max_flow_min_cut(net)
        assert flow == 0.0
        assert side.tolist() == [True, False]

    def test_parallel_arcs_accumulate(self):
        net = FlowNetwork(2, source=0, sink=1)
        net.add_arc(0, 1, 1.5)
        net.add_arc(0, 1, 2.5)
        flow, _ = max_flow_min_cut(net)
        assert flow == 4.0

    def test_validation(self):
        with pytest.raises(ValueError):
            FlowNetwork(1, 0, 0)
        with pytest.raises(ValueError):
            FlowNetwork(3, 0, 0)
        net = FlowNetwork(3, 0, 2)
        with pytest.raises(ValueError):
            net.add_arc(0, 5, 1.0)
        with pytest.raises(ValueError):
            net.add_arc(0, 1, -1.0)
        with pytest.raises(ValueError):
            net.add_arc(0, 1, float("nan"))


class TestRandomGraphsExhaustive:
    def test_100_random_graphs_match_enumeration(self):
        rng = np.random.default_rng(1234)
        for trial in range(100):
            n = int(rng.integers(3, 9))  # <= 8 nodes
            m = int(rng.integers(1, 15))  # <= 14 arcs
            source, sink = 0, n - 1
            arcs = []
            for _ in range(m):
                u = int(rng.integers(0, n))
                v = int(rng.integers(0, n))
                if u == v:
                    continue
                arcs.append((u, v, float(rng.integers(0, 11))))
            net = FlowNetwork(n, source, sink)
            for u, v, c in arcs:
                net.add_arc(u, v, c)
            flow, side = max_flow_min_cut(net)
            expected = brute_force_min_cut(n, arcs, source, sink)
            assert flow == expected, f"trial {trial}: flow {flow} != cut {expected}"
            # the returned partition is itself a minimum cut
            cut_weight = sum(c for u, v, c in arcs if side[u] and not side[v])
            assert cut_weight == expected
            assert side[source] and not side[sink]

    def test_float_capacities_flow_equals_cut(self):
        rng = np.random.default_rng(55)
        for _ in range(30):
            n = int(rng.integers(4, 10))
            net = FlowNetwork(n, 0, n - 1)
            arcs = []
            for _ in range(int(rng.integers(4, 20))):
                u, v = int(rng.integers(0, n)), int(rng.integers(0, n))
                if u == v:
                    continue
                c = float(rng.uniform(0, 5))
                arcs.append((u, v, c))
                net.add_arc(u, v, c)
            flow, side = max_flow_min_cut(net)
            cut_weight = sum(c for u, v, c in arcs if side[u] and not side[v])
            assert abs(flow - cut_weight) < 1e-9 * max(1.0, cut_weight)

    def test_deterministic_across_runs(self):
        def run():
            net = FlowNetwork(6, 0, 5)
            rng = np.random.default_rng(9)
            for _ in range(12):
                u, v = int(rng.integers(0, 6)), int(rng.integers(0, 6))
                if u != v:
                    net.add_arc(u, v, float(rng.uniform(0, 3)))
            return max_flow_min_cut(net)

        f1, s1 = run()
        f2, s2 = run()
        assert f1 == f2
        assert np.array_equal(s1, s2)

    def test_bulk_add_matches_scalar_add(self):
        rng = np.random.default_rng(31)
        us = rng.integers(0, 7, 20)
        vs = (us + rng.integers(1, 7, 20)) % 7
        caps = rng.integers(1, 8, 20).astype(float)
        net1 = FlowNetwork(7, 0, 6)
        net1.add_arcs(us, vs, caps)
        net2 = FlowNetwork(7, 0, 6)
        for u, v, c in zip(us, vs, caps):
            net2.add_arc(int(u), int(v), float(c))
        f1, s1 = max_flow_min_cut(net1)
        f2, s2 = max_flow_min_cut(net2)
        assert f1 == f2
        assert np.array_equal(s1, s2)
