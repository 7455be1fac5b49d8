"""Planted-partition generator."""

import numpy as np
import pytest

from walklift.synthetic import planted_partition_graph, synthetic_communities


class TestPlantedPartition:
    def test_basic_shape(self):
        rng = np.random.default_rng(0)
        g = planted_partition_graph(20, rng, blocks=2)
        assert g.node_count == 20
        assert g.edge_count >= 1

    def test_blocks_denser_within(self):
        rng = np.random.default_rng(1)
        # two explicit 20-node blocks, heavily contrasted probabilities
        g = planted_partition_graph(40, rng, p_in=0.5, p_out=0.01, blocks=2)
        within = across = 0
        for u, v in g.edges:
            if (u < 20) == (v < 20):
                within += 1
            else:
                across += 1
        assert within > 5 * max(across, 1)

    def test_parameter_validation(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            planted_partition_graph(1, rng)
        with pytest.raises(ValueError):
            planted_partition_graph(10, rng, p_in=0.1, p_out=0.5)


class TestSyntheticCommunities:
    def test_sizes_within_bucket(self):
        ds = synthetic_communities(30, 16, 21, seed=3)
        assert len(ds) == 30
        assert ds.size_range == (16, 21)
        for g in ds:
            assert 16 <= g.node_count <= 21

    def test_density_in_community_range(self):
        ds = synthetic_communities(40, 16, 21, seed=4)
        dens = [
            2 * g.edge_count / (g.node_count * (g.node_count - 1)) for g in ds
        ]
        assert 0.05 <= float(np.mean(dens)) <= 0.35

    def test_deterministic(self):
        a = synthetic_communities(10, 10, 14, seed=5)
        b = synthetic_communities(10, 10, 14, seed=5)
        assert all(x == y for x, y in zip(a, b))

    def test_distinct_seeds_differ(self):
        a = synthetic_communities(10, 10, 14, seed=6)
        b = synthetic_communities(10, 10, 14, seed=7)
        assert any(x != y for x, y in zip(a, b))

    def test_community_ids_sequential(self):
        ds = synthetic_communities(5, 8, 10, seed=8)
        assert [g.community_id for g in ds] == list(range(5))

    def test_nodes_per_block_override(self):
        ds = synthetic_communities(5, 30, 34, seed=9, nodes_per_block=8)
        assert all(g.edge_count >= 1 for g in ds)
