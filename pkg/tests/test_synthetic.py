import numpy as np
import pytest

from core.graph import build_graph
from core.synthetic import GeneratorConfig, planted_rates, synth_generate
from utils.errors import ConfigError


class TestSynthGenerate:
    def test_same_seed_same_corpus(self):
        config = GeneratorConfig(n_sites=30, clients=3, seed=4)
        a, b = synth_generate(config), synth_generate(config)
        assert a.account_stats == b.account_stats
        assert a.records == b.records

    def test_seed_changes_the_corpus(self):
        a = synth_generate(GeneratorConfig(n_sites=30, clients=3, seed=4))
        b = synth_generate(GeneratorConfig(n_sites=30, clients=3, seed=5))
        assert a.account_stats != b.account_stats

    def test_counts_are_consistent(self, mini_corpus):
        assert len(mini_corpus.nodes) == len(mini_corpus.records) == 40
        for u, v, shared, reusing in mini_corpus.account_stats:
            assert u < v
            assert 30 <= shared <= 80
            assert 0 <= reusing <= shared
        assert [r.site_id for r in mini_corpus.records] == [n.site_id for n in mini_corpus.nodes]

    def test_too_few_sites(self):
        with pytest.raises(ConfigError):
            synth_generate(GeneratorConfig(n_sites=5, clients=3))
        with pytest.raises(ConfigError):
            synth_generate(GeneratorConfig(n_sites=10, clients=2, users_per_pair_range=(50, 10)))

    def test_same_category_pairs_reuse_more(self):
        corpus = synth_generate(GeneratorConfig(n_sites=200, clients=2, seed=0))
        same, other = [], []
        for u, v, shared, reusing in corpus.account_stats:
            (same if corpus.categories[u] == corpus.categories[v] else other).append(reusing / shared)
        assert np.mean(same) > np.mean(other) + 0.2

    def test_graph_has_both_labels(self, mini_graph):
        positives = sum(e.positive for e in mini_graph.edges)
        assert 0 < positives < mini_graph.num_edges


class TestPlantedRates:
    def test_knobs(self):
        config = GeneratorConfig(base_reuse=0.3, category_affinity=0.4, security_gap_penalty=0.1)
        rates = planted_rates(config, np.array([True, False, False]), np.array([0, 0, 3]))
        np.testing.assert_allclose(rates, [0.7, 0.3, 0.0])

    def test_without_correlations_rates_are_constant(self):
        config = GeneratorConfig(base_reuse=0.45, category_affinity=0.0, security_gap_penalty=0.0)
        rates = planted_rates(config, np.array([True, False]), np.array([3, 0]))
        np.testing.assert_array_equal(rates, [0.45, 0.45])

    def test_generated_graph_builds(self):
        corpus = synth_generate(GeneratorConfig(n_sites=20, clients=2, seed=9))
        graph = build_graph(corpus.nodes, corpus.account_stats)
        assert graph.num_nodes == 20
