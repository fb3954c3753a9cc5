import pytest

from core.features import FeatureTable
from core.graph import build_graph
from core.synthetic import GeneratorConfig, synth_generate
from integrations.snapshot_store import records_by_site
from tests.helpers import make_nodes, make_record

# Path 0-1-2-3-4-5 of positive pairs, plus one negative pair and one pair
# below the shared-user floor.
SIX_NODE_STATS = [
    (0, 1, 40, 30),
    (1, 2, 50, 40),
    (2, 3, 35, 20),
    (3, 4, 60, 45),
    (4, 5, 40, 21),
    (0, 5, 40, 10),
    (0, 2, 12, 12),
]


@pytest.fixture
def six_node_graph():
    return build_graph(make_nodes(6), SIX_NODE_STATS)


@pytest.fixture
def six_node_table(six_node_graph):
    return FeatureTable.build(six_node_graph.nodes, {r.site_id: r for r in (make_record(i) for i in range(6))})


@pytest.fixture(scope="session")
def mini_corpus():
    return synth_generate(GeneratorConfig(
        n_sites=40, clients=2, seed=3, pair_probability=0.3, users_per_pair_range=(30, 80),
    ))


@pytest.fixture(scope="session")
def mini_graph(mini_corpus):
    return build_graph(mini_corpus.nodes, mini_corpus.account_stats)


@pytest.fixture(scope="session")
def mini_table(mini_corpus, mini_graph):
    return FeatureTable.build(mini_graph.nodes, records_by_site(mini_corpus.records))
