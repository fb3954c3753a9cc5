import dataclasses

import networkx as nx
import numpy as np
import pytest

from core import ndgrad as nd
from core.features import build_modality_inputs
from core.gnn import (
    aggregate,
    layer_update,
    modality_attention,
    neighbor_attention,
    node_representations,
)
from core.graph import Subgraph, build_graph, extract_subgraph, full_subgraph
from core.params import init_params
from core.predict import HEAD_F_B, HEAD_F_W, HEAD_W_F, edge_probability, edge_probability_kernel
from tests.helpers import TINY_MODEL, check_gradients, leaky, make_nodes, sigmoid, softmax
from utils.errors import GraphError, ShapeError

SLOPE = 0.2


def _head(rng, d):
    return {
        HEAD_W_F: nd.Tensor(rng.normal(size=(2 * d, d))),
        HEAD_F_W: nd.Tensor(rng.normal(size=(d, 1))),
        HEAD_F_B: nd.Tensor(rng.normal(size=1)),
    }


class TestPerNodeFormulas:
    def test_neighbor_attention(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            width, d, k = int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(1, 6))
            h_v, N = rng.normal(size=width), rng.normal(size=(k, width))
            W_attn, a = rng.normal(size=(width, d)), rng.normal(size=d)
            got = neighbor_attention(nd.Tensor(h_v), nd.Tensor(N), nd.Tensor(W_attn), nd.Tensor(a), SLOPE).data
            expected = softmax(leaky(N @ W_attn @ a + h_v @ W_attn @ a, SLOPE))
            np.testing.assert_allclose(got, expected, rtol=1e-10)
            assert got.sum() == pytest.approx(1.0)

    def test_aggregate(self):
        rng = np.random.default_rng(1)
        N = rng.normal(size=(4, 3))
        alpha = softmax(rng.normal(size=4))
        np.testing.assert_allclose(aggregate(nd.Tensor(alpha), nd.Tensor(N)).data, alpha @ N, rtol=1e-12)
        np.testing.assert_allclose(aggregate(None, nd.Tensor(N)).data, N.mean(axis=0), rtol=1e-12)
        np.testing.assert_array_equal(aggregate(None, nd.Tensor(np.zeros((0, 3)))).data, np.zeros(3))

    def test_layer_update(self):
        rng = np.random.default_rng(2)
        h, agg, W = rng.normal(size=3), rng.normal(size=3), rng.normal(size=(6, 4))
        got = layer_update(nd.Tensor(h), nd.Tensor(agg), nd.Tensor(W), SLOPE).data
        np.testing.assert_allclose(got, leaky(np.concatenate([h, agg]) @ W, SLOPE), rtol=1e-12)
        with pytest.raises(ShapeError):
            layer_update(nd.Tensor(h), nd.Tensor(agg), nd.Tensor(np.zeros((5, 4))), SLOPE)

    def test_modality_attention(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d, m = int(rng.integers(2, 5)), int(rng.integers(1, 5))
            reps = [rng.normal(size=d) for _ in range(m)]
            W1, bs, b = rng.normal(size=(d, d)), [rng.normal(size=d) for _ in range(m)], rng.normal()
            fused, beta = modality_attention(
                [nd.Tensor(h) for h in reps], nd.Tensor(W1), [nd.Tensor(v) for v in bs], nd.Tensor(b), SLOPE,
            )
            expected_beta = softmax(np.array([leaky(h @ W1 @ v + b, SLOPE) for h, v in zip(reps, bs)]))
            np.testing.assert_allclose(beta.data, expected_beta, rtol=1e-10)
            np.testing.assert_allclose(fused.data, sum(w * h for w, h in zip(expected_beta, reps)), rtol=1e-10, atol=1e-12)

    def test_neighbor_attention_needs_neighbours(self):
        with pytest.raises(ShapeError):
            neighbor_attention(nd.Tensor(np.ones(2)), nd.Tensor(np.zeros((0, 2))),
                               nd.Tensor(np.ones((2, 2))), nd.Tensor(np.ones(2)), SLOPE)


class TestEdgeHead:
    def test_matches_formula(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            d = int(rng.integers(2, 6))
            head = _head(rng, d)
            hu, hv = rng.normal(size=d), rng.normal(size=d)

            def one(a, b):
                hidden = leaky(np.concatenate([a, b]) @ head[HEAD_W_F].data, SLOPE)
                return sigmoid(hidden @ head[HEAD_F_W].data[:, 0] + head[HEAD_F_B].data[0])

            got = edge_probability(nd.Tensor(hu), nd.Tensor(hv), head, SLOPE).item()
            assert got == pytest.approx(0.5 * (one(hu, hv) + one(hv, hu)), rel=1e-10)

    def test_symmetric_bitwise(self):
        rng = np.random.default_rng(5)
        head = _head(rng, 4)
        hu, hv = nd.Tensor(rng.normal(size=4)), nd.Tensor(rng.normal(size=4))
        assert edge_probability(hu, hv, head, SLOPE).item() == edge_probability(hv, hu, head, SLOPE).item()

    def test_zero_head_gives_one_half(self):
        head = {HEAD_W_F: nd.Tensor(np.zeros((6, 3))), HEAD_F_W: nd.Tensor(np.zeros((3, 1))),
                HEAD_F_B: nd.Tensor(np.zeros(1))}
        assert edge_probability(nd.Tensor(np.ones(3)), nd.Tensor(-np.ones(3)), head, SLOPE).item() == 0.5

    def test_shape_mismatch(self):
        head = _head(np.random.default_rng(6), 3)
        with pytest.raises(ShapeError):
            edge_probability(nd.Tensor(np.ones(3)), nd.Tensor(np.ones(2)), head, SLOPE)
        with pytest.raises(ShapeError):
            edge_probability_kernel(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((3, 3))), head, SLOPE)


def _path_graph(n=6):
    return build_graph(make_nodes(n), [(i, i + 1, 40, 30) for i in range(n - 1)])


class TestNodeRepresentations:
    def test_modality_weights_sum_to_one(self, six_node_graph, six_node_table):
        params = init_params(TINY_MODEL, 0).as_tensors()
        sub = full_subgraph(six_node_graph)
        inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, params, TINY_MODEL, training=False)
        reps = node_representations(sub, inputs, params, TINY_MODEL)
        np.testing.assert_allclose(reps.modality_weights.data.sum(axis=1), np.ones(6), rtol=1e-12)
        for h in reps.per_modality:
            np.testing.assert_allclose(np.linalg.norm(h.data, axis=1), np.ones(6), rtol=1e-10)
        assert reps.fused.shape == (6, 4)

    def test_receptive_field_is_num_layers_hops(self, six_node_table):
        graph = _path_graph()
        params = init_params(TINY_MODEL, 1).as_tensors()
        sub = full_subgraph(graph)
        inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, params, TINY_MODEL, training=False)
        before = node_representations(sub, inputs, params, TINY_MODEL).fused.data[0]
        perturbed = [nd.Tensor(x.data.copy()) for x in inputs]
        for m, x in enumerate(perturbed):
            value = x.numpy()
            value[3:] += 5.0
            perturbed[m] = nd.Tensor(value)
        after = node_representations(sub, perturbed, params, TINY_MODEL).fused.data
        np.testing.assert_array_equal(after[0], before)
        assert not np.array_equal(after[1], node_representations(sub, inputs, params, TINY_MODEL).fused.data[1])

    def test_shallow_subgraph_rejected(self, six_node_table):
        graph = _path_graph()
        params = init_params(TINY_MODEL, 0).as_tensors()
        sub = extract_subgraph(graph, [graph.edges[0]], 1)
        inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, params, TINY_MODEL, training=False)
        with pytest.raises(GraphError):
            node_representations(sub, inputs, params, TINY_MODEL)

    def test_isolated_nodes_are_finite(self, six_node_table):
        graph = build_graph(make_nodes(6), [])
        params = init_params(TINY_MODEL, 0).as_tensors()
        sub = full_subgraph(graph)
        inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, params, TINY_MODEL, training=False)
        reps = node_representations(sub, inputs, params, TINY_MODEL)
        assert np.isfinite(reps.fused.data).all()

    def test_mean_pool_and_concat_variants_run(self, six_node_graph, six_node_table):
        sub = full_subgraph(six_node_graph)
        for model in (dataclasses.replace(TINY_MODEL, mean_pool=True),
                      dataclasses.replace(TINY_MODEL, modality_attention=False)):
            params = init_params(model, 0).as_tensors()
            inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, params, model, training=False)
            reps = node_representations(sub, inputs, params, model)
            assert reps.fused.shape == (6, 4)
        assert reps.modality_weights is None


class TestEndToEndGradient:
    def test_full_model_matches_finite_differences(self, six_node_graph, six_node_table):
        model = dataclasses.replace(TINY_MODEL, modalities=("location", "category"))
        params = init_params(model, 7)
        sub = full_subgraph(six_node_graph)
        edges = six_node_graph.edges
        iu = sub.index_of([e.u for e in edges])
        iv = sub.index_of([e.v for e in edges])
        labels = np.array([e.label for e in edges], dtype=np.float64)

        def build(t):
            inputs, _ = build_modality_inputs(six_node_table, sub.node_ids, t, model, training=True)
            H = node_representations(sub, inputs, t, model).fused
            p = edge_probability_kernel(nd.gather_rows(H, iu), nd.gather_rows(H, iv), t, model.leaky_slope)
            return nd.bce_loss(p, labels)

        check_gradients(build, params.to_arrays(), rtol=1e-4, atol=1e-6)


def _random_graph(rng, n=10, p=0.3):
    links = nx.gnp_random_graph(n, p, seed=int(rng.integers(1 << 30)))
    stats = [(u, v, 40, 30 if rng.random() < 0.7 else 5) for u, v in links.edges()]
    return build_graph(make_nodes(n), stats)


def _random_inputs(rng, model, n):
    return [nd.Tensor(rng.normal(size=(n, model.modality_dim(m)))) for m in model.modalities]


VARIANTS = [
    TINY_MODEL,
    dataclasses.replace(TINY_MODEL, mean_pool=True),
    dataclasses.replace(TINY_MODEL, modality_attention=False),
]


class TestRandomGraphProperties:
    @pytest.mark.parametrize("model", VARIANTS, ids=["attention", "mean-pool", "concat"])
    def test_message_order_is_irrelevant(self, model):
        rng = np.random.default_rng(31)
        for trial in range(20):
            sub = full_subgraph(_random_graph(rng))
            params = init_params(model, trial).as_tensors()
            inputs = _random_inputs(rng, model, sub.num_nodes)
            order = rng.permutation(sub.src.size)
            shuffled = Subgraph(sub.node_ids, sub.src[order], sub.dst[order], sub.hops)
            np.testing.assert_allclose(
                node_representations(shuffled, inputs, params, model).fused.data,
                node_representations(sub, inputs, params, model).fused.data,
                rtol=1e-10, atol=1e-12,
            )

    @pytest.mark.parametrize("model", VARIANTS, ids=["attention", "mean-pool", "concat"])
    def test_relabelling_nodes_permutes_representations(self, model):
        rng = np.random.default_rng(32)
        for trial in range(20):
            n = 10
            graph = _random_graph(rng, n)
            relabel = rng.permutation(n)
            stats = []
            for e in graph.edges:
                a, b = sorted((int(relabel[e.u]), int(relabel[e.v])))
                stats.append((a, b, e.shared_users, e.reusing_users))
            moved = build_graph(make_nodes(n), stats)
            params = init_params(model, trial).as_tensors()
            inputs = _random_inputs(rng, model, n)
            moved_inputs = []
            for x in inputs:
                rows = np.empty_like(x.data)
                rows[relabel] = x.data
                moved_inputs.append(nd.Tensor(rows))
            before = node_representations(full_subgraph(graph), inputs, params, model).fused.data
            after = node_representations(full_subgraph(moved), moved_inputs, params, model).fused.data
            np.testing.assert_allclose(after[relabel], before, rtol=1e-10, atol=1e-12)

    def test_nodes_beyond_l_hops_have_no_influence(self):
        rng = np.random.default_rng(33)
        model = TINY_MODEL
        checked = 0
        for trial in range(30):
            n = 12
            graph = _random_graph(rng, n, p=0.2)
            positive = nx.Graph()
            positive.add_nodes_from(range(n))
            positive.add_edges_from(e.pair for e in graph.edges if e.positive)
            v = int(rng.integers(n))
            near = nx.single_source_shortest_path_length(positive, v, cutoff=model.num_layers)
            far = [u for u in range(n) if u not in near]
            if not far:
                continue
            sub = full_subgraph(graph)
            params = init_params(model, trial).as_tensors()
            inputs = _random_inputs(rng, model, n)
            perturbed = []
            for x in inputs:
                value = x.data.copy()
                value[far] += rng.normal(scale=3.0, size=(len(far), value.shape[1]))
                perturbed.append(nd.Tensor(value))
            before = node_representations(sub, inputs, params, model).fused.data[v]
            after = node_representations(sub, perturbed, params, model).fused.data[v]
            np.testing.assert_array_equal(after, before)
            checked += 1
        assert checked > 0
