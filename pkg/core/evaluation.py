"""Inference pass: embed every node over its administrator's local graph, then score edge sets."""
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config.run_config import ModelConfig
from core.features import FeatureTable, build_modality_inputs
from core.gnn import node_representations
from core.graph import Partitioning, ReuseEdge, full_subgraph
from core.ndgrad import Tensor
from core.params import ModelParams
from core.predict import Prediction, classify, edge_probability_kernel
from utils.logging_config import get_logger

logger = get_logger(__name__)

_SCORE_CHUNK = 4096


class Evaluator:
    """Embeds nodes with frozen parameters and predicts edges between them.

    Each administrator embeds its own nodes over its own local graph; predicted
    cross-admin edges therefore never carry adjacency.
    """

    def __init__(self, partitioning: Partitioning, table: FeatureTable, model: ModelConfig):
        self.partitioning = partitioning
        self.table = table
        self.model = model
        self._subgraphs = [full_subgraph(g) for g in partitioning.local_graphs]

    def embeddings(self, params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
        """(ascending node ids, fused representations [n x d])."""
        tensors = params.as_tensors()
        ids: List[np.ndarray] = []
        blocks: List[np.ndarray] = []
        for sub in self._subgraphs:
            if sub.num_nodes == 0:
                continue
            inputs, _ = build_modality_inputs(self.table, sub.node_ids, tensors, self.model, training=False)
            reps = node_representations(sub, inputs, tensors, self.model)
            ids.append(sub.node_ids)
            blocks.append(reps.fused.data)
        node_ids = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
        H = np.concatenate(blocks) if blocks else np.zeros((0, self.model.hidden_dim))
        order = np.argsort(node_ids, kind="stable")
        return node_ids[order], H[order]

    def predict(
        self, params: ModelParams, edges: Sequence[ReuseEdge], tau_pred: float,
    ) -> List[Prediction]:
        if not edges:
            return []
        node_ids, H = self.embeddings(params)
        return score_edges(node_ids, H, params, edges, tau_pred, self.model.leaky_slope)


def score_edges(
    node_ids: np.ndarray,
    H: np.ndarray,
    params: ModelParams,
    edges: Sequence[ReuseEdge],
    tau_pred: float,
    slope: float,
) -> List[Prediction]:
    tensors = params.as_tensors()
    iu = np.searchsorted(node_ids, [e.u for e in edges])
    iv = np.searchsorted(node_ids, [e.v for e in edges])
    p_hat = np.empty(len(edges))
    for start in range(0, len(edges), _SCORE_CHUNK):
        stop = start + _SCORE_CHUNK
        p = edge_probability_kernel(Tensor(H[iu[start:stop]]), Tensor(H[iv[start:stop]]), tensors, slope)
        p_hat[start:stop] = p.data
    return [
        Prediction(
            edge_id=e.edge_id, u=e.u, v=e.v, p_hat=float(p),
            decision=classify(float(p), tau_pred), label=e.label, reuse_rate=e.reuse_rate,
        )
        for e, p in zip(edges, p_hat)
    ]


def edges_for(partitioning: Partitioning, edge_ids: Sequence[int]) -> List[ReuseEdge]:
    by_id: Dict[int, ReuseEdge] = partitioning.edges_by_id()
    return [by_id[i] for i in edge_ids]
