"""Multi-modal attention GNN producing node representations.

Each modality m runs its own L-layer stack over the subgraph's message edges:

    s      = (H W_attn) a                       per-node attention score
    alpha  = softmax over N(v) of leaky(s_u + s_v)
    agg_v  = sum_u alpha_vu h_u                 (zero for isolated nodes)
    h_v'   = leaky(concat(h_v, agg_v) W_layer)

The last layer's rows are L2-normalised and fused by modality attention.
The per-node functions below are thin views over the batched kernels.
"""
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.run_config import ModelConfig
from core import ndgrad as nd
from core.graph import Subgraph
from core.ndgrad import Tensor
from utils.errors import GraphError, ShapeError


def layer_name(stream: int, layer: int, leaf: str) -> str:
    return f"gnn.m{stream}.l{layer}.{leaf}"


MODALITY_W1 = "gnn.modality.W_1"
MODALITY_B = "gnn.modality.b"


def modality_vector_name(stream: int) -> str:
    return f"gnn.modality.b_m{stream}"


@dataclass(frozen=True, eq=False)
class NodeRepresentation:
    node_ids: np.ndarray
    per_modality: Tuple[Tensor, ...]        # each [n x d], rows unit-norm unless zero-guarded
    fused: Tensor                           # [n x d]
    modality_weights: Optional[Tensor]      # [n x M]; None in feature-concat mode


# ── Batched kernels ───────────────────────────────────────────────────────────

def attention_kernel(
    H: Tensor, src: np.ndarray, dst: np.ndarray, num_nodes: int,
    W_attn: Tensor, a: Tensor, slope: float,
) -> Tensor:
    scores = nd.matmul(nd.matmul(H, W_attn), a)
    logits = nd.leaky_relu(nd.add(nd.gather_rows(scores, src), nd.gather_rows(scores, dst)), slope)
    return nd.segment_softmax(logits, dst, num_nodes)


def mean_pool_weights(dst: np.ndarray, num_nodes: int) -> Tensor:
    degree = np.bincount(dst, minlength=num_nodes).astype(np.float64)
    return Tensor(1.0 / degree[dst]) if dst.size else Tensor(np.zeros(0))


def aggregate_kernel(H: Tensor, alpha: Tensor, src: np.ndarray, dst: np.ndarray, num_nodes: int) -> Tensor:
    return nd.segment_sum(nd.row_scale(nd.gather_rows(H, src), alpha), dst, num_nodes)


def update_kernel(H: Tensor, agg: Tensor, W_layer: Tensor, slope: float) -> Tensor:
    return nd.leaky_relu(nd.matmul(nd.concat([H, agg], axis=-1), W_layer), slope)


def modality_kernel(
    reps: Sequence[Tensor], W_1: Tensor, b_vectors: Sequence[Tensor], b: Tensor, slope: float,
) -> Tuple[Tensor, Tensor]:
    """Fuse M row-aligned [n x d] matrices; returns (fused, weights [n x M])."""
    scores = [
        nd.leaky_relu(nd.add(nd.matmul(nd.matmul(h, W_1), b_m), b), slope)
        for h, b_m in zip(reps, b_vectors)
    ]
    beta = nd.softmax(nd.stack_columns(scores))
    fused = nd.row_scale(reps[0], nd.column(beta, 0))
    for m in range(1, len(reps)):
        fused = nd.add(fused, nd.row_scale(reps[m], nd.column(beta, m)))
    return fused, beta


# ── Per-node operations ───────────────────────────────────────────────────────

def _star(h_v: Tensor, neighbor_reps: Tensor) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    h_v = nd.as_tensor(h_v)
    neighbor_reps = nd.as_tensor(neighbor_reps)
    k = neighbor_reps.shape[0]
    H = nd.concat([nd.reshape(h_v, (1, h_v.shape[0])), neighbor_reps], axis=0)
    return H, np.arange(1, k + 1), np.zeros(k, dtype=np.int64)


def neighbor_attention(
    h_v: Tensor, neighbor_reps: Tensor, W_attn: Tensor, a: Tensor, slope: float,
) -> Tensor:
    """Attention coefficients of v over its k neighbours ([k x in] rows)."""
    if nd.as_tensor(neighbor_reps).shape[0] == 0:
        raise ShapeError("neighbor_attention needs at least one neighbour")
    H, src, dst = _star(h_v, neighbor_reps)
    return attention_kernel(H, src, dst, 1, W_attn, a, slope)


def aggregate(alpha: Optional[Tensor], neighbor_reps: Tensor) -> Tensor:
    """Weighted neighbour sum; ``alpha=None`` means mean pooling; no neighbours gives zeros."""
    neighbor_reps = nd.as_tensor(neighbor_reps)
    k, width = neighbor_reps.shape
    if k == 0:
        return Tensor(np.zeros(width))
    if alpha is None:
        alpha = Tensor(np.full(k, 1.0 / k))
    summed = nd.segment_sum(nd.row_scale(neighbor_reps, alpha), np.zeros(k, dtype=np.int64), 1)
    return nd.reshape(summed, (width,))


def layer_update(h_self: Tensor, aggregated: Tensor, W_layer: Tensor, slope: float) -> Tensor:
    h_self, aggregated = nd.as_tensor(h_self), nd.as_tensor(aggregated)
    if h_self.shape != aggregated.shape or W_layer.shape[0] != 2 * h_self.shape[0]:
        raise ShapeError(
            f"layer_update: self {h_self.shape}, aggregated {aggregated.shape}, W_layer {W_layer.shape}"
        )
    return update_kernel(h_self, aggregated, W_layer, slope)


def modality_attention(
    reps: Sequence[Tensor], W_1: Tensor, b_vectors: Sequence[Tensor], b: Tensor, slope: float,
) -> Tuple[Tensor, Tensor]:
    """Fuse one node's M vectors; returns (h_v [d], beta [M])."""
    rows = [nd.reshape(nd.as_tensor(h), (1, nd.as_tensor(h).shape[0])) for h in reps]
    fused, beta = modality_kernel(rows, W_1, b_vectors, b, slope)
    return nd.reshape(fused, (fused.shape[1],)), nd.reshape(beta, (len(reps),))


# ── Full pass ─────────────────────────────────────────────────────────────────

def run_stream(
    x: Tensor, subgraph: Subgraph, params: Mapping[str, Tensor], stream: int, model: ModelConfig,
) -> Tensor:
    """One modality's L layers followed by row L2 normalisation."""
    n, src, dst = subgraph.num_nodes, subgraph.src, subgraph.dst
    H = x
    for layer in range(1, model.num_layers + 1):
        if model.mean_pool:
            alpha = mean_pool_weights(dst, n)
        else:
            alpha = attention_kernel(
                H, src, dst, n,
                params[layer_name(stream, layer, "W_attn")],
                params[layer_name(stream, layer, "a")],
                model.leaky_slope,
            )
        agg = aggregate_kernel(H, alpha, src, dst, n)
        H = update_kernel(H, agg, params[layer_name(stream, layer, "W_layer")], model.leaky_slope)
    return nd.l2_normalize(H)


def node_representations(
    subgraph: Subgraph,
    inputs: Sequence[Tensor],
    params: Mapping[str, Tensor],
    model: ModelConfig,
) -> NodeRepresentation:
    if subgraph.hops is not None and subgraph.hops < model.num_layers:
        raise GraphError(f"subgraph covers {subgraph.hops} hops, model needs {model.num_layers}")
    if len(inputs) != len(model.modalities):
        raise ShapeError(f"{len(inputs)} modality inputs for {len(model.modalities)} modalities")
    for x in inputs:
        if x.shape[0] != subgraph.num_nodes:
            raise ShapeError(f"modality input has {x.shape[0]} rows for {subgraph.num_nodes} nodes")

    if not model.modality_attention:
        h = run_stream(nd.concat(list(inputs), axis=1), subgraph, params, 1, model)
        return NodeRepresentation(subgraph.node_ids, (h,), h, None)

    reps: List[Tensor] = [
        run_stream(x, subgraph, params, stream, model)
        for (stream, _), x in zip(model.streams(), inputs)
    ]
    fused, beta = modality_kernel(
        reps,
        params[MODALITY_W1],
        [params[modality_vector_name(stream)] for stream, _ in model.streams()],
        params[MODALITY_B],
        model.leaky_slope,
    )
    return NodeRepresentation(subgraph.node_ids, tuple(reps), fused, beta)


def param_specs(model: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    d = model.hidden_dim
    specs: List[Tuple[str, Tuple[int, ...], str]] = []
    for stream, in_dim in model.streams():
        for layer in range(1, model.num_layers + 1):
            width = in_dim if layer == 1 else d
            specs.append((layer_name(stream, layer, "W_layer"), (2 * width, d), "glorot"))
            if not model.mean_pool:
                specs.append((layer_name(stream, layer, "W_attn"), (width, d), "glorot"))
                specs.append((layer_name(stream, layer, "a"), (d,), "glorot"))
    if model.modality_attention:
        specs.append((MODALITY_W1, (d, d), "glorot"))
        for stream, _ in model.streams():
            specs.append((modality_vector_name(stream), (d,), "glorot"))
        specs.append((MODALITY_B, (), "zeros"))
    return specs
