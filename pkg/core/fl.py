"""Federated training across simulated administrators.

Every round the server sends the global parameters to each client, each
client trains on its own local graph, uploads its parameters, and the server
averages them in ascending admin_id order.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.constants import BYTES_PER_SCALAR, EMBEDDING_DIRECTIONS
from config.run_config import ModelConfig, TrainConfig
from core import ndgrad as nd
from core.evaluation import Evaluator, edges_for
from core.features import (
    BN_RUNNING_MEAN,
    BN_RUNNING_VAR,
    FeatureTable,
    build_modality_inputs,
    running_stat_updates,
)
from core.gnn import node_representations
from core.graph import Partitioning, PasswordReuseGraph, ReuseEdge, SplitPlan, extract_subgraph, merge
from core.optim import AdamState, OneCycleSchedule, adam_step, sgd_step
from core.params import ModelParams
from core.predict import classification_metrics, edge_probability_kernel
from utils.errors import ClientFailure, RunFailure, ShapeError
from utils.logging_config import get_logger
from utils.seeding import derive_rng

logger = get_logger(__name__)


# ── Cost accounting ───────────────────────────────────────────────────────────

def _check_counts(**values: int) -> None:
    for name, value in values.items():
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {value!r}")


def cost_train(b: int, w: int, k: int, t: int) -> int:
    """Bytes moved by T rounds of K uploads plus K downloads of |w| scalars."""
    _check_counts(b=b, w=w, k=k, t=t)
    return 2 * int(b) * int(w) * int(k) * int(t)


def cost_infer(delta: int, b: int, d: int, q: int) -> int:
    """Bytes of node embeddings exchanged to answer |Q| cross-admin queries."""
    _check_counts(delta=delta, b=b, d=d, q=q)
    return int(delta) * int(b) * int(d) * int(q)


@dataclass
class CostLedger:
    bytes_per_scalar: int = BYTES_PER_SCALAR
    directions: int = EMBEDDING_DIRECTIONS
    uploaded: List[int] = field(default_factory=list)       # per round
    downloaded: List[int] = field(default_factory=list)
    embedding_bytes: int = 0

    def record_round(self, clients: int, param_count: int) -> Tuple[int, int]:
        up = clients * self.bytes_per_scalar * param_count
        self.uploaded.append(up)
        self.downloaded.append(up)
        return up, up

    def record_inference(self, dim: int, queries: int) -> int:
        spent = cost_infer(self.directions, self.bytes_per_scalar, dim, queries)
        self.embedding_bytes += spent
        return spent

    @property
    def rounds(self) -> int:
        return len(self.uploaded)

    @property
    def cum_upload(self) -> int:
        return sum(self.uploaded)

    @property
    def cum_download(self) -> int:
        return sum(self.downloaded)

    @property
    def train_total(self) -> int:
        return self.cum_upload + self.cum_download

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bytes_per_scalar": self.bytes_per_scalar,
            "directions": self.directions,
            "uploaded": list(self.uploaded),
            "downloaded": list(self.downloaded),
            "embedding_bytes": self.embedding_bytes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CostLedger":
        return cls(
            bytes_per_scalar=int(data["bytes_per_scalar"]),
            directions=int(data["directions"]),
            uploaded=[int(x) for x in data["uploaded"]],
            downloaded=[int(x) for x in data["downloaded"]],
            embedding_bytes=int(data.get("embedding_bytes", 0)),
        )


# ── Clients ───────────────────────────────────────────────────────────────────

@dataclass
class ClientState:
    admin_id: int
    graph: PasswordReuseGraph
    features: FeatureTable
    train_edges: Tuple[ReuseEdge, ...]
    params: ModelParams
    adam: AdamState
    rng: np.random.Generator


def make_client(
    admin_id: int,
    graph: PasswordReuseGraph,
    features: FeatureTable,
    train_edges: Sequence[ReuseEdge],
    params: ModelParams,
    seed: int,
) -> ClientState:
    if not train_edges:
        logger.warning("Client %d has no local training edges; it will upload unchanged parameters", admin_id)
    return ClientState(
        admin_id=admin_id,
        graph=graph,
        features=features.subset(int(n) for n in graph.node_ids),
        train_edges=tuple(sorted(train_edges, key=lambda e: e.edge_id)),
        params=params,
        adam=AdamState(),
        rng=derive_rng(seed, "client", admin_id),
    )


def make_clients(
    partitioning: Partitioning,
    plan: SplitPlan,
    table: FeatureTable,
    params: ModelParams,
    seed: int,
    admins: Optional[Sequence[int]] = None,
) -> List[ClientState]:
    chosen = range(partitioning.num_admins) if admins is None else sorted(admins)
    by_id = partitioning.edges_by_id()
    return [
        make_client(
            a, partitioning.local_graphs[a], table,
            [by_id[i] for i in plan.train.get(a, ())], params, seed,
        )
        for a in chosen
    ]


def make_centralized_client(
    partitioning: Partitioning,
    plan: SplitPlan,
    table: FeatureTable,
    params: ModelParams,
    seed: int,
    admins: Optional[Sequence[int]] = None,
) -> ClientState:
    """One trainer over the union of the chosen local graphs."""
    chosen = list(range(partitioning.num_admins)) if admins is None else sorted(admins)
    graph = merge(partitioning, admins=chosen)
    by_id = partitioning.edges_by_id()
    return make_client(0, graph, table, [by_id[i] for i in plan.train_ids(chosen)], params, seed)


def client_batches(client: ClientState, config: TrainConfig) -> List[Tuple[ReuseEdge, ...]]:
    """This round's batches: one shuffled pass, or exactly ``local_steps`` batches."""
    edges = client.train_edges
    if not edges:
        return []
    batches: List[Tuple[ReuseEdge, ...]] = []
    wanted = config.local_steps
    while True:
        order = client.rng.permutation(len(edges))
        for start in range(0, len(edges), config.batch_size):
            batches.append(tuple(edges[i] for i in order[start:start + config.batch_size]))
            if wanted is not None and len(batches) == wanted:
                return batches
        if wanted is None:
            return batches


# ── Local training ────────────────────────────────────────────────────────────

def batch_loss(
    client: ClientState, batch: Sequence[ReuseEdge], params: Dict[str, nd.Tensor],
    model: ModelConfig, config: TrainConfig,
) -> Tuple[nd.Tensor, Optional[nd.BatchStats], int]:
    """Forward pass on the batch's L-hop subgraph; returns (loss, BN stats, subgraph size)."""
    exclude = [e.pair for e in batch] if config.exclude_target_edges else ()
    sub = extract_subgraph(client.graph, batch, model.num_layers, exclude)
    inputs, stats = build_modality_inputs(client.features, sub.node_ids, params, model, training=True)
    reps = node_representations(sub, inputs, params, model)
    iu = sub.index_of([e.u for e in batch])
    iv = sub.index_of([e.v for e in batch])
    p_hat = edge_probability_kernel(
        nd.gather_rows(reps.fused, iu), nd.gather_rows(reps.fused, iv), params, model.leaky_slope,
    )
    labels = np.array([e.label for e in batch], dtype=np.float64)
    return nd.bce_loss(p_hat, labels), stats, sub.num_nodes


def local_step(
    client: ClientState,
    batch: Sequence[ReuseEdge],
    lr: float,
    model: ModelConfig,
    config: TrainConfig,
) -> Tuple[ModelParams, float]:
    """Forward, backward and one optimiser step; returns (updated w_k, loss)."""
    if not batch:
        raise ShapeError("local_step needs a non-empty batch")
    params = client.params
    with nd.Tape():
        tensors = params.as_tensors()
        loss, stats, n = batch_loss(client, batch, tensors, model, config)
    trainable = {name: tensors[name] for name in params.trainable_names}
    grads = nd.backward(loss, trainable)
    current = {name: params[name] for name in params.trainable_names}
    if config.optimizer == "sgd":
        updates = sgd_step(current, grads, lr)
    else:
        updates = adam_step(current, grads, client.adam, lr)
    if stats is not None:
        updates.update(running_stat_updates(params[BN_RUNNING_MEAN], params[BN_RUNNING_VAR], stats, n))
    return params.with_updates(updates), loss.item()


def run_client(client: ClientState, lr: float, model: ModelConfig, config: TrainConfig) -> Optional[float]:
    """All of this round's local steps; returns the client's mean batch loss."""
    losses = []
    try:
        for batch in client_batches(client, config):
            client.params, loss = local_step(client, batch, lr, model, config)
            losses.append(loss)
            logger.debug("client %d batch of %d edges: loss %.6f", client.admin_id, len(batch), loss)
    except Exception as e:
        logger.error("Client %d failed: %s", client.admin_id, e)
        raise ClientFailure(client.admin_id, e) from e
    return float(np.mean(losses)) if losses else None


# ── Aggregation ───────────────────────────────────────────────────────────────

def fedavg(params_list: Sequence[ModelParams], weights: Optional[Sequence[float]] = None) -> ModelParams:
    """Elementwise mean of client parameters, summed in the given order.

    With ``weights`` each client contributes proportionally (e.g. to |E_k|).
    """
    if not params_list:
        raise ShapeError("fedavg needs at least one parameter set")
    first = params_list[0]
    for other in params_list[1:]:
        first.check_compatible(other)
    k = len(params_list)
    merged: Dict[str, np.ndarray] = {}
    if weights is None:
        for name in first.names:
            acc = first[name].copy()
            for other in params_list[1:]:
                acc = acc + other[name]
            merged[name] = acc / k
    else:
        if len(weights) != k:
            raise ShapeError(f"{len(weights)} weights for {k} parameter sets")
        total = float(sum(weights))
        if total <= 0:
            raise RunFailure("weighted averaging needs a positive total weight")
        share = [w / total for w in weights]
        for name in first.names:
            acc = first[name] * share[0]
            for other, s in zip(params_list[1:], share[1:]):
                acc = acc + other[name] * s
            merged[name] = acc
    return ModelParams(merged, buffers=first.buffers)


@dataclass
class RoundResult:
    params: ModelParams
    lr: float
    client_losses: Dict[int, Optional[float]]
    upload_bytes: int
    download_bytes: int

    @property
    def mean_loss(self) -> Optional[float]:
        values = [v for v in self.client_losses.values() if v is not None]
        return float(np.mean(values)) if values else None

    @property
    def loss_stderr(self) -> Optional[float]:
        values = [v for v in self.client_losses.values() if v is not None]
        if not values:
            return None
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def run_round(
    global_params: ModelParams,
    clients: Sequence[ClientState],
    step: int,
    schedule: OneCycleSchedule,
    model: ModelConfig,
    config: TrainConfig,
    ledger: Optional[CostLedger],
) -> RoundResult:
    """Broadcast, local training, upload and averaging for one round.

    ``step`` is the schedule position of this round (round t uses step t).
    ``ledger=None`` runs without communication (the centralized trainer).
    """
    lr = schedule.lr(step)
    ordered = sorted(clients, key=lambda c: c.admin_id)
    for client in ordered:
        client.params = global_params

    if config.workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            losses = list(pool.map(lambda c: run_client(c, lr, model, config), ordered))
    else:
        losses = [run_client(c, lr, model, config) for c in ordered]

    uploaded = [c.params for c in ordered]
    if ledger is None:
        new_params = uploaded[0] if len(uploaded) == 1 else fedavg(uploaded)
        up = down = 0
    else:
        weights = [len(c.train_edges) for c in ordered] if config.weighted_avg else None
        new_params = fedavg(uploaded, weights)
        up, down = ledger.record_round(len(ordered), global_params.total_size)
    for client in ordered:
        client.params = new_params
    return RoundResult(new_params, lr, {c.admin_id: l for c, l in zip(ordered, losses)}, up, down)


# ── Training loop ─────────────────────────────────────────────────────────────

@dataclass
class TrainRun:
    """Coordinator state for a federated (or centralized) training run."""

    config: TrainConfig
    model: ModelConfig
    params: ModelParams
    clients: List[ClientState]
    ledger: CostLedger
    centralized: bool = False
    round: int = 0
    best_params: Optional[ModelParams] = None
    best_f1: Optional[float] = None
    best_round: int = 0
    stale_rounds: int = 0
    log: List[Dict[str, Any]] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def schedule(self) -> Optional[OneCycleSchedule]:
        # step 0 (lr 0) is the starting point; rounds 1..T take steps 1..T
        if self.config.rounds < 1:
            return None
        return OneCycleSchedule(self.config.max_lr, self.config.rounds + 1, self.config.warmup_fraction)


def start_run(
    config: TrainConfig,
    model: ModelConfig,
    params: ModelParams,
    partitioning: Partitioning,
    plan: SplitPlan,
    table: FeatureTable,
    admins: Optional[Sequence[int]] = None,
    centralized: bool = False,
    start_round: int = 0,
    ledger: Optional[CostLedger] = None,
) -> TrainRun:
    if centralized:
        clients = [make_centralized_client(partitioning, plan, table, params, config.seed, admins)]
    else:
        clients = make_clients(partitioning, plan, table, params, config.seed, admins)
    return TrainRun(
        config=config,
        model=model,
        params=params,
        clients=clients,
        ledger=ledger or CostLedger(bytes_per_scalar=config.bytes_per_scalar),
        centralized=centralized,
        round=start_round,
        best_params=params,
    )


def validation_f1(
    evaluator: Evaluator, params: ModelParams, valid_edges: Sequence[ReuseEdge], tau_pred: float
) -> Optional[float]:
    if not valid_edges:
        return None
    return classification_metrics(evaluator.predict(params, valid_edges, tau_pred)).f1


def train(
    run: TrainRun,
    evaluator: Evaluator,
    valid_edges: Sequence[ReuseEdge],
    on_round: Optional[Callable[[TrainRun, Dict[str, Any]], None]] = None,
) -> TrainRun:
    """Run rounds until T, keeping the best-validation global parameters.

    Stops once ``patience`` consecutive rounds fail to improve validation F1.
    Without a validation set the latest parameters are kept.
    """
    schedule = run.schedule
    mode = "centralized" if run.centralized else f"federated over {len(run.clients)} clients"
    logger.info("Training %s: rounds %d..%d, |w|=%d", mode, run.round + 1, run.config.rounds, run.params.total_size)
    while schedule is not None and run.round < run.config.rounds:
        result = run_round(
            run.params, run.clients, run.round + 1, schedule, run.model, run.config,
            None if run.centralized else run.ledger,
        )
        run.params = result.params
        run.round += 1
        f1 = validation_f1(evaluator, run.params, valid_edges, run.config.tau_pred)

        if f1 is None or run.best_f1 is None or f1 > run.best_f1:
            run.best_params, run.best_f1, run.best_round = run.params, f1, run.round
            run.stale_rounds = 0
        else:
            run.stale_rounds += 1

        row = {
            "round": run.round,
            "lr": result.lr,
            "mean_loss": result.mean_loss,
            "loss_stderr": result.loss_stderr,
            "per_client_loss": [result.client_losses[c.admin_id] for c in sorted(run.clients, key=lambda c: c.admin_id)],
            "valid_f1": f1,
            "cum_upload_bytes": run.ledger.cum_upload,
            "cum_download_bytes": run.ledger.cum_download,
        }
        run.log.append(row)
        logger.info(
            "Round %d/%d: lr %.3g, mean loss %s, valid F1 %s",
            run.round, run.config.rounds, result.lr,
            "n/a" if result.mean_loss is None else f"{result.mean_loss:.4f}",
            "n/a" if f1 is None else f"{f1:.4f}",
        )
        if on_round is not None:
            on_round(run, row)
        if f1 is not None and run.stale_rounds > run.config.patience:
            logger.info("Early stop after round %d (best round %d)", run.round, run.best_round)
            run.stopped_early = True
            break
    return run


def train_centralized(
    config: TrainConfig,
    model: ModelConfig,
    params: ModelParams,
    partitioning: Partitioning,
    plan: SplitPlan,
    table: FeatureTable,
    evaluator: Evaluator,
) -> TrainRun:
    run = start_run(config, model, params, partitioning, plan, table, centralized=True)
    return train(run, evaluator, edges_for(partitioning, plan.valid))
