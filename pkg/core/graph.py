"""Password-reuse graphs: labelling, partitioning across administrators, splits and L-hop subgraphs.

Message passing runs only over positive local edges.  Negative pairs and
cross-admin pairs are prediction targets and never contribute adjacency.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from config.constants import MIN_SHARED, TAU_GT
from utils.errors import GraphError
from utils.logging_config import get_logger
from utils.seeding import derive_rng

logger = get_logger(__name__)

LOCAL = "local"
CROSS_ADMIN = "cross_admin"

AccountStat = Tuple[int, int, int, int]     # (u, v, shared_users, reusing_users)
Pair = Tuple[int, int]


def canonical(u: int, v: int) -> Pair:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class WebsiteNode:
    node_id: int
    admin_id: Optional[int] = None
    site_id: str = ""


@dataclass(frozen=True)
class ReuseEdge:
    u: int
    v: int
    shared_users: int
    reusing_users: int
    positive: bool
    edge_id: int = -1
    scope: str = LOCAL

    @property
    def pair(self) -> Pair:
        return (self.u, self.v)

    @property
    def reuse_rate(self) -> float:
        return self.reusing_users / self.shared_users

    @property
    def label(self) -> int:
        return 1 if self.positive else 0


class PasswordReuseGraph:
    """Immutable undirected graph over website nodes.

    ``edges`` holds every labelled pair in canonical (u < v) order; the
    networkx adjacency holds only the positive local ones.
    """

    def __init__(
        self,
        nodes: Iterable[WebsiteNode],
        edges: Iterable[ReuseEdge] = (),
        admin_id: Optional[int] = None,
    ):
        ordered = sorted(nodes, key=lambda n: n.node_id)
        self._nodes: Dict[int, WebsiteNode] = {}
        for node in ordered:
            if node.node_id in self._nodes:
                raise GraphError(f"duplicate node id {node.node_id}")
            self._nodes[node.node_id] = node
        self.admin_id = admin_id

        self._edges: Tuple[ReuseEdge, ...] = tuple(sorted(edges, key=lambda e: e.pair))
        seen: Set[Pair] = set()
        for edge in self._edges:
            if edge.u == edge.v:
                raise GraphError(f"self-loop on node {edge.u}")
            if edge.u > edge.v:
                raise GraphError(f"edge ({edge.u}, {edge.v}) is not stored canonically")
            if edge.u not in self._nodes or edge.v not in self._nodes:
                raise GraphError(f"edge ({edge.u}, {edge.v}) references an unknown node")
            if edge.pair in seen:
                raise GraphError(f"duplicate edge ({edge.u}, {edge.v})")
            seen.add(edge.pair)
            if admin_id is not None and edge.scope != LOCAL:
                raise GraphError(f"local graph of admin {admin_id} holds a {edge.scope} edge")

        if admin_id is not None:
            foreign = [n.node_id for n in ordered if n.admin_id != admin_id]
            if foreign:
                raise GraphError(f"local graph of admin {admin_id} holds foreign nodes {foreign[:5]}")

        self._nx = nx.Graph()
        self._nx.add_nodes_from(self._nodes)
        self._nx.add_edges_from(e.pair for e in self._edges if e.positive and e.scope == LOCAL)

    # ── Accessors ──

    @property
    def nodes(self) -> Tuple[WebsiteNode, ...]:
        return tuple(self._nodes.values())

    @property
    def node_ids(self) -> np.ndarray:
        return np.fromiter(self._nodes, dtype=np.int64, count=len(self._nodes))

    @property
    def edges(self) -> Tuple[ReuseEdge, ...]:
        return self._edges

    @property
    def num_nodes(self) -> int:
        return len(self._nodes)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def node(self, node_id: int) -> WebsiteNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id}") from None

    def has_node(self, node_id: int) -> bool:
        return node_id in self._nodes

    def message_view(self, exclude: Iterable[Pair] = ()) -> nx.Graph:
        """Adjacency used for message passing, optionally hiding some pairs."""
        hidden = [canonical(u, v) for u, v in exclude]
        if not hidden:
            return self._nx
        return nx.restricted_view(self._nx, [], hidden)

    def __repr__(self) -> str:
        owner = "" if self.admin_id is None else f", admin={self.admin_id}"
        return f"PasswordReuseGraph(nodes={self.num_nodes}, edges={self.num_edges}{owner})"


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Computation subgraph: node ids ascending, directed message edges sorted by (dst, src)."""

    node_ids: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    hops: Optional[int]             # None: the whole graph

    @property
    def num_nodes(self) -> int:
        return int(self.node_ids.shape[0])

    def index_of(self, node_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(node_ids, dtype=np.int64)
        pos = np.searchsorted(self.node_ids, ids)
        pos = np.clip(pos, 0, max(self.num_nodes - 1, 0))
        if ids.size and (self.num_nodes == 0 or not np.array_equal(self.node_ids[pos], ids)):
            raise GraphError("node not present in subgraph")
        return pos

    def neighbor_lists(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {int(n): [] for n in self.node_ids}
        for s, d in zip(self.src, self.dst):
            out[int(self.node_ids[d])].append(int(self.node_ids[s]))
        return out


@dataclass(frozen=True)
class Partitioning:
    local_graphs: Tuple[PasswordReuseGraph, ...]
    cross_edges: Tuple[ReuseEdge, ...]
    assignment: Mapping[int, int] = field(default_factory=dict)

    @property
    def num_admins(self) -> int:
        return len(self.local_graphs)

    def all_edges(self) -> List[ReuseEdge]:
        edges = [e for g in self.local_graphs for e in g.edges] + list(self.cross_edges)
        return sorted(edges, key=lambda e: e.edge_id)

    def edges_by_id(self) -> Dict[int, ReuseEdge]:
        return {e.edge_id: e for e in self.all_edges()}

    def admin_pair(self, edge: ReuseEdge) -> Pair:
        return canonical(self.assignment[edge.u], self.assignment[edge.v])


@dataclass(frozen=True)
class SplitPlan:
    train: Mapping[int, Tuple[int, ...]]
    valid: Tuple[int, ...]
    test: Tuple[int, ...]
    valid_pair: Optional[Pair] = None

    def train_ids(self, admins: Optional[Iterable[int]] = None) -> Tuple[int, ...]:
        chosen = sorted(self.train) if admins is None else sorted(admins)
        return tuple(i for a in chosen for i in self.train.get(a, ()))

    def check(self, partitioning: Partitioning) -> None:
        by_id = partitioning.edges_by_id()
        train = set(self.train_ids())
        valid, test = set(self.valid), set(self.test)
        if train & valid or train & test or valid & test:
            raise GraphError("split sets overlap")
        if train | valid | test != set(by_id):
            raise GraphError("split does not cover every labelled edge")
        if any(by_id[i].scope != LOCAL for i in train):
            raise GraphError("train split holds a cross-admin edge")
        if any(by_id[i].scope != CROSS_ADMIN for i in valid | test):
            raise GraphError("valid/test split holds a local edge")


# ── Construction ──────────────────────────────────────────────────────────────

def label_edges(
    account_stats: Iterable[AccountStat],
    tau_gt: float = TAU_GT,
    min_shared: int = MIN_SHARED,
) -> List[ReuseEdge]:
    """Turn per-pair account counts into labelled edges.

    Pairs with fewer than ``min_shared`` shared users carry no edge.  An edge is
    positive iff reusing / shared is strictly greater than ``tau_gt``.  Edge ids
    follow canonical (u, v) order of the emitted edges.
    """
    kept: Dict[Pair, Tuple[int, int]] = {}
    for u, v, shared, reusing in account_stats:
        if u == v:
            raise GraphError(f"self-loop on node {u}")
        if shared < 0 or reusing < 0 or reusing > shared:
            raise GraphError(f"inconsistent counts for ({u}, {v}): shared={shared}, reusing={reusing}")
        pair = canonical(int(u), int(v))
        if pair in kept:
            raise GraphError(f"duplicate account statistics for {pair}")
        if shared < min_shared:
            continue
        kept[pair] = (int(shared), int(reusing))

    edges = []
    for edge_id, pair in enumerate(sorted(kept)):
        shared, reusing = kept[pair]
        edges.append(ReuseEdge(
            u=pair[0], v=pair[1], shared_users=shared, reusing_users=reusing,
            positive=reusing / shared > tau_gt, edge_id=edge_id,
        ))
    return edges


def build_graph(
    nodes: Iterable[WebsiteNode],
    account_stats: Iterable[AccountStat],
    tau_gt: float = TAU_GT,
    min_shared: int = MIN_SHARED,
) -> PasswordReuseGraph:
    graph = PasswordReuseGraph(nodes, label_edges(account_stats, tau_gt, min_shared))
    positives = sum(e.positive for e in graph.edges)
    logger.info(
        "Graph built: %d nodes, %d labelled edges (%d positive)",
        graph.num_nodes, graph.num_edges, positives,
    )
    return graph


def partition(
    graph: PasswordReuseGraph,
    k: int,
    sizes: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> Partitioning:
    """Assign nodes to ``k`` administrators: seeded shuffle, then contiguous blocks."""
    n = graph.num_nodes
    if k < 1:
        raise GraphError(f"need at least one administrator, got {k}")
    if sizes is None:
        sizes = [len(block) for block in np.array_split(np.arange(n), k)]
    sizes = [int(s) for s in sizes]
    if len(sizes) != k:
        raise GraphError(f"{len(sizes)} partition sizes given for {k} administrators")
    if sum(sizes) != n or min(sizes) < 1:
        raise GraphError(f"partition sizes {sizes} do not cover {n} nodes with non-empty blocks")

    order = graph.node_ids.copy()
    derive_rng(seed, "partition").shuffle(order)
    assignment: Dict[int, int] = {}
    start = 0
    for admin, size in enumerate(sizes):
        for node_id in order[start:start + size]:
            assignment[int(node_id)] = admin
        start += size
    return apply_assignment(graph, assignment, k)


def apply_assignment(graph: PasswordReuseGraph, assignment: Mapping[int, int], k: int) -> Partitioning:
    """Split a graph by a node -> admin map into local graphs and cross-admin edges."""
    missing = [n for n in graph.node_ids if int(n) not in assignment]
    if missing or len(assignment) != graph.num_nodes:
        raise GraphError("assignment does not cover the graph's node set exactly")
    if any(not 0 <= a < k for a in assignment.values()):
        raise GraphError(f"assignment names administrators outside [0, {k})")
    n = graph.num_nodes

    members: List[List[WebsiteNode]] = [[] for _ in range(k)]
    for node in graph.nodes:
        members[assignment[node.node_id]].append(dataclasses.replace(node, admin_id=assignment[node.node_id]))

    local_edges: List[List[ReuseEdge]] = [[] for _ in range(k)]
    cross: List[ReuseEdge] = []
    for edge in graph.edges:
        a, b = assignment[edge.u], assignment[edge.v]
        if a == b:
            local_edges[a].append(dataclasses.replace(edge, scope=LOCAL))
        else:
            cross.append(dataclasses.replace(edge, scope=CROSS_ADMIN))

    local_graphs = tuple(
        PasswordReuseGraph(members[a], local_edges[a], admin_id=a) for a in range(k)
    )
    logger.info(
        "Partitioned %d nodes into %d administrators (%d local edges, %d cross-admin edges)",
        n, k, sum(len(e) for e in local_edges), len(cross),
    )
    return Partitioning(local_graphs, tuple(cross), assignment)


def merge(partitioning: Partitioning, admins: Optional[Iterable[int]] = None) -> PasswordReuseGraph:
    """Union of local graphs (and, over all admins, the cross-admin edges)."""
    chosen = range(partitioning.num_admins) if admins is None else sorted(admins)
    graphs = [partitioning.local_graphs[a] for a in chosen]
    nodes = [node for g in graphs for node in g.nodes]
    edges = [edge for g in graphs for edge in g.edges]
    if admins is None:
        edges.extend(partitioning.cross_edges)
    return PasswordReuseGraph(nodes, edges)


def neighbors(graph: PasswordReuseGraph, v: int) -> frozenset:
    if not graph.has_node(v):
        raise GraphError(f"unknown node {v}")
    return frozenset(graph.message_view().neighbors(v))


# ── Subgraphs ─────────────────────────────────────────────────────────────────

def extract_subgraph(
    graph: PasswordReuseGraph,
    edge_batch: Iterable[ReuseEdge],
    hops: int,
    exclude: Iterable[Pair] = (),
) -> Subgraph:
    """All nodes within ``hops`` of a batch endpoint, with the adjacency among them."""
    if hops < 0:
        raise GraphError(f"hops must be non-negative, got {hops}")
    view = graph.message_view(exclude)
    sources: Set[int] = set()
    for edge in edge_batch:
        for endpoint in (edge.u, edge.v):
            if not graph.has_node(endpoint):
                raise GraphError(f"batch endpoint {endpoint} is not in the graph")
            sources.add(endpoint)
    if not sources:
        return _induced(view, [], hops)
    depth = nx.multi_source_dijkstra_path_length(view, sources, cutoff=hops)
    return _induced(view, sorted(depth), hops)


def full_subgraph(graph: PasswordReuseGraph, exclude: Iterable[Pair] = ()) -> Subgraph:
    view = graph.message_view(exclude)
    return _induced(view, sorted(view.nodes), None)


def _induced(view: nx.Graph, keep: List[int], hops: Optional[int]) -> Subgraph:
    node_ids = np.asarray(keep, dtype=np.int64)
    position = {node_id: i for i, node_id in enumerate(keep)}
    src: List[int] = []
    dst: List[int] = []
    for a, b in view.subgraph(keep).edges():
        ia, ib = position[a], position[b]
        src.extend((ia, ib))
        dst.extend((ib, ia))
    src_arr = np.asarray(src, dtype=np.int64)
    dst_arr = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((src_arr, dst_arr))
    return Subgraph(node_ids, src_arr[order], dst_arr[order], hops)


# ── Splits ────────────────────────────────────────────────────────────────────

def make_split(
    partitioning: Partitioning,
    valid_pair: Optional[Pair] = None,
    seed: int = 0,
) -> SplitPlan:
    """Local edges train; cross edges of one admin pair validate; the rest test."""
    train = {
        a: tuple(e.edge_id for e in g.edges) for a, g in enumerate(partitioning.local_graphs)
    }
    by_pair: Dict[Pair, List[int]] = {}
    for edge in partitioning.cross_edges:
        by_pair.setdefault(partitioning.admin_pair(edge), []).append(edge.edge_id)

    if valid_pair is None:
        if partitioning.num_admins == 1:
            return SplitPlan(train, (), (), None)
        candidates = sorted(by_pair)
        if not candidates:
            raise GraphError("no cross-admin edges to validate on")
        valid_pair = candidates[int(derive_rng(seed, "split").integers(len(candidates)))]
    else:
        a, b = valid_pair
        if a == b or not (0 <= a < partitioning.num_admins and 0 <= b < partitioning.num_admins):
            raise GraphError(f"valid pair {valid_pair} must name two distinct administrators")
        valid_pair = canonical(a, b)
        if not by_pair.get(valid_pair):
            raise GraphError(f"administrators {valid_pair} share no cross-admin edges")

    valid = tuple(sorted(by_pair[valid_pair]))
    test = tuple(sorted(i for pair, ids in by_pair.items() if pair != valid_pair for i in ids))
    plan = SplitPlan(train, valid, test, valid_pair)
    plan.check(partitioning)
    logger.info(
        "Split: %d train, %d valid (admins %s), %d test edges",
        len(plan.train_ids()), len(valid), valid_pair, len(test),
    )
    return plan


def split_statistics(partitioning: Partitioning, plan: SplitPlan) -> Dict[str, object]:
    by_id = partitioning.edges_by_id()

    def _rate(ids: Sequence[int]) -> float:
        return sum(by_id[i].positive for i in ids) / len(ids) if ids else 0.0

    admins = []
    for a, g in enumerate(partitioning.local_graphs):
        ids = plan.train.get(a, ())
        admins.append({
            "admin": a,
            "nodes": g.num_nodes,
            "train_edges": len(ids),
            "positive_rate": _rate(ids),
        })
    return {
        "admins": admins,
        "train_edges": len(plan.train_ids()),
        "train_positive_rate": _rate(plan.train_ids()),
        "valid_edges": len(plan.valid),
        "valid_positive_rate": _rate(plan.valid),
        "test_edges": len(plan.test),
        "test_positive_rate": _rate(plan.test),
        "valid_pair": list(plan.valid_pair) if plan.valid_pair else None,
    }
