"""Line-delimited JSON stores for the website graph, its partition and the split plan.

Every file opens with a header record holding the exact run configuration that
produced it.  Graph files keep raw account counts, not labels, so the same file
can be relabelled under another ``tau_gt`` / ``min_shared``.
"""
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from core.graph import (
    AccountStat,
    Partitioning,
    PasswordReuseGraph,
    SplitPlan,
    WebsiteNode,
    apply_assignment,
    build_graph,
)
from utils.errors import DataError, GraphError, SchemaError
from utils.logging_config import get_logger

logger = get_logger(__name__)

HEADER = "header"


def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str, records: Iterable[Mapping[str, Any]]) -> int:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps(record))
            f.write("\n")
            count += 1
    return count


def iter_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (1-based line number, object) for every non-blank line."""
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        logger.error("Cannot open %s: %s", path, e)
        raise DataError(f"cannot read {path}: {e}") from e
    with f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON ({e.msg})", path, line_no) from e
            if not isinstance(record, dict):
                raise SchemaError("record is not a JSON object", path, line_no)
            yield line_no, record


def _int_field(record: Mapping[str, Any], key: str, path: str, line_no: int, nullable: bool = False) -> Optional[int]:
    value = record.get(key)
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"field {key!r} must be an integer, got {value!r}", path, line_no)
    return value


# ── Graph file ────────────────────────────────────────────────────────────────

def write_graph(
    path: str,
    nodes: Iterable[WebsiteNode],
    account_stats: Iterable[AccountStat],
    config: Mapping[str, Any],
) -> None:
    def records():
        yield {"kind": HEADER, "config": dict(config)}
        for node in sorted(nodes, key=lambda n: n.node_id):
            yield {"kind": "node", "id": node.node_id, "admin": node.admin_id, "site_id": node.site_id}
        for u, v, shared, reusing in sorted(account_stats):
            yield {"kind": "edge", "u": u, "v": v, "shared": shared, "reusing": reusing}

    count = write_jsonl(path, records())
    logger.info("Graph file written: %s (%d records)", path, count)


def read_graph(path: str) -> Tuple[List[WebsiteNode], List[AccountStat], Dict[str, Any]]:
    nodes: List[WebsiteNode] = []
    stats: List[AccountStat] = []
    header: Dict[str, Any] = {}
    for line_no, record in iter_jsonl(path):
        kind = record.get("kind")
        if kind == HEADER:
            header = record
        elif kind == "node":
            node_id = _int_field(record, "id", path, line_no)
            admin = _int_field(record, "admin", path, line_no, nullable=True)
            site_id = record.get("site_id", f"site-{node_id:05d}")
            if not isinstance(site_id, str) or not site_id:
                raise SchemaError("field 'site_id' must be a non-empty string", path, line_no)
            nodes.append(WebsiteNode(node_id=node_id, admin_id=admin, site_id=site_id))
        elif kind == "edge":
            stats.append(tuple(
                _int_field(record, key, path, line_no) for key in ("u", "v", "shared", "reusing")
            ))
        else:
            raise SchemaError(f"unknown record kind {kind!r}", path, line_no)
    if not nodes:
        raise SchemaError("graph file holds no nodes", path)
    logger.info("Graph file read: %s (%d nodes, %d account-stat pairs)", path, len(nodes), len(stats))
    return nodes, stats, header


# ── Partition file ────────────────────────────────────────────────────────────

def write_partition(
    path: str,
    partitioning: Partitioning,
    statistics: Mapping[str, Any],
    config: Mapping[str, Any],
) -> None:
    def records():
        yield {
            "kind": HEADER,
            "config": dict(config),
            "num_admins": partitioning.num_admins,
            "statistics": dict(statistics),
        }
        for node_id in sorted(partitioning.assignment):
            yield {"kind": "assignment", "node": node_id, "admin": partitioning.assignment[node_id]}

    write_jsonl(path, records())
    logger.info("Partition file written: %s (%d administrators)", path, partitioning.num_admins)


def read_partition(path: str) -> Tuple[Dict[int, int], int, Dict[str, Any]]:
    assignment: Dict[int, int] = {}
    header: Optional[Dict[str, Any]] = None
    for line_no, record in iter_jsonl(path):
        kind = record.get("kind")
        if kind == HEADER:
            header = record
            _int_field(record, "num_admins", path, line_no)
        elif kind == "assignment":
            node = _int_field(record, "node", path, line_no)
            if node in assignment:
                raise SchemaError(f"node {node} assigned twice", path, line_no)
            assignment[node] = _int_field(record, "admin", path, line_no)
        else:
            raise SchemaError(f"unknown record kind {kind!r}", path, line_no)
    if header is None:
        raise SchemaError("partition file has no header record", path)
    return assignment, int(header["num_admins"]), header


# ── Split file ────────────────────────────────────────────────────────────────

def write_split(path: str, plan: SplitPlan, config: Mapping[str, Any]) -> None:
    payload = {
        "config": dict(config),
        "valid_pair": list(plan.valid_pair) if plan.valid_pair else None,
        "train": {str(admin): list(ids) for admin, ids in sorted(plan.train.items())},
        "valid": list(plan.valid),
        "test": list(plan.test),
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info("Split file written: %s", path)


def read_split(path: str) -> SplitPlan:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e.msg})", path, e.lineno) from e
    try:
        train = {int(admin): tuple(int(i) for i in ids) for admin, ids in payload["train"].items()}
        valid = tuple(int(i) for i in payload["valid"])
        test = tuple(int(i) for i in payload["test"])
        pair = payload.get("valid_pair")
        valid_pair = (int(pair[0]), int(pair[1])) if pair else None
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise SchemaError(f"malformed split plan: {e}", path) from e
    return SplitPlan(train, valid, test, valid_pair)


# ── Layout loading ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GraphLayout:
    """A labelled graph with the partition and split that were written for it."""

    graph: PasswordReuseGraph
    partitioning: Partitioning
    plan: SplitPlan


def load_graph(path: str, tau_gt: float, min_shared: int) -> PasswordReuseGraph:
    nodes, stats, _ = read_graph(path)
    return build_graph(nodes, stats, tau_gt, min_shared)


def load_layout(
    graph_path: str,
    partition_path: str,
    split_path: str,
    tau_gt: float,
    min_shared: int,
) -> GraphLayout:
    """Relabel the graph and rebuild the stored partition and split on top of it.

    A split written under different labelling parameters no longer covers the
    labelled edge set and is rejected.
    """
    graph = load_graph(graph_path, tau_gt, min_shared)
    assignment, num_admins, _ = read_partition(partition_path)
    partitioning = apply_assignment(graph, assignment, num_admins)
    plan = read_split(split_path)
    try:
        plan.check(partitioning)
    except GraphError as e:
        logger.error("Split %s does not match %s: %s", split_path, graph_path, e)
        raise GraphError(f"{split_path} does not match the labelled graph: {e}") from e
    return GraphLayout(graph, partitioning, plan)
