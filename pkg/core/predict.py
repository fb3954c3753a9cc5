"""Edge head, decisions, classification/ranking metrics and risk scores."""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.constants import RANKING_CANDIDATES, TAU_PRED, THRESHOLD_GRID
from config.run_config import ModelConfig
from core import ndgrad as nd
from core.ndgrad import Tensor
from utils.errors import RankingError, ShapeError
from utils.logging_config import get_logger
from utils.seeding import derive_rng

logger = get_logger(__name__)

HEAD_W_F = "head.W_f"
HEAD_F_W = "head.f.W"
HEAD_F_B = "head.f.b"


# ── Edge head ─────────────────────────────────────────────────────────────────

def _one_order(a: Tensor, b: Tensor, params: Mapping[str, Tensor], slope: float) -> Tensor:
    hidden = nd.leaky_relu(nd.matmul(nd.concat([a, b], axis=1), params[HEAD_W_F]), slope)
    logits = nd.add(nd.matmul(hidden, params[HEAD_F_W]), params[HEAD_F_B])
    return nd.sigmoid(nd.reshape(logits, (a.shape[0],)))


def edge_probability_kernel(Hu: Tensor, Hv: Tensor, params: Mapping[str, Tensor], slope: float) -> Tensor:
    """p_hat for row-aligned endpoint matrices, averaged over both concat orders."""
    if Hu.shape != Hv.shape or Hu.ndim != 2:
        raise ShapeError(f"endpoint matrices differ: {Hu.shape} vs {Hv.shape}")
    return nd.scale(nd.add(_one_order(Hu, Hv, params, slope), _one_order(Hv, Hu, params, slope)), 0.5)


def edge_probability(h_u: Tensor, h_v: Tensor, params: Mapping[str, Tensor], slope: float) -> Tensor:
    h_u, h_v = nd.as_tensor(h_u), nd.as_tensor(h_v)
    if h_u.shape != h_v.shape or h_u.ndim != 1:
        raise ShapeError(f"edge_probability needs two equal vectors, got {h_u.shape} and {h_v.shape}")
    d = h_u.shape[0]
    p = edge_probability_kernel(nd.reshape(h_u, (1, d)), nd.reshape(h_v, (1, d)), params, slope)
    return nd.reshape(p, ())


def param_specs(model: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    d = model.hidden_dim
    return [
        (HEAD_W_F, (2 * d, d), "glorot"),
        (HEAD_F_W, (d, 1), "glorot"),
        (HEAD_F_B, (1,), "zeros"),
    ]


# ── Decisions ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Prediction:
    edge_id: int
    u: int
    v: int
    p_hat: float
    decision: bool
    label: Optional[int] = None
    reuse_rate: Optional[float] = None


def classify(p_hat: float, tau_pred: float = TAU_PRED) -> bool:
    if not 0.0 < tau_pred < 1.0:
        raise ValueError(f"tau_pred must lie in (0, 1), got {tau_pred}")
    return p_hat >= tau_pred


def relabel(predictions: Iterable[Prediction], tau_pred: float) -> List[Prediction]:
    return [
        Prediction(p.edge_id, p.u, p.v, p.p_hat, classify(p.p_hat, tau_pred), p.label, p.reuse_rate)
        for p in predictions
    ]


# ── Classification metrics ────────────────────────────────────────────────────

@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self) -> Dict[str, float]:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
        }


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_metrics(predictions: Sequence[Prediction]) -> ClassificationMetrics:
    labelled = [p for p in predictions if p.label is not None]
    tp = sum(1 for p in labelled if p.decision and p.label == 1)
    fp = sum(1 for p in labelled if p.decision and p.label == 0)
    fn = sum(1 for p in labelled if not p.decision and p.label == 1)
    tn = sum(1 for p in labelled if not p.decision and p.label == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if not labelled:
        logger.warning("No labelled predictions; classification metrics are all zero")
    return ClassificationMetrics(precision, recall, f1_score(precision, recall), tp, fp, fn, tn)


def tune_threshold(
    predictions: Sequence[Prediction], grid: Sequence[float] = THRESHOLD_GRID
) -> Tuple[float, float]:
    """F1-maximising threshold; ties go to the value closest to 0.5, then the smaller."""
    best: Optional[Tuple[float, float]] = None
    for tau in sorted(grid, key=lambda t: (abs(t - 0.5), t)):
        f1 = classification_metrics(relabel(predictions, tau)).f1
        if best is None or f1 > best[1]:
            best = (tau, f1)
    if best is None:
        raise ValueError("threshold grid is empty")
    logger.info("Tuned threshold %.2f (validation F1 %.4f)", best[0], best[1])
    return best


# ── Ranking metrics ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RankingMetrics:
    k: int
    precision_at_k: float
    recall_at_k: float
    ndcg_at_k: float
    nodes: int


def dcg_at_k(relevance: Sequence[float], k: int) -> float:
    r = np.asarray(relevance, dtype=np.float64)[:k]
    return float(np.sum(r / np.log2(np.arange(2, r.size + 2))))


def ndcg_at_k(relevance: Sequence[float], k: int) -> float:
    """Linear-gain nDCG of an already-ordered relevance list; 1.0 when nothing is relevant."""
    idcg = dcg_at_k(sorted(relevance, reverse=True), k)
    if idcg == 0.0:
        return 1.0
    return dcg_at_k(relevance, k) / idcg


def rank_candidates(candidates: Sequence[Prediction], scores: Optional[Mapping[int, float]] = None) -> List[Prediction]:
    """Descending score, ties by ascending edge id."""
    def score(p: Prediction) -> float:
        return p.p_hat if scores is None else scores[p.edge_id]
    return sorted(candidates, key=lambda p: (-score(p), p.edge_id))


def build_candidate_lists(
    predictions: Sequence[Prediction],
    candidates: int = RANKING_CANDIDATES,
    seed: int = 0,
) -> Dict[int, List[Prediction]]:
    """Exactly ``candidates`` sampled incident edges per node; nodes with fewer are dropped."""
    incident: Dict[int, List[Prediction]] = {}
    for p in sorted(predictions, key=lambda p: p.edge_id):
        incident.setdefault(p.u, []).append(p)
        incident.setdefault(p.v, []).append(p)
    lists: Dict[int, List[Prediction]] = {}
    for node in sorted(incident):
        edges = incident[node]
        if len(edges) < candidates:
            continue
        picked = derive_rng(seed, "ranking", node).choice(len(edges), size=candidates, replace=False)
        lists[node] = [edges[i] for i in sorted(picked)]
    logger.debug("Candidate lists built for %d of %d nodes", len(lists), len(incident))
    return lists


def ranking_metrics(
    candidate_lists: Mapping[int, Sequence[Prediction]],
    k: int,
    scores: Optional[Mapping[int, float]] = None,
) -> RankingMetrics:
    if k < 1:
        raise RankingError(f"k must be at least 1, got {k}")
    if not candidate_lists:
        raise RankingError("no node has enough evaluated edges to rank")
    precisions, recalls, ndcgs = [], [], []
    for node in sorted(candidate_lists):
        cands = candidate_lists[node]
        if k > len(cands):
            raise RankingError(f"k={k} exceeds the {len(cands)} candidates of node {node}")
        ordered = rank_candidates(cands, scores)
        hits = [p.label or 0 for p in ordered]
        precisions.append(sum(hits[:k]) / k)
        positives = sum(hits)
        if positives:
            recalls.append(sum(hits[:k]) / positives)
        ndcgs.append(ndcg_at_k([p.reuse_rate or 0.0 for p in ordered], k))
    return RankingMetrics(
        k=k,
        precision_at_k=float(np.mean(precisions)),
        recall_at_k=float(np.mean(recalls)) if recalls else 0.0,
        ndcg_at_k=float(np.mean(ndcgs)),
        nodes=len(candidate_lists),
    )


def random_scores(predictions: Sequence[Prediction], seed: int = 0) -> Dict[int, float]:
    """Uniform random scores per edge: the chance-level ranking baseline."""
    ids = sorted(p.edge_id for p in predictions)
    draws = derive_rng(seed, "random_baseline").random(len(ids))
    return {edge_id: float(x) for edge_id, x in zip(ids, draws)}


# ── Risk scores ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RiskSummary:
    node_scores: Dict[int, float]
    mse: Optional[float]
    baseline_mse: Optional[float]
    mean_rate: Optional[float]


def risk_scores(predictions: Sequence[Prediction]) -> RiskSummary:
    """Per-node mean p_hat, MSE against reuse rates and the constant-mean-rate baseline."""
    totals: Dict[int, List[float]] = {}
    for p in predictions:
        totals.setdefault(p.u, []).append(p.p_hat)
        totals.setdefault(p.v, []).append(p.p_hat)
    node_scores = {node: float(np.mean(values)) for node, values in sorted(totals.items())}

    rated = [p for p in predictions if p.reuse_rate is not None]
    if not rated:
        return RiskSummary(node_scores, None, None, None)
    p_hat = np.array([p.p_hat for p in rated])
    rates = np.array([p.reuse_rate for p in rated])
    mean_rate = float(rates.mean())
    return RiskSummary(
        node_scores,
        mse=float(np.mean((p_hat - rates) ** 2)),
        baseline_mse=float(np.mean((rates - mean_rate) ** 2)),
        mean_rate=mean_rate,
    )


@dataclass(frozen=True)
class RiskReport:
    predictions: Tuple[Prediction, ...]
    node_scores: Dict[int, float]
    metrics: Dict[str, object]
    ranking: Tuple[Dict[str, object], ...] = ()


def ranking_row(scorer: str, metrics: RankingMetrics) -> Dict[str, object]:
    return {
        "scorer": scorer,
        "k": metrics.k,
        "precision_at_k": metrics.precision_at_k,
        "recall_at_k": metrics.recall_at_k,
        "ndcg_at_k": metrics.ndcg_at_k,
        "nodes": metrics.nodes,
    }


def risk_report(
    predictions: Sequence[Prediction],
    tau_pred: float,
    ranking: Sequence[Dict[str, object]] = (),
) -> RiskReport:
    """Bundle per-edge predictions with classification and risk-score summaries."""
    ordered = tuple(sorted(predictions, key=lambda p: p.edge_id))
    summary = risk_scores(ordered)
    metrics: Dict[str, object] = dict(classification_metrics(ordered).as_dict()) if ordered else {
        "precision": 0.0, "recall": 0.0, "f1": 0.0, "tp": 0, "fp": 0, "fn": 0, "tn": 0,
    }
    metrics.update({
        "edges": len(ordered),
        "tau_pred": tau_pred,
        "mse": summary.mse,
        "baseline_mse": summary.baseline_mse,
        "mean_rate": summary.mean_rate,
    })
    return RiskReport(ordered, summary.node_scores, metrics, tuple(ranking))
