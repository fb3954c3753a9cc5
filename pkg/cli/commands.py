"""One click command per pipeline stage.

Commands build a ``RunConfig`` (flags > ``--config`` file > defaults), do their
work through the core and integrations packages, and turn any
``ReuseRiskError`` into its process exit code.
"""
import dataclasses
import functools
import os
import traceback
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import click
import numpy as np
from click.core import ParameterSource

from config.constants import EXIT_RUNTIME_FAILURE
from config.run_config import ModelConfig, RunConfig
from core.checkpoint import load_checkpoint, save_checkpoint
from core.evaluation import Evaluator, edges_for, score_edges
from core.features import FeatureRecord, FeatureTable
from core.fl import CostLedger, TrainRun, cost_train, start_run, train
from core.graph import make_split, partition, split_statistics
from core.params import ModelParams, init_params, param_specs
from core.predict import (
    Prediction,
    build_candidate_lists,
    classification_metrics,
    random_scores,
    ranking_metrics,
    ranking_row,
    risk_report,
    tune_threshold,
)
from core.synthetic import GeneratorConfig, synth_generate
from integrations.graph_store import (
    GraphLayout,
    load_graph,
    load_layout,
    read_graph,
    read_split,
    write_graph,
    write_partition,
    write_split,
)
from integrations.report_writer import (
    RANKING_COLUMNS,
    ReportWriter,
    read_training_log,
    write_training_log,
)
from integrations.snapshot_store import ingest_snapshot, records_by_site, write_snapshot
from utils.errors import ConfigError, DataError, RankingError, ReuseRiskError, RunFailure
from utils.logging_config import get_logger, set_level

logger = get_logger(__name__)

# flags whose value maps onto a differently named (or inverted) RunConfig field
_FLAG_FIELDS: Dict[str, Tuple[str, Callable[[Any], Any]]] = {
    "keep_target_edges": ("exclude_target_edges", lambda keep: not keep),
}
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}

SWEEP_COLUMNS = ("clients", "seed", "precision", "recall", "f1", "final_mean_loss", "rounds_run")
SWEEP_MEDIAN_COLUMNS = ("clients", "seeds", "precision", "recall", "f1", "final_mean_loss")


# ── Option groups ─────────────────────────────────────────────────────────────

def _options(*decorators):
    def apply(func):
        for decorator in reversed(decorators):
            func = decorator(func)
        return func
    return apply


common_options = _options(
    click.option("--config", "config_file", type=click.Path(dir_okay=False), help="JSON config file."),
    click.option("--workdir", help="Directory holding every input and output file."),
    click.option("--seed", type=int, help="Root seed; every random stream is derived from it."),
    click.option("--graph", "graph_path", help="Graph file (default: <workdir>/graph.jsonl)."),
    click.option("--snapshot", "snapshot_path", help="Snapshot file (default: <workdir>/snapshot.jsonl)."),
    click.option("--partition-file", "partition_path", help="Partition file."),
    click.option("--split-file", "split_path", help="Split plan file."),
    click.option("--checkpoint", "checkpoint_path", help="Checkpoint file."),
    click.option("--log-file", "log_path", help="Training log file."),
    click.option("--report-dir", "report_dir", help="Directory for reports."),
    click.option("--verbose", is_flag=True, help="Log at DEBUG level."),
)

data_options = _options(
    click.option("--n-sites", type=int, help="Synthetic corpus size."),
    click.option("--tau-gt", type=float, help="Reuse-rate threshold for positive labels."),
    click.option("--min-shared", type=int, help="Minimum shared users for a labelled pair."),
    click.option("--clients", type=int, help="Number of administrators K."),
    click.option("--sizes", help="Comma-separated partition sizes, one per administrator."),
    click.option("--valid-pair", help="Administrator pair 'a,b' whose cross edges validate."),
)

model_options = _options(
    click.option("--hidden-dim", type=int, help="GNN width d."),
    click.option("--layers", "num_layers", type=int, help="GNN depth L."),
    click.option("--category-dim", type=int, help="Category embedding width."),
    click.option("--url-dim", type=int, help="URL encoder hidden size."),
    click.option("--url-char-dim", type=int, help="URL character embedding width."),
    click.option("--mean-pool", is_flag=True, help="Mean-pool neighbours instead of attention."),
    click.option("--no-modality-attn", is_flag=True, help="Single GNN over concatenated features."),
)

train_options = _options(
    click.option("--rounds", type=int, help="Communication rounds T."),
    click.option("--local-steps", type=int, help="Local batches per round (default: one pass)."),
    click.option("--batch", "batch_size", type=int, help="Edges per local batch."),
    click.option("--max-lr", type=float, help="Peak learning rate of the one-cycle schedule."),
    click.option("--patience", type=int, help="Rounds without validation gain before stopping."),
    click.option("--optimizer", type=click.Choice(["adam", "sgd"]), help="Local optimiser."),
    click.option("--weighted-avg", is_flag=True, help="Weight clients by local edge count."),
    click.option("--centralized", is_flag=True, help="Train one model on the merged local graphs."),
    click.option("--keep-target-edges", is_flag=True, help="Let batch edges carry messages."),
    click.option("--workers", type=int, help="Threads running clients within a round."),
    click.option("--resume", help="Checkpoint to continue training from."),
)

eval_options = _options(
    click.option("--tau-pred", type=float, help="Decision threshold on predicted probability."),
    click.option("--tune-threshold", is_flag=True, help="Pick tau_pred maximising validation F1."),
    click.option("--ks", "ranking_ks", help="Comma-separated ranking cut-offs."),
    click.option("--candidates", "ranking_candidates", type=int, help="Sampled candidate edges per node."),
    click.option("--directions", type=int, help="1 or 2 embedding transfers per cross-admin query."),
)

sweep_options = _options(
    click.option("--sweep-clients", help="Comma-separated federation sizes."),
    click.option("--sweep-seeds", help="Comma-separated seeds to take medians over."),
)


def pipeline_command(func):
    """Assemble the RunConfig, run the command and map failures to exit codes."""

    @click.pass_context
    @functools.wraps(func)
    def wrapper(ctx: click.Context, **options):
        if options.pop("verbose", False):
            set_level("DEBUG")
        try:
            config, extra = build_config(ctx, options)
            func(config, **extra)
        except ReuseRiskError as e:
            logger.error("%s failed: %s", ctx.command.name, e)
            click.echo(f"error: {e}", err=True)
            ctx.exit(e.exit_code)
        except Exception as e:
            logger.error("%s failed unexpectedly: %s", ctx.command.name, e)
            logger.debug(traceback.format_exc())
            click.echo(f"error: {e}", err=True)
            ctx.exit(EXIT_RUNTIME_FAILURE)

    return wrapper


def build_config(ctx: click.Context, options: Dict[str, Any]) -> Tuple[RunConfig, Dict[str, Any]]:
    """Split click values into RunConfig overrides and command-specific arguments.

    Only values the user actually passed override the config file.
    """
    config_file = options.pop("config_file", None)
    overrides: Dict[str, Any] = {}
    extra: Dict[str, Any] = {}
    for name, value in options.items():
        if name not in _CONFIG_FIELDS and name not in _FLAG_FIELDS:
            extra[name] = value
            continue
        if ctx.get_parameter_source(name) not in (ParameterSource.COMMANDLINE, ParameterSource.ENVIRONMENT):
            continue
        field, convert = _FLAG_FIELDS.get(name, (name, lambda v: v))
        overrides[field] = convert(value)
    return RunConfig.from_sources(overrides, config_file), extra


# ── Commands ──────────────────────────────────────────────────────────────────

@click.command()
@common_options
@data_options
@pipeline_command
def generate(config: RunConfig) -> None:
    """Synthesize a breach corpus: graph file plus analytics snapshot."""
    logger.info("Step 1: generating %d synthetic sites (seed %d)", config.n_sites, config.seed)
    corpus = synth_generate(GeneratorConfig.from_run_config(config))

    logger.info("Step 2: writing graph and snapshot files")
    stamp = config.to_dict()
    write_graph(config.path("graph"), corpus.nodes, corpus.account_stats, stamp)
    write_snapshot(config.path("snapshot"), corpus.records, stamp)
    click.echo(f"generated {len(corpus.nodes)} sites, {len(corpus.account_stats)} sharing pairs")


@click.command()
@click.argument("source", type=click.Path(dir_okay=False))
@common_options
@pipeline_command
def ingest(config: RunConfig, source: str) -> None:
    """Validate an analytics snapshot and store it in the work directory."""
    logger.info("Step 1: ingesting snapshot %s", source)
    records = ingest_snapshot(source)

    graph_path = config.path("graph")
    if os.path.exists(graph_path):
        logger.info("Step 2: checking coverage of %s", graph_path)
        nodes, _, _ = read_graph(graph_path)
        by_site = records_by_site(records)
        missing = [n.site_id for n in nodes if n.site_id not in by_site]
        if missing:
            raise DataError(f"snapshot has no record for {len(missing)} graph sites, e.g. {missing[:3]}")

    write_snapshot(config.path("snapshot"), records, config.to_dict())
    defaulted = sum(1 for r in records if r.defaults_applied)
    click.echo(f"ingested {len(records)} sites ({defaulted} with defaulted security fields)")


@click.command(name="partition")
@common_options
@data_options
@pipeline_command
def partition_cmd(config: RunConfig) -> None:
    """Label the graph, split it across K administrators and fix the train/valid/test plan."""
    logger.info("Step 1: labelling %s (tau_gt=%s, min_shared=%d)", config.path("graph"), config.tau_gt, config.min_shared)
    graph = load_graph(config.path("graph"), config.tau_gt, config.min_shared)

    logger.info("Step 2: partitioning %d nodes into %d administrators", graph.num_nodes, config.clients)
    partitioning = partition(graph, config.clients, config.sizes, config.seed)
    plan = make_split(partitioning, config.valid_pair, config.seed)
    statistics = split_statistics(partitioning, plan)

    stamp = config.to_dict()
    write_partition(config.path("partition"), partitioning, statistics, stamp)
    write_split(config.path("split"), plan, stamp)
    click.echo(
        f"{partitioning.num_admins} administrators: {statistics['train_edges']} train, "
        f"{statistics['valid_edges']} valid, {statistics['test_edges']} test edges"
    )


@click.command(name="train")
@common_options
@model_options
@train_options
@eval_options
@pipeline_command
def train_cmd(config: RunConfig) -> None:
    """Federated training (or centralized with --centralized); writes checkpoint and log."""
    logger.info("Step 1: loading graph layout and features")
    layout, table = load_inputs(config)
    model = config.model

    logger.info("Step 2: preparing %s run", "centralized" if config.centralized else "federated")
    run = _prepare_run(config, model, layout, table)
    evaluator = Evaluator(layout.partitioning, table, model)
    valid_edges = edges_for(layout.partitioning, layout.plan.valid)
    last_path = last_checkpoint_path(config)

    def on_round(state: TrainRun, row: Dict[str, Any]) -> None:
        meta = checkpoint_meta(config, state, layout.partitioning.num_admins)
        if state.best_round == state.round:
            save_checkpoint(config.path("checkpoint"), state.best_params, meta)
        save_checkpoint(last_path, state.params, meta)
        write_training_log(config.path("log"), state.log, config.to_dict())

    logger.info("Step 3: training")
    train(run, evaluator, valid_edges, on_round)

    logger.info("Step 4: writing checkpoint and training log")
    meta = checkpoint_meta(config, run, layout.partitioning.num_admins)
    save_checkpoint(config.path("checkpoint"), run.best_params, meta)
    if not run.log:
        save_checkpoint(last_path, run.params, meta)
    write_training_log(config.path("log"), run.log, config.to_dict())
    best = "n/a" if run.best_f1 is None else f"{run.best_f1:.4f}"
    click.echo(f"trained {run.round} rounds; best round {run.best_round}, valid F1 {best}")


@click.command()
@common_options
@eval_options
@pipeline_command
def evaluate(config: RunConfig) -> None:
    """Predict the held-out cross-admin edges and write the evaluation report."""
    trained = load_trained(config)
    tau, predictions = predict_test(config, trained)

    writer = ReportWriter(config.path("report"), config.to_dict())
    report = risk_report(predictions, tau)
    writer.write_report(report, "evaluation", defaults_by_node(trained.table))
    writer.save_json("cost.json", cost_payload(config, trained, len(predictions)))
    m = report.metrics
    click.echo(f"precision {m['precision']:.4f}  recall {m['recall']:.4f}  F1 {m['f1']:.4f}  (tau_pred {tau})")


@click.command()
@common_options
@eval_options
@pipeline_command
def rank(config: RunConfig) -> None:
    """Ranking metrics at every k for the model and the random baseline."""
    trained = load_trained(config)
    _, predictions = predict_test(config, trained)
    rows = ranking_rows(config, predictions)

    writer = ReportWriter(config.path("report"), config.to_dict())
    writer.write_table("ranking", RANKING_COLUMNS, rows)
    writer.write_ranking_curve(rows)
    for row in rows:
        click.echo(
            f"{row['scorer']:>6} k={row['k']:<3} precision@k {row['precision_at_k']:.4f}  ndcg@k {row['ndcg_at_k']:.4f}"
        )


@click.command()
@common_options
@eval_options
@pipeline_command
def report(config: RunConfig) -> None:
    """Full risk report: predictions, node risk scores, ranking tables and plot data."""
    trained = load_trained(config)
    tau, predictions = predict_test(config, trained)
    try:
        rows = ranking_rows(config, predictions)
    except RankingError as e:
        logger.warning("Ranking tables left empty: %s", e)
        rows = []

    writer = ReportWriter(config.path("report"), config.to_dict())
    writer.write_report(risk_report(predictions, tau, rows), "report", defaults_by_node(trained.table))
    writer.write_ranking_curve(rows)
    log_path = config.path("log")
    if os.path.exists(log_path):
        writer.write_loss_curve(read_training_log(log_path))
    else:
        logger.warning("No training log at %s; loss curve skipped", log_path)
    writer.save_json("cost.json", cost_payload(config, trained, len(predictions)))
    click.echo(f"report written to {config.path('report')}")


@click.command()
@common_options
@eval_options
@pipeline_command
def cost(config: RunConfig) -> None:
    """Communication cost of training and cross-admin inference, reconciled with the ledger."""
    params, meta = load_checkpoint(config.path("checkpoint"))
    queries = len(read_split(config.path("split")).test)
    trained = TrainedModel(None, None, params, meta, model_for(meta, config))
    payload = cost_payload(config, trained, queries)
    ReportWriter(config.path("report"), config.to_dict()).save_json("cost.json", payload)
    click.echo(
        f"training {payload['train_bytes']} bytes over {payload['rounds']} rounds; "
        f"inference {payload['infer_bytes']} bytes for {queries} queries"
    )


@click.command()
@common_options
@data_options
@model_options
@train_options
@eval_options
@sweep_options
@pipeline_command
def sweep(config: RunConfig) -> None:
    """Test metrics as the number of participating administrators grows, test set fixed."""
    k_ref = max(config.sweep_clients)
    logger.info("Step 1: partitioning once into %d administrators", k_ref)
    graph = load_graph(config.path("graph"), config.tau_gt, config.min_shared)
    partitioning = partition(graph, k_ref, config.sizes if config.clients == k_ref else None, config.seed)
    plan = make_split(partitioning, config.valid_pair, config.seed)
    table = FeatureTable.build(graph.nodes, records_by_site(ingest_snapshot(config.path("snapshot"))))

    model = config.model
    evaluator = Evaluator(partitioning, table, model)
    valid_edges = edges_for(partitioning, plan.valid)
    test_edges = edges_for(partitioning, plan.test)

    rows: List[Dict[str, Any]] = []
    for seed in config.sweep_seeds:
        seeded = config.replace(seed=seed)
        for k in sorted(config.sweep_clients):
            logger.info("Step 2: training with administrators 0..%d (seed %d)", k - 1, seed)
            run = start_run(
                seeded.train, model, init_params(model, seed), partitioning, plan, table,
                admins=range(k), centralized=config.centralized,
            )
            train(run, evaluator, valid_edges)
            node_ids, H = evaluator.embeddings(run.best_params)
            m = classification_metrics(score_edges(node_ids, H, run.best_params, test_edges, config.tau_pred, model.leaky_slope))
            rows.append({
                "clients": k,
                "seed": seed,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "final_mean_loss": run.log[-1]["mean_loss"] if run.log else None,
                "rounds_run": run.round,
            })

    medians = sweep_medians(rows)
    writer = ReportWriter(config.path("report"), config.to_dict())
    writer.write_table("sweep", SWEEP_COLUMNS, rows)
    writer.write_table("sweep_median", SWEEP_MEDIAN_COLUMNS, medians)
    for row in medians:
        click.echo(f"K={row['clients']:<3} median F1 {row['f1']:.4f} over {row['seeds']} seed(s)")


# ── Shared steps ──────────────────────────────────────────────────────────────

@dataclasses.dataclass
class TrainedModel:
    layout: Optional[GraphLayout]
    table: Optional[FeatureTable]
    params: ModelParams
    meta: Dict[str, Any]
    model: ModelConfig


def load_inputs(config: RunConfig) -> Tuple[GraphLayout, FeatureTable]:
    layout = load_layout(
        config.path("graph"), config.path("partition"), config.path("split"), config.tau_gt, config.min_shared,
    )
    records: List[FeatureRecord] = ingest_snapshot(config.path("snapshot"))
    return layout, FeatureTable.build(layout.graph.nodes, records_by_site(records))


def load_trained(config: RunConfig) -> TrainedModel:
    layout, table = load_inputs(config)
    params, meta = load_checkpoint(config.path("checkpoint"))
    model = model_for(meta, config)
    check_model(params, model)
    return TrainedModel(layout, table, params, meta, model)


def model_for(meta: Mapping[str, Any], config: RunConfig) -> ModelConfig:
    """The model a checkpoint was trained with; the current flags when it does not say."""
    stored = meta.get("config")
    if not stored:
        return config.model
    return RunConfig.from_dict(stored).model


def check_model(params: ModelParams, model: ModelConfig) -> None:
    expected = {name: tuple(shape) for name, shape, _ in param_specs(model)}
    if params.shapes() != expected:
        missing = sorted(set(expected) - set(params.names))
        extra = sorted(set(params.names) - set(expected))
        raise ConfigError(
            f"checkpoint does not fit the model configuration (missing {missing[:3]}, unexpected {extra[:3]})"
        )


def predict_test(config: RunConfig, trained: TrainedModel) -> Tuple[float, List[Prediction]]:
    """(threshold used, predictions on the test edges)."""
    partitioning = trained.layout.partitioning
    evaluator = Evaluator(partitioning, trained.table, trained.model)
    node_ids, H = evaluator.embeddings(trained.params)
    slope = trained.model.leaky_slope

    tau = config.tau_pred
    if config.tune_threshold:
        valid = score_edges(node_ids, H, trained.params, edges_for(partitioning, trained.layout.plan.valid), tau, slope)
        if valid:
            tau, _ = tune_threshold(valid)
        else:
            logger.warning("No validation edges; keeping tau_pred %s", tau)

    test_edges = edges_for(partitioning, trained.layout.plan.test)
    if not test_edges:
        logger.warning("Test split is empty; the report will hold no edges")
    return tau, score_edges(node_ids, H, trained.params, test_edges, tau, slope)


def ranking_rows(config: RunConfig, predictions: Sequence[Prediction]) -> List[Dict[str, Any]]:
    lists = build_candidate_lists(predictions, config.ranking_candidates, config.seed)
    baseline = random_scores(predictions, config.seed)
    rows: List[Dict[str, Any]] = []
    for k in sorted(set(config.ranking_ks)):
        rows.append(ranking_row("model", ranking_metrics(lists, k)))
        rows.append(ranking_row("random", ranking_metrics(lists, k, baseline)))
    return rows


def cost_payload(config: RunConfig, trained: TrainedModel, queries: int) -> Dict[str, Any]:
    """Closed-form costs for the run's own (b, |w|, K, T) checked against its ledger."""
    meta = trained.meta
    if "ledger" not in meta:
        raise DataError("checkpoint carries no cost ledger")
    ledger = CostLedger.from_dict(meta["ledger"])
    ledger.directions = config.directions
    clients = int(meta.get("clients", 1))
    w = trained.params.total_size
    b = ledger.bytes_per_scalar
    closed = cost_train(b, w, clients, ledger.rounds)
    if not meta.get("centralized") and closed != ledger.train_total:
        logger.error("Ledger total %d disagrees with 2*b*|w|*K*T = %d", ledger.train_total, closed)
        raise RunFailure("communication ledger does not reconcile with the closed form")
    infer = ledger.record_inference(trained.model.hidden_dim, queries)
    return {
        "config": config.to_dict(),
        "centralized": bool(meta.get("centralized", False)),
        "clients": clients,
        "rounds": ledger.rounds,
        "param_count": w,
        "bytes_per_scalar": b,
        "directions": config.directions,
        "embedding_dim": trained.model.hidden_dim,
        "queries": queries,
        "train_bytes": ledger.train_total,
        "upload_bytes": ledger.cum_upload,
        "download_bytes": ledger.cum_download,
        "upload_per_round": list(ledger.uploaded),
        "infer_bytes": infer,
    }


def defaults_by_node(table: FeatureTable) -> Dict[int, Tuple[str, ...]]:
    return {
        int(node): record.defaults_applied
        for node, record in zip(table.node_ids, table.records)
        if record.defaults_applied
    }


def last_checkpoint_path(config: RunConfig) -> str:
    root, ext = os.path.splitext(config.path("checkpoint"))
    return f"{root}.last{ext}"


def checkpoint_meta(config: RunConfig, run: TrainRun, num_admins: int) -> Dict[str, Any]:
    return {
        "config": config.to_dict(),
        "round": run.round,
        "best_round": run.best_round,
        "best_f1": run.best_f1,
        "stale_rounds": run.stale_rounds,
        "stopped_early": run.stopped_early,
        "centralized": run.centralized,
        "clients": 1 if run.centralized else num_admins,
        "ledger": run.ledger.to_dict(),
    }


def sweep_medians(rows: Sequence[Mapping[str, Any]]) -> List[Dict[str, Any]]:
    def median(values: Sequence[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return float(np.median(present)) if present else None

    out = []
    for k in sorted({row["clients"] for row in rows}):
        group = [row for row in rows if row["clients"] == k]
        out.append({
            "clients": k,
            "seeds": len(group),
            **{key: median([row[key] for row in group]) for key in ("precision", "recall", "f1", "final_mean_loss")},
        })
    return out


def _prepare_run(config: RunConfig, model: ModelConfig, layout: GraphLayout, table: FeatureTable) -> TrainRun:
    if not config.resume:
        params = init_params(model, config.seed)
        return start_run(
            config.train, model, params, layout.partitioning, layout.plan, table, centralized=config.centralized,
        )

    params, meta = load_checkpoint(config.resume)
    check_model(params, model)
    if bool(meta.get("centralized", False)) != config.centralized:
        raise ConfigError("--centralized must match the run being resumed")
    ledger = CostLedger.from_dict(meta["ledger"]) if "ledger" in meta else None
    start = int(meta.get("round", 0))
    run = start_run(
        config.train, model, params, layout.partitioning, layout.plan, table,
        centralized=config.centralized, start_round=start, ledger=ledger,
    )
    run.best_f1 = meta.get("best_f1")
    run.best_round = int(meta.get("best_round", start))
    run.stale_rounds = int(meta.get("stale_rounds", 0))
    run.best_params = _resume_best(config, model, run, params, start)
    log_path = config.path("log")
    if os.path.exists(log_path):
        run.log = [row for row in read_training_log(log_path) if row.get("round", 0) <= start]
    logger.info("Resuming from %s at round %d", config.resume, start)
    return run


def _resume_best(config: RunConfig, model: ModelConfig, run: TrainRun, params: ModelParams, start: int) -> ModelParams:
    """Best-so-far parameters for a resumed run.

    The best checkpoint must carry the same best round and F1 as the resumed
    state; otherwise best tracking restarts at the resumed round.
    """
    if run.best_round == start:
        return params
    best_path = config.path("checkpoint")
    if os.path.exists(best_path):
        best, best_meta = load_checkpoint(best_path)
        if best_meta.get("best_round") == run.best_round and best_meta.get("best_f1") == run.best_f1:
            check_model(best, model)
            return best
    logger.warning(
        "Best checkpoint for round %d not found at %s; best tracking restarts at round %d",
        run.best_round, best_path, start,
    )
    run.best_f1, run.best_round, run.stale_rounds = None, start, 0
    return params
