"""Risk reports, training logs and plot-data tables on disk.

JSON files are written with sorted keys and CSV mirrors carry the same numbers
(floats via ``repr``), so re-emitting a report is byte-identical.  Every CSV
opens with a ``# config=`` comment line holding the run configuration.
"""
import csv
import io
import json
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from core.predict import RiskReport
from integrations.graph_store import HEADER, dumps, iter_jsonl, write_jsonl
from utils.errors import RunFailure
from utils.logging_config import get_logger

logger = get_logger(__name__)

EDGE_COLUMNS = ("edge_id", "u", "v", "p_hat", "decision", "truth", "reuse_rate")
NODE_COLUMNS = ("node_id", "risk_score", "defaults_applied")
RANKING_COLUMNS = ("scorer", "k", "precision_at_k", "recall_at_k", "ndcg_at_k", "nodes")
LOSS_COLUMNS = (
    "round", "lr", "mean_loss", "loss_stderr", "valid_f1", "cum_upload_bytes", "cum_download_bytes",
)


class ReportWriter:
    """Render report artefacts into one directory, stamped with the run configuration."""

    def __init__(self, directory: str, config: Mapping[str, Any]):
        self.directory = directory
        self.config = dict(config)

    # ── Reports ───────────────────────────────────────────────────────────────

    def write_report(
        self,
        report: RiskReport,
        name: str = "report",
        defaults_applied: Optional[Mapping[int, Sequence[str]]] = None,
    ) -> Dict[str, str]:
        """Write ``{name}.json`` plus one CSV per table; returns the paths written."""
        payload = self.report_payload(report, defaults_applied)
        paths = {"json": self.save_json(f"{name}.json", payload)}
        paths["metrics"] = self.save_csv(
            f"{name}_metrics.csv", ("metric", "value"), sorted(payload["metrics"].items()),
        )
        for table, columns in (("ranking", RANKING_COLUMNS), ("nodes", NODE_COLUMNS), ("edges", EDGE_COLUMNS)):
            paths[table] = self.save_csv(
                f"{name}_{table}.csv", columns, [[row.get(c) for c in columns] for row in payload[table]],
            )
        logger.info(
            "Report %s written to %s (%d edges, %d nodes, %d ranking rows)",
            name, self.directory, len(payload["edges"]), len(payload["nodes"]), len(payload["ranking"]),
        )
        return paths

    def report_payload(
        self, report: RiskReport, defaults_applied: Optional[Mapping[int, Sequence[str]]] = None,
    ) -> Dict[str, Any]:
        defaults_applied = defaults_applied or {}
        return {
            "config": self.config,
            "metrics": dict(report.metrics),
            "ranking": [dict(row) for row in report.ranking],
            "nodes": [
                {
                    "node_id": node,
                    "risk_score": score,
                    "defaults_applied": ";".join(defaults_applied.get(node, ())),
                }
                for node, score in sorted(report.node_scores.items())
            ],
            "edges": [
                {
                    "edge_id": p.edge_id,
                    "u": p.u,
                    "v": p.v,
                    "p_hat": p.p_hat,
                    "decision": p.decision,
                    "truth": p.label,
                    "reuse_rate": p.reuse_rate,
                }
                for p in report.predictions
            ],
        }

    # ── Plot data ─────────────────────────────────────────────────────────────

    def write_loss_curve(self, rows: Iterable[Mapping[str, Any]], name: str = "loss_curve") -> str:
        return self.save_csv(f"{name}.csv", LOSS_COLUMNS, [[row.get(c) for c in LOSS_COLUMNS] for row in rows])

    def write_ranking_curve(self, rows: Iterable[Mapping[str, Any]], name: str = "ranking_curve") -> str:
        ordered = sorted(rows, key=lambda r: (r["scorer"], r["k"]))
        return self.save_csv(f"{name}.csv", RANKING_COLUMNS, [[row.get(c) for c in RANKING_COLUMNS] for row in ordered])

    def write_table(self, name: str, columns: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> Tuple[str, str]:
        """JSON and CSV renderings of one flat table."""
        json_path = self.save_json(f"{name}.json", {"config": self.config, "rows": [dict(r) for r in rows]})
        csv_path = self.save_csv(f"{name}.csv", columns, [[r.get(c) for c in columns] for r in rows])
        return json_path, csv_path

    # ── File primitives ───────────────────────────────────────────────────────

    def save_json(self, filename: str, payload: Mapping[str, Any]) -> str:
        path = os.path.join(self.directory, filename)
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
        self._write_text(path, text)
        return path

    def save_csv(self, filename: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        path = os.path.join(self.directory, filename)
        buffer = io.StringIO()
        buffer.write(f"# config={dumps(self.config)}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
        self._write_text(path, buffer.getvalue())
        return path

    @staticmethod
    def _write_text(path: str, text: str) -> None:
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as e:
            logger.error("Error saving output to %s: %s", path, e)
            raise RunFailure(f"cannot write {path}: {e}") from e
        logger.debug("Wrote %s", path)


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


# ── Training log ──────────────────────────────────────────────────────────────

def write_training_log(path: str, rows: Iterable[Mapping[str, Any]], config: Mapping[str, Any]) -> None:
    def records():
        yield {"kind": HEADER, "config": dict(config)}
        yield from rows

    count = write_jsonl(path, records())
    logger.info("Training log written: %s (%d rounds)", path, count - 1)


def read_training_log(path: str) -> List[Dict[str, Any]]:
    return [record for _, record in iter_jsonl(path) if record.get("kind") != HEADER]
