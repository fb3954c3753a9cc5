from .graph_store import GraphLayout, load_layout, read_graph, write_graph
from .report_writer import ReportWriter
from .snapshot_store import ingest_snapshot, write_snapshot
