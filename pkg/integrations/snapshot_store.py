"""Offline web-analytics snapshots: one JSON object per website.

Each record carries ``site_id, ip, category, url, content_vec`` and an optional
``security`` object.  Absent security fields default to zero and are listed in
the record's ``defaults_applied``.
"""
from typing import Any, Dict, Iterable, List, Mapping

from config.constants import SECURITY_FIELDS
from core.features import FeatureRecord, SecurityPosture
from integrations.graph_store import HEADER, iter_jsonl, write_jsonl
from utils.errors import DataError, SchemaError
from utils.logging_config import get_logger

logger = get_logger(__name__)

REQUIRED_FIELDS = ("site_id", "ip", "category", "url", "content_vec")
_INTEGER_SECURITY = ("software_count", "https_ok", "cert_errors")


def ingest_snapshot(path: str) -> List[FeatureRecord]:
    """Parse a snapshot file into FeatureRecords, in file order."""
    records: List[FeatureRecord] = []
    seen: Dict[str, int] = {}
    defaulted = 0
    for line_no, raw in iter_jsonl(path):
        if raw.get("kind") == HEADER:
            continue
        record = _parse_record(raw, path, line_no)
        if record.site_id in seen:
            raise SchemaError(
                f"duplicate site_id {record.site_id!r} (first seen on line {seen[record.site_id]})", path, line_no,
            )
        seen[record.site_id] = line_no
        if record.defaults_applied:
            defaulted += 1
            logger.warning(
                "%s:%d: site %s has no %s; defaulting to 0",
                path, line_no, record.site_id, ", ".join(record.defaults_applied),
            )
        records.append(record)
    logger.info("Snapshot ingested: %s (%d sites, %d with defaulted security fields)", path, len(records), defaulted)
    return records


def write_snapshot(path: str, records: Iterable[FeatureRecord], config: Mapping[str, Any]) -> None:
    def lines():
        yield {"kind": HEADER, "config": dict(config)}
        for record in records:
            yield record_to_dict(record)

    count = write_jsonl(path, lines())
    logger.info("Snapshot written: %s (%d sites)", path, count - 1)


def record_to_dict(record: FeatureRecord) -> Dict[str, Any]:
    posture = record.security
    return {
        "site_id": record.site_id,
        "ip": record.ip,
        "category": record.category,
        "url": record.url,
        "content_vec": list(record.content_vec),
        "security": {
            name: getattr(posture, name) for name in SECURITY_FIELDS if name not in record.defaults_applied
        },
    }


def records_by_site(records: Iterable[FeatureRecord]) -> Dict[str, FeatureRecord]:
    return {record.site_id: record for record in records}


# ── Private helpers ───────────────────────────────────────────────────────────

def _parse_record(raw: Mapping[str, Any], path: str, line_no: int) -> FeatureRecord:
    missing = [name for name in REQUIRED_FIELDS if name not in raw]
    if missing:
        raise SchemaError(f"missing required field(s): {', '.join(missing)}", path, line_no)
    site_id, ip, category, url, content = (raw[name] for name in REQUIRED_FIELDS)
    if not isinstance(site_id, str) or not site_id:
        raise SchemaError("site_id must be a non-empty string", path, line_no)
    if not isinstance(ip, str) or not isinstance(url, str):
        raise SchemaError("ip and url must be strings", path, line_no)
    if isinstance(category, bool) or not isinstance(category, int):
        raise SchemaError(f"category must be an integer, got {category!r}", path, line_no)
    if not isinstance(content, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in content
    ):
        raise SchemaError("content_vec must be an array of numbers", path, line_no)

    security = raw.get("security", {})
    if not isinstance(security, dict):
        raise SchemaError("security must be an object", path, line_no)
    unknown = sorted(set(security) - set(SECURITY_FIELDS))
    if unknown:
        raise SchemaError(f"unknown security field(s): {', '.join(unknown)}", path, line_no)
    values: Dict[str, Any] = {}
    for name in SECURITY_FIELDS:
        if name not in security or security[name] is None:
            continue
        value = security[name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"security.{name} must be a number, got {value!r}", path, line_no)
        if name in _INTEGER_SECURITY:
            if float(value) != int(value):
                raise SchemaError(f"security.{name} must be an integer, got {value!r}", path, line_no)
            value = int(value)
        values[name] = value if name in _INTEGER_SECURITY else float(value)
    defaults = tuple(name for name in SECURITY_FIELDS if name not in values)
    if "max_cvss" in defaults and "avg_cvss" in values:
        # a defaulted maximum may not sit below a reported average
        values["max_cvss"] = values["avg_cvss"]

    try:
        return FeatureRecord(
            site_id=site_id,
            ip=ip,
            category=category,
            url=url,
            content_vec=tuple(float(x) for x in content),
            security=SecurityPosture(**values),
            defaults_applied=defaults,
        )
    except DataError as e:
        raise SchemaError(str(e), path, line_no) from e
