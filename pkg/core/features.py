"""Website feature records and the five modality embedders.

Modalities, in model order: location (IPv4 bits), category (lookup table),
content (precomputed text vector, passed through), url (character LSTM) and
security (batch-normalised posture metrics).
"""
import ipaddress
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.constants import (
    BN_MOMENTUM,
    CATEGORY_COUNT,
    CONTENT_DIM,
    LOCATION_DIM,
    SECURITY_DIM,
    URL_FIRST_PRINTABLE,
    URL_LAST_PRINTABLE,
    URL_MAX_LEN,
    URL_PAD_INDEX,
    URL_UNK_INDEX,
    URL_VOCAB_SIZE,
)
from config.run_config import ModelConfig
from core import ndgrad as nd
from core.ndgrad import BatchStats, Tensor
from utils.errors import DataError
from utils.logging_config import get_logger

logger = get_logger(__name__)

CATEGORY_TABLE = "features.category.table"
URL_CHAR_TABLE = "features.url.char_table"
URL_W = "features.url.W"
URL_B = "features.url.b"
BN_GAMMA = "features.security.gamma"
BN_BETA = "features.security.beta"
BN_RUNNING_MEAN = "features.security.running_mean"
BN_RUNNING_VAR = "features.security.running_var"


@dataclass(frozen=True)
class SecurityPosture:
    software_count: int = 0
    avg_cves: float = 0.0
    avg_cvss: float = 0.0
    max_cvss: float = 0.0
    https_ok: int = 0
    cert_errors: int = 0

    def __post_init__(self):
        if self.software_count < 0 or self.cert_errors < 0 or self.avg_cves < 0:
            raise DataError("security counts must be non-negative")
        if not (0.0 <= self.avg_cvss <= 10.0 and 0.0 <= self.max_cvss <= 10.0):
            raise DataError("CVSS values must lie in [0, 10]")
        if self.max_cvss < self.avg_cvss:
            raise DataError(f"max_cvss {self.max_cvss} below avg_cvss {self.avg_cvss}")
        if self.https_ok not in (0, 1):
            raise DataError(f"https_ok must be 0 or 1, got {self.https_ok}")

    def as_vector(self) -> np.ndarray:
        return np.array([
            self.software_count, self.avg_cves, self.avg_cvss,
            self.max_cvss, self.https_ok, self.cert_errors,
        ], dtype=np.float64)


@dataclass(frozen=True)
class FeatureRecord:
    site_id: str
    ip: str
    category: int
    url: str
    content_vec: Tuple[float, ...]
    security: SecurityPosture = field(default_factory=SecurityPosture)
    defaults_applied: Tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 <= self.category < CATEGORY_COUNT:
            raise DataError(f"{self.site_id}: category {self.category} outside [0, {CATEGORY_COUNT})")
        if not self.url or not self.url.isascii():
            raise DataError(f"{self.site_id}: url must be a non-empty ASCII string")
        if len(self.content_vec) != CONTENT_DIM:
            raise DataError(f"{self.site_id}: content vector has {len(self.content_vec)} dims, expected {CONTENT_DIM}")
        if not np.isfinite(np.asarray(self.content_vec, dtype=np.float64)).all():
            raise DataError(f"{self.site_id}: content vector is not finite")
        embed_ip(self.ip)


# ── Single-site embedders ─────────────────────────────────────────────────────

def embed_ip(ip: str) -> np.ndarray:
    """32 bits of an IPv4 address, most significant first."""
    try:
        address = ipaddress.ip_address(ip)
    except ValueError as e:
        raise DataError(f"malformed IP address {ip!r}") from e
    if address.version != 4:
        raise DataError(f"IPv6 address {ip!r} is not supported")
    value = int(address)
    return np.array([(value >> (31 - i)) & 1 for i in range(LOCATION_DIM)], dtype=np.float64)


def embed_category(cat_id: int, table: Tensor) -> Tensor:
    if not 0 <= cat_id < table.shape[0]:
        raise DataError(f"category {cat_id} outside [0, {table.shape[0]})")
    return nd.reshape(nd.gather_rows(table, np.array([cat_id])), (table.shape[1],))


def embed_content(content_vec: Sequence[float]) -> Tensor:
    vec = np.asarray(content_vec, dtype=np.float64)
    if vec.shape != (CONTENT_DIM,):
        raise DataError(f"content vector has shape {vec.shape}, expected ({CONTENT_DIM},)")
    return Tensor(vec)


def url_codes(url: str) -> np.ndarray:
    """Vocabulary indices of a URL, truncated to the maximum length."""
    if not url:
        raise DataError("cannot encode an empty URL")
    codes = []
    for ch in url[:URL_MAX_LEN]:
        o = ord(ch)
        if URL_FIRST_PRINTABLE <= o <= URL_LAST_PRINTABLE:
            codes.append(o - URL_FIRST_PRINTABLE + 1)
        else:
            codes.append(URL_UNK_INDEX)
    return np.asarray(codes, dtype=np.int64)


def encode_url(url: str, params: Mapping[str, Tensor]) -> Tensor:
    codes = url_codes(url)
    out = encode_urls(codes[None, :], np.array([codes.size]), params)
    return nd.reshape(out, (out.shape[1],))


def encode_urls(codes: np.ndarray, lengths: np.ndarray, params: Mapping[str, Tensor]) -> Tensor:
    """Final LSTM hidden state for each row of a padded code matrix.

    Gate order in W and b is input, forget, cell, output.  Rows stop updating
    once their own length is reached.
    """
    table, W, b = params[URL_CHAR_TABLE], params[URL_W], params[URL_B]
    n = codes.shape[0]
    hidden = b.shape[0] // 4
    h = Tensor(np.zeros((n, hidden)))
    c = Tensor(np.zeros((n, hidden)))
    steps = int(lengths.max()) if n else 0
    for t in range(steps):
        keep = (lengths > t).astype(np.float64)
        x_t = nd.gather_rows(table, codes[:, t])
        z = nd.add(nd.matmul(nd.concat([x_t, h], axis=1), W), b)
        i = nd.sigmoid(nd.slice_columns(z, 0, hidden))
        f = nd.sigmoid(nd.slice_columns(z, hidden, 2 * hidden))
        g = nd.tanh(nd.slice_columns(z, 2 * hidden, 3 * hidden))
        o = nd.sigmoid(nd.slice_columns(z, 3 * hidden, 4 * hidden))
        c_new = nd.add(nd.mul(f, c), nd.mul(i, g))
        h_new = nd.mul(o, nd.tanh(c_new))
        c = nd.add(nd.row_scale(c_new, keep), nd.row_scale(c, 1.0 - keep))
        h = nd.add(nd.row_scale(h_new, keep), nd.row_scale(h, 1.0 - keep))
    return h


def embed_security(
    raw: np.ndarray,
    params: Mapping[str, Tensor],
    training: bool,
) -> Tuple[Tensor, Optional[BatchStats]]:
    """Batch-normalise raw posture vectors [n x 6]; running stats are read, never written."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != SECURITY_DIM:
        raise DataError(f"security matrix has shape {raw.shape}, expected (n, {SECURITY_DIM})")
    return nd.batch_norm(
        Tensor(raw),
        params[BN_GAMMA],
        params[BN_BETA],
        params[BN_RUNNING_MEAN].data,
        params[BN_RUNNING_VAR].data,
        training=training,
    )


def running_stat_updates(
    running_mean: np.ndarray,
    running_var: np.ndarray,
    stats: BatchStats,
    batch_size: int,
    momentum: float = BN_MOMENTUM,
) -> Dict[str, np.ndarray]:
    unbiased = stats.var * batch_size / (batch_size - 1)
    return {
        BN_RUNNING_MEAN: (1.0 - momentum) * running_mean + momentum * stats.mean,
        BN_RUNNING_VAR: (1.0 - momentum) * running_var + momentum * unbiased,
    }


# ── Feature table ─────────────────────────────────────────────────────────────

class FeatureTable:
    """Raw per-node feature arrays, row-aligned with ascending node ids."""

    def __init__(self, records_by_node: Mapping[int, FeatureRecord]):
        self.node_ids = np.array(sorted(records_by_node), dtype=np.int64)
        records = [records_by_node[int(n)] for n in self.node_ids]
        self.records = tuple(records)
        self.ip_bits = np.stack([embed_ip(r.ip) for r in records]) if records else np.zeros((0, LOCATION_DIM))
        self.categories = np.array([r.category for r in records], dtype=np.int64)
        self.content = (
            np.stack([np.asarray(r.content_vec, dtype=np.float64) for r in records])
            if records else np.zeros((0, CONTENT_DIM))
        )
        self.security = (
            np.stack([r.security.as_vector() for r in records]) if records else np.zeros((0, SECURITY_DIM))
        )
        encoded = [url_codes(r.url) for r in records]
        self.url_lengths = np.array([e.size for e in encoded], dtype=np.int64)
        width = int(self.url_lengths.max()) if records else 0
        self.url_codes = np.full((len(records), width), URL_PAD_INDEX, dtype=np.int64)
        for row, e in enumerate(encoded):
            self.url_codes[row, :e.size] = e

    @classmethod
    def build(cls, nodes: Iterable, records: Mapping[str, FeatureRecord]) -> "FeatureTable":
        by_node: Dict[int, FeatureRecord] = {}
        for node in nodes:
            record = records.get(node.site_id)
            if record is None:
                raise DataError(f"no feature record for site {node.site_id!r} (node {node.node_id})")
            by_node[node.node_id] = record
        return cls(by_node)

    def subset(self, node_ids: Iterable[int]) -> "FeatureTable":
        rows = self.rows(sorted(node_ids))
        return FeatureTable({int(self.node_ids[r]): self.records[r] for r in rows})

    def __len__(self) -> int:
        return int(self.node_ids.shape[0])

    def rows(self, node_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(node_ids, dtype=np.int64)
        if ids.size == 0:
            return ids
        if len(self) == 0:
            raise DataError("feature table is empty")
        pos = np.minimum(np.searchsorted(self.node_ids, ids), len(self) - 1)
        if not np.array_equal(self.node_ids[pos], ids):
            raise DataError("feature table has no row for some requested nodes")
        return pos


# ── Modality inputs ───────────────────────────────────────────────────────────

def build_modality_inputs(
    table: FeatureTable,
    node_ids: Sequence[int],
    params: Mapping[str, Tensor],
    model: ModelConfig,
    training: bool,
) -> Tuple[List[Tensor], Optional[BatchStats]]:
    """x^m for every configured modality, rows aligned with ``node_ids``."""
    rows = table.rows(node_ids)
    inputs: List[Tensor] = []
    stats: Optional[BatchStats] = None
    for modality in model.modalities:
        if modality == "location":
            inputs.append(Tensor(table.ip_bits[rows]))
        elif modality == "category":
            inputs.append(nd.gather_rows(params[CATEGORY_TABLE], table.categories[rows]))
        elif modality == "content":
            inputs.append(Tensor(table.content[rows]))
        elif modality == "url":
            lengths = table.url_lengths[rows]
            width = int(lengths.max()) if rows.size else 0
            inputs.append(encode_urls(table.url_codes[rows, :width], lengths, params))
        elif modality == "security":
            out, stats = embed_security(table.security[rows], params, training)
            inputs.append(out)
        else:
            raise DataError(f"unknown modality {modality!r}")
    return inputs, stats


def param_specs(model: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    specs: List[Tuple[str, Tuple[int, ...], str]] = []
    if "category" in model.modalities:
        specs.append((CATEGORY_TABLE, (CATEGORY_COUNT, model.category_dim), "glorot"))
    if "url" in model.modalities:
        specs += [
            (URL_CHAR_TABLE, (URL_VOCAB_SIZE, model.url_char_dim), "glorot"),
            (URL_W, (model.url_char_dim + model.url_dim, 4 * model.url_dim), "glorot"),
            (URL_B, (4 * model.url_dim,), "zeros"),
        ]
    if "security" in model.modalities:
        specs += [
            (BN_GAMMA, (SECURITY_DIM,), "ones"),
            (BN_BETA, (SECURITY_DIM,), "zeros"),
            (BN_RUNNING_MEAN, (SECURITY_DIM,), "zeros"),
            (BN_RUNNING_VAR, (SECURITY_DIM,), "ones"),
        ]
    return specs


def buffer_names(model: ModelConfig) -> Tuple[str, ...]:
    return (BN_RUNNING_MEAN, BN_RUNNING_VAR) if "security" in model.modalities else ()
