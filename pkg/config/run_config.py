"""Run configuration: built-in defaults < JSON config file < command-line flags.

``RunConfig`` is flat so that every CLI flag and config-file key maps onto one
field; ``model`` and ``train`` project it onto the narrower configs the core
modules take.
"""
import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

from config import settings
from config.constants import (
    BATCH_SIZE,
    BYTES_PER_SCALAR,
    CATEGORY_DIM,
    CHECKPOINT_FILE,
    CONTENT_DIM,
    EMBEDDING_DIRECTIONS,
    GRAPH_FILE,
    HIDDEN_DIM,
    LEAKY_SLOPE,
    LOCATION_DIM,
    MAX_LR,
    MIN_SHARED,
    MODALITIES,
    NUM_CLIENTS,
    NUM_LAYERS,
    PARTITION_FILE,
    PATIENCE,
    RANKING_CANDIDATES,
    RANKING_KS,
    REPORT_DIR,
    ROUNDS,
    SECURITY_DIM,
    SNAPSHOT_FILE,
    SPLIT_FILE,
    SYNTH_BASE_REUSE,
    SYNTH_CATEGORY_AFFINITY,
    SYNTH_NOISE,
    SYNTH_PAIR_PROBABILITY,
    SYNTH_SECURITY_GAP_PENALTY,
    SYNTH_SITES,
    SYNTH_USERS_PER_PAIR_RANGE,
    TAU_GT,
    TAU_PRED,
    TRAIN_LOG_FILE,
    URL_CHAR_DIM,
    URL_DIM,
    WARMUP_FRACTION,
)
from utils.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    modalities: Tuple[str, ...] = MODALITIES
    hidden_dim: int = HIDDEN_DIM
    num_layers: int = NUM_LAYERS
    category_dim: int = CATEGORY_DIM
    url_dim: int = URL_DIM
    url_char_dim: int = URL_CHAR_DIM
    leaky_slope: float = LEAKY_SLOPE
    mean_pool: bool = False
    modality_attention: bool = True

    def modality_dim(self, modality: str) -> int:
        return {
            "location": LOCATION_DIM,
            "category": self.category_dim,
            "content": CONTENT_DIM,
            "url": self.url_dim,
            "security": SECURITY_DIM,
        }[modality]

    def streams(self) -> Tuple[Tuple[int, int], ...]:
        """(stream index, input width) for every GNN stack.

        One stream per modality normally; a single stream over the concatenated
        inputs when modality attention is switched off.
        """
        if self.modality_attention:
            return tuple((i + 1, self.modality_dim(m)) for i, m in enumerate(self.modalities))
        return ((1, sum(self.modality_dim(m) for m in self.modalities)),)


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = ROUNDS
    local_steps: Optional[int] = None         # None: one pass over the client's train edges
    batch_size: int = BATCH_SIZE
    max_lr: float = MAX_LR
    warmup_fraction: float = WARMUP_FRACTION
    patience: int = PATIENCE
    tau_pred: float = TAU_PRED
    optimizer: str = "adam"
    weighted_avg: bool = False
    exclude_target_edges: bool = True
    seed: int = 0
    workers: int = 1
    bytes_per_scalar: int = BYTES_PER_SCALAR


@dataclass(frozen=True)
class RunConfig:
    # ── paths ──
    workdir: str = settings.WORKDIR
    graph_path: Optional[str] = None
    snapshot_path: Optional[str] = None
    partition_path: Optional[str] = None
    split_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    report_dir: Optional[str] = None
    resume: Optional[str] = None
    seed: int = settings.ROOT_SEED
    # ── synthetic corpus ──
    n_sites: int = SYNTH_SITES
    pair_probability: float = SYNTH_PAIR_PROBABILITY
    category_affinity: float = SYNTH_CATEGORY_AFFINITY
    security_gap_penalty: float = SYNTH_SECURITY_GAP_PENALTY
    base_reuse: float = SYNTH_BASE_REUSE
    noise: float = SYNTH_NOISE
    users_per_pair_range: Tuple[int, int] = SYNTH_USERS_PER_PAIR_RANGE
    # ── labelling and partitioning ──
    tau_gt: float = TAU_GT
    min_shared: int = MIN_SHARED
    clients: int = NUM_CLIENTS
    sizes: Optional[Tuple[int, ...]] = None
    valid_pair: Optional[Tuple[int, int]] = None
    # ── model ──
    modalities: Tuple[str, ...] = MODALITIES
    hidden_dim: int = HIDDEN_DIM
    num_layers: int = NUM_LAYERS
    category_dim: int = CATEGORY_DIM
    url_dim: int = URL_DIM
    url_char_dim: int = URL_CHAR_DIM
    leaky_slope: float = LEAKY_SLOPE
    mean_pool: bool = False
    no_modality_attn: bool = False
    # ── training ──
    rounds: int = ROUNDS
    local_steps: Optional[int] = None
    batch_size: int = BATCH_SIZE
    max_lr: float = MAX_LR
    warmup_fraction: float = WARMUP_FRACTION
    patience: int = PATIENCE
    optimizer: str = "adam"
    weighted_avg: bool = False
    centralized: bool = False
    exclude_target_edges: bool = True
    workers: int = settings.WORKERS
    # ── evaluation and costs ──
    tau_pred: float = TAU_PRED
    tune_threshold: bool = False
    ranking_ks: Tuple[int, ...] = RANKING_KS
    ranking_candidates: int = RANKING_CANDIDATES
    bytes_per_scalar: int = BYTES_PER_SCALAR
    directions: int = EMBEDDING_DIRECTIONS
    # ── federation-size sweep ──
    sweep_clients: Tuple[int, ...] = (2, 5, 10)
    sweep_seeds: Tuple[int, ...] = (0,)

    # ── construction ──────────────────────────────────────────────────────────

    @classmethod
    def from_sources(
        cls, overrides: Optional[Mapping[str, Any]] = None, config_file: Optional[str] = None
    ) -> "RunConfig":
        values: Dict[str, Any] = {}
        if config_file:
            values.update(_read_config_file(config_file))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        coerced = {key: _coerce(key, value) for key, value in values.items()}
        config = cls(**coerced)
        config.validate()
        return config

    def replace(self, **changes: Any) -> "RunConfig":
        config = dataclasses.replace(self, **changes)
        config.validate()
        return config

    # ── validation ────────────────────────────────────────────────────────────

    def validate(self) -> None:
        checks = [
            (self.n_sites >= 2, "n_sites must be at least 2"),
            (0.0 <= self.pair_probability <= 1.0, "pair_probability must lie in [0, 1]"),
            (self.category_affinity >= 0 and self.security_gap_penalty >= 0, "correlation knobs must be non-negative"),
            (0.0 <= self.base_reuse <= 1.0, "base_reuse must lie in [0, 1]"),
            (self.noise >= 0, "noise must be non-negative"),
            (len(self.users_per_pair_range) == 2 and 1 <= self.users_per_pair_range[0] <= self.users_per_pair_range[1],
             "users_per_pair_range must be [low, high] with 1 <= low <= high"),
            (0.0 <= self.tau_gt < 1.0, "tau_gt must lie in [0, 1)"),
            (self.min_shared >= 1, "min_shared must be at least 1"),
            (self.clients >= 1, "clients must be at least 1"),
            (self.sizes is None or len(self.sizes) == self.clients, "sizes must list one size per client"),
            (self.valid_pair is None or (len(self.valid_pair) == 2 and self.valid_pair[0] != self.valid_pair[1]),
             "valid_pair must name two distinct administrators"),
            (len(self.modalities) >= 1 and all(m in MODALITIES for m in self.modalities)
             and len(set(self.modalities)) == len(self.modalities),
             f"modalities must be distinct names from {MODALITIES}"),
            (self.hidden_dim >= 1 and self.num_layers >= 1, "hidden_dim and num_layers must be at least 1"),
            (self.category_dim >= 1 and self.url_dim >= 1 and self.url_char_dim >= 1, "embedding widths must be positive"),
            (0.0 < self.leaky_slope < 1.0, "leaky_slope must lie in (0, 1)"),
            (self.rounds >= 0, "rounds must be non-negative"),
            (self.local_steps is None or self.local_steps >= 1, "local_steps must be at least 1"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.max_lr > 0, "max_lr must be positive"),
            (0.0 < self.warmup_fraction < 1.0, "warmup_fraction must lie in (0, 1)"),
            (self.patience >= 0, "patience must be non-negative"),
            (self.optimizer in ("adam", "sgd"), "optimizer must be 'adam' or 'sgd'"),
            (self.workers >= 1, "workers must be at least 1"),
            (0.0 < self.tau_pred < 1.0, "tau_pred must lie in (0, 1)"),
            (len(self.ranking_ks) >= 1 and all(k >= 1 for k in self.ranking_ks), "ranking_ks must be positive"),
            (self.ranking_candidates >= 1, "ranking_candidates must be at least 1"),
            (self.bytes_per_scalar >= 1, "bytes_per_scalar must be at least 1"),
            (self.directions in (1, 2), "directions must be 1 or 2"),
            (len(self.sweep_clients) >= 1 and all(k >= 1 for k in self.sweep_clients), "sweep_clients must be positive"),
            (len(self.sweep_seeds) >= 1, "sweep_seeds must not be empty"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    # ── projections ───────────────────────────────────────────────────────────

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(
            modalities=tuple(self.modalities),
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            category_dim=self.category_dim,
            url_dim=self.url_dim,
            url_char_dim=self.url_char_dim,
            leaky_slope=self.leaky_slope,
            mean_pool=self.mean_pool,
            modality_attention=not self.no_modality_attn,
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            rounds=self.rounds,
            local_steps=self.local_steps,
            batch_size=self.batch_size,
            max_lr=self.max_lr,
            warmup_fraction=self.warmup_fraction,
            patience=self.patience,
            tau_pred=self.tau_pred,
            optimizer=self.optimizer,
            weighted_avg=self.weighted_avg,
            exclude_target_edges=self.exclude_target_edges,
            seed=self.seed,
            workers=self.workers,
            bytes_per_scalar=self.bytes_per_scalar,
        )

    def path(self, kind: str) -> str:
        """Resolve an input/output path: the explicit field, else the workdir default."""
        defaults = {
            "graph": ("graph_path", GRAPH_FILE),
            "snapshot": ("snapshot_path", SNAPSHOT_FILE),
            "partition": ("partition_path", PARTITION_FILE),
            "split": ("split_path", SPLIT_FILE),
            "checkpoint": ("checkpoint_path", CHECKPOINT_FILE),
            "log": ("log_path", TRAIN_LOG_FILE),
            "report": ("report_dir", REPORT_DIR),
        }
        attr, filename = defaults[kind]
        explicit = getattr(self, attr)
        return explicit if explicit else os.path.join(self.workdir, filename)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_TUPLE_FIELDS = {
    "users_per_pair_range", "sizes", "valid_pair", "modalities",
    "ranking_ks", "sweep_clients", "sweep_seeds",
}


def _coerce(key: str, value: Any) -> Any:
    if key in _TUPLE_FIELDS and value is not None:
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        if key == "modalities":
            return tuple(str(v) for v in value)
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key} must be a list of integers, got {value!r}") from e
    return value


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data
