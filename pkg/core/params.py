"""ModelParams: the named, ordered parameter collection exchanged between clients and server."""
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from config.run_config import ModelConfig
from core import features, gnn, predict
from core.ndgrad import Tensor, parameters
from utils.errors import ShapeError
from utils.logging_config import get_logger
from utils.seeding import derive_rng

logger = get_logger(__name__)

# (name, shape, init) where init is one of "glorot", "zeros", "ones"
ParamSpec = Tuple[str, Tuple[int, ...], str]


class ModelParams:
    """Immutable mapping name -> float64 array, in a fixed order.

    ``buffers`` are non-trainable entries (batch-norm running statistics):
    they count towards |w| and are averaged like any other entry, but never
    receive gradients.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray], buffers: Iterable[str] = ()):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, value in arrays.items():
            arr = np.array(value, dtype=np.float64)
            arr.flags.writeable = False
            self._arrays[name] = arr
        self._buffers = frozenset(buffers)
        missing = self._buffers - set(self._arrays)
        if missing:
            raise ShapeError(f"buffers not present among parameters: {sorted(missing)}")

    # ── Mapping interface ──

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._arrays)

    @property
    def buffers(self) -> frozenset:
        return self._buffers

    @property
    def trainable_names(self) -> Tuple[str, ...]:
        return tuple(n for n in self._arrays if n not in self._buffers)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: object) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def total_size(self) -> int:
        """|w|: scalar count over every entry, buffers included."""
        return int(sum(arr.size for arr in self._arrays.values()))

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._arrays.items()}

    # ── Derivation ──

    def as_tensors(self) -> Dict[str, Tensor]:
        return parameters(self._arrays, self.trainable_names)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return dict(self._arrays)

    def with_updates(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        merged: Dict[str, np.ndarray] = {}
        for name, arr in self._arrays.items():
            new = updates.get(name)
            if new is None:
                merged[name] = arr
                continue
            if np.shape(new) != arr.shape:
                raise ShapeError(f"update for {name} has shape {np.shape(new)}, expected {arr.shape}")
            merged[name] = new
        unknown = set(updates) - set(self._arrays)
        if unknown:
            raise ShapeError(f"updates for unknown parameters: {sorted(unknown)}")
        return ModelParams(merged, buffers=self._buffers)

    def check_compatible(self, other: "ModelParams") -> None:
        if self.names != other.names:
            raise ShapeError("parameter name sets differ")
        if self._buffers != other.buffers:
            raise ShapeError("buffer sets differ")
        for name in self.names:
            if self[name].shape != other[name].shape:
                raise ShapeError(f"{name}: shape {self[name].shape} vs {other[name].shape}")

    def bitwise_equal(self, other: "ModelParams") -> bool:
        try:
            self.check_compatible(other)
        except ShapeError:
            return False
        return all(self[n].tobytes() == other[n].tobytes() for n in self.names)

    def __repr__(self) -> str:
        return f"ModelParams({len(self)} tensors, |w|={self.total_size})"


def param_specs(model: ModelConfig) -> List[ParamSpec]:
    return features.param_specs(model) + gnn.param_specs(model) + predict.param_specs(model)


def init_params(model: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialisation: Glorot-uniform weights, zero biases, unit BN scale."""
    rng = derive_rng(seed, "init")
    arrays: Dict[str, np.ndarray] = {}
    for name, shape, kind in param_specs(model):
        arrays[name] = _initial_value(rng, shape, kind)
    params = ModelParams(arrays, buffers=features.buffer_names(model))
    logger.debug("Initialised %d tensors, |w|=%d", len(params), params.total_size)
    return params


def _initial_value(rng: np.random.Generator, shape: Sequence[int], kind: str) -> np.ndarray:
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "glorot":
        fan_in = shape[0] if shape else 1
        fan_out = shape[1] if len(shape) > 1 else 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)
    raise ValueError(f"unknown initialiser {kind!r}")
