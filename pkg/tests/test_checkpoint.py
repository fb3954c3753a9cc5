import json

import numpy as np
import pytest

from core.checkpoint import load_checkpoint, save_checkpoint
from core.features import BN_RUNNING_MEAN, BN_RUNNING_VAR
from core.params import ModelParams, init_params
from tests.helpers import TINY_MODEL
from utils.errors import DataError


@pytest.fixture
def params():
    return init_params(TINY_MODEL, seed=5)


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path, params):
        path = str(tmp_path / "model.ckpt")
        meta = {"round": 3, "config": {"seed": 5}}
        save_checkpoint(path, params, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded.bitwise_equal(params)
        assert loaded.names == params.names
        assert loaded.buffers == {BN_RUNNING_MEAN, BN_RUNNING_VAR}
        assert loaded["gnn.modality.b"].shape == ()
        assert loaded_meta == meta

    def test_header_line(self, tmp_path, params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), params, {})
        header = json.loads(path.read_bytes().split(b"\n", 1)[0])
        assert header["format_version"] == 1
        assert header["dtype"] == "<f8"
        assert header["names"] == list(params.names)
        assert len(header["shapes"]) == len(params.names)

    def test_same_params_same_bytes(self, tmp_path, params):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(str(a), params, {"round": 1})
        save_checkpoint(str(b), init_params(TINY_MODEL, seed=5), {"round": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_payload(self, tmp_path, params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), params, {})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), ModelParams({"w": np.ones(2)}), {})
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_unsupported_version(self, tmp_path, params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), params, {})
        header, payload = path.read_bytes().split(b"\n", 1)
        doc = json.loads(header)
        doc["format_version"] = 99
        path.write_bytes(json.dumps(doc).encode() + b"\n" + payload)
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(str(tmp_path / "absent.ckpt"))
