import json
import os

import pytest

from config.run_config import RunConfig
from utils.errors import ConfigError


class TestRunConfig:
    def test_flags_override_file_override_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"rounds": 5, "hidden_dim": 16}))
        config = RunConfig.from_sources({"rounds": 7, "hidden_dim": None}, str(path))
        assert config.rounds == 7
        assert config.hidden_dim == 16
        assert config.patience == RunConfig().patience

    def test_list_fields_accept_strings_and_lists(self):
        config = RunConfig.from_dict({"ranking_ks": "1, 4,8", "valid_pair": [2, 0], "clients": 3})
        assert config.ranking_ks == (1, 4, 8)
        assert config.valid_pair == (2, 0)
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"ranking_ks": "one,two"})

    @pytest.mark.parametrize("values", [
        {"tau_pred": 1.0},
        {"tau_gt": 1.0},
        {"num_layers": 0},
        {"clients": 2, "sizes": [5]},
        {"optimizer": "rmsprop"},
        {"modalities": ["location", "smell"]},
        {"directions": 3},
        {"valid_pair": [1, 1]},
        {"users_per_pair_range": [10, 5]},
    ])
    def test_validation(self, values):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(values)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.from_dict({"learning_rate": 0.1})

    def test_bad_config_files(self, tmp_path):
        broken = tmp_path / "broken.json"
        broken.write_text("{rounds: 3")
        with pytest.raises(ConfigError):
            RunConfig.from_sources({}, str(broken))
        listing = tmp_path / "list.json"
        listing.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            RunConfig.from_sources({}, str(listing))
        with pytest.raises(ConfigError):
            RunConfig.from_sources({}, str(tmp_path / "absent.json"))

    def test_paths_default_into_workdir(self):
        config = RunConfig(workdir="runs/x", checkpoint_path="elsewhere/m.ckpt")
        assert config.path("graph") == os.path.join("runs/x", "graph.jsonl")
        assert config.path("checkpoint") == "elsewhere/m.ckpt"

    def test_projections(self):
        config = RunConfig.from_dict({"no_modality_attn": True, "exclude_target_edges": False, "seed": 3})
        assert config.model.modality_attention is False
        assert config.train.exclude_target_edges is False
        assert config.train.seed == 3

    def test_dict_round_trip(self):
        config = RunConfig.from_dict({"sizes": [3, 3], "clients": 2, "sweep_seeds": [0, 1]})
        assert RunConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config
