"""Config schema tests: defaults, strict keys, range validation."""

import pytest

from depthalign.config import ConfigError, load_config, parse_config


class TestParse:
    def test_empty_config_gives_defaults(self):
        cfg = parse_config({})
        assert cfg.seed == 0
        assert cfg.tau == 1.0
        assert cfg.block_size == 20
        assert cfg.k_neighbors == 10
        assert cfg.gamma == 2.0
        assert cfg.prior_mode == "gt"
        assert cfg.camera.width == 256
        assert cfg.scene_gen.sweep_duration == 0.1

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"tua": 0.5})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"training": {"learningRate": 0.1}})

    def test_bad_prior_mode(self):
        with pytest.raises(ConfigError):
            parse_config({"priorMode": "perfect"})

    def test_rates_range_checked(self):
        with pytest.raises(ConfigError):
            parse_config({"fnRate": 1.5})
        with pytest.raises(ConfigError):
            parse_config({"rotNoiseDeg": -0.1})

    def test_tau_must_be_positive(self):
        with pytest.raises(ConfigError):
            parse_config({"tau": 0.0})

    def test_integer_fields_reject_fractions(self):
        with pytest.raises(ConfigError):
            parse_config({"blockSize": 20.5})

    def test_gains_validated(self):
        with pytest.raises(ConfigError):
            parse_config({"classGains": {"car": 0.2}})

    def test_se_divisibility(self):
        with pytest.raises(ConfigError):
            parse_config({"model": {"imageChannels": 6, "seReduction": 4}})

    def test_overrides_applied(self):
        cfg = parse_config({"seed": 7, "tau": 2.5,
                            "training": {"lr": 0.01},
                            "camera": {"width": 64, "height": 48,
                                       "cx": 32.0, "cy": 24.0}})
        assert cfg.seed == 7
        assert cfg.tau == 2.5
        assert cfg.training.lr == 0.01
        assert cfg.camera.width == 64


class TestLoad:
    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"seed": 3, "priorMode": "degraded"}')
        cfg = load_config(path)
        assert cfg.seed == 3
        assert cfg.prior_mode == "degraded"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)
