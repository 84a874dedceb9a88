import pytest

from hybridseg.config import ModelConfig, TrainConfig
from hybridseg.exceptions import ParameterError


class TestTrainConfig:
    def test_defaults_are_valid(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.weight_decay == 1e-4
        assert cfg.batch_size == 8
        assert cfg.max_epochs == 100
        assert cfg.patience == 37
        assert cfg.monitor == "dsc"

    def test_patience_bounded_by_max_epochs(self):
        with pytest.raises(ParameterError, match="patience"):
            TrainConfig(max_epochs=10, patience=11)

    def test_scale_set_must_be_divisible_by_32(self):
        with pytest.raises(ParameterError, match="divisible by 32"):
            TrainConfig(scale_set=(264, 352, 440))
        assert TrainConfig(scale_set=(256, 352, 448)).scale_set == (256, 352, 448)

    def test_threshold_range(self):
        with pytest.raises(ParameterError):
            TrainConfig(threshold=0.0)

    def test_positive_rates(self):
        with pytest.raises(ParameterError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ParameterError):
            TrainConfig(batch_size=0)

    def test_lists_coerced_to_tuples(self):
        cfg = TrainConfig(scale_set=[32, 64])
        assert cfg.scale_set == (32, 64)


class TestModelConfigDefaults:
    def test_window_tiles_352(self):
        cfg = ModelConfig()
        for stage_size in (88, 44, 22, 11):
            assert stage_size % cfg.window_size == 0

    def test_json_roundtrip_equality(self):
        import dataclasses
        import json
        cfg = ModelConfig(base_channels=32, stage_heads=(2, 4, 8, 16))
        blob = json.dumps(dataclasses.asdict(cfg))
        assert ModelConfig(**json.loads(blob)) == cfg
