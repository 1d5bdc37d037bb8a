import pytest

from portal.config import ConfigError, RunConfig, load_run_config


class TestRunConfig:
    def test_defaults(self):
        config = load_run_config(None)
        assert config.preset == "mini"
        assert config.peak_lr == 3e-4
        assert config.mask_prob == 0.30
        assert config.patience == 20

    def test_file_parsing(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("""
# experiment settings
preset = small
epochs = 7
peak_lr = 1e-3   # peak
codec = percentile_XE
""")
        config = load_run_config(str(path))
        assert config.preset == "small"
        assert config.epochs == 7
        assert config.peak_lr == 1e-3
        assert config.codec == "percentile_XE"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("learning_rate = 3\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("epochs = banana\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_flags_win_over_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("seed = 1\nepochs = 5\n")
        config = load_run_config(str(path), {"seed": 99, "epochs": None})
        assert config.seed == 99
        assert config.epochs == 5  # None override is "not given"

    def test_model_config_from_preset(self):
        config = RunConfig(preset="medium")
        model = config.model_config()
        assert (model.layers, model.hidden, model.heads) == (8, 512, 8)

    def test_model_config_custom_dims(self):
        config = RunConfig(hidden=128, layers=2)
        model = config.model_config()
        assert (model.layers, model.hidden, model.heads) == (2, 128, 2)

    def test_resolved_is_complete(self):
        resolved = RunConfig().resolved()
        assert resolved["preset"] == "mini"
        assert "codec" in resolved and "mask_prob" in resolved
