from importlib import resources

import numpy as np
import pytest
import yaml

from scoretensor.config import (DEFAULTS, apply_overrides, build_config, load_document, parse_override,
                                preset_names)
from scoretensor.errors import ConfigurationError
from scoretensor.io import write_dense
from scoretensor.tensor import DenseTensor


class TestPresets:
    def test_alog(self):
        doc = load_document("alog")
        cfg = build_config("alog", ["task=train", "data.source=sim-entries", "data.dims=[3, 3]"])
        assert cfg.train["epochs"] == 1000 and cfg.train["batch_size"] == 256
        assert (cfg.train["sigma_max"], cfg.train["sigma_min"], cfg.train["levels"]) == (0.2, 0.01, 10)
        assert cfg.model["width"] == 256 and cfg.model["depth"] == 2
        assert cfg.train["lr"] == 1e-3
        assert cfg.ranks == [3, 5, 8, 10]
        assert doc == {"base": "alog"}

    def test_msi_denoise(self, tmp_path):
        write_dense(tmp_path / "img.stdt", DenseTensor((4, 4, 2), np.zeros((4, 4, 2))))
        cfg = build_config("msi-denoise", [f"data.truth={tmp_path / 'img.stdt'}"])
        assert cfg.train["epochs"] == 100 and cfg.train["batch_size"] == 8192
        assert (cfg.train["sigma_max"], cfg.train["sigma_min"], cfg.train["levels"]) == (0.1, 0.001, 10)
        assert cfg.model["width"] == 384 and cfg.ranks == [128]

    @pytest.mark.parametrize("name", preset_names())
    def test_every_preset_parses(self, name):
        doc = yaml.safe_load(resources.files("scoretensor.presets").joinpath(f"{name}.yaml").read_text())
        assert isinstance(doc, dict)

    def test_schedule_and_train_config(self):
        cfg = build_config("sim-mog")
        tc = cfg.train_config("r5")
        assert tc.schedule.sigma_max == 0.1 and tc.level_mode == "one"
        assert tc.seed == cfg.seed_for("train", "r5")
        assert cfg.train_config("r5").seed != cfg.train_config("r3").seed


class TestOverrides:
    def test_parse(self):
        assert parse_override("train.epochs=20") == (["train", "epochs"], 20)
        assert parse_override("model.rank=[3, 5]") == (["model", "rank"], [3, 5])

    def test_not_key_value(self):
        with pytest.raises(ConfigurationError):
            parse_override("train.epochs")

    def test_apply_nested(self):
        assert apply_overrides({}, ["a.b=1"]) == {"a": {"b": 1}}

    def test_override_beats_preset(self):
        assert build_config("sim-mog", ["train.epochs=3"]).train["epochs"] == 3

    def test_flags_beat_document(self):
        cfg = build_config("sim-mog", seed=9, workers=2, out="x")
        assert (cfg.seed, cfg.workers, cfg.out) == (9, 2, "x")


class TestValidation:
    def test_lists_every_bad_field(self):
        with pytest.raises(ConfigurationError) as info:
            build_config("sim-mog", ["train.epochs=-1", "train.lr=0", "model.variant=cp", "sampler.kind=mcmc"])
        assert {"train.epochs", "train.lr", "model.variant", "sampler.kind"} <= set(info.value.fields)

    def test_unknown_field(self):
        with pytest.raises(ConfigurationError) as info:
            build_config("sim-mog", ["train.epoch=3"])
        assert info.value.fields == ["train.epoch"]

    def test_required_per_task(self):
        with pytest.raises(ConfigurationError) as info:
            build_config(None, task="eval")
        assert {"eval.pred", "eval.truth"} <= set(info.value.fields)

    def test_missing_path(self, tmp_path):
        with pytest.raises(ConfigurationError) as info:
            build_config(None, [f"data.train={tmp_path / 'none.coo'}"], task="train")
        assert "data.train" in info.value.fields

    def test_schedule_order(self):
        with pytest.raises(ConfigurationError) as info:
            build_config("sim-mog", ["train.sigma_max=0.001"])
        assert "train.sigma_max" in info.value.fields

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            build_config("no-such-preset")

    def test_file_with_base(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("base: sim-mog\ntrain:\n  epochs: 7\n")
        cfg = build_config(str(path))
        assert cfg.train["epochs"] == 7 and cfg.model["width"] == 32

    def test_as_dict_has_every_section(self):
        assert set(build_config("sim-mog").as_dict()) == set(DEFAULTS)
