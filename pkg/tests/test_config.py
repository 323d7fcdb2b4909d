import json

import pytest

from contaminet.config import RunConfig
from contaminet.data import DESK_CROP, DESK_RESIZE
from contaminet.errors import ConfigError

TOML_DOC = """
seed = 7

[data]
manifest = "m.csv"
label_min_count = 100

[model]
conv_blocks = [[4, 3, 2], [8, 3, 2]]
hidden_units = 32

[augment]
desk_scale = true
rotation_deg = 5.0

[train]
epochs = 3
max_lr = 1e-2
group_lr_divisors = [9, 3, 1]

[eval]
tta = 2
resamples = 500
"""


class TestParsing:
    def test_toml_round_trip(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text(TOML_DOC, encoding="utf-8")
        cfg = RunConfig.from_file(str(p))
        assert cfg.seed == 7
        assert cfg.data.label_min_count == 100
        assert cfg.model.conv_blocks == ((4, 3, 2), (8, 3, 2))
        assert cfg.train.max_lr == 0.01
        assert cfg.eval.resamples == 500
        # normalized dict reparses to the same config
        again = RunConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_json_accepted(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"seed": 3, "train": {"epochs": 2}}), encoding="utf-8")
        cfg = RunConfig.from_file(str(p))
        assert cfg.seed == 3 and cfg.train.epochs == 2

    def test_empty_config_gives_recipe_defaults(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("", encoding="utf-8")
        cfg = RunConfig.from_file(str(p))
        assert cfg.train.epochs == 12
        assert cfg.train.batch_size == 64
        assert cfg.train.warm_frac == 0.3
        assert (cfg.train.start_div, cfg.train.final_div) == (25.0, 2000.0)
        assert cfg.train.group_lr_divisors == (9.0, 3.0, 1.0)
        assert cfg.augment.resize_to == (250, 333)
        assert cfg.augment.crop_to == (234, 311)
        assert cfg.augment.rotation_deg == 10.0
        assert cfg.eval.tta == 5
        assert cfg.eval.resamples == 10000
        assert cfg.eval.level == 0.95

    @pytest.mark.parametrize(
        "doc,fragment",
        [
            ({"data": {"manifesto": "x"}}, "data"),
            ({"train": {"epochs": "twelve"}}, "train.epochs"),
            ({"bogus_section": {}}, "bogus_section"),
            ({"eval": {"aggregation": "average"}}, "aggregation"),
            ({"seed": -1}, "seed"),
        ],
    )
    def test_bad_fields_name_their_path(self, tmp_path, doc, fragment):
        p = tmp_path / "run.json"
        p.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ConfigError) as err:
            RunConfig.from_file(str(p))
        assert fragment in str(err.value)

    def test_invalid_toml_reported(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("seed = ][", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_file(str(p))


class TestDerivedObjects:
    def test_desk_scale_overrides_geometry(self):
        cfg = RunConfig.from_dict({"augment": {"desk_scale": True}})
        policy = cfg.augment.to_policy()
        assert policy.resize_to == DESK_RESIZE
        assert policy.crop_to == DESK_CROP

    def test_group_divisors_become_multipliers(self):
        cfg = RunConfig.from_dict({"train": {"group_lr_divisors": [9, 3, 1]}})
        tc = cfg.train.to_train_config(seed=0)
        assert tc.group_policy.multipliers == (1.0 / 9.0, 1.0 / 3.0, 1.0)

    def test_model_config_takes_vocab_size_and_crop(self):
        cfg = RunConfig.from_dict({"augment": {"desk_scale": True}})
        mc = cfg.model.to_model_config(4, cfg.augment.to_policy().crop_to)
        assert mc.head_outputs == 4
        assert mc.input_shape == (3, 36, 47)
