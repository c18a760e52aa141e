import json

import pytest

from piguiqa.config import (DEFAULTS, backbone_config, load_config, na_config, parse_set,
                            runtime_fingerprint, train_config)
from piguiqa.errors import InvalidArgument
from piguiqa.perception import DESK_BACKBONE, RESNET50_BACKBONE


def test_defaults_cover_module_defaults():
    cfg = load_config()
    tc = train_config(cfg)
    assert tc.lr == 1e-4 and tc.batch == 8 and tc.split == 0.8 and tc.rotate_deg == 15
    assert tc.epochs == 200 and tc.resolution == 256 and tc.patch_size == 16
    na = na_config(cfg)
    assert (na.embed_dim, na.heads, na.window, na.blocks, na.mlp_ratio, na.out_channels) == (64, 4, 7, 2, 2.0, 3)
    assert backbone_config(cfg) == DESK_BACKBONE
    assert cfg["t_floor"] == 0.05 and cfg["repeats"] == 10 and cfg["mos_weights"] == [0.5, 0.5]


def test_json_and_toml_files(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 5, "variant": "no_f2"}))
    (tmp_path / "c.toml").write_text('epochs = 7\nbackbone = "resnet50"\n')
    assert load_config(tmp_path / "c.json")["variant"] == "no_f2"
    cfg = load_config(tmp_path / "c.toml", {"epochs": "9"})
    assert cfg["epochs"] == 9 and backbone_config(cfg) == RESNET50_BACKBONE


def test_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(InvalidArgument):
        load_config(None, {"nope": 1})
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "c.json")
    with pytest.raises(InvalidArgument):
        load_config(None, {"epochs": "many"})
    with pytest.raises(InvalidArgument):
        load_config(None, {"hflip": "1"})
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "missing.json")


def test_parse_set():
    assert parse_set(["a=1", "b = x=y"]) == {"a": "1", "b": "x=y"}
    with pytest.raises(InvalidArgument):
        parse_set(["novalue"])


def test_set_values_coerced():
    cfg = load_config(None, parse_set(["lr=0.001", "hflip=false", "backbone_widths=[8,16]",
                                       "backbone_blocks=[1,1]"]))
    assert cfg["lr"] == 0.001 and cfg["hflip"] is False
    assert backbone_config(cfg).widths == (8, 16)


def test_runtime_fingerprint_tracks_variant():
    assert runtime_fingerprint(load_config()) != runtime_fingerprint(load_config(None, {"variant": "no_both"}))
    assert set(DEFAULTS) >= {"seed", "estimator", "scenes"}
