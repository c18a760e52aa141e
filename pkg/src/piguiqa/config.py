"""Flat run configuration: defaults, JSON/TOML loading, overrides and validation."""

import json
from pathlib import Path

from .errors import InvalidArgument
from .local import NAConfig
from .perception import DESK_BACKBONE, RESNET50_BACKBONE, BackboneConfig
from .training import TrainConfig

DEFAULTS = {
    # pipeline
    "resolution": 256,
    "patch_size": 16,
    "estimator": "prior",
    "t_floor": 0.05,
    # local perception (f1, f2)
    "embed_dim": 64,
    "heads": 4,
    "window": 7,
    "blocks": 2,
    "mlp_ratio": 2.0,
    "out_channels": 3,
    # global perception (f3)
    "backbone": "desk",
    "backbone_widths": [16, 32, 64, 128],
    "backbone_blocks": [2, 2, 2, 2],
    # training
    "variant": "full",
    "lr": 1e-4,
    "epochs": 200,
    "batch": 8,
    "hflip": True,
    "vflip": True,
    "rotate_deg": 15.0,
    "split": 0.8,
    "deterministic": True,
    # evaluation
    "repeats": 10,
    # synthetic data
    "scenes": 40,
    "severities": 5,
    "size": 64,
    "mos_weights": [0.5, 0.5],
    "include_control": False,
    # run
    "seed": 0,
}


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except ValueError:
            raise InvalidArgument(f"cannot parse value {value!r} for {key}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidArgument(f"{key} expects true/false, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise InvalidArgument(f"{key} expects an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidArgument(f"{key} expects a number, got {value!r}")
        value = float(value)
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise InvalidArgument(f"{key} expects a list, got {value!r}")
    return value


def load_config(path=None, overrides=None):
    """Defaults <- file (JSON or TOML) <- overrides. Unknown keys are rejected."""
    cfg = dict(DEFAULTS)
    layers = []
    if path:
        p = Path(path)
        if not p.exists():
            raise InvalidArgument(f"config file not found: {p}")
        if p.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib

            layers.append(tomllib.loads(p.read_text()))
        else:
            layers.append(json.loads(p.read_text()))
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
        for k, v in layer.items():
            cfg[k] = _coerce(k, v)
    return cfg


def parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InvalidArgument(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def na_config(cfg):
    return NAConfig(cfg["embed_dim"], cfg["heads"], cfg["window"], cfg["blocks"],
                    cfg["mlp_ratio"], cfg["out_channels"])


def backbone_config(cfg):
    if cfg["backbone"] == "resnet50":
        return RESNET50_BACKBONE
    if cfg["backbone"] != "desk":
        raise InvalidArgument(f"backbone must be 'desk' or 'resnet50', got {cfg['backbone']!r}")
    if (cfg["backbone_widths"], cfg["backbone_blocks"]) == (list(DESK_BACKBONE.widths), list(DESK_BACKBONE.blocks)):
        return DESK_BACKBONE
    return BackboneConfig(tuple(cfg["backbone_widths"]), tuple(cfg["backbone_blocks"]))


def train_config(cfg):
    return TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], batch=cfg["batch"], seed=cfg["seed"],
                       hflip=cfg["hflip"], vflip=cfg["vflip"], rotate_deg=cfg["rotate_deg"],
                       variant=cfg["variant"], split=cfg["split"], resolution=cfg["resolution"],
                       patch_size=cfg["patch_size"], t_floor=cfg["t_floor"], na=na_config(cfg),
                       backbone=backbone_config(cfg), deterministic=cfg["deterministic"])


def runtime_fingerprint(cfg):
    from .params import fingerprint

    return fingerprint(na_config(cfg), backbone_config(cfg), cfg["variant"])
