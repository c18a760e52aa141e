"""Versioned container for learnable parameters plus the architecture they belong to."""

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import IncompatibleCheckpoint
from .local import NAConfig
from .perception import BackboneConfig, QualityModel

PARAMS_VERSION = 1


def fingerprint(na_cfg, backbone_cfg, variant):
    blob = json.dumps({"na": na_cfg.to_dict(), "backbone": backbone_cfg.to_dict(),
                       "variant": variant}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelParams:
    na_cfg: NAConfig
    backbone_cfg: BackboneConfig
    variant: str
    state: "OrderedDict[str, np.ndarray]"
    patch_size: int = 16
    resolution: int = 256
    version: int = PARAMS_VERSION
    config: dict = field(default_factory=dict)

    @property
    def fingerprint(self):
        return fingerprint(self.na_cfg, self.backbone_cfg, self.variant)

    @classmethod
    def from_model(cls, model, resolution, config=None):
        state = OrderedDict((k, v.detach().cpu().numpy().astype(np.float32, copy=True))
                            for k, v in model.state_dict().items())
        return cls(model.na_cfg, model.backbone_cfg, model.variant, state,
                   model.patch_size, resolution, config=dict(config or {}))

    def build_model(self, dtype=torch.float32):
        self.check_disjoint()
        model = QualityModel(self.na_cfg, self.backbone_cfg, self.variant, self.patch_size)
        model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.state.items()})
        return model.to(dtype).eval()

    def check_disjoint(self):
        """f1 and f2 must never share parameter storage (tied weights)."""
        f1 = [(k, v) for k, v in self.state.items() if k.startswith("f1.")]
        f2 = [(k, v) for k, v in self.state.items() if k.startswith("f2.")]
        for k1, a in f1:
            for k2, b in f2:
                if np.shares_memory(a, b):
                    raise IncompatibleCheckpoint(f"f1 and f2 share storage: {k1} / {k2}")

    def check_fingerprint(self, expected):
        if expected != self.fingerprint:
            raise IncompatibleCheckpoint(
                f"fingerprint mismatch: checkpoint {self.fingerprint} ({self.variant}) "
                f"vs runtime config {expected}"
            )
