"""Fusion of image and distortion-scaled local features, global backbone, prediction."""

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import as_image, broadcast_grid, broadcast_grid_torch, center_square
from .distortion import PATCH_SIZE, d1_map, d2_map
from .errors import InvalidArgument
from .imaging import ImagingEstimate, estimate
from .local import NAConfig, RNATB

VARIANTS = ("full", "no_f1", "no_f2", "no_both")


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64, 128)
    blocks: tuple = (2, 2, 2, 2)
    bottleneck: bool = False
    groups: int = 4

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if len(self.widths) != len(self.blocks) or not self.widths:
            raise InvalidArgument("backbone widths and blocks must be equal-length and non-empty")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


DESK_BACKBONE = BackboneConfig()
RESNET50_BACKBONE = BackboneConfig(widths=(256, 512, 1024, 2048), blocks=(3, 4, 6, 3),
                                   bottleneck=True, groups=32)


def branch_flags(variant):
    if variant not in VARIANTS:
        raise InvalidArgument(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return variant in ("full", "no_f2"), variant in ("full", "no_f1")


def fused_channels(variant, out_channels):
    use1, use2 = branch_flags(variant)
    return 3 + out_channels * (use1 + use2)


def fuse(img, f1_map, d1, f2_map, d2, n=PATCH_SIZE):
    """``[img | f1 * d1 | f2 * d2]`` along channels, with d broadcast per patch.

    Either feature map may be ``None`` to drop that branch.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    parts = [img]
    for f, d in ((f1_map, d1), (f2_map, d2)):
        if f is None:
            continue
        f = np.asarray(f, dtype=np.float64)
        if f.shape[:2] != (h, w):
            raise InvalidArgument(f"feature map {f.shape[:2]} does not match image {(h, w)}")
        parts.append(f * broadcast_grid(d, n, h, w))
    return np.concatenate(parts, axis=2)


def _norm(ch, groups):
    return nn.GroupNorm(min(groups, ch), ch)


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride, groups):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.n1 = _norm(cout, groups)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.n2 = _norm(cout, groups)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), _norm(cout, groups))

    def forward(self, x):
        y = F.relu(self.n1(self.conv1(x)))
        y = self.n2(self.conv2(y))
        return F.relu(y + (x if self.skip is None else self.skip(x)))


class Bottleneck(nn.Module):
    def __init__(self, cin, cout, stride, groups):
        super().__init__()
        mid = cout // 4
        self.conv1 = nn.Conv2d(cin, mid, 1, bias=False)
        self.n1 = _norm(mid, groups)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride, 1, bias=False)
        self.n2 = _norm(mid, groups)
        self.conv3 = nn.Conv2d(mid, cout, 1, bias=False)
        self.n3 = _norm(cout, groups)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), _norm(cout, groups))

    def forward(self, x):
        y = F.relu(self.n1(self.conv1(x)))
        y = F.relu(self.n2(self.conv2(y)))
        y = self.n3(self.conv3(y))
        return F.relu(y + (x if self.skip is None else self.skip(x)))


class Backbone(nn.Module):
    """Residual CNN: stem conv, stages (stride 2 between), global pool, linear head."""

    def __init__(self, in_channels, cfg=DESK_BACKBONE):
        super().__init__()
        self.in_channels = in_channels
        block = Bottleneck if cfg.bottleneck else BasicBlock
        stem_width = cfg.widths[0] // 4 if cfg.bottleneck else cfg.widths[0]
        self.stem = nn.Sequential(nn.Conv2d(in_channels, stem_width, 3, 1, 1, bias=False),
                                  _norm(stem_width, cfg.groups), nn.ReLU())
        layers, cin = [], stem_width
        for i, (width, count) in enumerate(zip(cfg.widths, cfg.blocks)):
            for j in range(count):
                stride = 2 if (i > 0 and j == 0) else 1
                layers.append(block(cin, width, stride, cfg.groups))
                cin = width
        self.stages = nn.Sequential(*layers)
        self.head = nn.Linear(cin, 1)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise InvalidArgument(f"backbone expects {self.in_channels} channels, got {x.shape[1]}")
        x = self.stages(self.stem(x))
        return self.head(x.mean(dim=(2, 3)))[:, 0]


class QualityModel(nn.Module):
    """f1, f2 local blocks (as the variant allows) and the global backbone f3."""

    def __init__(self, na_cfg=None, backbone_cfg=DESK_BACKBONE, variant="full", patch_size=PATCH_SIZE):
        super().__init__()
        self.na_cfg = na_cfg or NAConfig()
        self.backbone_cfg = backbone_cfg
        self.variant = variant
        self.patch_size = patch_size
        self.use_f1, self.use_f2 = branch_flags(variant)
        self.f1 = RNATB(self.na_cfg) if self.use_f1 else None
        self.f2 = RNATB(self.na_cfg) if self.use_f2 else None
        self.f3 = Backbone(fused_channels(variant, self.na_cfg.out_channels), backbone_cfg)

    def fuse(self, img, d1, d2):
        """img ``(B, 3, H, W)``; d1/d2 either per-patch ``(B, r, c)`` or fields ``(B, 1, H, W)``."""
        h, w = img.shape[-2:]
        parts = [img]
        for use, block, d in ((self.use_f1, self.f1, d1), (self.use_f2, self.f2, d2)):
            if not use:
                continue
            field_ = d if d.ndim == 4 else broadcast_grid_torch(d, self.patch_size, h, w)
            parts.append(block(img) * field_)
        return torch.cat(parts, dim=1)

    def forward(self, img, d1, d2):
        return self.f3(self.fuse(img, d1, d2))


def prepare(img, resolution):
    """Square pipeline input: shorter side to ``resolution`` then centre crop."""
    img = as_image(img)
    if img.shape[:2] == (resolution, resolution):
        return img
    return center_square(img, resolution)


def distortion_grids(est, n=PATCH_SIZE):
    return d1_map(est.T, n), d2_map(est.B, n)


def predict(img, model, estimate_source="prior", resolution=256):
    """Score one image. ``estimate_source`` is an estimator id or an ImagingEstimate.

    A supplied ImagingEstimate must already match the pipeline resolution.
    """
    x = prepare(img, resolution)
    if isinstance(estimate_source, ImagingEstimate):
        est = estimate_source
        if est.T.shape != x.shape:
            raise InvalidArgument(f"estimate maps {est.T.shape} do not match input {x.shape}")
    else:
        est = estimate(x, estimate_source)
    d1, d2 = distortion_grids(est, model.patch_size)
    dtype = next(model.parameters()).dtype
    xt = torch.as_tensor(x, dtype=dtype).permute(2, 0, 1)[None]
    model.eval()
    with torch.no_grad():
        score = model(xt, torch.as_tensor(d1, dtype=dtype)[None], torch.as_tensor(d2, dtype=dtype)[None])
    return float(score[0])
