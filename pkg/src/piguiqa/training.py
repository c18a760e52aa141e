"""Objective, augmentation, data splits and the training loop."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .core import center_square, read_image
from .distortion import PATCH_SIZE
from .errors import InvalidArgument, NotFound, TrainingDiverged
from .imaging import T_FLOOR, estimate, load_external_estimate
from .local import NAConfig
from .params import ModelParams
from .perception import DESK_BACKBONE, BackboneConfig, QualityModel, branch_flags, prepare

log = logging.getLogger(__name__)


@dataclass
class Sample:
    image_path: str
    mos: float
    estimate: str = "prior"

    def __post_init__(self):
        self.mos = float(self.mos)
        if not math.isfinite(self.mos):
            raise InvalidArgument(f"{self.image_path}: MOS must be finite")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 200
    batch: int = 8
    seed: int = 0
    hflip: bool = True
    vflip: bool = True
    rotate_deg: float = 15.0
    variant: str = "full"
    split: float = 0.8
    resolution: int = 256
    patch_size: int = PATCH_SIZE
    t_floor: float = T_FLOOR
    na: NAConfig = field(default_factory=NAConfig)
    backbone: BackboneConfig = DESK_BACKBONE
    deterministic: bool = True

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise InvalidArgument(f"split must be in (0, 1), got {self.split}")
        if self.rotate_deg < 0:
            raise InvalidArgument("rotate_deg is the half-width of a symmetric range; must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise InvalidArgument("epochs and batch must be >= 1")
        branch_flags(self.variant)

    def to_dict(self):
        d = asdict(self)
        d["na"] = self.na.to_dict()
        d["backbone"] = self.backbone.to_dict()
        return d


def loss(pred, target):
    """``|target - pred|`` (the L2 norm of a scalar residual), averaged over a batch."""
    if isinstance(pred, torch.Tensor) or isinstance(target, torch.Tensor):
        pred = torch.as_tensor(pred)
        target = torch.as_tensor(target, dtype=pred.dtype)
        if not (torch.isfinite(pred).all() and torch.isfinite(target).all()):
            raise InvalidArgument("loss inputs must be finite")
        return (target - pred).abs().mean()
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise InvalidArgument("loss inputs must be finite")
    return float(np.mean(np.abs(target - pred)))


def _rotation_grid(angles_deg, shape, dtype):
    theta = torch.as_tensor(np.deg2rad(angles_deg), dtype=dtype)
    cos, sin = torch.cos(theta), torch.sin(theta)
    zero = torch.zeros_like(theta)
    mat = torch.stack([torch.stack([cos, -sin, zero], -1), torch.stack([sin, cos, zero], -1)], 1)
    return F.affine_grid(mat, shape, align_corners=False)


def draw_augmentation(rng, n, hflip=True, vflip=True, rotate_deg=15.0):
    h = rng.random(n) < 0.5 if hflip else np.zeros(n, bool)
    v = rng.random(n) < 0.5 if vflip else np.zeros(n, bool)
    ang = rng.uniform(-rotate_deg, rotate_deg, n) if rotate_deg > 0 else np.zeros(n)
    return h, v, ang


def apply_augmentation(x, hflips, vflips, angles):
    """Flip then rotate a ``(B, C, H, W)`` stack; reflection fill, bilinear resampling."""
    x = x.clone()
    for i in range(x.shape[0]):
        if hflips[i]:
            x[i] = x[i].flip(-1)
        if vflips[i]:
            x[i] = x[i].flip(-2)
    if np.any(np.asarray(angles) != 0):
        grid = _rotation_grid(angles, tuple(x.shape), x.dtype)
        x = F.grid_sample(x, grid, mode="bilinear", padding_mode="reflection", align_corners=False)
    return x


def augment(img, rng, hflip=True, vflip=True, rotate_deg=15.0):
    """Random h/v flips (p=0.5 each) then a uniform rotation in ``[-rotate_deg, rotate_deg]``."""
    h, v, ang = draw_augmentation(rng, 1, hflip, vflip, rotate_deg)
    x = torch.from_numpy(np.ascontiguousarray(np.asarray(img, dtype=np.float64).transpose(2, 0, 1)))[None]
    out = apply_augmentation(x, h, v, ang)[0].numpy().transpose(1, 2, 0)
    return np.clip(out, 0.0, 1.0)


def patch_max(x, n):
    """Per-patch max over channels and pixels of ``(B, C, H, W)``, reflect-padded."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % n, (-w) % n
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect") if min(h, w) > max(ph, pw) else \
            F.pad(x, (0, pw, 0, ph), mode="replicate")
    return F.max_pool2d(x.amax(dim=1, keepdim=True), n)[:, 0]


def split_dataset(dataset, fraction, seed):
    """Uniform random partition into ``(train, test)``."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgument(f"fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    if n < 2:
        raise InvalidArgument("need at least two samples to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return [dataset[i] for i in order[:n_train]], [dataset[i] for i in order[n_train:]]


def load_sample(sample, resolution, t_floor=T_FLOOR):
    """Pipeline-resolution image and its (frozen) T/B estimate, as float32 CHW tensors."""
    path = Path(sample.image_path)
    if not path.exists():
        raise NotFound(f"image not found: {path}")
    img = read_image(path)
    if sample.estimate == "external":
        est = load_external_estimate(path, img, t_floor)
        stack = np.concatenate([img, est.T, est.B], axis=2)
        stack = prepare_stack(stack, resolution)
        return torch.from_numpy(stack.transpose(2, 0, 1).astype(np.float32))
    x = prepare(img, resolution)
    est = estimate(x, sample.estimate, t_floor)
    stack = np.concatenate([x, est.T, est.B], axis=2)
    return torch.from_numpy(stack.transpose(2, 0, 1).astype(np.float32))


def prepare_stack(stack, resolution):
    if stack.shape[:2] == (resolution, resolution):
        return stack
    parts = [center_square(stack[:, :, i:i + 3], resolution) for i in range(0, stack.shape[2], 3)]
    return np.concatenate(parts, axis=2)


def build_cache(dataset, cfg):
    """Stacked ``(N, 9, R, R)`` tensor of image, T and B channels plus the MOS vector."""
    stacks = [load_sample(s, cfg.resolution, cfg.t_floor) for s in dataset]
    mos = torch.tensor([s.mos for s in dataset], dtype=torch.float32)
    return torch.stack(stacks), mos


def batch_inputs(stack, patch_size):
    """Split a ``(B, 9, H, W)`` stack into image and per-patch d1/d2 grids."""
    img = stack[:, 0:3]
    d1 = patch_max((stack[:, 3:6] - 1.0).abs(), patch_size)
    d2 = patch_max(stack[:, 6:9], patch_size)
    return img, d1, d2


def _set_determinism(cfg):
    if cfg.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def train(dataset, cfg=None, log_path=None, cache=None, progress=None):
    """Train f1/f2/f3 with Adam; returns ``(ModelParams, per-epoch log records)``."""
    cfg = cfg or TrainConfig()
    if not dataset:
        raise InvalidArgument("training dataset is empty")
    _set_determinism(cfg)
    stacks, mos = cache if cache is not None else build_cache(dataset, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = QualityModel(cfg.na, cfg.backbone, cfg.variant, cfg.patch_size)
    with torch.no_grad():
        # start the regression head at the training mean so raw MOS units need no rescaling
        model.f3.head.bias.fill_(float(mos.mean()))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    effective = cfg.to_dict()
    records = []
    last_good = ModelParams.from_model(model, cfg.resolution, effective)
    out = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = rng.permutation(len(mos))
            total = 0.0
            for start in range(0, len(order), cfg.batch):
                idx = torch.from_numpy(order[start:start + cfg.batch])
                h, v, ang = draw_augmentation(rng, len(idx), cfg.hflip, cfg.vflip, cfg.rotate_deg)
                stack = apply_augmentation(stacks[idx], h, v, ang)
                img, d1, d2 = batch_inputs(stack, cfg.patch_size)
                batch_loss = loss(model(img.clamp(0.0, 1.0), d1, d2), mos[idx])
                if not torch.isfinite(batch_loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_good)
                opt.zero_grad()
                batch_loss.backward()
                opt.step()
                total += batch_loss.item() * len(idx)
            rec = {"epoch": epoch, "mean_loss": total / len(order), "lr": cfg.lr,
                   "wall_time_s": round(time.perf_counter() - t0, 4)}
            records.append(rec)
            if out:
                out.write(json.dumps(rec) + "\n")
                out.flush()
            if progress:
                progress(rec)
            last_good = ModelParams.from_model(model, cfg.resolution, effective)
    finally:
        if out:
            out.close()
    return last_good, records


def predict_stacks(model, stacks, patch_size, batch=32):
    """Scores for cached ``(N, 9, R, R)`` stacks (no augmentation)."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for start in range(0, len(stacks), batch):
            img, d1, d2 = batch_inputs(stacks[start:start + batch].to(dtype), patch_size)
            out.append(model(img, d1, d2))
    return torch.cat(out).double().numpy() if out else np.zeros(0)


def cached_fit_and_predict(dataset, cfg, test_dataset=None, on_trained=None):
    """``fit_and_predict`` for the evaluation protocol with estimates computed once.

    The repeat seed drives both the split (inside the protocol) and training.
    """
    pool = list(dataset) + list(test_dataset or [])
    stacks, mos = build_cache(pool, cfg)
    index = {id(s): i for i, s in enumerate(pool)}

    def fit_and_predict(train_set, test_set, seed):
        tr = torch.tensor([index[id(s)] for s in train_set])
        te = torch.tensor([index[id(s)] for s in test_set])
        params, records = train(train_set, replace(cfg, seed=seed), cache=(stacks[tr], mos[tr]))
        if on_trained:
            on_trained(seed, params, records)
        return predict_stacks(params.build_model(), stacks[te], cfg.patch_size)

    return fit_and_predict
