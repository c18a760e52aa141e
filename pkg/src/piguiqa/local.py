"""Neighborhood attention and the residual NA transformer blocks (f1, f2)."""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgument


@dataclass(frozen=True)
class NAConfig:
    embed_dim: int = 64
    heads: int = 4
    window: int = 7
    blocks: int = 2
    mlp_ratio: float = 2.0
    out_channels: int = 3

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise InvalidArgument(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidArgument(f"window must be odd and >= 1, got {self.window}")

    def to_dict(self):
        return asdict(self)


def _axis_neighbors(size, window):
    """Start-clamped neighbor indices ``(size, k)`` and their offsets ``j - i``.

    Windows are shifted (not shrunk) at the borders; a window wider than the
    axis collapses to the whole axis.
    """
    k = min(window, size)
    pos = np.arange(size)
    start = np.clip(pos - window // 2, 0, size - k)
    idx = start[:, None] + np.arange(k)[None, :]
    return idx, idx - pos[:, None]


_INDEX_CACHE = {}


def neighborhood_index(h, w, window):
    """Flat neighbor indices ``(h*w, n)`` and flat bias-table indices ``(h*w, n)``."""
    key = (h, w, window)
    if key not in _INDEX_CACHE:
        iy, oy = _axis_neighbors(h, window)
        ix, ox = _axis_neighbors(w, window)
        ky, kx = iy.shape[1], ix.shape[1]
        nbr = (iy[:, None, :, None] * w + ix[None, :, None, :]).reshape(h * w, ky * kx)
        span = 2 * window - 1
        rel = ((oy[:, None, :, None] + window - 1) * span
               + (ox[None, :, None, :] + window - 1)).reshape(h * w, ky * kx)
        _INDEX_CACHE[key] = (torch.from_numpy(nbr), torch.from_numpy(rel))
    return _INDEX_CACHE[key]


def neighborhood_attention(q, k, v, bias, window, return_weights=False):
    """Per-head neighborhood attention.

    q, k, v: ``(B, heads, H, W, d_head)``; bias: ``(heads, 2w-1, 2w-1)``.
    Returns ``(B, heads, H, W, d_head)`` (and the ``(B, heads, H*W, n)``
    attention weights when ``return_weights``).
    """
    if window < 1 or window % 2 == 0:
        raise InvalidArgument(f"window must be odd and >= 1, got {window}")
    b, heads, h, w, dh = q.shape
    span = 2 * window - 1
    if bias.shape != (heads, span, span):
        raise InvalidArgument(f"bias table must be {(heads, span, span)}, got {tuple(bias.shape)}")
    nbr, rel = neighborhood_index(h, w, window)
    qf = q.reshape(b, heads, h * w, dh)
    kn = k.reshape(b, heads, h * w, dh)[:, :, nbr]
    vn = v.reshape(b, heads, h * w, dh)[:, :, nbr]
    # broadcast-and-sum beats einsum here: einsum lowers to a bmm over b*h*t
    # tiny (1 x d) @ (d x n) products
    logits = (qf.unsqueeze(3) * kn).sum(-1)
    logits = (logits + bias.reshape(heads, -1)[:, rel]) / math.sqrt(dh)
    attn = logits.softmax(dim=-1)
    out = (attn.unsqueeze(-1) * vn).sum(3).reshape(b, heads, h, w, dh)
    return (out, attn) if return_weights else out


def global_attention(q, k, v):
    """Dense softmax attention over all tokens, same layout as the NA routine."""
    b, heads, h, w, dh = q.shape
    qf, kf, vf = (t.reshape(b, heads, h * w, dh) for t in (q, k, v))
    attn = (qf @ kf.transpose(-1, -2) / math.sqrt(dh)).softmax(dim=-1)
    return (attn @ vf).reshape(b, heads, h, w, dh)


def _uniform_fan_in(layer):
    bound = 1.0 / math.sqrt(layer.weight.shape[1])
    nn.init.uniform_(layer.weight, -bound, bound)
    if layer.bias is not None:
        nn.init.uniform_(layer.bias, -bound, bound)


class NeighborhoodAttention(nn.Module):
    def __init__(self, dim, heads, window):
        super().__init__()
        self.heads, self.window = heads, window
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        span = 2 * window - 1
        self.rpb = nn.Parameter(torch.zeros(heads, span, span))
        _uniform_fan_in(self.qkv)
        _uniform_fan_in(self.proj)

    def forward(self, x, return_weights=False):
        # x: (B, H, W, C)
        b, h, w, c = x.shape
        qkv = self.qkv(x).reshape(b, h, w, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(3, 0, 4, 1, 2, 5)
        out = neighborhood_attention(q, k, v, self.rpb, self.window, return_weights)
        if return_weights:
            out, attn = out
        out = self.proj(out.permute(0, 2, 3, 1, 4).reshape(b, h, w, c))
        return (out, attn) if return_weights else out


class NATLayer(nn.Module):
    """Pre-norm transformer layer: x + NA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, cfg):
        super().__init__()
        hidden = int(round(cfg.embed_dim * cfg.mlp_ratio))
        self.norm1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = NeighborhoodAttention(cfg.embed_dim, cfg.heads, cfg.window)
        self.norm2 = nn.LayerNorm(cfg.embed_dim)
        self.fc1 = nn.Linear(cfg.embed_dim, hidden)
        self.fc2 = nn.Linear(hidden, cfg.embed_dim)
        _uniform_fan_in(self.fc1)
        _uniform_fan_in(self.fc2)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class RNATB(nn.Module):
    """1x1 stem -> ``blocks`` NA layers -> 1x1 projection; keeps spatial size.

    Input and output are channel-first ``(B, C, H, W)``.
    """

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or NAConfig()
        self.stem = nn.Linear(3, self.cfg.embed_dim)
        self.layers = nn.ModuleList(NATLayer(self.cfg) for _ in range(self.cfg.blocks))
        self.head = nn.Linear(self.cfg.embed_dim, self.cfg.out_channels)
        _uniform_fan_in(self.stem)
        _uniform_fan_in(self.head)

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 3:
            raise InvalidArgument(f"RNATB expects (B, 3, H, W), got {tuple(img.shape)}")
        x = self.stem(img.permute(0, 2, 3, 1))
        for layer in self.layers:
            x = layer(x)
        return self.head(x).permute(0, 3, 1, 2)


def _as_batch(img, dtype):
    t = torch.as_tensor(np.asarray(img), dtype=dtype)
    if t.ndim == 3:
        t = t.permute(2, 0, 1)[None]
    return t


def rnatb_forward(img, block):
    """Feature map ``(H, W, out_channels)`` for a single ``(H, W, 3)`` image."""
    dtype = next(block.parameters()).dtype
    with torch.no_grad():
        out = block(_as_batch(img, dtype))
    return out[0].permute(1, 2, 0).numpy()


def rnatb_gradients(img, block, upstream):
    """Gradients of ``<upstream, block(img)>`` for every named parameter."""
    dtype = next(block.parameters()).dtype
    x = _as_batch(img, dtype)
    up = torch.as_tensor(np.asarray(upstream), dtype=dtype)
    if up.ndim == 3:
        up = up.permute(2, 0, 1)[None]
    out = block(x)
    if up.shape != out.shape:
        raise InvalidArgument(f"upstream shape {tuple(up.shape)} != output {tuple(out.shape)}")
    names, params = zip(*block.named_parameters())
    grads = torch.autograd.grad((out * up).sum(), params, allow_unused=True)
    return {n: (torch.zeros_like(p) if g is None else g).numpy()
            for n, p, g in zip(names, params, grads)}
