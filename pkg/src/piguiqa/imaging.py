"""Underwater image formation, transmission/backscatter estimation and synthetic scenes."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import MAP16_SUFFIX, as_image, read_map16
from .errors import EstimatorError, InvalidArgument, NotFound

log = logging.getLogger(__name__)

T_FLOOR = 0.05
OMEGA = 0.95
DARK_WINDOW = 15
BRIGHT_FRACTION = 0.001
BETA_RATIO = (1.0, 0.8, 0.7)
CHANNEL_RATIO = (1.0, 0.8, 0.7)
AMBIENT_RANK_CHANNELS = (1, 2)


@dataclass
class WaterParams:
    """Per-channel water coefficients and the per-pixel object distance.

    ``ambient`` is either a length-3 vector (spatially constant veiling light)
    or an ``(H, W, 3)`` array for the spatially varying mode.
    """

    beta_d: np.ndarray
    beta_b: np.ndarray
    ambient: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        self.beta_d = np.asarray(self.beta_d, dtype=np.float64).reshape(3)
        self.beta_b = np.asarray(self.beta_b, dtype=np.float64).reshape(3)
        self.ambient = np.asarray(self.ambient, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if np.any(self.beta_d < 0) or np.any(self.beta_b < 0):
            raise InvalidArgument("attenuation/backscatter coefficients must be >= 0")
        if self.depth.ndim != 2 or np.any(self.depth <= 0):
            raise InvalidArgument("depth must be a 2-D field of positive distances")
        if self.ambient.shape not in ((3,), self.depth.shape + (3,)):
            raise InvalidArgument(f"ambient must be (3,) or (H, W, 3), got {self.ambient.shape}")
        if np.any(self.ambient < 0) or np.any(self.ambient > 1):
            raise InvalidArgument("ambient light must lie in [0, 1]")

    def summary(self):
        return {
            "beta_d": self.beta_d.tolist(),
            "beta_b": self.beta_b.tolist(),
            "ambient": self.ambient.reshape(-1, 3).mean(axis=0).tolist(),
            "depth_min": float(self.depth.min()),
            "depth_max": float(self.depth.max()),
        }


@dataclass
class ImagingEstimate:
    T: np.ndarray
    B: np.ndarray
    restored: np.ndarray
    method: str = "truth"
    degenerate: bool = False
    info: dict = field(default_factory=dict)

    def residual(self, distorted):
        """Frobenius norm of ``restored * T + B - distorted``."""
        return float(np.linalg.norm(self.restored * self.T + self.B - distorted))


def restore(distorted, T, B, t_floor=T_FLOOR):
    return np.clip((distorted - B) / np.maximum(T, t_floor), 0.0, 1.0)


def forward_model(clean, params):
    """Attenuate ``clean`` and add veiling light; returns ``(distorted, truth)``."""
    clean = as_image(clean, "clean")
    if params.depth.shape != clean.shape[:2]:
        raise InvalidArgument(
            f"depth field {params.depth.shape} does not match image {clean.shape[:2]}"
        )
    l = params.depth[:, :, None]
    T = np.exp(-params.beta_d * l)
    B = params.ambient * (1.0 - np.exp(-params.beta_b * l))
    distorted = np.clip(clean * T + B, 0.0, 1.0)
    return distorted, ImagingEstimate(T=T, B=B, restored=clean.copy(), method="truth")


def dark_channel(img, window=DARK_WINDOW):
    return ndimage.minimum_filter(img.min(axis=2), size=window, mode="nearest")


def estimate_ambient(img, fraction=BRIGHT_FRACTION, rank_channels=AMBIENT_RANK_CHANNELS):
    """Mean colour of the brightest ``fraction`` of pixels.

    Pixels are ranked by their minimum over ``rank_channels``. Red is left out
    by default: underwater veiling light has little red, so ranking on all
    three channels picks bright red objects instead of the water column.
    """
    flat = img.reshape(-1, 3)
    k = max(1, int(np.floor(flat.shape[0] * fraction)))
    key = flat[:, list(rank_channels)].min(axis=1)
    order = np.argsort(key, kind="stable")[-k:]
    return flat[order].mean(axis=0)


def prior_estimator(distorted, t_floor=T_FLOOR, omega=OMEGA, window=DARK_WINDOW,
                    beta_ratio=BETA_RATIO, rank_channels=AMBIENT_RANK_CHANNELS):
    """Dark-channel style estimate of transmission and backscatter.

    ``T_ref = clip(1 - omega * dark(I / A), t_floor, 1)`` is taken as the red
    transmission; the other channels follow ``T_ref ** beta_ratio[c]``.
    """
    img = as_image(distorted, "distorted")
    ambient = estimate_ambient(img, rank_channels=rank_channels)
    if np.any(ambient <= 0):
        log.warning("degenerate input: ambient light undefined (black image)")
        T = np.ones_like(img)
        B = np.zeros_like(img)
        return ImagingEstimate(T, B, img.copy(), method="prior", degenerate=True,
                               info={"ambient": ambient.tolist()})
    dark = dark_channel(img / ambient, window)
    t_ref = np.clip(1.0 - omega * dark, t_floor, 1.0)
    T = np.maximum(t_ref[:, :, None] ** np.asarray(beta_ratio, dtype=np.float64), t_floor)
    B = ambient * (1.0 - T)
    return ImagingEstimate(T, B, restore(img, T, B, t_floor), method="prior",
                           info={"ambient": ambient.tolist()})


_ESTIMATORS = {"prior": prior_estimator}


def register_estimator(name, fn):
    """Register ``fn(distorted) -> ImagingEstimate`` under ``name``."""
    _ESTIMATORS[name] = fn


def estimators():
    return sorted(_ESTIMATORS)


def estimate(distorted, method="prior", t_floor=T_FLOOR):
    try:
        fn = _ESTIMATORS[method]
    except KeyError:
        raise NotFound(f"unknown estimator {method!r}; known: {estimators()}") from None
    img = as_image(distorted, "distorted")
    try:
        est = fn(img)
    except InvalidArgument:
        raise
    except Exception as exc:
        raise EstimatorError(method, str(exc)) from exc
    return _finalize(img, est.T, est.B, method, t_floor, est.degenerate, est.info)


def _finalize(img, T, B, method, t_floor, degenerate=False, info=None):
    T = np.asarray(T, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if T.shape != img.shape or B.shape != img.shape:
        raise EstimatorError(method, f"maps {T.shape}/{B.shape} do not match image {img.shape}")
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(B))):
        raise EstimatorError(method, "non-finite maps")
    T = np.clip(T, t_floor, 1.0)
    B = np.clip(B, 0.0, np.nextafter(1.0, 0.0))
    return ImagingEstimate(T, B, restore(img, T, B, t_floor), method=method,
                           degenerate=degenerate, info=dict(info or {}))


def estimate_paths(image_path):
    """Sidecar map paths ``x.T.png16`` / ``x.B.png16`` for image ``x.png``."""
    p = Path(image_path)
    stem = p.with_suffix("")
    return Path(f"{stem}.T{MAP16_SUFFIX}"), Path(f"{stem}.B{MAP16_SUFFIX}")


def load_external_estimate(image_path, distorted, t_floor=T_FLOOR):
    """Ingest precomputed T/B maps produced by any external estimator."""
    t_path, b_path = estimate_paths(image_path)
    for p in (t_path, b_path):
        if not p.exists() or not Path(str(p) + ".json").exists():
            raise NotFound(f"missing precomputed map {p}")
    img = as_image(distorted, "distorted")
    return _finalize(img, read_map16(t_path), read_map16(b_path), "external", t_floor)


def _smooth_field(rng, h, w, cells):
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells, 3))
    zoomed = ndimage.zoom(coarse, (h / cells, w / cells, 1), order=3, mode="nearest")
    return zoomed[:h, :w]


def synth_scene(seed, h=64, w=64, severity=1, uniform_depth=False):
    """Random textured scene plus severity-scaled water parameters.

    The same ``seed`` fixes the scene layout and the base coefficient draws;
    ``severity`` multiplies the base coefficients, so every coefficient grows
    strictly with severity.
    """
    if h < 32 or w < 32:
        raise InvalidArgument(f"scenes must be at least 32x32, got {h}x{w}")
    if severity < 0:
        raise InvalidArgument("severity must be >= 0")
    rng = np.random.default_rng(seed)

    # background: saturated smooth colour field, one channel kept dark
    base = _smooth_field(rng, h, w, 4)
    low = base.argmin(axis=2)
    base[np.arange(h)[:, None], np.arange(w)[None, :], low] *= 0.03
    clean = 0.9 * base
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.0, 1.0, 3)
        color[rng.integers(3)] *= 0.03
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        freq = rng.uniform(0.2, 0.8)
        texture = 0.75 + 0.25 * np.sin(freq * (xx * rng.normal() + yy * rng.normal()))
        clean[mask] = color * texture[mask, None]
    clean = np.clip(clean + rng.normal(0.0, 0.005, clean.shape), 0.0, 1.0)

    if uniform_depth:
        depth = np.full((h, w), rng.uniform(0.5, 5.0))
    else:
        # tilted plane spanning the full near/far range in a random direction
        theta = rng.uniform(0.0, 2.0 * np.pi)
        plane = np.cos(theta) * yy / h + np.sin(theta) * xx / w
        plane = (plane - plane.min()) / np.ptp(plane)
        depth = 0.5 + 4.5 * plane
    # red attenuates fastest, blue slowest
    # one base rate per scene; channel ratios keep every coefficient inside
    # severity * [0.05, 0.15] with blue >= 0.05 * severity
    jitter = 0.95
    base_rate = rng.uniform(0.05 / (CHANNEL_RATIO[2] * jitter), 0.15)
    ratio = np.asarray(CHANNEL_RATIO) * rng.uniform(jitter, 1.0, 3)
    ratio[0] = 1.0
    beta_d = severity * base_rate * ratio
    beta_b = np.clip(beta_d * rng.uniform(0.9, 1.1, 3), 0.05 * severity, 0.15 * severity)
    ambient = np.array([rng.uniform(0.1, 0.4), rng.uniform(0.4, 0.8), rng.uniform(0.5, 0.9)])
    return clean, WaterParams(beta_d, beta_b, ambient, depth)
