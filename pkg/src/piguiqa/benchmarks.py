"""Synthetic degraded-image corpus with ground-truth maps and a pseudo-MOS label.

Pseudo-MOS is a monotone proxy, ``100 * (1 - w1 * mean(d1) - w2 * mean(d2))``
over the ground-truth distortion grids, clipped to [0, 100]. It only exists
so that small training runs have a physically ordered target.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import write_image, write_map16
from .distortion import PATCH_SIZE, d1_map, d2_map
from .errors import InvalidArgument, PiguiqaError
from .imaging import WaterParams, forward_model, synth_scene


class DatasetIOError(PiguiqaError, OSError):
    code = "io-error"


@dataclass
class ManifestEntry:
    image_path: str
    clean_path: str
    severity: int
    pseudo_mos: float
    mean_d1: float
    mean_d2: float
    water: dict
    seed: int
    T_path: str = ""
    B_path: str = ""


def pseudo_mos(mean_d1, mean_d2, weights=(0.5, 0.5)):
    return float(np.clip(100.0 * (1.0 - weights[0] * mean_d1 - weights[1] * mean_d2), 0.0, 100.0))


def scene_seeds(seed, scenes):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(scenes)]


def build_dataset(scenes, severities, seed, out_dir, size=64, weights=(0.5, 0.5),
                  patch_size=PATCH_SIZE, include_control=False):
    """Render ``scenes x severities`` degraded images plus truth maps and a manifest.

    Severity levels run 1..severities; ``include_control`` adds a clear-water
    (beta = 0) entry per scene with severity 0.
    """
    if scenes < 1 or severities < 2:
        raise InvalidArgument("need scenes >= 1 and severities >= 2")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "clean").mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DatasetIOError(f"cannot write to {out}: {exc}") from None

    entries = []
    levels = ([0] if include_control else []) + list(range(1, severities + 1))
    for i, sseed in enumerate(scene_seeds(seed, scenes)):
        clean_rel = f"clean/scene{i:04d}.png"
        for s in levels:
            clean, params = synth_scene(sseed, size, size, s)
            if s == 0:
                params = WaterParams(np.zeros(3), np.zeros(3), params.ambient, params.depth)
            distorted, truth = forward_model(clean, params)
            if s == levels[0]:
                write_image(out / clean_rel, clean)
            stem = f"images/scene{i:04d}_s{s}"
            write_image(out / f"{stem}.png", distorted)
            # d values come from the stored (16-bit quantised) maps so they
            # can be reproduced exactly from disk
            T = write_map16(out / f"{stem}.T.png16", truth.T)
            B = write_map16(out / f"{stem}.B.png16", truth.B)
            m1 = float(d1_map(T, patch_size).mean())
            m2 = float(d2_map(B, patch_size).mean())
            entries.append(ManifestEntry(f"{stem}.png", clean_rel, s, pseudo_mos(m1, m2, weights),
                                         m1, m2, params.summary(), sseed,
                                         f"{stem}.T.png16", f"{stem}.B.png16"))
    config = {"scenes": scenes, "severities": severities, "seed": seed, "size": size,
              "weights": list(weights), "patch_size": patch_size, "include_control": include_control}
    write_manifest(out / "manifest.jsonl", entries, config)
    return entries


def write_manifest(path, entries, config):
    lines = [json.dumps({"config": config}, sort_keys=True)]
    lines += [json.dumps(asdict(e), sort_keys=True) for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    """Returns ``(entries, config)``."""
    entries, config = [], {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "config" in rec and len(rec) == 1:
            config = rec["config"]
        else:
            entries.append(ManifestEntry(**rec))
    return entries, config


def manifest_samples(path, estimate="prior"):
    """Training samples (absolute image paths, pseudo-MOS) from a manifest."""
    from .training import Sample

    root = Path(path).parent
    entries, _ = read_manifest(path)
    return [Sample(str(root / e.image_path), e.pseudo_mos, estimate) for e in entries]
