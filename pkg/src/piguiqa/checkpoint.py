"""Binary checkpoint container.

Layout: ``b"PIGQ"`` | format version (u32 LE) | manifest length (u64 LE) |
manifest JSON (UTF-8, sorted keys) | payload of little-endian float32 values,
concatenated in manifest index order. Offsets and lengths count float32
elements.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import IncompatibleCheckpoint
from .local import NAConfig
from .params import ModelParams
from .perception import BackboneConfig

MAGIC = b"PIGQ"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def save_checkpoint(params, path):
    index, chunks, offset = {}, [], 0
    for name, arr in params.state.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        index[name] = {"offset": offset, "length": int(a.size), "shape": list(a.shape)}
        chunks.append(a.tobytes())
        offset += a.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "params_version": params.version,
        "fingerprint": params.fingerprint,
        "variant": params.variant,
        "na": params.na_cfg.to_dict(),
        "backbone": params.backbone_cfg.to_dict(),
        "patch_size": params.patch_size,
        "resolution": params.resolution,
        "config": params.config,
        "order": list(index),
        "index": index,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + b"".join(chunks))


def load_checkpoint(path, expected_fingerprint=None):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise IncompatibleCheckpoint(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise IncompatibleCheckpoint(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpoint(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise IncompatibleCheckpoint(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + mlen])
    except ValueError as exc:
        raise IncompatibleCheckpoint(f"{path}: unreadable manifest ({exc})") from None
    payload = data[start + mlen:]
    index = manifest["index"]
    total = sum(e["length"] for e in index.values())
    if len(payload) != 4 * total:
        raise IncompatibleCheckpoint(
            f"{path}: payload has {len(payload)} bytes, index expects {4 * total}")
    flat = np.frombuffer(payload, dtype="<f4")
    state = OrderedDict()
    for name in manifest["order"]:
        e = index[name]
        state[name] = flat[e["offset"]:e["offset"] + e["length"]].reshape(e["shape"]).astype(np.float32)
    params = ModelParams(NAConfig(**manifest["na"]), BackboneConfig(**manifest["backbone"]),
                         manifest["variant"], state, manifest["patch_size"], manifest["resolution"],
                         manifest["params_version"], manifest["config"])
    if params.fingerprint != manifest["fingerprint"]:
        raise IncompatibleCheckpoint(f"{path}: stored fingerprint does not match stored configs")
    params.check_disjoint()
    if expected_fingerprint is not None:
        params.check_fingerprint(expected_fingerprint)
    return params
