"""Patchwise transmission (d1) and backscatter (d2) distortion measures.

d1 of a patch is the operator norm of ``A -> (T_patch - 1) * A`` (entrywise
product, Frobenius norm on matrices). The operator is diagonal in the
matrix-unit basis, so its norm is the largest ``|T_ij - 1|``.
"""

from dataclasses import dataclass

import numpy as np

from .core import patchify
from .errors import InvalidArgument

PATCH_SIZE = 16


def _check_unit(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise InvalidArgument(f"{name} must be (H, W) or (H, W, C), got {x.shape}")
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgument(f"{name} values must lie in [0, 1]")
    return x


def _patch_max(x, n):
    return patchify(x, n).patches.max(axis=(2, 3, 4))


def d1_map(T, n=PATCH_SIZE):
    """Per-patch ``max |T - 1|`` over positions and channels."""
    T = _check_unit(T, "T")
    return _patch_max(np.abs(T - 1.0), n)


def d2_map(B, n=PATCH_SIZE):
    """Per-patch ``max B`` over positions and channels."""
    return _patch_max(_check_unit(B, "B"), n)


@dataclass
class OperatorNormEstimate:
    closed_form: float
    monte_carlo_sup: float
    samples: int
    argmax_index: tuple
    attained: float

    @property
    def consistent(self):
        return (self.monte_carlo_sup <= self.closed_form + 1e-9
                and abs(self.attained - self.closed_form) <= 1e-12)


def hadamard_operator(T_patch):
    D = np.asarray(T_patch, dtype=np.float64) - 1.0
    return lambda A: D * A


def operator_norm_oracle(T_patch, samples=10_000, rng_seed=0, batch=2048):
    """Random-search lower bound on the operator norm, checked against the closed form.

    Directions are drawn with random sparsity (support size log-uniform in
    ``[1, N*N]``, Gaussian entries on the support) and normalised to unit
    Frobenius norm, which covers both spread-out and nearly axis-aligned
    directions of the unit sphere.
    """
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    T_patch = np.asarray(T_patch, dtype=np.float64)
    if T_patch.ndim != 2:
        raise InvalidArgument("oracle expects a single-channel N x N patch")
    op = hadamard_operator(T_patch)
    D = T_patch - 1.0
    size = D.size
    rng = np.random.default_rng(rng_seed)

    sup = 0.0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        k = np.exp(rng.uniform(0.0, np.log(size), m)).astype(int).clip(1, size)
        keys = rng.random((m, size))
        thresh = np.sort(keys, axis=1)[np.arange(m), size - k]
        A = rng.normal(size=(m, size)) * (keys >= thresh[:, None])
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        vals = np.linalg.norm(op(A.reshape(m, *D.shape)).reshape(m, -1), axis=1)
        sup = max(sup, float(vals.max()))
        done += m

    closed = float(np.abs(D).max())
    i, j = np.unravel_index(int(np.abs(D).argmax()), D.shape)
    unit = np.zeros_like(D)
    unit[i, j] = 1.0
    attained = float(np.linalg.norm(op(unit)))
    return OperatorNormEstimate(closed, sup, samples, (0, int(i), int(j)), attained)
