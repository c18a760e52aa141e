"""Property suite behind ``piguiqa verify``: independent oracles for the core maths."""

import copy
import itertools
import math
import time
from functools import partial

import numpy as np
import torch
import torch.nn.functional as F
from torch.overrides import TorchFunctionMode

from .distortion import d1_map, operator_norm_oracle
from .evaluation import fit_5pl, krcc, logistic5, rmse, srcc
from .local import NAConfig, RNATB, global_attention, neighborhood_attention, rnatb_gradients
from .perception import BackboneConfig, QualityModel
from .training import loss


def brute_ranks(x):
    """1-based average ranks by counting: ``1 + #less + (#equal - 1) / 2``."""
    x = list(x)
    return [1 + sum(v < xi for v in x) + (sum(v == xi for v in x) - 1) / 2 for xi in x]


def brute_pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac, bc = a - a.mean(), b - b.mean()
    return float(np.sum(ac * bc) / math.sqrt(float(np.sum(ac * ac)) * float(np.sum(bc * bc))))


def brute_tau_b(x, y):
    """Kendall tau-b from an explicit loop over all unordered pairs."""
    n = len(x)
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(n), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0:
            tx += 1
        if dy == 0:
            ty += 1
        if dx * dy > 0:
            c += 1
        elif dx * dy < 0:
            d += 1
    n0 = n * (n - 1) // 2
    return (c - d) / math.sqrt(float((n0 - tx) * (n0 - ty)))


# Gradients below this magnitude are compared absolutely: central differences carry
# ~1e-12 of float64 roundoff at h=1e-5, which would swamp a relative comparison.
GRAD_FLOOR = 1e-3


def relative_error(a, b, floor=GRAD_FLOOR):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_operator_norm(patches=100, samples=10_000, seed=0):
    rng = np.random.default_rng(seed)
    worst_ratio, attain_err = 1.0, 0.0
    ok = True
    for k in range(patches):
        T = rng.uniform(0.0, 1.0, (16, 16))
        est = operator_norm_oracle(T, samples, rng_seed=seed + k)
        scan = float(d1_map(T, 16)[0, 0])
        exact = float(np.max(np.abs(T - 1.0)))
        attain_err = max(attain_err, abs(est.attained - est.closed_form))
        ok &= scan == exact == est.closed_form
        ok &= 0.9 * est.closed_form <= est.monte_carlo_sup <= est.closed_form + 1e-9
        worst_ratio = min(worst_ratio, est.monte_carlo_sup / est.closed_form)
    ok &= attain_err <= 1e-12
    return ok, {"patches": patches, "min_mc_ratio": worst_ratio, "max_attain_err": attain_err}


def check_na_global(seeds=20, size=4, dim=8, heads=2, window=7):
    worst, worst_sum = 0.0, 0.0
    for s in range(seeds):
        g = torch.Generator().manual_seed(s)
        q, k, v = (torch.randn(2, heads, size, size, dim // heads, generator=g, dtype=torch.float64)
                   for _ in range(3))
        bias = torch.zeros(heads, 2 * window - 1, 2 * window - 1, dtype=torch.float64)
        out, attn = neighborhood_attention(q, k, v, bias, window, return_weights=True)
        worst = max(worst, float((out - global_attention(q, k, v)).abs().max()))
        worst_sum = max(worst_sum, float((attn.sum(-1) - 1).abs().max()))
    return worst <= 1e-5 and worst_sum <= 1e-6, {"max_abs_diff": worst, "max_row_sum_err": worst_sum}


def check_attention_weights(seed=0):
    torch.manual_seed(seed)
    block = RNATB(NAConfig(embed_dim=8, heads=2, window=5, blocks=1)).double()
    with torch.no_grad():
        block.layers[0].attn.rpb.normal_()
        x = block.layers[0].norm1(block.stem(torch.rand(1, 12, 10, 3, dtype=torch.float64)))
        _, attn = block.layers[0].attn(x, return_weights=True)
    err = float((attn.sum(-1) - 1).abs().max())
    return bool(err <= 1e-6 and attn.min() >= 0), {"max_row_sum_err": err}


class _ReluSigns(TorchFunctionMode):
    """Records the sign pattern of every ReLU input so kink crossings can be detected."""

    def __init__(self):
        super().__init__()
        self.signs = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        if func is F.relu:
            self.signs.append(args[0].detach() > 0)
        return func(*args, **(kwargs or {}))


def _evaluate(closure):
    with _ReluSigns() as mode:
        value = closure()
    return value, mode.signs


def _same_signs(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def _fd_check(params, closure, analytic, coords, h, rng):
    """Central differences on ``coords`` random scalar parameter coordinates.

    Coordinates whose +-h probe flips any ReLU are redrawn: the loss is not
    differentiable across that interval and the difference quotient is meaningless.
    """
    flat = [(name, p) for name, p in params]
    sizes = np.array([p.numel() for _, p in flat])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(int(sizes.sum()))
    _, base = _evaluate(closure)
    worst, done, skipped = 0.0, 0, 0
    for pick in order:
        if done == coords:
            break
        i = int(np.searchsorted(offsets, pick, side="right") - 1)
        name, p = flat[i]
        j = int(pick - offsets[i])
        view = p.data.view(-1)
        orig = view[j].item()
        view[j] = orig + h
        plus, s_plus = _evaluate(closure)
        view[j] = orig - h
        minus, s_minus = _evaluate(closure)
        view[j] = orig
        if not (_same_signs(base, s_plus) and _same_signs(base, s_minus)):
            skipped += 1
            continue
        numeric = (plus - minus) / (2 * h)
        worst = max(worst, relative_error(float(analytic[name].reshape(-1)[j]), numeric))
        done += 1
    return worst, skipped


def _dtype_name(dtype):
    return str(dtype).replace("torch.", "")


# Analytic gradients run in ``dtype``; difference quotients always come from a
# float64 copy holding the same (possibly float32-rounded) weights and inputs.
# A float32 difference quotient resolves only ~ulp(loss)/2h, about 5e-4 here,
# which would test float32 rounding rather than the gradient.


def check_rnatb_gradients(coords=50, seed=0, h=1e-5, tol=1e-6, dtype=torch.float64):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    block = RNATB(NAConfig(embed_dim=8, heads=2, window=3, blocks=1)).to(dtype)
    with torch.no_grad():
        for layer in block.layers:
            layer.attn.rpb.normal_(0.0, 0.5)
    img = torch.from_numpy(rng.uniform(0.0, 1.0, (8, 8, 3))).to(dtype)
    up = torch.from_numpy(rng.normal(size=(8, 8, 3))).to(dtype)
    grads = rnatb_gradients(img.numpy(), block, up.numpy())
    ref = copy.deepcopy(block).double()
    x = img.double().permute(2, 0, 1)[None]
    upt = up.double().permute(2, 0, 1)[None]

    def closure():
        with torch.no_grad():
            return float((ref(x) * upt).sum())

    worst, skipped = _fd_check(list(ref.named_parameters()), closure, grads, coords, h, rng)
    return worst <= tol, {"max_rel_err": worst, "coords": coords, "kink_skips": skipped,
                          "dtype": _dtype_name(dtype)}


def check_composite_gradients(coords=50, seed=0, h=1e-5, tol=1e-6, dtype=torch.float64):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = QualityModel(NAConfig(embed_dim=8, heads=2, window=3, blocks=1),
                         BackboneConfig(widths=(4, 8), blocks=(1, 1), groups=2),
                         "full", patch_size=8).to(dtype)
    with torch.no_grad():
        for blk in (model.f1, model.f2):
            blk.layers[0].attn.rpb.normal_(0.0, 0.5)
    inputs = [torch.from_numpy(rng.uniform(0.0, 1.0, shape)).to(dtype)
              for shape in ((2, 3, 16, 16), (2, 2, 2), (2, 2, 2))]
    ref = copy.deepcopy(model).double()
    ref_inputs = [t.double() for t in inputs]
    # targets sit just off the current prediction: away from the L1 kink, loss stays O(1e-2)
    with torch.no_grad():
        target = (ref(*ref_inputs) + torch.tensor([0.01, -0.01], dtype=torch.float64)).to(dtype)
    ref_target = target.double()
    model.zero_grad()
    loss(model(*inputs), target).backward()
    grads = {n: p.grad.detach().double() for n, p in model.named_parameters()}

    def closure():
        with torch.no_grad():
            return float(loss(ref(*ref_inputs), ref_target))

    worst, skipped = _fd_check(list(ref.named_parameters()), closure, grads, coords, h, rng)
    return worst <= tol, {"max_rel_err": worst, "coords": coords, "kink_skips": skipped,
                          "dtype": _dtype_name(dtype)}


def check_rank_oracles(trials=1000, seed=0):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        n = int(rng.integers(3, 9))
        levels = int(rng.integers(2, 2 * n))
        x = rng.integers(0, levels, n).astype(float)
        y = rng.integers(0, levels, n).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        if abs(srcc(x, y) - brute_pearson(brute_ranks(x), brute_ranks(y))) > 1e-12:
            mismatches += 1
        if abs(krcc(x, y) - brute_tau_b(list(x), list(y))) > 1e-12:
            mismatches += 1
    third = krcc([1, 2, 3], [1, 3, 2])
    return mismatches == 0 and abs(third - 1 / 3) <= 1e-12, {"mismatches": mismatches, "krcc_123_132": third}


def check_fivepl_recovery(seeds=20, n=200, sigma=0.5):
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(s)
        b = [rng.uniform(20, 60), rng.uniform(0.5, 3.0), rng.uniform(-1, 1),
             rng.uniform(-2, 2), rng.uniform(20, 80)]
        x = rng.uniform(-3, 3, n)
        y = logistic5(x, *b) + rng.normal(0.0, sigma, n)
        f = fit_5pl(x, y)
        worst = max(worst, rmse(f(x), y))
    return worst <= 2 * sigma, {"max_residual_rmse": worst, "sigma": sigma}


CHECKS = {
    "operator_norm": check_operator_norm,
    "na_global_equivalence": check_na_global,
    "attention_weights": check_attention_weights,
    "rnatb_gradients": check_rnatb_gradients,
    "composite_gradients": check_composite_gradients,
    "rnatb_gradients_fp32": partial(check_rnatb_gradients, h=1e-3, tol=1e-3, dtype=torch.float32),
    "composite_gradients_fp32": partial(check_composite_gradients, coords=30, h=1e-3, tol=1e-3,
                                        dtype=torch.float32),
    "rank_oracles": check_rank_oracles,
    "fivepl_recovery": check_fivepl_recovery,
}


def run_all(names=None):
    summary = {}
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, {"exception": f"{type(exc).__name__}: {exc}"}
        detail["runtime_s"] = round(time.perf_counter() - t0, 3)
        summary[name] = {"status": "pass" if ok else "fail", **detail}
    return summary
