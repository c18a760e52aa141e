"""Acceptance criteria 1-9. Each test prints one ``ACCEPTANCE`` line with its verdict.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the summary block at the
end of any pytest run repeats every line.
"""

import time

import numpy as np
import pytest
import torch
from scipy.stats import spearmanr

from piguiqa.benchmarks import build_dataset, manifest_samples, write_manifest
from piguiqa.cli import cli_main
from piguiqa.distortion import d1_map, d2_map
from piguiqa.evaluation import evaluate
from piguiqa.imaging import estimate, forward_model, synth_scene
from piguiqa.local import NAConfig
from piguiqa.perception import DESK_BACKBONE, VARIANTS
from piguiqa.training import (TrainConfig, batch_inputs, build_cache, cached_fit_and_predict,
                              predict_stacks, train)
from piguiqa.verify import (check_attention_weights, check_composite_gradients,
                            check_fivepl_recovery, check_na_global, check_operator_norm,
                            check_rank_oracles, check_rnatb_gradients)

RESULTS = {}

# desk-scale stand-in: 32 px pipeline, one small NA layer per branch, desk backbone
DESK_NA = NAConfig(embed_dim=8, heads=2, window=5, blocks=1)
DESK_TRAIN = TrainConfig(epochs=200, batch=8, lr=1e-4, resolution=32, na=DESK_NA,
                         backbone=DESK_BACKBONE)
DESK_REPEATS = 3
MIN_SRCC = MIN_PLCC = 0.85


def record(number, title, ok, detail):
    line = f"ACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def test_1_operator_norm_identity():
    (ok, d), secs = timed(check_operator_norm, patches=100, samples=10_000)
    ok = ok and secs < 10
    assert record("1", "operator-norm identity", ok,
                  f"100 patches, min MC/closed ratio {d['min_mc_ratio']:.5f}, "
                  f"attainment err {d['max_attain_err']:.1e}, {secs:.1f}s (<10s)"), d


def test_2_neighborhood_attention():
    t0 = time.perf_counter()
    ok_g, g = check_na_global(seeds=20)
    ok_w, w = check_attention_weights()
    secs = time.perf_counter() - t0
    ok = ok_g and ok_w and secs < 10
    assert record("2", "NA correctness", ok,
                  f"20 seeds max |NA-global| {g['max_abs_diff']:.1e} (<=1e-5), "
                  f"row-sum err {max(g['max_row_sum_err'], w['max_row_sum_err']):.1e} (<=1e-6), {secs:.2f}s"), (g, w)


def test_3_gradient_checks():
    t0 = time.perf_counter()
    runs = {
        "rnatb fp64": check_rnatb_gradients(coords=50),
        "rnatb fp32": check_rnatb_gradients(coords=50, h=1e-3, tol=1e-3, dtype=torch.float32),
        "loss fp64": check_composite_gradients(coords=50),
        "loss fp32": check_composite_gradients(coords=50, h=1e-3, tol=1e-3, dtype=torch.float32),
    }
    secs = time.perf_counter() - t0
    ok = all(r[0] for r in runs.values()) and secs < 60
    detail = ", ".join(f"{k} {v[1]['max_rel_err']:.1e}" for k, v in runs.items())
    assert record("3", "gradient checks", ok,
                  f"50 coords each, max rel err: {detail} (fp64<=1e-6, fp32<=1e-3), {secs:.1f}s"), runs


def test_4_metric_oracles():
    (ok, d), secs = timed(check_rank_oracles, trials=1000)
    ok = ok and secs < 10
    assert record("4", "metric oracles", ok,
                  f"1000 tied/untied vectors n<=8, mismatches {d['mismatches']}, "
                  f"KRCC([1,2,3],[1,3,2])={d['krcc_123_132']:.6f}, {secs:.2f}s"), d


def test_5_fivepl_recovery():
    (ok, d), secs = timed(check_fivepl_recovery, seeds=20, n=200, sigma=0.5)
    ok = ok and secs < 10
    assert record("5", "5PL recovery", ok,
                  f"20 seeds, max residual RMSE {d['max_residual_rmse']:.3f} (<=2*sigma=1.0), {secs:.2f}s"), d


def test_6_physics_roundtrip():
    t0 = time.perf_counter()
    clear_max = 0.0
    for seed in range(10):
        clean, params = synth_scene(seed, 64, 64, severity=0)
        _, truth = forward_model(clean, params)
        clear_max = max(clear_max, d1_map(truth.T).max(), d2_map(truth.B).max())
    severity, mean_d1 = [], []
    for seed in range(10):
        for s in range(1, 6):
            clean, params = synth_scene(seed, 64, 64, severity=s)
            distorted, _ = forward_model(clean, params)
            severity.append(s)
            mean_d1.append(d1_map(estimate(distorted).T).mean())
    rho = spearmanr(severity, mean_d1)[0]
    per_scene = int(np.all(np.diff(np.reshape(mean_d1, (10, 5)), axis=1) > 0, axis=1).sum())
    secs = time.perf_counter() - t0
    ok = clear_max == 0.0 and rho >= 0.9 and secs < 60
    assert record("6", "physics roundtrip", ok,
                  f"clear-water max d1/d2 {clear_max:g}; Spearman(severity, mean est. d1) over 50 images "
                  f"= {rho:.3f} (>=0.9); per-scene strictly increasing {per_scene}/10; {secs:.1f}s"), rho


@pytest.fixture(scope="module")
def desk_runs(desk_dataset):
    """All four variants, 3 repeats each, 200 epochs; the repeat-0 full model is kept."""
    kept = {}
    reports, t0 = {}, time.perf_counter()
    seeds = list(range(DESK_REPEATS))
    for variant in VARIANTS:
        cfg = TrainConfig(**{**DESK_TRAIN.__dict__, "variant": variant})

        def keep(seed, params, records, variant=variant):
            if variant == "full" and seed == 0:
                kept["full"] = params

        fit = cached_fit_and_predict(desk_dataset, cfg, on_trained=keep)
        reports[variant] = evaluate(desk_dataset, fit, repeats=DESK_REPEATS, split=0.8, seeds=seeds,
                                    config=cfg.to_dict())
    return reports, kept["full"], time.perf_counter() - t0


@pytest.mark.slow
def test_7_desk_scale_end_to_end(desk_runs):
    reports, _, secs = desk_runs
    srcc = {v: reports[v].srcc for v in VARIANTS}
    full = reports["full"]
    quality = full.srcc >= MIN_SRCC and full.plcc >= MIN_PLCC
    trend = (srcc["full"] >= srcc["no_f1"] and srcc["full"] >= srcc["no_f2"]
             and all(srcc["no_both"] < srcc[v] for v in ("full", "no_f1", "no_f2")))
    detail = (f"full SRCC {full.srcc:.4f} PLCC {full.plcc:.4f} (>=0.85); mean SRCC "
              + ", ".join(f"{v} {s:.4f}" for v, s in srcc.items())
              + f"; ablation trend {'holds' if trend else 'violated'}; 4 variants x 3 repeats in {secs / 60:.1f} min")
    assert record("7", "desk-scale end-to-end", quality and trend, detail), srcc


@pytest.mark.slow
def test_7_supplement_held_out_severity_pairs(desk_runs, tmp_path_factory):
    """Severity-5 scores below severity-1 of the same unseen scene for >= 90% of 50 pairs."""
    _, params, _ = desk_runs
    out = tmp_path_factory.mktemp("heldout")
    entries = build_dataset(50, 5, seed=12345, out_dir=out, size=64)
    write_manifest(out / "manifest.jsonl", entries, {"seed": 12345})
    samples = manifest_samples(out / "manifest.jsonl")
    pairs = [(s1, s5) for s1, s5 in zip(samples[0::5], samples[4::5])]
    cfg = TrainConfig(**{**DESK_TRAIN.__dict__})
    stacks, _ = build_cache([s for p in pairs for s in p], cfg)
    scores = predict_stacks(params.build_model(), stacks, cfg.patch_size).reshape(-1, 2)
    frac = float(np.mean(scores[:, 1] < scores[:, 0]))
    print(f"supplement: severity-5 < severity-1 on {frac:.0%} of 50 held-out pairs (>=90%)")
    assert frac >= 0.9


@pytest.mark.slow
def test_7_supplement_channel_permutation(desk_runs, desk_dataset):
    _, params, _ = desk_runs
    model = params.build_model()
    stacks, _ = build_cache(desk_dataset[:16], DESK_TRAIN)
    img, d1, d2 = batch_inputs(stacks, DESK_TRAIN.patch_size)
    with torch.no_grad():
        fused = model.fuse(img, d1, d2)
        perm = torch.randperm(fused.shape[1], generator=torch.Generator().manual_seed(0))
        delta = (model.f3(fused) - model.f3(fused[:, perm])).abs().max().item()
    print(f"supplement: channel shuffle changes scores by up to {delta:.3g} (>1e-6)")
    assert delta > 1e-6


def test_8_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli_main(["synth", "--scenes", "6", "--severities", "3", "--size", "48",
                         "--seed", "11", "--out", str(out)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same_data = files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()) and all(
        (a / f).read_bytes() == (b / f).read_bytes() for f in files)
    tiny = ["--set", "embed_dim=8", "--set", "heads=2", "--set", "window=5", "--set", "blocks=1",
            "--resolution", "32", "--epochs", "3", "--seed", "4", "--set", "deterministic=true"]
    ckpts = []
    for run in ("r1", "r2"):
        assert cli_main(["train", "--data", str(a), "--out", str(tmp_path / run), *tiny]) == 0
        ckpts.append((tmp_path / run / "checkpoint.pigq").read_bytes())
    ok = same_data and ckpts[0] == ckpts[1]
    assert record("8", "determinism", ok,
                  f"synth x2: {len(files)} files byte-identical={same_data}; "
                  f"train x2 (single-threaded): checkpoints bit-identical={ckpts[0] == ckpts[1]}")


def test_9_overfit_sanity(desk_dataset):
    # augmentation off: a single image cannot be memorised through random rotations
    cfg = TrainConfig(**{**DESK_TRAIN.__dict__, "epochs": 500, "batch": 1, "hflip": False,
                         "vflip": False, "rotate_deg": 0.0})
    (_, rec), secs = timed(train, desk_dataset[7:8], cfg)
    losses = np.array([r["mean_loss"] for r in rec])
    ratio = losses[0] / max(losses[-1], 1e-30)
    hit = np.flatnonzero(losses <= 1e-3 * losses[0])
    first_hit = f"step {hit[0] + 1}" if hit.size else "never"
    assert record("9", "overfit sanity", len(rec) == 500 and ratio >= 1e3,
                  f"one sample, 500 steps: loss {losses[0]:.4g} -> {losses[-1]:.4g} (x{ratio:.0f}, need >=1e3); "
                  f"mean of last 50 steps {losses[-50:].mean():.3g}; first step <=1e-3*initial: {first_hit}; {secs:.0f}s")
