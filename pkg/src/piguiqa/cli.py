"""``piguiqa`` command-line entry point."""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .benchmarks import build_dataset, manifest_samples, write_manifest
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, parse_set, runtime_fingerprint, train_config
from .core import read_image, write_image, write_map16
from .distortion import d1_map, d2_map
from .errors import InvalidArgument, NotFound, PiguiqaError, VerificationFailed
from .evaluation import evaluate
from .imaging import estimate, estimate_paths
from .perception import prepare
from .plotting import loss_curve, save_feature_map, scatter_with_fit
from .training import Sample, cached_fit_and_predict, load_sample, predict_stacks, train

log = logging.getLogger("piguiqa")

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


class UsageError(PiguiqaError):
    code = "usage-error"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for verification failures here
    def error(self, message):
        raise UsageError(message)


# flag name -> config key, for the convenience flags that shadow config entries
SHORTCUTS = {"variant": "variant", "epochs": "epochs", "repeats": "repeats", "estimator": "estimator",
             "scenes": "scenes", "severities": "severities", "size": "size", "resolution": "resolution"}


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    p.add_argument("--config", default=None, help="JSON or TOML config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--variant", help="full, no_f1, no_f2 or no_both")
    p.add_argument("--resolution", type=int, help="square pipeline input size")
    p.add_argument("--estimator", help="imaging estimator id")


def build_parser():
    parser = _Parser(prog="piguiqa", description="Physics-informed underwater image quality toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic degraded dataset with pseudo-MOS")
    _common(p)
    p.add_argument("--scenes", type=int)
    p.add_argument("--severities", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("estimate", help="estimate T and B maps for images")
    _common(p)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("dump-distortion", help="write per-patch d1/d2 grids as CSV")
    _common(p)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("dump-features", help="write f1/f2 feature maps as PNG")
    _common(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("score", help="predict quality scores")
    _common(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("train", help="train a model on a manifest or CSV dataset")
    _common(p)
    p.add_argument("--data", required=True, help="manifest .jsonl, CSV (path,mos) or dataset directory")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="repeated split evaluation or cross-dataset evaluation")
    _common(p)
    p.add_argument("--data", help="single dataset: repeated random splits")
    p.add_argument("--train-data", help="cross-dataset mode: training set")
    p.add_argument("--test-data", help="cross-dataset mode: test set")
    p.add_argument("--epochs", type=int)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("verify", help="run the property suite")
    _common(p)
    p.add_argument("--check", action="append", default=None, help="run only this check (repeatable)")
    return parser


def effective_config(args):
    overrides = parse_set(args.set)
    for flag, key in SHORTCUTS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out, cfg, command):
    (out / "config.json").write_text(json.dumps({"command": command, "config": cfg},
                                                sort_keys=True, indent=1) + "\n")


def _apply_threads():
    raw = os.environ.get("PIGUIQA_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"PIGUIQA_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidArgument("PIGUIQA_THREADS must be >= 0")
    if n > 0:
        torch.set_num_threads(n)


def load_dataset(path, estimator="prior"):
    """Samples from a manifest (.jsonl), a ``path,mos`` CSV, or a directory holding manifest.jsonl."""
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.jsonl"
    if not p.exists():
        raise NotFound(f"dataset not found: {p}")
    if p.suffix == ".jsonl":
        return manifest_samples(p, estimator)
    samples = []
    with open(p, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                mos = float(row[1])
            except (IndexError, ValueError):
                if not samples:  # header line
                    continue
                raise InvalidArgument(f"{p}: bad row {row!r}") from None
            img = Path(row[0])
            samples.append(Sample(str(img if img.is_absolute() else p.parent / img), mos, estimator))
    if not samples:
        raise InvalidArgument(f"{p}: no samples")
    return samples


def _stem(path):
    return Path(path).with_suffix("").name


def cmd_synth(args, cfg):
    out = _out_dir(args, "synth_out")
    entries = build_dataset(cfg["scenes"], cfg["severities"], cfg["seed"], out, size=cfg["size"],
                            weights=tuple(cfg["mos_weights"]), patch_size=cfg["patch_size"],
                            include_control=cfg["include_control"])
    write_manifest(out / "manifest.jsonl", entries, cfg)
    print(out / "manifest.jsonl")
    return EXIT_OK


def _read(path):
    if not Path(path).exists():
        raise NotFound(f"image not found: {path}")
    return read_image(path)


def cmd_estimate(args, cfg):
    out = _out_dir(args, "estimates")
    for path in args.images:
        img = _read(path)
        est = estimate(img, cfg["estimator"], cfg["t_floor"])
        t_path, b_path = estimate_paths(out / Path(path).name)
        extra = {"estimator": est.method, "degenerate": est.degenerate, "config": cfg}
        write_map16(t_path, est.T, extra)
        write_map16(b_path, est.B, extra)
        restored = out / f"{_stem(path)}.restored.png"
        write_image(restored, est.restored)
        print(json.dumps({"image": str(path), "T": str(t_path), "B": str(b_path),
                          "restored": str(restored), "degenerate": est.degenerate,
                          "residual": est.residual(img)}))
    _write_config(out, cfg, "estimate")
    return EXIT_OK


def _write_grid(path, grid):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([f"{v:.6f}" for v in row])


def cmd_dump_distortion(args, cfg):
    out = _out_dir(args, "distortion")
    n = cfg["patch_size"]
    for path in args.images:
        x = prepare(_read(path), cfg["resolution"])
        est = estimate(x, cfg["estimator"], cfg["t_floor"])
        for name, grid in (("d1", d1_map(est.T, n)), ("d2", d2_map(est.B, n))):
            target = out / f"{_stem(path)}.{name}.csv"
            _write_grid(target, grid)
            print(target)
    _write_config(out, cfg, "dump-distortion")
    return EXIT_OK


def _load_model(args, cfg):
    params = load_checkpoint(args.checkpoint, expected_fingerprint=runtime_fingerprint(cfg))
    return params, params.build_model()


def cmd_dump_features(args, cfg):
    out = _out_dir(args, "features")
    params, model = _load_model(args, cfg)
    for path in args.images:
        stack = load_sample(Sample(path, 0.0, cfg["estimator"]), params.resolution, cfg["t_floor"])
        img = stack[None, 0:3]
        for name, block in (("f1", model.f1), ("f2", model.f2)):
            if block is None:
                continue
            with torch.no_grad():
                fmap = block(img)[0].permute(1, 2, 0).double().numpy()
            if fmap.shape[2] != 3:
                # one grayscale tile per channel, side by side
                fmap = np.concatenate([fmap[:, :, i:i + 1] for i in range(fmap.shape[2])], axis=1)
            target = out / f"{_stem(path)}.{name}.png"
            save_feature_map(fmap, target)
            print(target)
    _write_config(out, cfg, "dump-features")
    return EXIT_OK


def cmd_score(args, cfg):
    params, model = _load_model(args, cfg)
    for path in args.images:
        stack = load_sample(Sample(path, 0.0, cfg["estimator"]), params.resolution, cfg["t_floor"])
        score = predict_stacks(model, stack[None], params.patch_size)[0]
        print(f"{path}\t{score:.6f}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _out_dir(args, "run")
    dataset = load_dataset(args.data, cfg["estimator"])
    tc = train_config(cfg)
    _write_config(out, cfg, "train")
    params, records = train(dataset, tc, log_path=out / "train_log.jsonl",
                            progress=lambda r: log.info("epoch %d loss %.6f", r["epoch"], r["mean_loss"]))
    params.config = dict(cfg)
    save_checkpoint(params, out / "checkpoint.pigq")
    loss_curve(records, out / "loss_curve.png", cfg)
    print(json.dumps({"checkpoint": str(out / "checkpoint.pigq"), "fingerprint": params.fingerprint,
                      "final_loss": records[-1]["mean_loss"] if records else None}))
    return EXIT_OK


def cmd_eval(args, cfg):
    cross = args.train_data or args.test_data
    if cross and not (args.train_data and args.test_data):
        raise UsageError("cross-dataset mode needs both --train-data and --test-data")
    if bool(cross) == bool(args.data):
        raise UsageError("give either --data or --train-data/--test-data")
    out = _out_dir(args, "eval")
    tc = train_config(cfg)
    if cross:
        dataset = load_dataset(args.train_data, cfg["estimator"])
        test = load_dataset(args.test_data, cfg["estimator"])
    else:
        dataset, test = load_dataset(args.data, cfg["estimator"]), None
    fit = cached_fit_and_predict(dataset, tc, test)
    seeds = [cfg["seed"] + r for r in range(cfg["repeats"])]
    report = evaluate(dataset, fit, repeats=cfg["repeats"], split=cfg["split"], seeds=seeds,
                      test_dataset=test, config=cfg,
                      on_repeat=lambda r, m: log.info("repeat %d srcc %.4f plcc %.4f", r, m["srcc"], m["plcc"]))
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "per_repeat.csv").write_text(report.per_repeat_csv())
    pairs = np.array(report.pairs)
    scatter_with_fit(pairs[:, 0], pairs[:, 1], report.fivepl, out / "scatter.png",
                     title=f"{cfg['variant']}  PLCC {report.plcc:.3f}  SRCC {report.srcc:.3f}", config=cfg)
    print(json.dumps({k: getattr(report, k) for k in ("plcc", "srcc", "krcc", "rmse", "repeats")}))
    return EXIT_OK


def cmd_verify(args, cfg):
    from .verify import CHECKS, run_all

    names = args.check
    unknown = sorted(set(names or ()) - set(CHECKS))
    if unknown:
        raise UsageError(f"unknown checks: {', '.join(unknown)}")
    summary = run_all(names)
    text = json.dumps(summary, indent=1, sort_keys=True)
    print(text)
    if args.out:
        out = _out_dir(args, "verify")
        (out / "verify.json").write_text(text + "\n")
    failed = [k for k, v in summary.items() if v["status"] != "pass"]
    if failed:
        raise VerificationFailed(f"failed checks: {', '.join(failed)}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "dump-distortion": cmd_dump_distortion,
            "dump-features": cmd_dump_features, "score": cmd_score, "train": cmd_train,
            "eval": cmd_eval, "verify": cmd_verify}


def _oneline(exc):
    return " ".join(str(exc).split()) or type(exc).__name__


def cli_main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _apply_threads()
        cfg = effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except VerificationFailed as exc:
        print(f"{exc.code}: {_oneline(exc)}", file=sys.stderr)
        return EXIT_VERIFY
    except PiguiqaError as exc:
        print(f"{exc.code}: {_oneline(exc)}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io-error: {_oneline(exc)}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("interrupted: keyboard interrupt", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
