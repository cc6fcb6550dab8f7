"""Command-line entry point: ``lightunetr <command> [flags]``.

Every command resolves one run configuration (JSON file plus flag overrides)
and writes it as ``config.json`` next to its outputs, so the run can be
repeated from that file alone.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from typing import List, Optional

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("analyze", "synth", "train", "eval", "infer", "gradcheck", "agr-preview", "smc-preview")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


DEFAULT_RUN = {
    "seed": 0,
    "model": {},
    "train": {},
    "data": {"count": 50, "extent": [32, 32, 32], "labeled": 4, "test_count": 10, "spacing": [1.0, 1.0, 1.0]},
    "infer": {"window": None, "stride": None},
}
SECTION_KEYS = {
    "data": {"count", "extent", "labeled", "test_count", "spacing"},
    "infer": {"window", "stride"},
}


# config resolution

def _triple(text: str, flag: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag} expects z,y,x integers, got {text!r}") from None
    if len(values) == 1:
        values *= 3
    if len(values) != 3 or min(values) < 1:
        raise UsageError(f"{flag} expects three positive integers, got {text!r}")
    return values


def load_run_config(path: Optional[str]) -> dict:
    run = copy.deepcopy(DEFAULT_RUN)
    if path is None:
        return run
    with open(path) as f:
        try:
            given = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(given, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(given) - set(DEFAULT_RUN)
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    for key, value in given.items():
        if key in SECTION_KEYS:
            bad = set(value) - SECTION_KEYS[key]
            if bad:
                raise UsageError(f"{path}: unknown {key} keys {sorted(bad)}")
            run[key].update(value)
        else:
            run[key] = value
    return run


def resolve(args) -> dict:
    """Merge file config and flags, then validate every section."""
    from lightunetr.cse import TrainConfig
    from lightunetr.model import ModelConfig

    run = load_run_config(args.config)
    if args.seed is not None:
        run["seed"] = args.seed
    if args.labeled is not None:
        run["data"]["labeled"] = args.labeled
    if args.window is not None:
        run["infer"]["window"] = _triple(args.window, "--window")
    if args.stride is not None:
        run["infer"]["stride"] = _triple(args.stride, "--stride")

    model = ModelConfig.from_dict(run["model"])
    train = dict(run["train"])
    train["seed"] = run["seed"]
    train.setdefault("crop_size", list(model.crop_size))
    if args.iters is not None:
        train["iterations"] = args.iters
        # keep the schedule legal when shortening a run below its warmup
        if train.get("warmup", TrainConfig.warmup) > args.iters:
            train["warmup"] = args.iters // 20
    train_cfg = TrainConfig.from_dict(train)
    run["model"] = model.to_dict()
    run["train"] = train_cfg.to_dict()
    window = run["infer"]["window"] or list(model.crop_size)
    stride = run["infer"]["stride"] or [max(1, w // 2) for w in window]
    run["infer"] = {"window": list(window), "stride": list(stride)}
    return run


def _configs(run):
    from lightunetr.cse import TrainConfig
    from lightunetr.model import ModelConfig

    return ModelConfig.from_dict(run["model"]), TrainConfig.from_dict(run["train"])


def _require(args, name: str):
    value = getattr(args, name)
    if value is None:
        raise UsageError(f"{args.command} requires --{name.replace('_', '-')}")
    return value


def _write_config(out: str, run: dict) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(run, f, indent=1, sort_keys=True)
        f.write("\n")


def _split(run, root):
    from lightunetr.data import read_manifest, split_dataset

    ids = read_manifest(root)["ids"]
    d = run["data"]
    return split_dataset(ids, d["labeled"], run["seed"], test_count=d["test_count"])


def _model(run, args):
    from lightunetr.checkpoint import load_checkpoint
    from lightunetr.model import build_model

    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    return build_model(_configs(run)[0], run["seed"])


# commands

def cmd_analyze(args, run) -> int:
    from lightunetr.analysis import cost_report
    from lightunetr.model import build_model

    model = build_model(_configs(run)[0], run["seed"])
    shape = _triple(args.input_shape, "--input-shape") if args.input_shape else list(model.config.crop_size)
    report = cost_report(model, tuple(shape))
    first = args.flops_convention
    for conv in (first, "mac1" if first == "mac2" else "mac2"):
        print(report.summary(conv))
    if args.out:
        _write_config(args.out, run)
        with open(os.path.join(args.out, "cost.tsv"), "w") as f:
            f.write(report.to_tsv())
    return EXIT_OK


def cmd_synth(args, run) -> int:
    from lightunetr.data import split_dataset, synth_generate, write_dataset

    out = _require(args, "out")
    d = run["data"]
    samples = synth_generate(d["count"], tuple(d["extent"]), run["seed"])
    ids = write_dataset(out, samples, tuple(d["spacing"]), meta={"seed": run["seed"], "extent": d["extent"]})
    split = split_dataset(ids, d["labeled"], run["seed"], test_count=d["test_count"])
    with open(os.path.join(out, "split.json"), "w") as f:
        json.dump(split.to_dict(), f, indent=1)
    _write_config(out, run)
    print(f"wrote {len(ids)} cases to {out} (labeled={len(split.labeled)} unlabeled={len(split.unlabeled)} "
          f"test={len(split.test)})")
    return EXIT_OK


def cmd_train(args, run) -> int:
    from lightunetr.cse import Trainer, load_train_data
    from lightunetr.model import build_model

    out, root = _require(args, "out"), _require(args, "data")
    model_cfg, train_cfg = _configs(run)
    split = _split(run, root)
    data = load_train_data(root, split.labeled, split.unlabeled)
    _write_config(out, run)
    with open(os.path.join(out, "split.json"), "w") as f:
        json.dump(split.to_dict(), f, indent=1)
    trainer = Trainer(build_model(model_cfg, run["seed"]), data, train_cfg)
    with open(os.path.join(out, "train.log"), "w") as log:
        try:
            trainer.run(log=log, checkpoint_dir=out)
        except FloatingPointError as e:
            raise NumericFailure(str(e)) from None
    last = trainer.trace[-1]
    print(last.log_line())
    print(f"checkpoint {os.path.join(out, 'final')}")
    return EXIT_OK


def cmd_eval(args, run) -> int:
    from lightunetr.data import load_case
    from lightunetr.infer import sliding_window_infer
    from lightunetr.metrics import evaluate

    root = _require(args, "data")
    _require(args, "checkpoint")
    model = _model(run, args)
    split = _split(run, root)
    if not split.test:
        raise UsageError("split has no test cases (data.test_count is 0)")
    cases, spacing = [], None
    for sid in split.test:
        img, lbl = load_case(root, sid)
        _, seg = sliding_window_infer(model, img.data, run["infer"]["window"], run["infer"]["stride"])
        cases.append((sid, seg, np.rint(lbl.data[0]).astype(np.int64)))
        spacing = lbl.spacing
    report = evaluate(cases, spacing)
    print(report.summary())
    if args.out:
        _write_config(args.out, run)
        with open(os.path.join(args.out, "metrics.tsv"), "w") as f:
            f.write(report.to_tsv())
    return EXIT_OK


def cmd_infer(args, run) -> int:
    from lightunetr.data import Volume, load_volume, save_volume
    from lightunetr.infer import sliding_window_infer

    src, out = _require(args, "input"), _require(args, "out")
    _require(args, "checkpoint")
    model = _model(run, args)
    vol = load_volume(src)
    _, seg = sliding_window_infer(model, vol.data, run["infer"]["window"], run["infer"]["stride"])
    _write_config(out, run)
    name = os.path.basename(src)
    for ext in (".hdr", ".raw"):
        name = name[: -len(ext)] if name.endswith(ext) else name
    target = os.path.join(out, name + "_seg")
    save_volume(Volume(seg.astype(np.float32), vol.spacing), target)
    print(f"wrote {target}.hdr foreground={int(seg.sum())}")
    return EXIT_OK


def cmd_gradcheck(args, run) -> int:
    from lightunetr.gradsuite import run_suite

    results = run_suite(seed=run["seed"])
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.ok]
    if args.out:
        _write_config(args.out, run)
        with open(os.path.join(args.out, "gradcheck.txt"), "w") as f:
            f.write("\n".join(r.line() for r in results) + "\n")
    if failed:
        raise NumericFailure(f"{len(failed)} gradient check(s) over tolerance: {', '.join(failed)}")
    return EXIT_OK


def _preview_inputs(args, run):
    """Weakly augmented crops of the first labeled and first unlabeled case of the split."""
    from lightunetr.cse import make_streams, weak_augment
    from lightunetr.cse.train import load_train_data

    root = _require(args, "data")
    split = _split(run, root)
    if not split.unlabeled:
        raise UsageError("split has no unlabeled cases")
    data = load_train_data(root, split.labeled[:1], split.unlabeled[:1])
    _, train_cfg = _configs(run)
    streams = make_streams(run["seed"])
    x_l, y_l, _ = weak_augment(data.images[0], data.labels[0], train_cfg.crop_size, streams["labeled_crop"])
    x_u, _, _ = weak_augment(data.unlabeled[0], None, train_cfg.crop_size, streams["unlabeled_crop"])
    return x_l, y_l, x_u, train_cfg, streams


def _save(out, name, array, spacing=(1.0, 1.0, 1.0)):
    from lightunetr.data import Volume, save_volume

    save_volume(Volume(np.asarray(array, dtype=np.float32), spacing), os.path.join(out, name))


def cmd_agr_preview(args, run) -> int:
    from lightunetr.cse import agr_mix, attention_region_probs, pseudo_label_from_probs, sample_region
    from lightunetr.cse import segmentation_probs
    from lightunetr.tensor import Tensor, no_grad

    out = _require(args, "out")
    x_l, y_l, x_u, cfg, streams = _preview_inputs(args, run)
    model = _model(run, args)
    model.eval()
    with no_grad():
        res = model(Tensor(x_u[None].astype(np.float32)))
    y_u = pseudo_label_from_probs(segmentation_probs(res.logits).data, cfg.tau)[0]
    attention = res.attention_map.data[0, 0]
    grid = attention_region_probs(attention, cfg.alpha, cfg.region_mode)
    region = sample_region(grid, streams["agr"])
    mixed_x, mixed_y = agr_mix(x_u, y_u, x_l, y_l, region)
    _write_config(out, run)
    _save(out, "mixed_image", mixed_x)
    _save(out, "mixed_label", mixed_y)
    _save(out, "attention", attention)
    _save(out, "region_probs", grid.probs)
    with open(os.path.join(out, "region.json"), "w") as f:
        json.dump({"patch": grid.patch, "start": list(region.start), "size": list(region.size),
                   "starts": [list(s) for s in grid.starts]}, f, indent=1)
    print(f"region start={region.start} size={region.size} p={grid.probs.max():.4f}(max)")
    return EXIT_OK


def cmd_smc_preview(args, run) -> int:
    from lightunetr.cse import apply_mask, generate_smooth_mask, strong_augment

    out = _require(args, "out")
    _, _, x_u, cfg, streams = _preview_inputs(args, run)
    strong = strong_augment(x_u, streams["strong"], cfg.gamma_range)
    mask = generate_smooth_mask(x_u.shape[-3:], cfg.mask_side, cfg.mask_ratio, streams["smc"], dtype=x_u.dtype)
    _write_config(out, run)
    _save(out, "strong", strong)
    _save(out, "masked", apply_mask(strong, mask.mask))
    _save(out, "mask", mask.mask)
    _save(out, "coarse_mask", mask.coarse)
    print(f"coarse={mask.coarse.shape} zeros={mask.zero_count} mean={float(mask.mask.mean()):.4f}")
    return EXIT_OK


HANDLERS = {
    "analyze": cmd_analyze, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
    "gradcheck": cmd_gradcheck, "agr-preview": cmd_agr_preview, "smc-preview": cmd_smc_preview,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--input-shape", help="z,y,x for analyze")
    common.add_argument("--window", help="sliding-window size z,y,x")
    common.add_argument("--stride", help="sliding-window stride z,y,x")
    common.add_argument("--flops-convention", choices=("mac1", "mac2"), default="mac2")
    common.add_argument("--labeled", type=int, help="number of labeled training cases")
    common.add_argument("--iters", type=int, help="training iterations")
    common.add_argument("--data", help="dataset directory written by synth")
    common.add_argument("--checkpoint", help="checkpoint prefix, e.g. run/final")
    common.add_argument("--input", help="volume to segment (infer)")
    parser = _Parser(prog="lightunetr", description="Light-UNETR with CSE semi-supervised training.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    from lightunetr.checkpoint import CheckpointError
    from lightunetr.data import VolumeFormatError

    try:
        args = build_parser().parse_args(argv)
        run = resolve(args)
        return HANDLERS[args.command](args, run)
    except UsageError as e:
        return _fail(EXIT_USAGE, "usage", e)
    except (NumericFailure, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, "numeric", e)
    except (OSError, VolumeFormatError, CheckpointError) as e:
        return _fail(EXIT_IO, "io", e)
    except ValueError as e:
        return _fail(EXIT_USAGE, "usage", e)


if __name__ == "__main__":
    sys.exit(main())
