"""Command line entry point: ``gerunet {synth,train,eval,params,equicheck}``.

Exit codes: 0 ok, 1 equivariance check over tolerance, 2 usage, 3 config, 4 file format.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import SynthSpec, generate, load_dataset, save_dataset, write_pgm
from .equicheck import equicheck
from .errors import ConfigError, FormatError, GerUNetError, InvalidArgument
from .metrics import evaluate
from .models import ARCHS, ModelConfig, build_model, count_parameters
from .training import (TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint,
                       train)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_CONFIG, EXIT_FORMAT = 0, 1, 2, 3, 4

log = logging.getLogger("gerunet")


@dataclass
class RunConfig:
    arch: str = "ger-unet"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_data: str = "data/train"
    val_data: str | None = None
    output_dir: str = "runs/default"


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


def parse_run_config(d: dict) -> RunConfig:
    d = dict(d)
    model = _strict(ModelConfig, d.pop("model", {}), "model")
    tcfg = _strict(TrainConfig, d.pop("train", {}), "train")
    cfg = _strict(RunConfig, d, "config")
    cfg.model, cfg.train = model, tcfg
    if cfg.arch not in ARCHS:
        raise ConfigError(f"arch must be one of {ARCHS}")
    try:
        cfg.model.validate()
        cfg.train.validate()
    except InvalidArgument as e:
        raise ConfigError(str(e)) from e
    return cfg


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2))


def cmd_synth(args) -> int:
    spec_d = _read_json(args.spec) if args.spec else {}
    try:
        spec = SynthSpec.from_dict(spec_d)
        ds = generate(spec)
    except InvalidArgument as e:
        raise ConfigError(str(e)) from e
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.print_defaults:
        print(json.dumps(asdict(RunConfig()), indent=2))
        return EXIT_OK
    if not args.config:
        raise ConfigError("train needs --config (or --print-defaults)")
    cfg = parse_run_config(_read_json(args.config))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", asdict(cfg))
    data = load_dataset(cfg.train_data)
    val = load_dataset(cfg.val_data) if cfg.val_data else None
    model = build_model(cfg.arch, cfg.model)
    try:
        ckpt, history = train(model, data, cfg.train, val=val)
    except InvalidArgument as e:
        raise ConfigError(str(e)) from e
    save_checkpoint(ckpt, out / "checkpoint.geru")
    _write_json(out / "history.json", history)
    print(f"best val dice {ckpt.best_val_dice} at epoch {ckpt.epoch}; checkpoint {out / 'checkpoint.geru'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    ds = load_dataset(args.data)
    pred = model.predict(ds.images)
    report = evaluate(pred, ds.masks)
    _write_json(args.report, report)
    if args.dump_masks:
        d = Path(args.dump_masks)
        d.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(pred):
            write_pgm(d / f"pred_{i:05d}.pgm", (p > 0).astype(np.uint8))
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_params(args) -> int:
    totals = {}
    report = {}
    for arch in args.arch:
        model = build_model(arch, ModelConfig(in_channels=args.in_channels, num_classes=args.num_classes,
                                              base_channels=args.base_channels, skip_mode=args.skip_mode))
        total, table = count_parameters(model)
        totals[arch] = total
        report[arch] = {"total": total, "widths": model.widths, "layers": dict(table)}
        print(f"== {arch} (base_channels={args.base_channels}, widths={model.widths})")
        for name, n in table:
            print(f"  {name:40s} {n:10d}")
        print(f"  {'total':40s} {total:10d}")
    if "ger-unet" in totals and "r-unet" in totals:
        ratio = totals["ger-unet"] / totals["r-unet"]
        report["ratio_group_over_regular"] = ratio
        print(f"group/regular parameter ratio: {ratio:.4f}")
    if args.json:
        _write_json(args.json, report)
    return EXIT_OK


def cmd_equicheck(args) -> int:
    if args.checkpoint:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))
        if model.arch != args.arch:
            raise ConfigError(f"checkpoint holds {model.arch}, not {args.arch}")
    else:
        model = build_model(args.arch, ModelConfig(base_channels=args.base_channels, seed=args.seed,
                                                   skip_mode=args.skip_mode))
    res = equicheck(model, trials=args.trials, size=args.size, dtype=args.dtype, seed=args.seed)
    tol = args.tolerance if args.tolerance is not None else (1e-8 if args.dtype == "f64" else 1e-4)
    res["tolerance"] = tol
    res["passed"] = res["max_error"] <= tol
    for el, errs in res["elements"].items():
        layers = "  ".join(f"{k}={v:.2e}" for k, v in errs.items())
        print(f"g=({el})  {layers}")
    print(f"max error {res['max_error']:.3e} (tolerance {tol:g}): {'PASS' if res['passed'] else 'FAIL'}")
    if args.report:
        _write_json(args.report, res)
    return EXIT_OK if res["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gerunet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config")
    p.add_argument("--print-defaults", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--dump-masks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter accounting")
    p.add_argument("--arch", nargs="+", choices=ARCHS, required=True)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--in-channels", type=int, default=1)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--skip-mode", choices=("add", "concat"), default="add")
    p.add_argument("--json")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("equicheck", help="measure D4 equivariance error")
    p.add_argument("--arch", choices=ARCHS, default="ger-unet")
    p.add_argument("--checkpoint")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--skip-mode", choices=("add", "concat"), default="add")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_equicheck)
    return ap


def _thread_limit():
    n = os.environ.get("GER_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (GerUNetError, OSError) as e:
        if isinstance(e, FileNotFoundError):
            print(f"format error: {e}", file=sys.stderr)
            return EXIT_FORMAT
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
