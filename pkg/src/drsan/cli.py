"""Command line entry point: ``drsan {train,infer,eval,count,analyze}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, NetworkConfig, config_from_json, preset

log = logging.getLogger("drsan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: {message}")


def _hr_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drsan", description="Dynamic residual self-attention super-resolution.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a directory of HR images")
    t.add_argument("--config", required=True, help="JSON with network fields (or preset) and an optional 'train' section")
    t.add_argument("--data", required=True, help="directory of HR training images")
    t.add_argument("--out", required=True, help="output directory for checkpoints, train_log.csv and train_times.csv")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--patch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")

    i = sub.add_parser("infer", help="super-resolve one image")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)

    e = sub.add_parser("eval", help="PSNR/SSIM on the Y channel over a directory of HR images")
    e.add_argument("--model", required=True, help="checkpoint path, or 'bicubic' for the interpolation baseline")
    e.add_argument("--dataset", required=True)
    e.add_argument("--scale", type=int, required=True)
    e.add_argument("--crop", type=int)
    e.add_argument("--csv", help="write per-image rows here")

    c = sub.add_parser("count", help="parameter and Multi-Add counts")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--config")
    c.add_argument("--scale", type=int, required=True)
    c.add_argument("--hr-size", type=_hr_size, default=(1280, 720), help="HR WIDTHxHEIGHT (default 1280x720)")

    a = sub.add_parser("analyze", help="coefficient and attention inspection")
    asub = a.add_subparsers(dest="analysis", parser_class=_Parser)
    d = asub.add_parser("dra", help="export residual coefficients per image or patch to CSV")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True, help="image file or directory")
    d.add_argument("--patch", type=int, help="split each input image into non-overlapping square patches of this size")
    d.add_argument("--out", required=True)
    h = asub.add_parser("hist", help="attention histograms per residual block")
    h.add_argument("--model", required=True)
    h.add_argument("--input", required=True)
    h.add_argument("--bins", type=int, default=20)
    h.add_argument("--out", required=True)
    m = asub.add_parser("map", help="channel-averaged attention map of one block as PNG")
    m.add_argument("--model", required=True)
    m.add_argument("--input", required=True)
    m.add_argument("--block", type=int, required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--raw-csv")
    x = asub.add_parser("transplant", help="super-resolve a target with a donor's coefficients")
    x.add_argument("--model", required=True)
    x.add_argument("--target", required=True)
    x.add_argument("--donor", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--diff", required=True)
    return p


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DRSAN_LOG", "quiet").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _cmd_count(args) -> None:
    from .model import count_multi_adds, count_params

    if args.preset:
        cfg = preset(args.preset, scale=args.scale)
    else:
        with open(args.config, encoding="utf-8") as f:
            cfg = config_from_json(json.load(f)).replace(scale=args.scale)
    w, h = args.hr_size
    print(f"params={count_params(cfg)} multi_adds={count_multi_adds(cfg, h, w)}")


def _cmd_train(args) -> None:
    from .checkpoint import load_checkpoint
    from .data import Dataset
    from .model import build_network
    from .training import AdamState, TrainConfig, train

    with open(args.config, encoding="utf-8") as f:
        raw = json.load(f)
    net_cfg = config_from_json(raw)
    train_raw = dict(raw.get("train", {})) if isinstance(raw, dict) else {}
    overrides = {"iterations": args.iters, "seed": args.seed, "workers": args.workers,
                 "batch_size": args.batch_size, "patch_size": args.patch_size, "lr": args.lr}
    train_raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(train_raw)
    dataset = Dataset.from_dir(args.data, net_cfg.scale)
    start, state = 0, None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.model.config != net_cfg:
            raise ConfigError("resume checkpoint config differs from --config")
        model, start = ckpt.model, ckpt.iteration
        state = AdamState.from_optimizer_state(ckpt.optimizer) if ckpt.optimizer else None
    else:
        model = build_network(net_cfg, seed=cfg.seed)
    result = train(model, dataset, cfg, out_dir=args.out, state=state, start_iteration=start)
    last = result.losses[-1] if result.losses else float("nan")
    print(f"trained iterations={result.iteration} final_loss={last:.6f} checkpoint={Path(args.out) / 'final.drsan'}")


def _cmd_infer(args) -> None:
    from .checkpoint import load_model
    from .imaging import load_image, save_image

    model = load_model(args.model)
    img = load_image(args.input)
    gray = img.shape[2] == 1
    if gray:
        img = np.repeat(img, 3, axis=2)
    sr = model.upscale(img)
    save_image(sr.mean(axis=2, keepdims=True) if gray else sr, args.output)
    print(f"wrote {args.output} ({sr.shape[1]}x{sr.shape[0]})")


def _cmd_eval(args) -> None:
    from .evaluation import evaluate
    from .imaging import bicubic_resize

    if args.model == "bicubic":
        s = args.scale
        model = lambda lr: bicubic_resize(lr, lr.shape[0] * s, lr.shape[1] * s)  # noqa: E731
        model_id = "bicubic"
    else:
        from .checkpoint import load_model

        model = load_model(args.model)
        if model.config.scale != args.scale:
            raise ConfigError(f"model scale {model.config.scale} != --scale {args.scale}")
        model_id = Path(args.model).name
    report = evaluate(model, args.dataset, args.scale, args.crop, model_id=model_id)
    if args.csv:
        report.write_csv(args.csv)
    for name, p, s in report.rows:
        log.info("%s psnr=%.4f ssim=%.6f", name, p, s)
    print(report.summary())


def _inputs(path) -> list[Path]:
    from .data import list_images

    p = Path(path)
    return list_images(p) if p.is_dir() else [p]


def _load_rgb(path) -> np.ndarray:
    from .imaging import load_image

    img = load_image(path)
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def _cmd_analyze(args) -> None:
    from . import analysis
    from .checkpoint import load_model
    from .imaging import save_image

    if args.analysis is None:
        raise UsageError("analyze: choose one of dra, hist, map, transplant")
    model = load_model(args.model)
    if args.analysis == "dra":
        if not model.config.has_drm:
            raise ConfigError("model has no dynamic residual module (connection_mode != dra)")
        traces = []
        for path in _inputs(args.input):
            img = _load_rgb(path)
            items = analysis.grid_patches(img, args.patch) if args.patch else [("", img)]
            for pid, patch in items:
                name = f"{path.name}:{pid}" if pid else path.name
                traces.append(analysis.extract_trace(model, patch, source=name))
        analysis.write_dra_csv(traces, args.out)
        print(f"wrote {args.out} ({len(traces)} inputs)")
    elif args.analysis == "hist":
        trace = analysis.extract_trace(model, _load_rgb(args.input), source=str(args.input))
        analysis.write_hist_csv(trace, args.out, bins=args.bins)
        print(f"wrote {args.out}")
    elif args.analysis == "map":
        trace = analysis.extract_trace(model, _load_rgb(args.input))
        norm, raw = analysis.attention_spatial_map(trace, args.block)
        save_image(norm[:, :, None], args.out)
        if args.raw_csv:
            np.savetxt(args.raw_csv, raw, delimiter=",", fmt="%.9g")
        print(f"wrote {args.out}")
    else:
        sr, diff = analysis.transplant_dra(model, _load_rgb(args.target), _load_rgb(args.donor))
        save_image(sr, args.out)
        peak = float(diff.max())
        save_image(diff / peak if peak > 0 else diff, args.diff)
        print(f"wrote {args.out} {args.diff} max_abs_diff={peak:.6g}")


COMMANDS = {"count": _cmd_count, "train": _cmd_train, "infer": _cmd_infer,
            "eval": _cmd_eval, "analyze": _cmd_analyze}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help().rstrip())
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # every runtime failure becomes one greppable line
        log.debug("failure", exc_info=True)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
