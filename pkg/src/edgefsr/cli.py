"""``edgefsr`` command line: train / infer / edges / eval / generate-pairs.

Exit codes: 0 success, 1 validation or configuration error, 2 training
aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import torch

from .checkpoint import checkpoint_config, load_checkpoint, read_manifest
from .config import dump_config, load_config
from .core import CannyParams, DoGParams, RunConfig, to_internal
from .data import load_corpus, load_paired, read_image, scan_corpus, write_image
from .edges import canny, dog
from .errors import ConfigError, FSRError, NonFiniteLossError, ValidationError
from .metrics import evaluate_corpus
from .networks import build_srnet

log = logging.getLogger("edgefsr")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgefsr", description="Teacher-student face super-resolution with edge priors.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run training stage 1 (DeNet) or 2 (TNet/SNet/DSNet)")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--config", help="TOML config file (defaults if omitted)")
    t.add_argument("--out", help="run directory (default: runs/train-<timestamp>)")
    t.add_argument("--denet", help="stage-1 checkpoint directory (stage 2; overrides train.denet_checkpoint)")

    i = sub.add_parser("infer", help="super-resolve one image with a trained SR network")
    i.add_argument("--net", choices=("tnet", "snet"), required=True)
    i.add_argument("--ckpt", required=True, help="stage-2 checkpoint directory")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--all-iterations", action="store_true", help="write every iteration as <out>_t<k>.png")

    e = sub.add_parser("edges", help="write a Canny or DoG edge map of an image")
    e.add_argument("--method", choices=("canny", "dog"), required=True)
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--sigma", type=float, default=CannyParams.sigma)
    e.add_argument("--low", type=float, default=CannyParams.low)
    e.add_argument("--high", type=float, default=CannyParams.high)
    e.add_argument("--absolute", action="store_true", help="canny thresholds are absolute magnitudes")
    e.add_argument("--sigma1", type=float, default=DoGParams.sigma1)
    e.add_argument("--sigma2", type=float, default=DoGParams.sigma2)

    v = sub.add_parser("eval", help="PSNR/SSIM table for SR images against references")
    v.add_argument("--sr", required=True)
    v.add_argument("--ref", required=True)
    v.add_argument("--out", default="table.csv")

    g = sub.add_parser("generate-pairs", help="write DeNet (LR, HR) pairs for an HR corpus")
    g.add_argument("--ckpt", required=True, help="stage-1 checkpoint directory")
    g.add_argument("--hr", required=True, help="HR image directory")
    g.add_argument("--out", required=True)
    return p


def resolve_config(path) -> RunConfig:
    cfg = load_config(path)
    seed = os.environ.get("FSR_SEED")
    if seed is not None:
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError(f"FSR_SEED must be an integer, got {seed!r}") from None
        cfg = dataclasses.replace(cfg, train=cfg.train.with_(seed=seed))
    return cfg


def _run_dir(out, command: str) -> Path:
    if out:
        return Path(out)
    return Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"


def _corpus(root: str, key: str, role: str, size: int) -> torch.Tensor:
    if not root:
        raise ConfigError(f"data.{key} is not set")
    return load_corpus(scan_corpus(root, role, size), size)


def cmd_train(args) -> int:
    from .train import Stage1Trainer, Stage2Trainer, configure_determinism, generate_pseudo_pairs

    cfg = resolve_config(args.config)
    out = _run_dir(args.out, "train")
    log.info("resolved config:\n%s", dump_config(cfg))
    configure_determinism()
    d = cfg.data
    if args.stage == 1:
        hr = _corpus(d.hr_root, "hr_root", "hr", d.hr_size)
        real = _corpus(d.lr_root, "lr_root", "real_lr", cfg.lr_size)
        trainer = Stage1Trainer(cfg, hr, real)
    else:
        real = _corpus(d.lr_root, "lr_root", "real_lr", cfg.lr_size)
        if d.paired_root:
            paired = load_paired(d.paired_root, d.hr_size, cfg.train.scale_factor)
        else:
            ckpt = args.denet or cfg.train.denet_checkpoint
            if not ckpt:
                raise ConfigError("stage 2 needs a DeNet checkpoint (--denet or train.denet_checkpoint) "
                                  "or data.paired_root")
            if not Path(ckpt).is_dir():
                raise ConfigError(f"DeNet checkpoint not found: {ckpt}")
            hr = _corpus(d.hr_root, "hr_root", "hr", d.hr_size)
            paired = generate_pseudo_pairs(ckpt, hr, cfg)
        trainer = Stage2Trainer(cfg, paired, real)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    final = trainer.fit(out)
    log.info("stage %d finished after %d steps; checkpoint at %s", args.stage, trainer.step, final)
    return EXIT_OK


def _load_image_internal(path) -> torch.Tensor:
    if not Path(path).is_file():
        raise ValidationError(f"input image not found: {path}")
    return to_internal(read_image(path).float())[None]


def cmd_infer(args) -> int:
    ckpt = Path(args.ckpt)
    cfg = checkpoint_config(ckpt)
    net = build_srnet(cfg)
    load_checkpoint(ckpt, {args.net: net}, cfg)
    net.eval()
    lr = _load_image_internal(args.input)
    with torch.no_grad():
        outputs = net(lr)
    out = Path(args.out)
    if args.all_iterations:
        for t, sr in enumerate(outputs, 1):
            write_image(out.with_name(f"{out.stem}_t{t}{out.suffix or '.png'}"), sr[0])
    else:
        write_image(out, outputs[-1][0])
    return EXIT_OK


def cmd_edges(args) -> int:
    if not Path(args.input).is_file():
        raise ValidationError(f"input image not found: {args.input}")
    x = read_image(args.input).double()[None]
    if args.method == "canny":
        params = CannyParams(args.sigma, args.low, args.high, relative=not args.absolute)
        m = canny(x, params, to_gray=True).data * 255.0
    else:
        m = dog(x, DoGParams(args.sigma1, args.sigma2), to_gray=True).data
        peak = m.abs().max()
        m = 127.5 + 127.5 * (m / peak if peak > 0 else m)
    write_image(args.out, m[0], internal=False)
    return EXIT_OK


def cmd_eval(args) -> int:
    for d in (args.sr, args.ref):
        if not Path(d).is_dir():
            raise ValidationError(f"directory not found: {d}")
    table = evaluate_corpus(args.sr, args.ref)
    table.write_csv(args.out)
    print(table.format_text())
    if table.warnings:
        log.warning("%d image(s) skipped", table.warnings)
    return EXIT_OK


def cmd_generate_pairs(args) -> int:
    from .train import generate_pseudo_pairs

    ckpt = Path(args.ckpt)
    manifest = read_manifest(ckpt)
    if "denet" not in manifest.get("spec_hash", {}):
        raise ConfigError(f"{ckpt} does not contain a DeNet")
    cfg = checkpoint_config(ckpt)
    m = scan_corpus(args.hr, "hr", cfg.data.hr_size, cache=False)
    hr = load_corpus(m, cfg.data.hr_size)
    lr_gen, hr = generate_pseudo_pairs(ckpt, hr, cfg)
    out = Path(args.out)
    for name, lo, hi in zip(m.files, lr_gen, hr):
        stem = Path(name).stem + ".png"
        write_image(out / "lr" / stem, lo)
        write_image(out / "hr" / stem, hi)
    log.info("wrote %d pairs to %s", len(m.files), out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "edges": cmd_edges,
    "eval": cmd_eval,
    "generate-pairs": cmd_generate_pairs,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NonFiniteLossError as e:
        log.error("training aborted: %s", e)
        return EXIT_ABORT
    except (FSRError, OSError) as e:
        log.error("%s", e)
        return EXIT_INVALID


def main(argv=None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
