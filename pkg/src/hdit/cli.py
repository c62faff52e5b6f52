"""Command-line surface: train / sample / cost / verify.

Exit codes: 0 success, 2 configuration or input error, 3 NaN abort during
training.  Thread count is taken from HDIT_THREADS (set before numpy loads,
in the package __init__).
"""
from __future__ import annotations

import os
import sys

import click
import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .costs import DIT_B4, count_dit, count_hdit
from .data import Dataset, gen_shapes, load_folder, save_grid, save_image
from .diffusion import DiffusionConfig
from .model import (CheckpointError, adapt_resolution, build_model,
                    load_checkpoint, preset_imagenet_128)
from .rng import DATA, INIT, SAMPLE, RngStream
from .sampler import sample
from .train import MetricsWriter, Trainer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3

# generated datasets draw from the data stream far above any step index
DATASET_COUNTER = 1 << 31


def _fail(msg: str, code: int) -> int:
    click.echo(f"error: {msg}", err=True)
    return code


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Hourglass diffusion transformer: training, sampling and cost tools."""


def _load_dataset(rc) -> Dataset:
    train = rc.train
    res = rc.model.input_size
    if train.dataset == "shapes":
        ds = gen_shapes(train.dataset_size, res,
                        RngStream(train.seed, DATA, DATASET_COUNTER))
    else:
        ds = load_folder(train.dataset, res=res)
    if rc.model.num_classes > 0:
        if ds.labels is None:
            raise ConfigError(
                "model is class-conditional but the dataset has no labels")
        if ds.class_count > rc.model.num_classes:
            raise ConfigError(
                f"dataset has {ds.class_count} classes, model only "
                f"{rc.model.num_classes}")
    return ds


def _ema_clone(rc, trainer: Trainer):
    clone = build_model(rc.model, RngStream(trainer.seed, INIT))
    clone.load_state_dict(trainer.ema.state_dict())
    return clone


def _grid_labels(model_cfg, count: int):
    if model_cfg.num_classes <= 0:
        return None
    return np.arange(count, dtype=np.int64) % model_cfg.num_classes


@main.command("train")
@click.argument("config_path", type=click.Path())
def cmd_train(config_path: str) -> None:
    """Run the training loop described by CONFIG_PATH."""
    try:
        rc = load_config(config_path)
        ds = _load_dataset(rc)
    except (ConfigError, OSError, ValueError) as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))

    train = rc.train
    os.makedirs(train.out_dir, exist_ok=True)
    ckpt_path = os.path.join(train.out_dir, "checkpoint.bin")
    model = build_model(rc.model, RngStream(train.seed, INIT))
    trainer = Trainer(model, rc.diffusion, train.seed,
                      lr=train.learning_rate, betas=(train.beta1, train.beta2),
                      eps=train.eps, weight_decay=train.weight_decay)
    if os.path.exists(ckpt_path):
        try:
            trainer.load(ckpt_path)
        except (CheckpointError, ValueError, KeyError) as exc:
            sys.exit(_fail(f"cannot resume from {ckpt_path}: {exc}", EXIT_CONFIG))
        click.echo(f"resumed from {ckpt_path} at step {trainer.step}")

    labels = None if rc.model.num_classes == 0 else ds.labels
    try:
        with MetricsWriter(os.path.join(train.out_dir, "metrics.csv")) as metrics:
            while trainer.step < train.steps:
                m = trainer.train_one(ds.images, labels, train.batch_size)
                metrics.write(m)
                if train.log_every and m["step"] % train.log_every == 0:
                    click.echo(f"step {m['step']:6d}  loss {m['loss']:.5f}  "
                               f"sigma {m['mean_sigma']:.3f}")
                if train.checkpoint_every \
                        and trainer.step % train.checkpoint_every == 0:
                    trainer.save(ckpt_path)
                if train.sample_every \
                        and trainer.step % train.sample_every == 0:
                    clone = _ema_clone(rc, trainer)
                    imgs = sample(clone, rc.diffusion, rc.sampler,
                                  train.sample_count,
                                  RngStream(train.seed, SAMPLE, trainer.step),
                                  class_ids=_grid_labels(rc.model,
                                                         train.sample_count))
                    save_grid(imgs, os.path.join(
                        train.out_dir, f"grid_{trainer.step:06d}.ppm"),
                        cols=train.grid_cols)
            trainer.save(ckpt_path)
    except FloatingPointError as exc:
        sys.exit(_fail(f"training aborted: {exc}", EXIT_NAN))
    click.echo(f"done: {trainer.step} steps, checkpoint at {ckpt_path}")
    sys.exit(EXIT_OK)


@main.command("sample")
@click.argument("config_path", type=click.Path())
@click.option("--checkpoint", default=None, type=click.Path(),
              help="Checkpoint file (default: <out_dir>/checkpoint.bin).")
@click.option("--class-id", "class_id", default=None, type=int,
              help="Class to condition on (default: unconditional).")
@click.option("--count", default=8, type=int, help="Number of images.")
@click.option("--cfg-scale", default=None, type=float,
              help="Guidance scale override (1 = no guidance).")
@click.option("--seed", default=0, type=int)
@click.option("--steps", default=None, type=int, help="Sampler steps override.")
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--raw", is_flag=True,
              help="Sample with raw weights instead of the EMA.")
def cmd_sample(config_path, checkpoint, class_id, count, cfg_scale, seed,
               steps, out_dir, raw) -> None:
    """Generate images from a trained checkpoint."""
    try:
        rc = load_config(config_path)
    except ConfigError as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))
    if count < 0:
        sys.exit(_fail("count must be >= 0", EXIT_CONFIG))
    ckpt_path = checkpoint or os.path.join(rc.train.out_dir, "checkpoint.bin")
    try:
        sections = load_checkpoint(ckpt_path)
    except (OSError, CheckpointError) as exc:
        sys.exit(_fail(f"cannot read checkpoint {ckpt_path}: {exc}", EXIT_CONFIG))
    want = "model" if raw else "ema"
    if want not in sections:
        sys.exit(_fail(f"checkpoint has no '{want}' section", EXIT_CONFIG))
    if class_id is not None and not (0 <= class_id < rc.model.num_classes):
        sys.exit(_fail(f"class id {class_id} out of range "
                       f"[0, {rc.model.num_classes})", EXIT_CONFIG))
    if count == 0:
        sys.exit(EXIT_OK)

    model = build_model(rc.model, RngStream(rc.train.seed, INIT))
    try:
        model.load_state_dict(sections[want])
    except (KeyError, ValueError) as exc:
        sys.exit(_fail(f"checkpoint does not match the model: {exc}", EXIT_CONFIG))
    scfg = rc.sampler
    if cfg_scale is not None:
        scfg.guidance = cfg_scale
    if steps is not None:
        scfg.steps = steps
    ids = None if class_id is None else np.full(count, class_id, dtype=np.int64)
    imgs = sample(model, rc.diffusion, scfg, count, RngStream(seed, SAMPLE),
                  class_ids=ids)
    dest = out_dir or rc.train.out_dir
    os.makedirs(dest, exist_ok=True)
    for i in range(count):
        save_image(np.clip(imgs[i], -1.0, 1.0),
                   os.path.join(dest, f"sample_{seed}_{i}.ppm"))
    click.echo(f"wrote {count} images to {dest}")
    sys.exit(EXIT_OK)


@main.command("cost")
@click.option("--arch", type=click.Choice(["hdit", "dit"]), default="hdit")
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="Config whose [model] defines the hourglass (default: "
                   "the 128px reference).")
@click.option("--resolutions", default="128,256,512,1024",
              help="Comma-separated input resolutions.")
@click.option("--csv", "csv_path", default=None, type=click.Path())
@click.option("--width", default=DIT_B4["width"], type=int)
@click.option("--depth", default=DIT_B4["depth"], type=int)
@click.option("--patch", default=DIT_B4["patch"], type=int)
def cmd_cost(arch, config_path, resolutions, csv_path, width, depth, patch) -> None:
    """Analytic FLOP/parameter table across resolutions."""
    try:
        res_list = [int(tok) for tok in resolutions.split(",") if tok.strip()]
        if not res_list or any(r <= 0 for r in res_list):
            raise ValueError(f"bad resolution list {resolutions!r}")
    except ValueError as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))
    if config_path is not None:
        try:
            base = load_config(config_path).model
        except ConfigError as exc:
            sys.exit(_fail(str(exc), EXIT_CONFIG))
    else:
        base = preset_imagenet_128()

    rows = []
    click.echo(f"{'res':>6} {'hdit GFLOP':>12} {'dit GFLOP':>12} "
               f"{'reduction':>10} {'params':>12}")
    for res in res_list:
        try:
            cfg = base if res == base.input_size else adapt_resolution(base, res)
            hd = count_hdit(cfg)
            dt = count_dit(width=width, depth=depth, patch=patch, res=res)
        except ValueError as exc:
            sys.exit(_fail(str(exc), EXIT_CONFIG))
        red = 100.0 * (1.0 - hd.total_flops / dt.total_flops)
        y = hd.gflops if arch == "hdit" else dt.gflops
        rows.append((res, y, red))
        click.echo(f"{res:>6} {hd.gflops:>12.2f} {dt.gflops:>12.2f} "
                   f"{red:>9.2f}% {hd.params:>12}")
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write("x,y,r\n")
            for res, y, red in rows:
                fh.write(f"{res},{y:.6f},{red:.6f}\n")
        click.echo(f"wrote {csv_path}")
    sys.exit(EXIT_OK)


@main.command("verify")
@click.option("--suite", type=click.Choice(["grad", "oracle", "invariants", "all"]),
              default="all")
def cmd_verify(suite: str) -> None:
    """Run the self-check suites and report per-check results."""
    from .verify import format_report, run_suite
    checks = run_suite(suite)
    click.echo(format_report(checks))
    sys.exit(EXIT_OK if all(ok for _, ok, _ in checks) else 1)


if __name__ == "__main__":
    main()
