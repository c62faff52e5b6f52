"""Training loop: batching, metrics, checkpointing, bit-exact resume."""
from __future__ import annotations

import csv
import os
from typing import Optional

import numpy as np

from .diffusion import EMA, AdamW, DiffusionConfig, training_step
from .model import HDiTModel, load_checkpoint, save_checkpoint
from .rng import RngStreams


class MetricsWriter:
    """Append-only CSV of per-step training metrics."""

    FIELDS = ["step", "loss", "mean_sigma", "weight_norm", "ema_distance"]

    def __init__(self, path: str):
        self.path = path
        fresh = not (os.path.exists(path) and os.path.getsize(path) > 0)
        self._fh = open(path, "a", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.FIELDS)
        if fresh:
            self._writer.writeheader()
            self._fh.flush()

    def write(self, metrics: dict) -> None:
        self._writer.writerow({k: metrics[k] for k in self.FIELDS})
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Trainer:
    """Owns the model, optimizer, EMA and RNG streams for one run.

    Every random draw is keyed by (seed, purpose, global step), so saving at
    step k and restoring replays steps k, k+1, ... with bit-identical
    parameters to the uninterrupted run.
    """

    def __init__(self, model: HDiTModel, dcfg: DiffusionConfig, seed: int,
                 lr: float = 5e-4, betas=(0.9, 0.95), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        dcfg.validate()
        self.model = model
        self.dcfg = dcfg
        self.seed = int(seed)
        self.streams = RngStreams(seed)
        self.opt = AdamW(model.named_parameters(), lr=lr, betas=betas,
                         eps=eps, weight_decay=weight_decay)
        self.ema = EMA(model.named_parameters(), decay=dcfg.ema_decay)
        self.step = 0

    def next_batch(self, images: np.ndarray, labels: Optional[np.ndarray],
                   batch_size: int):
        idx = self.streams.data(self.step).integers(0, images.shape[0],
                                                    (batch_size,))
        lab = None if labels is None else np.asarray(labels)[idx]
        return images[idx], lab

    def train_one(self, images: np.ndarray, labels: Optional[np.ndarray],
                  batch_size: int, attn_mode: str = "auto") -> dict:
        batch, lab = self.next_batch(images, labels, batch_size)
        metrics = training_step(self.model, batch, lab, self.dcfg, self.opt,
                                self.ema, self.streams, self.step,
                                attn_mode=attn_mode)
        self.step += 1
        return metrics

    def run(self, images: np.ndarray, labels: Optional[np.ndarray],
            batch_size: int, steps: int,
            metrics: Optional[MetricsWriter] = None,
            checkpoint_path: Optional[str] = None,
            checkpoint_every: int = 0,
            attn_mode: str = "auto",
            log_fn=None) -> None:
        while self.step < steps:
            m = self.train_one(images, labels, batch_size, attn_mode=attn_mode)
            if metrics is not None:
                metrics.write(m)
            if log_fn is not None:
                log_fn(m)
            if checkpoint_path and checkpoint_every \
                    and self.step % checkpoint_every == 0:
                self.save(checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)

    # -- persistence ---------------------------------------------------
    def save(self, path: str) -> None:
        sections = {
            "model": {n: p.data for n, p in self.model.named_parameters()},
            "ema": self.ema.state_dict(),
            "opt": self.opt.state_dict(),
            "rng": {"seed": np.array([self.seed], dtype=np.int64),
                    "step": np.array([self.step], dtype=np.int64)},
        }
        save_checkpoint(path, sections)

    def load(self, path: str) -> None:
        sections = load_checkpoint(path)
        self.model.load_state_dict(sections["model"])
        self.ema.load_state_dict(sections["ema"])
        self.opt.load_state_dict(sections["opt"])
        saved_seed = int(sections["rng"]["seed"][0])
        if saved_seed != self.seed:
            raise ValueError(
                f"checkpoint was trained with seed {saved_seed}, "
                f"trainer configured with {self.seed}")
        self.step = int(sections["rng"]["step"][0])
