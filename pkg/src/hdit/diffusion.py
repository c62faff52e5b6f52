"""Denoising-diffusion training: preconditioning, loss weighting, noise-level
sampling, the optimizer, EMA, and the single training step.

The network learned here is the raw residual F; everything the sampler or the
loss touches goes through the preconditioned denoiser

    D(x, sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in(sigma) * x, sigma)

with the standard variance-preserving coefficient choice for data of scale
sigma_data.  Images are mapped to [-1, 1] and treated as sigma_data = 0.5
throughout; nothing else rescales them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import TAU_MIN
from .rng import RngStream, RngStreams
from .tensor import Tensor

WEIGHTINGS = ("snr", "min_snr", "soft_min_snr")


@dataclass
class DiffusionConfig:
    sigma_data: float = 0.5
    sigma_min: float = 1e-3
    sigma_max: float = 1e3
    weighting: str = "soft_min_snr"
    gamma: float = 4.0
    cond_dropout_p: float = 0.1
    ema_decay: float = 0.9999
    resolution_shift_base: Optional[int] = None

    def validate(self) -> None:
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        if not (0.0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if not (0.0 <= self.cond_dropout_p < 1.0):
            raise ValueError("cond_dropout_p in [0, 1)")
        if not (0.0 <= self.ema_decay <= 1.0):
            raise ValueError("ema_decay in [0, 1]")


def edm_scalings(sigma: np.ndarray, sigma_data: float):
    """c_skip, c_out, c_in, c_noise as float64 arrays shaped like sigma."""
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma ** 2
    d2 = sigma_data ** 2
    c_skip = d2 / (s2 + d2)
    c_out = sigma * sigma_data / np.sqrt(s2 + d2)
    c_in = 1.0 / np.sqrt(s2 + d2)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def precondition(net, x_sigma: np.ndarray, sigma: np.ndarray,
                 cfg: DiffusionConfig,
                 class_ids: Optional[np.ndarray] = None,
                 drop_rng: Optional[RngStream] = None,
                 attn_mode: str = "auto") -> Tensor:
    """Denoised estimate D(x_sigma, sigma) for a batch.

    net is called as net(images, sigma, class_ids, drop_rng=...) and returns
    the raw F output; c_noise handling lives inside the network's mapping.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    x_sigma = np.asarray(x_sigma)
    # run at the network's own precision when it declares one (the integrator
    # may hand us float64 state)
    net_dtype = getattr(net, "dtype", None)
    if net_dtype is not None and x_sigma.dtype != np.dtype(net_dtype):
        x_sigma = x_sigma.astype(net_dtype)
    dtype = x_sigma.dtype.type
    c_skip, c_out, c_in, _ = edm_scalings(sigma, cfg.sigma_data)
    bcast = (-1,) + (1,) * (x_sigma.ndim - 1)
    x_in = Tensor((x_sigma * c_in.reshape(bcast)).astype(dtype))
    f = net(x_in, sigma, class_ids, drop_rng=drop_rng, attn_mode=attn_mode)
    out = f * Tensor(c_out.reshape(bcast).astype(dtype))
    return out + Tensor((x_sigma * c_skip.reshape(bcast)).astype(dtype))


def loss_weight(sigma: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """w(sigma) applied to the per-dimension x0-MSE."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if cfg.weighting == "snr":
        return 1.0 / sigma ** 2
    if cfg.weighting == "min_snr":
        return np.minimum(1.0 / sigma ** 2, cfg.gamma)
    if cfg.weighting == "soft_min_snr":
        return 1.0 / (sigma ** 2 + 1.0 / cfg.gamma)
    raise ValueError(f"unknown weighting {cfg.weighting!r}")


def shift_sigma(sigma, target_res: int, base_res: int):
    """Noise level carried to another resolution: sigma * target/base
    (squared ratio on the SNR)."""
    if target_res <= 0 or base_res <= 0:
        raise ValueError("resolutions must be positive")
    return np.asarray(sigma, dtype=np.float64) * (target_res / base_res)


def sample_sigma(batch: int, cfg: DiffusionConfig, rng: RngStream,
                 target_res: Optional[int] = None) -> np.ndarray:
    """Stratified noise levels for one training batch.

    u_i is drawn uniformly from the i-th of `batch` equal strata of [0, 1),
    the strata are shuffled, and sigma(u) = sigma_data * tan(pi*u/2).  When a
    reference resolution is configured and target_res differs, the schedule is
    log-linearly interpolated toward its shifted copy, weighting the shifted
    endpoint by u (high-noise strata shift the most).  Clamped to the
    configured range.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    u = (np.arange(batch, dtype=np.float64) + rng.uniform((batch,), dtype=np.float64)) / batch
    u = u[rng.permutation(batch)]
    sig = cfg.sigma_data * np.tan(0.5 * math.pi * u)
    if cfg.resolution_shift_base is not None and target_res is not None \
            and target_res != cfg.resolution_shift_base:
        # sigma_hi = sigma * ratio, so the log-linear blend collapses to a
        # u-dependent partial shift.
        ratio = target_res / cfg.resolution_shift_base
        sig = sig * ratio ** u
    return np.clip(sig, cfg.sigma_min, cfg.sigma_max)


def sigma_cdf(sigma, cfg: DiffusionConfig) -> np.ndarray:
    """Analytic CDF of sample_sigma's unshifted density, clamp atoms included
    (mass below sigma_min sits at sigma_min, above sigma_max at sigma_max)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    cdf = (2.0 / math.pi) * np.arctan(sigma / cfg.sigma_data)
    cdf = np.where(sigma < cfg.sigma_min, 0.0, cdf)
    return np.where(sigma >= cfg.sigma_max, 1.0, cdf)


# ----------------------------------------------------------------------
# optimizer / EMA
# ----------------------------------------------------------------------
class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Decay touches only matrix-shaped parameters (ndim >= 2): gains, biases,
    attention scales and skip coefficients stay unregularized.
    """

    def __init__(self, named_params, lr: float = 5e-4, betas=(0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        out = {"step": np.array([self.step_count], dtype=np.int64)}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"][0])
        for name in self.m:
            self.m[name] = state[f"m/{name}"].copy()
            self.v[name] = state[f"v/{name}"].copy()


def clamp_attention_scales(model, floor: float = TAU_MIN) -> None:
    """Post-step projection keeping every learned attention scale >= floor."""
    for name, p in model.named_parameters():
        if name.rsplit(".", 1)[-1] == "tau":
            np.maximum(p.data, p.data.dtype.type(floor), out=p.data)


class EMA:
    """Exponential moving average of the parameters (a full shadow copy)."""

    def __init__(self, named_params, decay: float = 0.9999):
        self.decay = decay
        self.params = list(named_params)
        self.shadow = {name: p.data.copy() for name, p in self.params}

    def update(self) -> None:
        d = self.decay
        for name, p in self.params:
            s = self.shadow[name]
            s *= d
            s += (1.0 - d) * p.data

    def distance(self) -> float:
        """Euclidean distance between live and shadow parameters."""
        acc = 0.0
        for name, p in self.params:
            diff = p.data - self.shadow[name]
            acc += float(np.dot(diff.ravel(), diff.ravel()))
        return math.sqrt(acc)

    def state_dict(self) -> dict:
        return dict(self.shadow)

    def load_state_dict(self, state: dict) -> None:
        for name in self.shadow:
            self.shadow[name] = state[name].copy()


def weight_norm(named_params) -> float:
    acc = 0.0
    for _, p in named_params:
        acc += float(np.dot(p.data.ravel(), p.data.ravel()))
    return math.sqrt(acc)


# ----------------------------------------------------------------------
# one training step
# ----------------------------------------------------------------------
def training_step(model, images: np.ndarray, labels: Optional[np.ndarray],
                  cfg: DiffusionConfig, opt: AdamW, ema: EMA,
                  streams: RngStreams, step: int,
                  attn_mode: str = "auto") -> dict:
    """Forward/backward/update on one batch; returns the step's metrics.

    images: (B, H, W, C) in [-1, 1]; labels: (B,) ints or None.  All
    randomness is drawn from per-purpose streams at this step index, so a
    restored run replays the identical step.
    """
    B = images.shape[0]
    sigma = sample_sigma(B, cfg, streams.sigma(step), target_res=images.shape[1])
    eps = streams.noise(step).normal(images.shape, dtype=np.float64)
    bcast = (-1,) + (1,) * (images.ndim - 1)
    x_sigma = (images + sigma.reshape(bcast) * eps).astype(images.dtype)

    drop_rng = streams.dropout(step)
    class_ids = labels
    if labels is not None and cfg.cond_dropout_p > 0.0:
        drop = drop_rng.uniform((B,)) < cfg.cond_dropout_p
        class_ids = np.where(drop, model.mapping.uncond_id,
                             np.asarray(labels, dtype=np.int64))

    den = precondition(model, x_sigma, sigma, cfg, class_ids,
                       drop_rng=drop_rng, attn_mode=attn_mode)
    target = Tensor(images)
    per_dim = T.mean(T.square(den - target), axis=tuple(range(1, images.ndim)))
    w = loss_weight(sigma, cfg).astype(images.dtype)
    loss = T.mean(per_dim * Tensor(w))

    loss_val = float(loss.data)
    if not math.isfinite(loss_val):
        raise FloatingPointError(
            f"non-finite loss {loss_val} at step {step} "
            f"(sigma range [{sigma.min():.3g}, {sigma.max():.3g}])")

    model.zero_grad()
    loss.backward()
    opt.step()
    clamp_attention_scales(model)
    ema.update()

    return {
        "step": step,
        "loss": loss_val,
        "mean_sigma": float(sigma.mean()),
        "weight_norm": weight_norm(model.named_parameters()),
        "ema_distance": ema.distance(),
    }
