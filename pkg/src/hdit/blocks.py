"""Transformer building blocks.

Everything the hourglass is assembled from: RMS norms (plain and adaptive),
axial rotary embeddings, cosine-similarity attention in its three placements
(global / neighborhood / shifted-window), the gated feedforward, the mapping
network, patch embedding and the 2x2 token merge/split, and the learnable
skip interpolation.

Residual output projections are zero-initialized, which makes every block an
exact identity at construction.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .kernels import gather_tokens
from .rng import RngStream
from .tensor import Tensor

EPS_NORM = 1e-6
TAU_INIT = 10.0
TAU_MIN = 0.01
ROPE_BASE = 1.0e4
NEG_MASK = -1.0e30  # additive logit mask; finite so debug NaN checks stay clean

# dense (masked BLAS) beats the windowed gather below this many tokens
NEIGHBORHOOD_DENSE_MAX = 2048


# ----------------------------------------------------------------------
# parameter containers
# ----------------------------------------------------------------------
class Module:
    """Minimal parameter registry: attributes that are requires_grad Tensors
    become parameters, attributes that are Modules (or ModuleList) become
    children.  Iteration order is attribute-assignment order, which makes
    checkpoint layouts deterministic."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList:
    def __init__(self, mods=()):
        self.mods = list(mods)

    def __iter__(self):
        return iter(self.mods)

    def __len__(self):
        return len(self.mods)

    def __getitem__(self, i):
        return self.mods[i]

    def append(self, m):
        self.mods.append(m)

    def named_parameters(self, prefix: str = ""):
        for i, m in enumerate(self.mods):
            yield from m.named_parameters(f"{prefix}{i}.")


class Linear(Module):
    """y = x W^T + b, weight shape (out, in).

    zero_init marks residual output projections; everything else gets fan-in
    variance-scaling normal init from the init stream.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: Optional[RngStream],
                 bias: bool = True, zero_init: bool = False, dtype=np.float32):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.zero_init = zero_init
        if zero_init:
            w = np.zeros((out_dim, in_dim), dtype=dtype)
        else:
            std = 1.0 / math.sqrt(in_dim)
            w = (rng.normal((out_dim, in_dim)) * std).astype(dtype)
        self.weight = Tensor(w, dtype=dtype, requires_grad=True)
        self.bias = (
            Tensor(np.zeros(out_dim, dtype=dtype), dtype=dtype, requires_grad=True)
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


# ----------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------
def rms_norm(x: Tensor, scale: Tensor, eps: float = EPS_NORM) -> Tensor:
    """y = x / sqrt(mean(x^2) + eps) * scale, per token (last axis)."""
    ms = T.mean(T.square(x), axis=-1, keepdims=True)
    return T.mul(T.mul(x, T.rsqrt(ms + eps)), scale)


class RMSNorm(Module):
    """Plain RMS norm with a learned output gain (used by the output head)."""

    def __init__(self, dim: int, dtype=np.float32):
        super().__init__()
        self.gain = Tensor(np.ones(dim, dtype=dtype), dtype=dtype, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return rms_norm(x, self.gain)


class AdaRMSNorm(Module):
    """RMS norm whose output scale is predicted from the conditioning vector.

    cond_to_scale is zero-initialized, so the scale starts at exactly 1 and
    the conditioning pathway wakes up from zero.  No additive shift.
    """

    def __init__(self, dim: int, cond_width: int, dtype=np.float32):
        super().__init__()
        self.cond_to_scale = Linear(cond_width, dim, None, bias=True,
                                    zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        gamma = self.cond_to_scale(cond)  # (B, dim)
        scale = gamma + 1.0
        if x.ndim == 3:  # (B, n, dim): broadcast over tokens
            scale = T.reshape(scale, (scale.shape[0], 1, scale.shape[1]))
        return rms_norm(x, scale)


# ----------------------------------------------------------------------
# axial rotary position embedding
# ----------------------------------------------------------------------
class RoPEFrequencies:
    """Per-axis geometric frequency tables for the rotated half of a head.

    d_head must be divisible by 4: half the channels rotate (as pairs), and
    those pairs are split between the row axis and the column axis.  The
    other half passes through untouched.
    """

    def __init__(self, d_head: int, base: float = ROPE_BASE):
        if d_head % 4 != 0:
            raise ValueError(f"d_head {d_head} not divisible by 4")
        self.d_head = d_head
        pairs_total = d_head // 4
        self.pairs_row = (pairs_total + 1) // 2
        self.pairs_col = pairs_total - self.pairs_row
        self.freq_row = base ** (-np.arange(self.pairs_row) / max(self.pairs_row, 1))
        self.freq_col = base ** (-np.arange(self.pairs_col) / max(self.pairs_col, 1))

    def angles(self, positions: np.ndarray):
        """positions: (n, 2) integer (row, col) coordinates -> per-token angles."""
        ang_r = positions[:, 0:1].astype(np.float64) * self.freq_row[None, :]
        ang_c = positions[:, 1:2].astype(np.float64) * self.freq_col[None, :]
        return ang_r, ang_c


def grid_positions(h: int, w: int) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def _rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate channel pairs (2j, 2j+1) of x[..., n, 2p] by per-token angles."""
    p = cos.shape[-1]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    c = Tensor(cos.astype(x.dtype.type))
    s = Tensor(sin.astype(x.dtype.type))
    r_even = even * c - odd * s
    r_odd = even * s + odd * c
    lead = x.shape[:-1]
    r_even = T.reshape(r_even, lead + (p, 1))
    r_odd = T.reshape(r_odd, lead + (p, 1))
    return T.reshape(T.concat([r_even, r_odd], axis=-1), lead + (2 * p,))


def apply_axial_rope(x: Tensor, freqs: RoPEFrequencies,
                     positions: np.ndarray) -> Tensor:
    """x: (..., n, d_head); positions: (n, 2) integer token coordinates."""
    ang_r, ang_c = freqs.angles(positions)
    nr = 2 * freqs.pairs_row
    nc = 2 * freqs.pairs_col
    parts = []
    xr = x[..., :nr]
    parts.append(_rotate_pairs(xr, np.cos(ang_r), np.sin(ang_r)))
    if nc:
        xc = x[..., nr:nr + nc]
        parts.append(_rotate_pairs(xc, np.cos(ang_c), np.sin(ang_c)))
    parts.append(x[..., nr + nc:])
    return T.concat(parts, axis=-1)


# ----------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------
def _cosine_normalize(x: Tensor) -> Tensor:
    norm = T.sqrt(T.sum_(T.square(x), axis=-1, keepdims=True))
    return x / (norm + EPS_NORM)


def cosine_attention(q: Tensor, k: Tensor, v: Tensor, scale: Tensor,
                     mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled cosine-similarity attention.

    q, k, v: (..., heads, n, d_head); scale: (heads,) learned per head,
    multiplying the cosine similarities (so logits lie in [-scale, scale]).
    mask, when given, is additive on the logits (0 or NEG_MASK), shape (n, n).
    """
    qn = _cosine_normalize(q)
    kn = _cosine_normalize(k)
    sc = T.reshape(scale, (scale.shape[0], 1, 1))
    logits = T.matmul(qn * sc, T.permute(kn, tuple(range(kn.ndim - 2)) + (kn.ndim - 1, kn.ndim - 2)))
    if mask is not None:
        logits = logits + Tensor(mask.astype(logits.dtype.type))
    attn = T.softmax(logits, axis=-1)
    return T.matmul(attn, v)


def _neighborhood_window(i: int, k: int, extent: int) -> range:
    """Border-saturating window start for query index i."""
    start = min(max(i - k // 2, 0), max(extent - k, 0))
    return range(start, start + min(k, extent))


_index_cache: dict = {}
_mask_cache: dict = {}


def neighborhood_index(h: int, w: int, kernel: int) -> np.ndarray:
    """(n, kk) token indices of each query's saturated kernel x kernel window."""
    key = (h, w, kernel)
    if key not in _index_cache:
        starts_r = np.array([_neighborhood_window(i, kernel, h).start for i in range(h)])
        starts_c = np.array([_neighborhood_window(j, kernel, w).start for j in range(w)])
        kh = min(kernel, h)
        kw = min(kernel, w)
        rr = starts_r[:, None] + np.arange(kh)[None, :]  # (h, kh)
        cc = starts_c[:, None] + np.arange(kw)[None, :]  # (w, kw)
        # (h, w, kh, kw) -> (n, kk)
        idx = (rr[:, None, :, None] * w + cc[None, :, None, :]).reshape(h * w, kh * kw)
        _index_cache[key] = np.ascontiguousarray(idx, dtype=np.int64)
    return _index_cache[key]


def neighborhood_mask(h: int, w: int, kernel: int) -> np.ndarray:
    """Additive (n, n) mask: 0 inside the saturated window, NEG_MASK outside."""
    key = (h, w, kernel)
    if key not in _mask_cache:
        n = h * w
        mask = np.full((n, n), NEG_MASK, dtype=np.float32)
        idx = neighborhood_index(h, w, kernel)
        rows = np.repeat(np.arange(n), idx.shape[1])
        mask[rows, idx.ravel()] = 0.0
        _mask_cache[key] = mask
    return _mask_cache[key]


def _windowed_attention(q: Tensor, k: Tensor, v: Tensor, scale: Tensor,
                        idx: np.ndarray) -> Tensor:
    """Gather each query's key/value window, then attend within it.

    q, k, v: (B, H, n, dh); idx: (n, kk) window membership.  The gather and
    its scatter-add adjoint are the compiled kernels (or their numpy
    fallback).
    """
    B, H, n, dh = q.shape
    kk = idx.shape[1]
    sc = T.reshape(scale, (1, scale.shape[0], 1, 1))
    qn = _cosine_normalize(q) * sc
    kn = _cosine_normalize(k)
    flat = idx.ravel()
    kw = T.reshape(gather_tokens(T.reshape(kn, (B * H, n, dh)), flat), (B * H, n, kk, dh))
    vw = T.reshape(gather_tokens(T.reshape(v, (B * H, n, dh)), flat), (B * H, n, kk, dh))
    qw = T.reshape(qn, (B * H, n, 1, dh))
    logits = T.matmul(qw, T.permute(kw, (0, 1, 3, 2)))  # (BH, n, 1, kk)
    attn = T.softmax(logits, axis=-1)
    out = T.matmul(attn, vw)  # (BH, n, 1, dh)
    return T.reshape(out, (B, H, n, dh))


def neighborhood_attention(q, k, v, scale, h: int, w: int, kernel: int,
                           mode: str = "auto") -> Tensor:
    """Local attention over border-saturating kernel x kernel windows.

    Every query sees exactly min(kernel,h)*min(kernel,w) keys; when the kernel
    covers the whole map this is global attention.  Two equivalent execution
    paths: 'dense' (full logits + additive mask, BLAS-friendly) and
    'windowed' (gather/scatter kernels, linear in tokens).
    """
    if kernel % 2 == 0:
        raise ValueError(f"neighborhood kernel must be odd, got {kernel}")
    n = h * w
    if mode == "auto":
        mode = "dense" if n <= NEIGHBORHOOD_DENSE_MAX else "windowed"
    if mode == "dense":
        return cosine_attention(q, k, v, scale, mask=neighborhood_mask(h, w, kernel))
    return _windowed_attention(q, k, v, scale, neighborhood_index(h, w, kernel))


def swin_window_order(h: int, w: int, window: int, shift: int = 0) -> np.ndarray:
    """Permutation grouping tokens window-by-window after a cyclic shift."""
    rows = (np.arange(h) + shift) % h
    cols = (np.arange(w) + shift) % w
    tok = rows[:, None] * w + cols[None, :]  # shifted token grid
    nwh, nww = h // window, w // window
    tok = tok.reshape(nwh, window, nww, window).transpose(0, 2, 1, 3)
    return tok.reshape(-1)


def swin_attention(q, k, v, scale, h: int, w: int, window: int,
                   shifted: bool = False) -> Tensor:
    """Non-overlapping window attention, optionally cyclically shifted by
    window//2.  Wrapped tokens are not masked out."""
    if h % window or w % window:
        raise ValueError(f"map {h}x{w} not divisible by window {window}")
    B, H, n, dh = q.shape
    shift = window // 2 if shifted else 0
    order = swin_window_order(h, w, window, shift)
    inverse = np.argsort(order)
    nw = n // (window * window)
    ws2 = window * window
    sc = T.reshape(scale, (scale.shape[0], 1, 1))
    qn = _cosine_normalize(q) * sc
    kn = _cosine_normalize(k)

    def regroup(t):
        t = T.reshape(gather_tokens(T.reshape(t, (B * H, n, dh)), order),
                      (B, H, nw, ws2, dh))
        return t

    qg, kg, vg = regroup(qn), regroup(kn), regroup(v)
    logits = T.matmul(qg, T.permute(kg, (0, 1, 2, 4, 3)))
    attn = T.softmax(logits, axis=-1)
    out = T.reshape(T.matmul(attn, vg), (B * H, n, dh))
    out = gather_tokens(out, inverse)
    return T.reshape(out, (B, H, n, dh))


class SelfAttention(Module):
    """Multi-head RoPE cosine-similarity self-attention.

    kind: 'global', 'neighborhood' (kernel), or 'swin' (window; alternate
    blocks shift).  The per-head scale is learned directly in linear space,
    initialized at 10 and floored at 0.01 by the optimizer.
    """

    def __init__(self, dim: int, head_dim: int, kind: str,
                 rng: RngStream, kernel: int = 7, window: int = 8,
                 shifted: bool = False, dtype=np.float32):
        super().__init__()
        if dim % head_dim:
            raise ValueError(f"width {dim} not divisible by head_dim {head_dim}")
        self.heads = dim // head_dim
        self.head_dim = head_dim
        self.kind = kind
        self.kernel = kernel
        self.window = window
        self.shifted = shifted
        self.qkv = Linear(dim, 3 * dim, rng, bias=False, dtype=dtype)
        self.out = Linear(dim, dim, None, bias=False, zero_init=True, dtype=dtype)
        self.tau = Tensor(np.full(self.heads, TAU_INIT, dtype=dtype),
                          dtype=dtype, requires_grad=True)
        self.rope = RoPEFrequencies(head_dim)

    def __call__(self, x: Tensor, hw: tuple, mode: str = "auto",
                 positions: Optional[np.ndarray] = None) -> Tensor:
        B, n, d = x.shape
        h, w = hw
        qkv = self.qkv(x)  # (B, n, 3d)
        qkv = T.reshape(qkv, (B, n, 3, self.heads, self.head_dim))
        qkv = T.permute(qkv, (2, 0, 3, 1, 4))  # (3, B, H, n, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        if positions is None:
            positions = grid_positions(h, w)
        q = apply_axial_rope(q, self.rope, positions)
        k = apply_axial_rope(k, self.rope, positions)
        if self.kind == "global":
            o = cosine_attention(q, k, v, self.tau)
        elif self.kind == "neighborhood":
            o = neighborhood_attention(q, k, v, self.tau, h, w, self.kernel, mode)
        elif self.kind == "swin":
            o = swin_attention(q, k, v, self.tau, h, w, self.window, self.shifted)
        else:
            raise ValueError(f"unknown attention kind {self.kind!r}")
        o = T.reshape(T.permute(o, (0, 2, 1, 3)), (B, n, d))
        return self.out(o)


# ----------------------------------------------------------------------
# feedforward
# ----------------------------------------------------------------------
class GEGLUFeedForward(Module):
    """down( gelu(up_gate x) * (up_value x) ), hidden width 3*d, no biases.

    The down projection is zero-initialized; dropout (when configured) sits
    between the gated product and the down projection.
    """

    def __init__(self, dim: int, rng: RngStream, dropout_p: float = 0.0,
                 dtype=np.float32):
        super().__init__()
        hidden = 3 * dim
        self.up_gate = Linear(dim, hidden, rng, bias=False, dtype=dtype)
        self.up_value = Linear(dim, hidden, rng, bias=False, dtype=dtype)
        self.down = Linear(hidden, dim, None, bias=False, zero_init=True, dtype=dtype)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, drop_rng: Optional[RngStream] = None) -> Tensor:
        hidden = T.gelu(self.up_gate(x)) * self.up_value(x)
        if drop_rng is not None and self.dropout_p > 0.0:
            keep = (drop_rng.uniform(hidden.shape) >= self.dropout_p)
            mask = keep.astype(hidden.dtype.type) / (1.0 - self.dropout_p)
            hidden = hidden * Tensor(mask)
        return self.down(hidden)


# ----------------------------------------------------------------------
# the transformer block
# ----------------------------------------------------------------------
class HDiTBlock(Module):
    """AdaRMSNorm -> attention -> residual -> AdaRMSNorm -> GEGLU -> residual.

    No output gates; both residual branches end in zero-initialized
    projections, so a fresh block is the identity map.  One conditioning
    projection predicts the scale used by both norms.
    """

    def __init__(self, dim: int, head_dim: int, cond_width: int, kind: str,
                 rng: RngStream, kernel: int = 7, window: int = 8,
                 shifted: bool = False, dropout_p: float = 0.0, dtype=np.float32):
        super().__init__()
        self.norm = AdaRMSNorm(dim, cond_width, dtype=dtype)
        self.attn = SelfAttention(dim, head_dim, kind, rng,
                                  kernel=kernel, window=window, shifted=shifted,
                                  dtype=dtype)
        self.ffn = GEGLUFeedForward(dim, rng, dropout_p=dropout_p, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor, hw: tuple,
                 drop_rng: Optional[RngStream] = None, mode: str = "auto",
                 positions: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.norm(x, cond), hw, mode=mode, positions=positions)
        x = x + self.ffn(self.norm(x, cond), drop_rng)
        return x


# ----------------------------------------------------------------------
# mapping network
# ----------------------------------------------------------------------
N_FOURIER = 64


class MappingNetwork(Module):
    """(noise level, class) -> conditioning vector.

    c_noise = ln(sigma)/4 enters through fixed log-spaced Fourier features;
    classes through a learned table whose last row is the dedicated
    unconditional embedding (used by conditioning dropout and CFG).
    """

    def __init__(self, width: int, depth: int, num_classes: int,
                 rng: RngStream, dtype=np.float32):
        super().__init__()
        self.width = width
        self.num_classes = num_classes
        self.freqs = 10.0 ** np.linspace(0.0, 2.0, N_FOURIER)
        self.noise_in = Linear(2 * N_FOURIER, width, rng, bias=True, dtype=dtype)
        std = 1.0 / math.sqrt(width)
        self.class_embed = Tensor(
            (rng.normal((num_classes + 1, width)) * std).astype(dtype),
            dtype=dtype, requires_grad=True)
        self.blocks = ModuleList(
            [Linear(width, width, rng, bias=True, dtype=dtype) for _ in range(depth)]
        )

    @property
    def uncond_id(self) -> int:
        return self.num_classes

    def __call__(self, sigma: np.ndarray, class_ids: Optional[np.ndarray]) -> Tensor:
        """sigma: (B,) noise levels; class_ids: (B,) ints (uncond_id allowed)
        or None for all-unconditional."""
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        c_noise = np.log(sigma) / 4.0
        ang = c_noise[:, None] * self.freqs[None, :]
        feats = np.concatenate([np.cos(ang), np.sin(ang)], axis=1)
        dtype = self.class_embed.dtype.type
        emb = self.noise_in(Tensor(feats.astype(dtype)))
        if class_ids is None:
            class_ids = np.full(sigma.shape[0], self.uncond_id, dtype=np.int64)
        else:
            class_ids = np.asarray(class_ids, dtype=np.int64)
            if np.any(class_ids < 0) or np.any(class_ids > self.uncond_id):
                raise ValueError("class id out of range")
        emb = emb + T.take_rows(self.class_embed, class_ids)
        for blk in self.blocks:
            emb = T.gelu(blk(emb))
        return emb


# ----------------------------------------------------------------------
# patching and token merge / split
# ----------------------------------------------------------------------
def space_to_depth(x: Tensor, p: int) -> Tensor:
    """(B, H, W, C) -> (B, H/p, W/p, p*p*C), patch-major channel order."""
    B, H, W, C = x.shape
    if H % p or W % p:
        raise ValueError(f"spatial dims {H}x{W} not divisible by {p}")
    x = T.reshape(x, (B, H // p, p, W // p, p, C))
    x = T.permute(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, H // p, W // p, p * p * C))


def depth_to_space(x: Tensor, p: int) -> Tensor:
    """Exact inverse of space_to_depth."""
    B, H, W, PC = x.shape
    C = PC // (p * p)
    x = T.reshape(x, (B, H, W, p, p, C))
    x = T.permute(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, H * p, W * p, C))


class PatchEmbed(Module):
    def __init__(self, p: int, in_channels: int, dim: int, rng: RngStream,
                 dtype=np.float32):
        super().__init__()
        self.p = p
        self.proj = Linear(p * p * in_channels, dim, rng, bias=True, dtype=dtype)

    def __call__(self, img: Tensor) -> Tensor:
        return self.proj(space_to_depth(img, self.p))


class TokenMerge(Module):
    """2x2 pixel-unshuffle then projection to the next level's width."""

    def __init__(self, in_dim: int, out_dim: int, rng: RngStream, dtype=np.float32):
        super().__init__()
        self.proj = Linear(4 * in_dim, out_dim, rng, bias=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(space_to_depth(x, 2))


class TokenSplit(Module):
    """Projection then 2x2 pixel-shuffle back up a level."""

    def __init__(self, in_dim: int, out_dim: int, rng: RngStream, dtype=np.float32):
        super().__init__()
        self.proj = Linear(in_dim, 4 * out_dim, rng, bias=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return depth_to_space(self.proj(x), 2)


def lerp_merge(skip: Tensor, upsampled: Tensor, f: Tensor) -> Tensor:
    """x_merged = f * x_skip + (1 - f) * x_upsampled."""
    if skip.shape != upsampled.shape:
        raise ValueError(f"lerp shapes differ: {skip.shape} vs {upsampled.shape}")
    return skip * f + upsampled * (1.0 - f)


class LerpSkip(Module):
    """Learnable interpolation coefficient for one skip connection, f=0.5 at
    construction (equal mix)."""

    def __init__(self, dtype=np.float32):
        super().__init__()
        self.f = Tensor(np.asarray(0.5, dtype=dtype), dtype=dtype, requires_grad=True)

    def __call__(self, skip: Tensor, upsampled: Tensor) -> Tensor:
        return lerp_merge(skip, upsampled, self.f)
