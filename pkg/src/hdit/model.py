"""The hourglass model: configuration, assembly, forward pass, checkpoints.

Level layout (widths innermost last): the outer levels run local
(neighborhood) attention and surround a global-attention core.  Outer depths
count blocks per *side* — the decoder mirrors the encoder level-for-level —
while the innermost depth counts the single core stack.  Skip taps come off
each encoder level's output before the merge and re-enter after the matching
split through a learnable lerp.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import (
    HDiTBlock,
    LerpSkip,
    Linear,
    MappingNetwork,
    Module,
    ModuleList,
    PatchEmbed,
    RMSNorm,
    TokenMerge,
    TokenSplit,
    depth_to_space,
)
from .rng import RngStream
from .tensor import Tensor

CORE_TOKENS = 16  # expected innermost map side at the primary resolution


@dataclass
class ModelConfig:
    """Architecture description; drives both the builder and the cost model."""

    input_size: int
    patch_size: int
    widths: list            # per level, innermost last, non-decreasing
    depths: list            # per side for outer levels, total for innermost
    attn_kinds: list        # 'neighborhood' | 'global' | 'swin' per level
    kernel_size: int = 7
    swin_window: int = 8
    head_dim: int = 64
    mapping_depth: int = 1
    mapping_width: int = 768
    num_classes: int = 0
    dropout: list = field(default_factory=list)
    in_channels: int = 3
    allow_nonstandard_core: bool = False

    @property
    def levels(self) -> int:
        return len(self.widths)

    def core_size(self) -> int:
        """Innermost feature-map side at input_size."""
        return self.input_size // (self.patch_size * 2 ** (self.levels - 1))

    def validate(self) -> "ModelConfig":
        if not self.dropout:
            self.dropout = [0.0] * self.levels
        if not (len(self.widths) == len(self.depths) == len(self.attn_kinds)
                == len(self.dropout)):
            raise ValueError("widths/depths/attn_kinds/dropout lengths differ")
        if self.levels < 1:
            raise ValueError("need at least one level")
        if any(b > a for a, b in zip(self.widths[1:], self.widths)):
            raise ValueError(f"widths must be non-decreasing toward the core: {self.widths}")
        if any(d < 1 for d in self.depths):
            raise ValueError("all depths must be >= 1")
        for wd in self.widths:
            if wd % self.head_dim:
                raise ValueError(f"width {wd} not divisible by head_dim {self.head_dim}")
        if self.head_dim % 4:
            raise ValueError("head_dim must be divisible by 4")
        if self.kernel_size % 2 == 0:
            raise ValueError("neighborhood kernel must be odd")
        for kind in self.attn_kinds:
            if kind not in ("neighborhood", "global", "swin"):
                raise ValueError(f"unknown attention kind {kind!r}")
        stride = self.patch_size * 2 ** (self.levels - 1)
        if self.input_size % stride:
            raise ValueError(
                f"input {self.input_size} not divisible by patch*2^(levels-1)={stride}")
        if self.core_size() != CORE_TOKENS and not self.allow_nonstandard_core:
            raise ValueError(
                f"innermost level runs at {self.core_size()}x{self.core_size()} tokens; "
                f"expected {CORE_TOKENS}x{CORE_TOKENS} "
                f"(set allow_nonstandard_core to override)")
        return self


def adapt_resolution(cfg: ModelConfig, target_res: int) -> ModelConfig:
    """Rescale a config to a 2^k multiple of its resolution by prepending one
    outer neighborhood level per doubling (width = previous outermost, depth 2
    per side); the core is untouched and gets fresh parameters."""
    base = cfg.input_size
    if target_res < base or target_res % base:
        raise ValueError(f"target {target_res} is not a 2^k multiple of {base}")
    ratio = target_res // base
    k = ratio.bit_length() - 1
    if 2 ** k != ratio:
        raise ValueError(f"resolution ratio {ratio} is not a power of two")
    new = dataclasses.replace(
        cfg,
        input_size=target_res,
        widths=[cfg.widths[0]] * k + list(cfg.widths),
        depths=[2] * k + list(cfg.depths),
        attn_kinds=["neighborhood"] * k + list(cfg.attn_kinds),
        dropout=[0.0] * k + list(cfg.dropout or [0.0] * cfg.levels),
    )
    return new.validate()


# ----------------------------------------------------------------------
# presets (the three reference configurations plus the all-global variant)
# ----------------------------------------------------------------------
def preset_imagenet_128() -> ModelConfig:
    return ModelConfig(
        input_size=128, patch_size=4, widths=[384, 768], depths=[2, 11],
        attn_kinds=["neighborhood", "global"], mapping_depth=1,
        num_classes=1000).validate()


def preset_imagenet_128_global() -> ModelConfig:
    cfg = preset_imagenet_128()
    return dataclasses.replace(cfg, attn_kinds=["global", "global"]).validate()


def preset_ffhq_1024() -> ModelConfig:
    return ModelConfig(
        input_size=1024, patch_size=4,
        widths=[128, 256, 384, 768, 1024], depths=[2, 2, 2, 2, 2],
        attn_kinds=["neighborhood"] * 3 + ["global"] * 2,
        mapping_depth=2, num_classes=0,
        dropout=[0.0, 0.0, 0.0, 0.0, 0.1]).validate()


def preset_imagenet_256() -> ModelConfig:
    return ModelConfig(
        input_size=256, patch_size=4, widths=[384, 768, 1536], depths=[2, 2, 16],
        attn_kinds=["neighborhood", "neighborhood", "global"],
        mapping_depth=2, num_classes=1000).validate()


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------
class _BlockStack(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = ModuleList(blocks)

    def __call__(self, x, cond, hw, drop_rng=None, mode="auto"):
        for blk in self.blocks:
            x = blk(x, cond, hw, drop_rng=drop_rng, mode=mode)
        return x


def _make_blocks(cfg: ModelConfig, level: int, count: int, rng: RngStream,
                 dtype) -> _BlockStack:
    kind = cfg.attn_kinds[level]
    blocks = []
    for i in range(count):
        blocks.append(HDiTBlock(
            cfg.widths[level], cfg.head_dim, cfg.mapping_width, kind, rng,
            kernel=cfg.kernel_size, window=cfg.swin_window,
            shifted=(kind == "swin" and i % 2 == 1),
            dropout_p=cfg.dropout[level], dtype=dtype))
    return _BlockStack(blocks)


class HDiTModel(Module):
    """Parameter set and wiring for the hourglass forward pass.

    forward() returns the raw network output F; diffusion preconditioning
    wraps it outside the model.
    """

    def __init__(self, cfg: ModelConfig, rng: RngStream, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        L = cfg.levels
        self.mapping = MappingNetwork(cfg.mapping_width, cfg.mapping_depth,
                                      cfg.num_classes, rng, dtype=dtype)
        self.patch = PatchEmbed(cfg.patch_size, cfg.in_channels, cfg.widths[0],
                                rng, dtype=dtype)
        self.enc = ModuleList(
            [_make_blocks(cfg, lvl, cfg.depths[lvl], rng, dtype) for lvl in range(L - 1)])
        self.merges = ModuleList(
            [TokenMerge(cfg.widths[lvl], cfg.widths[lvl + 1], rng, dtype=dtype)
             for lvl in range(L - 1)])
        self.core = _make_blocks(cfg, L - 1, cfg.depths[L - 1], rng, dtype)
        self.splits = ModuleList(
            [TokenSplit(cfg.widths[lvl + 1], cfg.widths[lvl], rng, dtype=dtype)
             for lvl in range(L - 1)])
        self.skips = ModuleList([LerpSkip(dtype=dtype) for _ in range(L - 1)])
        self.dec = ModuleList(
            [_make_blocks(cfg, lvl, cfg.depths[lvl], rng, dtype) for lvl in range(L - 1)])
        self.out_norm = RMSNorm(cfg.widths[0], dtype=dtype)
        self.out_proj = Linear(cfg.widths[0],
                               cfg.patch_size ** 2 * cfg.in_channels,
                               None, bias=True, zero_init=True, dtype=dtype)

    # -- forward -------------------------------------------------------
    def __call__(self, img: Tensor, sigma: np.ndarray,
                 class_ids: Optional[np.ndarray] = None,
                 drop_rng: Optional[RngStream] = None,
                 attn_mode: str = "auto") -> Tensor:
        cfg = self.cfg
        B, H, W, C = img.shape
        stride = cfg.patch_size * 2 ** (cfg.levels - 1)
        if H % stride or W % stride:
            raise ValueError(f"input {H}x{W} not divisible by model stride {stride}")
        cond = self.mapping(sigma, class_ids)
        x = self.patch(img)  # (B, h0, w0, d0)

        def run(stack, x4):
            b, h, w, d = x4.shape
            tokens = T.reshape(x4, (b, h * w, d))
            tokens = stack(tokens, cond, (h, w), drop_rng=drop_rng, mode=attn_mode)
            return T.reshape(tokens, (b, h, w, d))

        taps = []
        for lvl in range(cfg.levels - 1):
            x = run(self.enc[lvl], x)
            taps.append(x)
            x = self.merges[lvl](x)
        x = run(self.core, x)
        for lvl in range(cfg.levels - 2, -1, -1):
            x = self.splits[lvl](x)
            x = self.skips[lvl](taps[lvl], x)
            x = run(self.dec[lvl], x)
        x = self.out_proj(self.out_norm(x))
        return depth_to_space(x, cfg.patch_size)

    # -- state I/O -----------------------------------------------------
    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        mine = dict(self.named_parameters())
        missing = set(mine) - set(state)
        extra = set(state) - set(mine)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:3]} "
                           f"extra={sorted(extra)[:3]}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.data = np.ascontiguousarray(arr)


def build_model(cfg: ModelConfig, rng: RngStream, dtype=np.float32) -> HDiTModel:
    return HDiTModel(cfg, rng, dtype=dtype)


# ----------------------------------------------------------------------
# checkpoint container
# ----------------------------------------------------------------------
MAGIC = b"HDIT"
VERSION = 1

_DTYPES = {
    "f4": np.float32,
    "f8": np.float64,
    "i8": np.int64,
    "u8": np.uint64,
}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, sections: dict) -> None:
    """sections: {'model': {name: array}, 'ema': {...}, ...}.

    Layout: magic, u32 version, u64 manifest length, JSON manifest of
    (name, dtype, shape, offset), then raw little-endian payloads.
    """
    entries = []
    payloads = []
    offset = 0
    for sec in sections:
        for name, arr in sections[sec].items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_NAMES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {sec}/{name}")
            buf = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
            entries.append({
                "name": f"{sec}/{name}",
                "dtype": _DTYPE_NAMES[arr.dtype],
                "shape": list(arr.shape),
                "offset": offset,
            })
            payloads.append(buf)
            offset += len(buf)
    manifest = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for buf in payloads:
            fh.write(buf)


def load_checkpoint(path) -> dict:
    """Inverse of save_checkpoint; returns {'model': {...}, ...}."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    try:
        entries = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt manifest: {e}") from e
    base = 16 + mlen
    out: dict = {}
    for ent in entries:
        dtype = np.dtype(_DTYPES[ent["dtype"]]).newbyteorder("<")
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + ent["offset"]
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        arr = np.ascontiguousarray(arr.astype(dtype.newbyteorder("=")).reshape(shape))
        sec, name = ent["name"].split("/", 1)
        out.setdefault(sec, {})[name] = arr
    return out
