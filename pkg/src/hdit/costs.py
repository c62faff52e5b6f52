"""Analytic FLOP and parameter counting.

Conventions: one multiply-accumulate = one FLOP (the convention that makes a
DiT-B/4 forward at 128^2 come out at ~106 GFLOP); softmax, normalization and
other elementwise work is excluded (sub-percent at these shapes).  Counts are
per single image.

Per transformer block of width d over n tokens:
  attention projections (QKV + out)      4 n d^2
  attention mixing, global               2 n^2 d
  attention mixing, neighborhood         2 n min(k,h) min(k,w) d
  gated feedforward (hidden 3d, 3 mats)  9 n d^2
The parameter side mirrors the model builder field-for-field; the two are
required to agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .blocks import N_FOURIER
from .model import ModelConfig, adapt_resolution


@dataclass
class CostReport:
    resolution: int
    flops: dict = field(default_factory=dict)   # component -> FLOPs
    params: int = 0
    tokens_per_level: list = field(default_factory=list)
    per_level: list = field(default_factory=list)  # per-level component dicts

    @property
    def total_flops(self) -> float:
        return float(sum(self.flops.values()))

    @property
    def gflops(self) -> float:
        return self.total_flops / 1e9

    def add(self, component: str, n: float) -> None:
        self.flops[component] = self.flops.get(component, 0.0) + float(n)


def _mapping_cost(mapping_width: int, mapping_depth: int, num_classes: int):
    """(flops, params) of the conditioning network, per image."""
    mw = mapping_width
    flops = 2 * N_FOURIER * mw + mapping_depth * mw * mw
    params = (2 * N_FOURIER * mw + mw) + (num_classes + 1) * mw \
        + mapping_depth * (mw * mw + mw)
    return flops, params


def _attn_mix(n: int, d: int, kind: str, h: int, w: int,
              kernel: int, window: int) -> float:
    if kind == "global":
        return 2.0 * n * n * d
    if kind == "neighborhood":
        return 2.0 * n * min(kernel, h) * min(kernel, w) * d
    if kind == "swin":
        return 2.0 * n * window * window * d
    raise ValueError(f"unknown attention kind {kind!r}")


def count_hdit(cfg: ModelConfig, res: int | None = None) -> CostReport:
    """Cost of the hourglass described by cfg, evaluated at resolution res
    (defaults to cfg.input_size; other values re-count the same structure on
    larger or smaller maps without touching it)."""
    res = cfg.input_size if res is None else res
    p = cfg.patch_size
    c = cfg.in_channels
    L = cfg.levels
    rep = CostReport(resolution=res)

    side0 = res // p
    if side0 * p != res:
        raise ValueError(f"resolution {res} not divisible by patch {p}")
    sides = []
    for lvl in range(L):
        side = side0 // (2 ** lvl)
        if side * (2 ** lvl) != side0 or side < 1:
            raise ValueError(f"resolution {res} too small for {L} levels")
        sides.append(side)
    rep.tokens_per_level = [s * s for s in sides]

    n0 = side0 * side0
    rep.add("embed", n0 * (p * p * c) * cfg.widths[0])
    rep.add("head", n0 * cfg.widths[0] * (p * p * c))

    mf, mp = _mapping_cost(cfg.mapping_width, cfg.mapping_depth, cfg.num_classes)
    rep.add("mapping", mf)
    params = mp
    # patch embed + output head + final norm gain
    params += (p * p * c) * cfg.widths[0] + cfg.widths[0]
    params += cfg.widths[0] * (p * p * c) + (p * p * c)
    params += cfg.widths[0]

    for lvl in range(L):
        d = cfg.widths[lvl]
        heads = d // cfg.head_dim
        side = sides[lvl]
        n = side * side
        nblocks = cfg.depths[lvl] * (2 if lvl < L - 1 else 1)
        level = {
            "attn_proj": nblocks * 4.0 * n * d * d,
            "attn_mix": nblocks * _attn_mix(n, d, cfg.attn_kinds[lvl], side, side,
                                            cfg.kernel_size, cfg.swin_window),
            "ffn": nblocks * 9.0 * n * d * d,
            "cond": nblocks * float(cfg.mapping_width * d),
        }
        for k, v in level.items():
            rep.add(k, v)
        rep.per_level.append(level)
        # per-block parameters: QKV (3d^2) + out (d^2) + per-head scale
        # + GEGLU (9d^2) + conditioning projection (mw*d + d)
        params += nblocks * (4 * d * d + heads + 9 * d * d
                             + cfg.mapping_width * d + d)
        if lvl < L - 1:
            d_next = cfg.widths[lvl + 1]
            n_next = (side // 2) ** 2
            rep.add("merge_split", n_next * 4 * d * d_next   # merge
                    + n_next * d_next * 4 * d)               # split
            params += 4 * d * d_next + d_next * 4 * d
            params += 1  # lerp coefficient

    rep.params = params
    return rep


def count_dit(width: int, depth: int, patch: int, res: int, *,
              hidden_mult: float = 4.0, gated: bool = False,
              style: str = "dit", head_dim: int = 64,
              mapping_width: int = 768, mapping_depth: int = 1,
              num_classes: int = 1000, in_channels: int = 3) -> CostReport:
    """Cost of an isotropic (single-level) diffusion transformer.

    style='dit' is the classic baseline: additive positional embedding,
    per-block adaptive-norm conditioning with gates (6d), plain 2-matrix MLP
    of hidden width hidden_mult*d.  style='hdit' switches every convention to
    the ones used by count_hdit (gated 3d FFN, rope, per-block conditioning
    projection, mapping network), which makes the two counters comparable on
    a one-level config.
    """
    if res % patch:
        raise ValueError(f"resolution {res} not divisible by patch {patch}")
    d = width
    c = in_channels
    side = res // patch
    n = side * side
    rep = CostReport(resolution=res, tokens_per_level=[n])

    rep.add("embed", n * (patch * patch * c) * d)
    rep.add("head", n * d * (patch * patch * c))
    rep.add("attn_proj", depth * 4.0 * n * d * d)
    rep.add("attn_mix", depth * 2.0 * float(n) * n * d)
    mats = 3 if gated else 2
    rep.add("ffn", depth * mats * hidden_mult * n * d * d)

    params = (patch * patch * c) * d + d          # patch embed
    params += d * (patch * patch * c) + (patch * patch * c)  # head
    params += d                                   # final norm gain
    params += depth * 4 * d * d                   # qkv + out
    params += depth * int(mats * hidden_mult * d * d)

    if style == "dit":
        params += n * d                           # learned positional embedding
        params += depth * (d * 6 * d + 6 * d)     # adaLN-zero conditioning
        params += (2 * N_FOURIER * d + d) + (num_classes + 1) * d  # t/class embed
        rep.add("cond", depth * 6.0 * d * d)
    elif style == "hdit":
        mf, mp = _mapping_cost(mapping_width, mapping_depth, num_classes)
        rep.add("mapping", mf)
        rep.add("cond", depth * float(mapping_width * d))
        params += mp
        params += depth * (mapping_width * d + d)  # conditioning projections
        params += depth * (d // head_dim)          # per-head scales
    else:
        raise ValueError(f"unknown style {style!r}")

    rep.params = params
    return rep


DIT_B4 = dict(width=768, depth=12, patch=4)


def scaling_sweep(base_cfg: ModelConfig, resolutions) -> list:
    """Adapted-hourglass vs DiT-B/4 cost at each resolution.

    Returns rows of (res, hdit_gflops, dit_gflops, reduction_percent).
    """
    rows = []
    for res in resolutions:
        cfg = adapt_resolution(base_cfg, res) if res != base_cfg.input_size else base_cfg
        hd = count_hdit(cfg).gflops
        dt = count_dit(res=res, **DIT_B4).gflops
        rows.append((res, hd, dt, 100.0 * (1.0 - hd / dt)))
    return rows


def asymptotic_check(base_cfg: ModelConfig, max_doublings: int = 3) -> dict:
    """Linear-complexity evidence for the local hierarchy.

    Adapts base_cfg up by max_doublings octaves, then measures how total cost
    responds to one further doubling of the *input* while the structure stays
    fixed: token-linear scaling means a ratio near 4.  The same doubling on
    the isotropic baseline is quadratic-dominated (ratio far above 4).  Also
    verifies the geometric-series bound: all the attention added by the outer
    levels is at most 4/3 of the outermost level's attention.
    """
    if max_doublings < 3:
        raise ValueError("need at least 3 doublings")
    top_res = base_cfg.input_size * 2 ** max_doublings
    cfg = adapt_resolution(base_cfg, top_res)
    lo = count_hdit(cfg, top_res)
    hi = count_hdit(cfg, 2 * top_res)
    dit_lo = count_dit(res=top_res, **DIT_B4)
    dit_hi = count_dit(res=2 * top_res, **DIT_B4)

    added = sum(lvl["attn_mix"] + lvl["attn_proj"] for lvl in lo.per_level[:max_doublings])
    outermost = lo.per_level[0]["attn_mix"] + lo.per_level[0]["attn_proj"]
    return {
        "resolution": top_res,
        "hdit_ratio": hi.total_flops / lo.total_flops,
        "dit_ratio": dit_hi.total_flops / dit_lo.total_flops,
        "added_attention": added,
        "outermost_attention": outermost,
        "geometric_bound_ok": added <= (4.0 / 3.0) * outermost,
    }
