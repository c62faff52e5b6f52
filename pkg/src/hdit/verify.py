"""Self-checks runnable from the CLI: gradient finite-difference suite,
numeric oracles, and structural invariants.  Each check returns a pass/fail
plus a one-line measurement, so failures point at the number that moved."""
from __future__ import annotations

import math
import time
from typing import Callable, Optional

import numpy as np

from . import blocks as B
from . import tensor as T
from .blocks import TAU_MIN
from .config import RunConfig, TrainConfig, dump_config, parse_config
from .diffusion import (DiffusionConfig, edm_scalings, loss_weight,
                        precondition, sample_sigma, sigma_cdf)
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .rng import INIT, NOISE, SAMPLE, SIGMA, RngStream
from .sampler import SamplerConfig, guided_denoise, sample, sigma_grid
from .tensor import Tensor

Check = tuple  # (name, ok, detail)


def _toy_model_config(num_classes: int = 2) -> ModelConfig:
    return ModelConfig(input_size=16, patch_size=2, widths=[8, 16],
                       depths=[1, 1], attn_kinds=["neighborhood", "global"],
                       kernel_size=3, head_dim=8, mapping_width=16,
                       num_classes=num_classes, allow_nonstandard_core=True)


def _perturb(module: B.Module, seed: int, scale: float = 0.05) -> None:
    """Kick every parameter (zero-initialized ones included) so gradients
    actually flow through all branches."""
    stream = RngStream(seed, INIT)
    for _, p in module.named_parameters():
        p.data = p.data + scale * stream.normal(p.data.shape, dtype=np.float64) \
            .astype(p.data.dtype)


# ----------------------------------------------------------------------
# gradient suite
# ----------------------------------------------------------------------
def _fd_gradcheck(name: str, params: list, loss_fn: Callable[[], Tensor],
                  probes: int = 12, h: float = 1e-5,
                  tol: float = 1e-4) -> Check:
    """Central finite differences against the backward pass, in binary64."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        take = min(probes, flat.size)
        idxs = np.linspace(0, flat.size - 1, take).astype(np.int64)
        for i in idxs:
            old = flat[i]
            step = h * max(1.0, abs(float(old)))
            flat[i] = old + step
            lp = float(loss_fn().data)
            flat[i] = old - step
            lm = float(loss_fn().data)
            flat[i] = old
            fd = (lp - lm) / (2.0 * step)
            an = float(gflat[i])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
    return (name, worst < tol, f"max rel err {worst:.3e} (tol {tol:g})")


def run_grad_suite() -> list:
    checks = []
    f64 = np.float64

    # tensor-core composite: linear/gelu/softmax/sqrt/log chain
    s = RngStream(10, INIT)
    x = Tensor(s.normal((3, 5), dtype=f64), requires_grad=True)
    w = Tensor(s.normal((4, 5), dtype=f64) * 0.5, requires_grad=True)
    b = Tensor(s.normal((4,), dtype=f64) * 0.1, requires_grad=True)
    r = Tensor(s.normal((3, 4), dtype=f64))
    def chain_loss():
        y = T.softmax(T.gelu(T.linear(x, w, b)), axis=-1)
        y = y * r + T.sqrt(T.square(y) + T.full(y.shape, 1.0, dtype=f64))
        return T.mean(T.log(y + T.full(y.shape, 2.0, dtype=f64)))
    checks.append(_fd_gradcheck("grad/tensor-chain", [x, w, b], chain_loss))

    # rms norm
    s = RngStream(11, INIT)
    x = Tensor(s.normal((2, 7, 6), dtype=f64), requires_grad=True)
    g = Tensor(1.0 + 0.3 * s.normal((6,), dtype=f64), requires_grad=True)
    r = Tensor(s.normal((2, 7, 6), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/rms-norm", [x, g],
        lambda: T.sum_(B.rms_norm(x, g) * r)))

    # conditioned norm
    s = RngStream(12, INIT)
    norm = B.AdaRMSNorm(6, 5, dtype=f64)
    _perturb(norm, 112)
    x = Tensor(s.normal((2, 4, 6), dtype=f64), requires_grad=True)
    cond = Tensor(s.normal((2, 5), dtype=f64), requires_grad=True)
    r = Tensor(s.normal((2, 4, 6), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/ada-rms-norm", [x, cond] + [p for _, p in norm.named_parameters()],
        lambda: T.sum_(norm(x, cond) * r)))

    # axial rope
    s = RngStream(13, INIT)
    freqs = B.RoPEFrequencies(8)
    pos = B.grid_positions(3, 4)
    x = Tensor(s.normal((2, 12, 8), dtype=f64), requires_grad=True)
    r = Tensor(s.normal((2, 12, 8), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/axial-rope", [x],
        lambda: T.sum_(B.apply_axial_rope(x, freqs, pos) * r)))

    # attention variants: q, k, v, per-head scale
    def attn_case(seed, fn, n):
        st = RngStream(seed, INIT)
        q = Tensor(st.normal((2, 2, n, 8), dtype=f64), requires_grad=True)
        k = Tensor(st.normal((2, 2, n, 8), dtype=f64), requires_grad=True)
        v = Tensor(st.normal((2, 2, n, 8), dtype=f64), requires_grad=True)
        sc = Tensor(np.array([3.0, 7.0]), requires_grad=True)
        r = Tensor(st.normal((2, 2, n, 8), dtype=f64))
        return [q, k, v, sc], lambda: T.sum_(fn(q, k, v, sc) * r)

    ps, lf = attn_case(14, lambda q, k, v, sc: B.cosine_attention(q, k, v, sc), 9)
    checks.append(_fd_gradcheck("grad/cosine-attention", ps, lf, probes=8))
    ps, lf = attn_case(
        15, lambda q, k, v, sc: B.neighborhood_attention(q, k, v, sc, 4, 4, 3,
                                                         mode="dense"), 16)
    checks.append(_fd_gradcheck("grad/neighborhood-dense", ps, lf, probes=6))
    ps, lf = attn_case(
        16, lambda q, k, v, sc: B.neighborhood_attention(q, k, v, sc, 4, 4, 3,
                                                         mode="windowed"), 16)
    checks.append(_fd_gradcheck("grad/neighborhood-windowed", ps, lf, probes=6))
    ps, lf = attn_case(
        17, lambda q, k, v, sc: B.swin_attention(q, k, v, sc, 4, 4, 2,
                                                 shifted=True), 16)
    checks.append(_fd_gradcheck("grad/swin-shifted", ps, lf, probes=6))

    # gated feedforward
    s = RngStream(18, INIT)
    ffn = B.GEGLUFeedForward(6, RngStream(18, INIT, 1), dtype=f64)
    _perturb(ffn, 118)
    x = Tensor(s.normal((2, 5, 6), dtype=f64), requires_grad=True)
    r = Tensor(s.normal((2, 5, 6), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/geglu-ffn", [x] + [p for _, p in ffn.named_parameters()],
        lambda: T.sum_(ffn(x) * r), probes=6))

    # one full block
    blk = B.HDiTBlock(8, 8, 12, "neighborhood", RngStream(19, INIT),
                      kernel=3, dtype=f64)
    _perturb(blk, 119)
    s = RngStream(20, INIT)
    x = Tensor(s.normal((2, 12, 8), dtype=f64), requires_grad=True)
    cond = Tensor(s.normal((2, 12), dtype=f64), requires_grad=True)
    r = Tensor(s.normal((2, 12, 8), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/hdit-block", [x, cond] + [p for _, p in blk.named_parameters()],
        lambda: T.sum_(blk(x, cond, (3, 4)) * r), probes=5))

    # mapping network
    mapping = B.MappingNetwork(12, 1, 3, RngStream(21, INIT), dtype=f64)
    _perturb(mapping, 121)
    sig = np.array([0.3, 2.0])
    ids = np.array([0, 2])
    r = Tensor(RngStream(22, INIT).normal((2, 12), dtype=f64))
    checks.append(_fd_gradcheck(
        "grad/mapping", [p for _, p in mapping.named_parameters()],
        lambda: T.sum_(mapping(sig, ids) * r), probes=6))

    # full 2-level model end to end through the training loss
    cfg = _toy_model_config()
    model = build_model(cfg, RngStream(23, INIT), dtype=f64)
    _perturb(model, 123)
    dcfg = DiffusionConfig()
    s = RngStream(24, INIT)
    imgs = (s.uniform((2, 16, 16, 3), dtype=f64) * 2 - 1)
    sig = np.array([0.4, 1.7])
    eps = s.normal(imgs.shape, dtype=f64)
    x_sigma = imgs + sig.reshape(-1, 1, 1, 1) * eps
    labels = np.array([0, 1])
    w = loss_weight(sig, dcfg)
    def model_loss():
        den = precondition(model, x_sigma, sig, dcfg, labels)
        per = T.mean(T.square(den - Tensor(imgs)), axis=(1, 2, 3))
        return T.mean(per * Tensor(w))
    checks.append(_fd_gradcheck(
        "grad/toy-model-e2e", [p for _, p in model.named_parameters()],
        model_loss, probes=4))
    return checks


# ----------------------------------------------------------------------
# oracle suite
# ----------------------------------------------------------------------
def _loop_cosine_attention(q, k, v, scale):
    """Literal-definition oracle in binary64: normalize, per-head scaled
    cosine logits, softmax, weighted sum — all python loops."""
    Bz, H, n, dh = q.shape
    out = np.zeros_like(q, dtype=np.float64)
    for b in range(Bz):
        for h in range(H):
            qn = np.empty((n, dh))
            kn = np.empty((n, dh))
            for i in range(n):
                qn[i] = q[b, h, i] / (math.sqrt(np.sum(q[b, h, i] ** 2)) + 1e-6)
                kn[i] = k[b, h, i] / (math.sqrt(np.sum(k[b, h, i] ** 2)) + 1e-6)
            for i in range(n):
                logits = np.array([scale[h] * float(qn[i] @ kn[j])
                                   for j in range(n)])
                e = np.exp(logits - logits.max())
                a = e / e.sum()
                out[b, h, i] = sum(a[j] * v[b, h, j] for j in range(n))
    return out


def run_oracle_suite() -> list:
    checks = []
    s = RngStream(30, INIT)

    # library float32 path vs binary64 loop oracle
    q = s.normal((2, 2, 10, 8), dtype=np.float64)
    k = s.normal((2, 2, 10, 8), dtype=np.float64)
    v = s.normal((2, 2, 10, 8), dtype=np.float64)
    sc = np.array([4.0, 11.0])
    lib = B.cosine_attention(Tensor(q.astype(np.float32)),
                             Tensor(k.astype(np.float32)),
                             Tensor(v.astype(np.float32)),
                             Tensor(sc.astype(np.float32))).data
    ref = _loop_cosine_attention(q, k, v, sc)
    rel = np.abs(lib - ref).max() / np.abs(ref).max()
    checks.append(("oracle/cosine-vs-loop", rel < 1e-5, f"rel err {rel:.2e}"))

    # neighborhood == global when the kernel covers the map (dense + windowed)
    worst = 0.0
    st = RngStream(31, INIT)
    for case in range(20):
        h = int(st.integers(2, 7, (1,))[0])
        w = int(st.integers(2, 7, (1,))[0])
        kernel = max(h, w) + (1 - (max(h, w) % 2))  # odd, >= map extent
        n = h * w
        q = Tensor(st.normal((1, 2, n, 8), dtype=np.float64))
        k = Tensor(st.normal((1, 2, n, 8), dtype=np.float64))
        v = Tensor(st.normal((1, 2, n, 8), dtype=np.float64))
        tau = Tensor(np.array([5.0, 13.0]))
        ref = B.cosine_attention(q, k, v, tau).data
        for mode in ("dense", "windowed"):
            got = B.neighborhood_attention(q, k, v, tau, h, w, kernel,
                                           mode=mode).data
            worst = max(worst, float(np.abs(got - ref).max()))
    checks.append(("oracle/neighborhood-covers-map", worst < 1e-5,
                   f"20 cases, max abs diff {worst:.2e}"))

    # swin with window == map == global attention
    worst = 0.0
    for win, shifted in [(3, False), (3, True), (4, False), (4, True)]:
        n = win * win
        q = Tensor(st.normal((2, 2, n, 8), dtype=np.float64))
        k = Tensor(st.normal((2, 2, n, 8), dtype=np.float64))
        v = Tensor(st.normal((2, 2, n, 8), dtype=np.float64))
        tau = Tensor(np.array([6.0, 9.0]))
        ref = B.cosine_attention(q, k, v, tau).data
        got = B.swin_attention(q, k, v, tau, win, win, win, shifted=shifted).data
        worst = max(worst, float(np.abs(got - ref).max()))
    checks.append(("oracle/swin-covers-map", worst < 1e-5,
                   f"max abs diff {worst:.2e}"))

    # cost tables
    from .costs import DIT_B4, count_dit, count_hdit
    from .model import adapt_resolution, preset_imagenet_128
    dit_ok = all(abs(count_dit(res=r, **DIT_B4).gflops / t - 1) < 0.05
                 for r, t in [(128, 106), (256, 657), (512, 6341)])
    checks.append(("oracle/cost-dit-table", dit_ok,
                   "DiT-B/4 at 128/256/512 within 5%"))
    base = preset_imagenet_128()
    hd = [count_hdit(base if r == 128 else adapt_resolution(base, r)).gflops
          for r in (128, 256, 512)]
    hdit_ok = all(abs(g / t - 1) < 0.10 for g, t in zip(hd, (31, 65, 198)))
    checks.append(("oracle/cost-hdit-table", hdit_ok,
                   f"{hd[0]:.1f}/{hd[1]:.1f}/{hd[2]:.1f} vs 31/65/198"))

    # analytic parameter count == real builder count
    cfg = _toy_model_config()
    built = build_model(cfg, RngStream(32, INIT)).param_count()
    counted = count_hdit(cfg).params
    a128 = preset_imagenet_128()
    built128 = build_model(a128, RngStream(33, INIT)).param_count()
    counted128 = count_hdit(a128).params
    ok = built == counted and built128 == counted128
    checks.append(("oracle/params-exact-agreement", ok,
                   f"toy {built}=={counted}, 128-config {built128}=={counted128}"))

    # loss-weight anchors
    dcfg = DiffusionConfig()
    w05 = loss_weight(np.array([0.5]), dcfg)[0]
    w01 = loss_weight(np.array([0.1]), dcfg)[0]
    w10 = loss_weight(np.array([10.0]), dcfg)[0]
    ok = w05 == 2.0 and abs(w01 - 3.846) < 1e-3 and abs(w10 - 0.009975) < 1e-6
    checks.append(("oracle/soft-min-snr-anchors", ok,
                   f"w(0.5)={w05}, w(0.1)={w01:.6f}, w(10)={w10:.8f}"))

    # Kolmogorov test of the sigma sampler (20k draws here; quick)
    draws = np.concatenate([sample_sigma(1000, dcfg, RngStream(34, SIGMA, i))
                            for i in range(20)])
    xs = np.sort(draws)
    n = xs.size
    acdf = sigma_cdf(xs, dcfg)
    d_ks = max(np.abs(np.arange(1, n + 1) / n - acdf).max(),
               np.abs(acdf - np.arange(n) / n).max())
    checks.append(("oracle/sigma-kolmogorov", d_ks < 0.01, f"D={d_ks:.4f}"))

    # preconditioner identities, relative, 100 sigmas
    sig = np.logspace(-3, 3, 100)
    cs, co, ci, _ = edm_scalings(sig, dcfg.sigma_data)
    d2 = dcfg.sigma_data ** 2
    e1 = np.abs(ci ** 2 * (sig ** 2 + d2) - 1.0).max()
    e2 = np.abs(cs * (sig ** 2 + d2) / d2 - 1.0).max()
    e3 = np.abs(co ** 2 * (sig ** 2 + d2) / (sig ** 2 * d2) - 1.0).max()
    worst = max(e1, e2, e3)
    checks.append(("oracle/preconditioner-identities", worst < 1e-10,
                   f"max rel err {worst:.2e}"))

    # perfect-denoiser stub: sampler contracts to the target
    class _Stub:
        class cfg:
            input_size = 8
            in_channels = 3
        class mapping:
            uncond_id = 0
        def __init__(self, target):
            self.target = target
        def __call__(self, x, sigma, ids, drop_rng=None, attn_mode="auto"):
            csk, cou, cin, _ = edm_scalings(sigma, 0.5)
            b = (-1, 1, 1, 1)
            raw = (self.target[None] - (x.data / cin.reshape(b)) * csk.reshape(b)) \
                / cou.reshape(b)
            return Tensor(raw)

    x_star = np.clip(RngStream(35, INIT).normal((8, 8, 3), dtype=np.float64) * 0.4,
                     -1, 1)
    out = sample(_Stub(x_star), dcfg, SamplerConfig(steps=25), 2,
                 RngStream(36, SAMPLE))
    err = np.abs(out - x_star[None].astype(np.float32)).max()
    checks.append(("oracle/stub-sampler-contraction", err < 1e-4,
                   f"max err {err:.2e} after full grid"))

    # zero-init network: initial loss matches the closed form for a flat image
    cfgm = _toy_model_config(num_classes=0)
    cfgm = ModelConfig(**{**cfgm.__dict__, "input_size": 32})
    model = build_model(cfgm, RngStream(37, INIT))
    const = 0.35
    imgs = np.full((8, 32, 32, 3), const, dtype=np.float32)
    sig = np.full(8, 1.2)
    eps = RngStream(38, NOISE).normal(imgs.shape, dtype=np.float64)
    x_sigma = (imgs + sig.reshape(-1, 1, 1, 1) * eps).astype(np.float32)
    den = precondition(model, x_sigma, sig, dcfg, None)
    per = np.mean((den.data - imgs) ** 2, axis=(1, 2, 3))
    got = float(np.mean(loss_weight(sig, dcfg) * per))
    csk = edm_scalings(sig, 0.5)[0][0]
    expect = float(loss_weight(sig, dcfg)[0]
                   * ((1 - csk) ** 2 * const ** 2 + csk ** 2 * sig[0] ** 2))
    rel = abs(got - expect) / expect
    checks.append(("oracle/zero-net-initial-loss", rel < 0.1,
                   f"measured {got:.4f} vs closed form {expect:.4f} (rel {rel:.3f})"))
    return checks


# ----------------------------------------------------------------------
# invariants suite
# ----------------------------------------------------------------------
def run_invariants_suite(model=None) -> list:
    checks = []
    s = RngStream(40, INIT)

    # block is the identity at construction
    worst_exact = True
    for kind, hw, kw in [("neighborhood", (3, 4), {"kernel": 3}),
                         ("global", (3, 4), {}),
                         ("swin", (4, 4), {"window": 2})]:
        blk = B.HDiTBlock(8, 8, 12, kind, RngStream(41, INIT), **kw)
        x = Tensor(s.normal((2, hw[0] * hw[1], 8), dtype=np.float64)
                   .astype(np.float32))
        cond = Tensor(s.normal((2, 12), dtype=np.float64).astype(np.float32))
        y = blk(x, cond, hw)
        worst_exact = worst_exact and np.array_equal(y.data, x.data)
    checks.append(("invariant/block-identity-at-construction", worst_exact,
                   "all three attention kinds bit-equal"))

    # whole model: raw output is exactly zero at construction
    cfg = _toy_model_config()
    fresh = build_model(cfg, RngStream(42, INIT))
    img = Tensor(s.normal((2, 16, 16, 3), dtype=np.float64).astype(np.float32))
    raw = fresh(img, np.array([0.5, 1.0]), np.array([0, 1]))
    checks.append(("invariant/zero-output-at-construction",
                   float(np.abs(raw.data).max()) == 0.0,
                   f"max |F| = {float(np.abs(raw.data).max())}"))

    # pixel shuffle round trip
    x = Tensor(s.normal((2, 8, 8, 6), dtype=np.float64))
    rt = B.depth_to_space(B.space_to_depth(x, 2), 2)
    ok = np.array_equal(rt.data, x.data)
    checks.append(("invariant/merge-split-round-trip", ok, "bit-exact"))

    # lerp endpoints
    skip = Tensor(s.normal((2, 4, 8), dtype=np.float64))
    up = Tensor(s.normal((2, 4, 8), dtype=np.float64))
    f0 = B.lerp_merge(skip, up, Tensor(np.array(0.0)))
    f1 = B.lerp_merge(skip, up, Tensor(np.array(1.0)))
    ok = np.array_equal(f0.data, up.data) and np.array_equal(f1.data, skip.data)
    checks.append(("invariant/lerp-endpoints", ok, "f=0 -> up, f=1 -> skip"))

    # rope shift equivariance: translating the grid leaves attention alone
    freqs = B.RoPEFrequencies(8)
    pos = B.grid_positions(4, 5)
    q = Tensor(s.normal((1, 2, 20, 8), dtype=np.float64))
    k = Tensor(s.normal((1, 2, 20, 8), dtype=np.float64))
    v = Tensor(s.normal((1, 2, 20, 8), dtype=np.float64))
    tau = Tensor(np.array([5.0, 9.0]))
    def attn_at(p):
        return B.cosine_attention(B.apply_axial_rope(q, freqs, p),
                                  B.apply_axial_rope(k, freqs, p), v, tau).data
    shift_err = float(np.abs(attn_at(pos) - attn_at(pos + np.array([37, -12]))).max())
    checks.append(("invariant/rope-shift-equivariance", shift_err < 1e-5,
                   f"max abs diff {shift_err:.2e}"))

    # logit bound: |scaled cosine| <= scale
    qn = q.data / (np.linalg.norm(q.data, axis=-1, keepdims=True) + 1e-6)
    kn = k.data / (np.linalg.norm(k.data, axis=-1, keepdims=True) + 1e-6)
    logits = tau.data.reshape(-1, 1, 1) * (qn @ kn.transpose(0, 1, 3, 2))
    bound = float(np.abs(logits).max()) <= float(tau.data.max()) + 1e-6
    checks.append(("invariant/logit-bound", bound,
                   f"max |logit| {np.abs(logits).max():.3f} <= max scale {tau.data.max()}"))

    # learned attention scales respect the floor
    subject = model if model is not None else fresh
    taus = [p.data for n, p in subject.named_parameters()
            if n.rsplit(".", 1)[-1] == "tau"]
    tau_min = min(float(t.min()) for t in taus)
    checks.append(("invariant/attention-scale-floor", tau_min >= TAU_MIN,
                   f"min scale {tau_min} (floor {TAU_MIN})"))

    # checkpoint round trip
    import os
    import tempfile
    tmp = os.path.join(tempfile.mkdtemp(), "ck.bin")
    state = {name: p.data for name, p in fresh.named_parameters()}
    save_checkpoint(tmp, {"model": state})
    back = load_checkpoint(tmp)["model"]
    ok = all(np.array_equal(back[nm], state[nm]) for nm in state)
    checks.append(("invariant/checkpoint-round-trip", ok, "bit-exact"))

    # config round trip
    rc = RunConfig(model=cfg, diffusion=DiffusionConfig(),
                   sampler=SamplerConfig(), train=TrainConfig())
    rc2 = parse_config(dump_config(rc))
    ok = dump_config(rc2) == dump_config(rc) and rc2 == rc
    checks.append(("invariant/config-round-trip", ok, "parse∘dump identity"))

    # sigma grid shape
    g = sigma_grid(SamplerConfig(steps=17))
    ok = g[0] == 1e3 and g[-1] == 0.0 and np.all(np.diff(g) < 0) and len(g) == 18
    checks.append(("invariant/sigma-grid", ok,
                   f"[{g[0]}, ..., {g[-1]}], strictly decreasing"))

    # the sampler never evaluates sigma = 0, and w=1 skips the uncond branch
    calls = []
    class _Probe:
        class cfg:
            input_size = 8
            in_channels = 3
        class mapping:
            uncond_id = 1
        dtype = np.float32
        def __call__(self, x, sigma, ids, drop_rng=None, attn_mode="auto"):
            calls.append((float(np.min(sigma)), None if ids is None else ids.copy()))
            return Tensor(np.zeros_like(x.data))
    sample(_Probe(), DiffusionConfig(), SamplerConfig(steps=6), 1,
           RngStream(43, SAMPLE), class_ids=np.array([0]))
    min_sigma = min(c[0] for c in calls)
    uncond_calls = sum(1 for c in calls if c[1] is None)
    ok = min_sigma > 0.0 and uncond_calls == 0
    checks.append(("invariant/sampler-sigma-positive", ok,
                   f"min sigma seen {min_sigma:.2e}, uncond evals at w=1: {uncond_calls}"))
    return checks


SUITES = {
    "grad": run_grad_suite,
    "oracle": run_oracle_suite,
    "invariants": run_invariants_suite,
}


def run_suite(name: str, model=None) -> list:
    if name == "all":
        out = []
        for key in ("grad", "oracle", "invariants"):
            out.extend(run_suite(key, model=model))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r} (grad, oracle, invariants, all)")
    if name == "invariants":
        return run_invariants_suite(model=model)
    return SUITES[name]()


def format_report(checks: list) -> str:
    lines = []
    for name, ok, detail in checks:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name:<42s} {detail}")
    npass = sum(1 for _, ok, _ in checks if ok)
    lines.append(f"{npass}/{len(checks)} checks passed")
    return "\n".join(lines)
