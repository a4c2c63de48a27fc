"""The event-frame dual-branch transformer.

Pipeline for one sample of stacked event frames [T, 2, S, S]:

  stem        two shared conv-norm-relu layers per frame -> X [T, h, w, c]
  temporal    stride-2 conv + flatten + linear per frame  -> T tokens [T, d]
  spatial     stride-2 conv, sum over frames, patch grid  -> N tokens [N, d]
  positions   learned tables added to each token set
  encoders    pre-LN attention blocks per branch:
                Y = LN(x + MSA(LN(x))), out = Y + MLP(Y)
  fusion      one block over the concatenated T+N tokens (with an extra
              input residual when fusion_double_residual is set), split back
  encoders    a second pair of branch blocks on the split tokens
  head        concat, flatten, two-layer MLP -> logits [num_classes]

Every stage has an explicit backward that accumulates into the parameter
tensors' grad buffers; there is no autodiff graph. Forward passes are
pure functions of (frames, Params, ModelConfig), so concurrent inference
on shared Params is safe; only the optimizer mutates parameters.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, fields, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor

NORMALIZE_MODES = ("none", "per-frame-max", "log1p")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every weight shape derives from these."""

    num_classes: int
    frames: int = 8
    input_size: int = 64
    stem_channels: tuple[int, int] = (8, 16)
    stem_strides: tuple[int, int] = (2, 2)
    embed_channels: int = 16
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    depth: int = 1
    patch_grid: int = 4
    activation: str = "relu"
    ln_eps: float = 1e-5
    normalize: str = "log1p"
    fusion_double_residual: bool = True
    share_post_blocks: bool = False
    use_sf: bool = True
    use_tf: bool = True
    use_fusion: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.depth < 1 or self.mlp_ratio < 1:
            raise ConfigError("depth and mlp_ratio must be >= 1")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.normalize not in NORMALIZE_MODES:
            raise ConfigError(f"unknown normalize mode {self.normalize!r}")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")
        e = self.embed_plane
        if e < 1:
            raise ConfigError(f"input_size {self.input_size} too small for the stem strides")
        if self.patch_grid < 1 or e % self.patch_grid != 0:
            raise ConfigError(
                f"patch grid {self.patch_grid} does not divide the {e}x{e} embedding plane"
            )

    @property
    def stem_plane(self) -> int:
        n = self.input_size
        for s in self.stem_strides:
            n = (n - 1) // s + 1
        return n

    @property
    def embed_plane(self) -> int:
        return (self.stem_plane - 1) // 2 + 1

    @property
    def num_patches(self) -> int:
        return self.patch_grid * self.patch_grid

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def toy_config(num_classes: int = 4) -> ModelConfig:
    """Small configuration used by the gradient suite: forward+backward are
    cheap enough for exhaustive finite differences."""
    return ModelConfig(
        num_classes=num_classes,
        frames=4,
        input_size=8,
        stem_channels=(4, 8),
        stem_strides=(2, 2),
        embed_channels=8,
        dim=16,
        heads=2,
        mlp_ratio=2,
        depth=1,
        patch_grid=1,
        normalize="none",
    )


class Params:
    """Named learnable tensors in a fixed order."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def as_dict(self) -> "OrderedDict[str, Tensor]":
        return self._tensors

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def copy(self) -> "Params":
        return Params(OrderedDict((k, v.copy()) for k, v in self._tensors.items()))

    @property
    def n_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def allclose(self, other: "Params", tol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(np.allclose(a.data, other[k].data, rtol=0, atol=tol) for k, a in self.items())


def _block_shapes(d: int, hidden: int) -> "OrderedDict[str, tuple]":
    return OrderedDict(
        [
            ("ln1.g", (d,)), ("ln1.b", (d,)),
            ("attn.wq", (d, d)), ("attn.bq", (d,)),
            ("attn.wk", (d, d)), ("attn.bk", (d,)),
            ("attn.wv", (d, d)), ("attn.bv", (d,)),
            ("attn.wo", (d, d)), ("attn.bo", (d,)),
            ("ln2.g", (d,)), ("ln2.b", (d,)),
            ("mlp.w1", (d, hidden)), ("mlp.b1", (hidden,)),
            ("mlp.w2", (hidden, d)), ("mlp.b2", (d,)),
        ]
    )


def encoder_stages(cfg: ModelConfig) -> list[str]:
    stages = ["sf", "tf", "fusion"]
    if not cfg.share_post_blocks:
        stages += ["post_sf", "post_tf"]
    return stages


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Every learnable array's shape, derivable from the config alone."""
    c1, c2 = cfg.stem_channels
    ce = cfg.embed_channels
    e = cfg.embed_plane
    q = e // cfg.patch_grid
    d = cfg.dim
    t, n = cfg.frames, cfg.num_patches
    shapes: "OrderedDict[str, tuple]" = OrderedDict()
    shapes["stem.conv1.w"] = (c1, 2, 3, 3)
    shapes["stem.ln1.g"] = (c1,)
    shapes["stem.ln1.b"] = (c1,)
    shapes["stem.conv2.w"] = (c2, c1, 3, 3)
    shapes["stem.ln2.g"] = (c2,)
    shapes["stem.ln2.b"] = (c2,)
    shapes["temporal.conv.w"] = (ce, c2, 3, 3)
    shapes["temporal.proj.w"] = (e * e * ce, d)
    shapes["temporal.proj.b"] = (d,)
    shapes["spatial.conv.w"] = (ce, c2, 3, 3)
    shapes["spatial.proj.w"] = (q * q * ce, d)
    shapes["spatial.proj.b"] = (d,)
    shapes["pos.temporal"] = (t, d)
    shapes["pos.spatial"] = (n, d)
    hidden = cfg.mlp_ratio * d
    for stage in encoder_stages(cfg):
        depth = 1 if stage == "fusion" else cfg.depth
        for i in range(depth):
            for key, shp in _block_shapes(d, hidden).items():
                shapes[f"{stage}{i}.{key}"] = shp
    shapes["head.w1"] = ((t + n) * d, d)
    shapes["head.b1"] = (d,)
    shapes["head.w2"] = (d, cfg.num_classes)
    shapes["head.b2"] = (cfg.num_classes,)
    return shapes


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > clip
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > clip
    return out * std


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Truncated-normal (std 0.02) weights, zero biases and position tables,
    unit/zero layer-norm scales. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2") or name.startswith("pos."):
            arr = np.zeros(shape)
        else:
            arr = _trunc_normal(rng, shape)
        tensors[name] = Tensor(arr)
    return Params(tensors)


# ---------------------------------------------------------------------------
# stage forwards/backwards
# ---------------------------------------------------------------------------

def _chan_ln_forward(x_chw, gamma, beta, eps):
    """Layer norm over the channel axis at each spatial position."""
    c, h, w = x_chw.shape
    rows = ops.transpose(x_chw, (1, 2, 0)).reshape(h * w, c)
    y, ln_cache = ops.layer_norm(rows, gamma, beta, eps)
    y_chw = ops.transpose(y.reshape(h, w, c), (2, 0, 1))
    return y_chw, (ln_cache, (c, h, w))


def _chan_ln_backward(gy_chw, cache):
    ln_cache, (c, h, w) = cache
    grows = ops.transpose(gy_chw, (1, 2, 0)).reshape(h * w, c)
    gx_rows, gg, gb = ops.layer_norm_backward(grows, ln_cache)
    gx = ops.transpose(gx_rows.reshape(h, w, c), (2, 0, 1))
    return gx, gg, gb


def stem_forward(frames: np.ndarray, params: Params, cfg: ModelConfig):
    """Shared conv-norm-relu x2 per frame: [T,2,S,S] -> [T,h,w,c]."""
    t_frames = frames.shape[0]
    if frames.ndim != 4 or t_frames != cfg.frames or frames.shape[1] != 2 or frames.shape[2:] != (
        cfg.input_size,
        cfg.input_size,
    ):
        raise ShapeError(
            f"stem expects frames [{cfg.frames},2,{cfg.input_size},{cfg.input_size}], got {frames.shape}"
        )
    w1 = params["stem.conv1.w"].data
    w2 = params["stem.conv2.w"].data
    s1, s2 = cfg.stem_strides
    out = []
    caches = []
    for t in range(t_frames):
        a1 = ops.conv2d(frames[t], w1, s1, 1)
        n1, ln1c = _chan_ln_forward(a1, params["stem.ln1.g"].data, params["stem.ln1.b"].data, cfg.ln_eps)
        r1 = ops.relu(n1)
        a2 = ops.conv2d(r1, w2, s2, 1)
        n2, ln2c = _chan_ln_forward(a2, params["stem.ln2.g"].data, params["stem.ln2.b"].data, cfg.ln_eps)
        r2 = ops.relu(n2)
        out.append(ops.transpose(r2, (1, 2, 0)))
        caches.append((frames[t], ln1c, n1, r1, ln2c, n2))
    return np.stack(out), caches


def stem_backward(gx: np.ndarray, caches, params: Params, cfg: ModelConfig) -> None:
    s1, s2 = cfg.stem_strides
    w1 = params["stem.conv1.w"].data
    w2 = params["stem.conv2.w"].data
    for t, (frame, ln1c, n1, r1, ln2c, n2) in enumerate(caches):
        gr2 = ops.transpose(gx[t], (2, 0, 1))
        gn2 = ops.relu_backward(gr2, n2)
        ga2, gg2, gb2 = _chan_ln_backward(gn2, ln2c)
        params["stem.ln2.g"].accum_grad(gg2)
        params["stem.ln2.b"].accum_grad(gb2)
        gr1, gw2 = ops.conv2d_backward(ga2, r1, w2, s2, 1)
        params["stem.conv2.w"].accum_grad(gw2)
        gn1 = ops.relu_backward(gr1, n1)
        ga1, gg1, gb1 = _chan_ln_backward(gn1, ln1c)
        params["stem.ln1.g"].accum_grad(gg1)
        params["stem.ln1.b"].accum_grad(gb1)
        _, gw1 = ops.conv2d_backward(ga1, frame, w1, s1, 1, need_dx=False)
        params["stem.conv1.w"].accum_grad(gw1)


def embed_temporal(x: np.ndarray, params: Params, cfg: ModelConfig):
    """One token per frame: stride-2 conv, flatten, linear to width d."""
    w = params["temporal.conv.w"].data
    rows = []
    chw = []
    for t in range(x.shape[0]):
        xc = ops.transpose(x[t], (2, 0, 1))
        a = ops.conv2d(xc, w, 2, 1)
        rows.append(ops.transpose(a, (1, 2, 0)).reshape(-1))
        chw.append(xc)
    rows = np.stack(rows)
    tokens = ops.bias_add(ops.matmul(rows, params["temporal.proj.w"].data), params["temporal.proj.b"].data)
    return tokens, (chw, rows)


def embed_temporal_backward(gtokens, cache, params: Params, cfg: ModelConfig) -> np.ndarray:
    chw, rows = cache
    grows, gb = ops.bias_add_backward(gtokens)
    grows, gw = ops.matmul_backward(grows, rows, params["temporal.proj.w"].data)
    params["temporal.proj.w"].accum_grad(gw)
    params["temporal.proj.b"].accum_grad(gb)
    w = params["temporal.conv.w"].data
    e = cfg.embed_plane
    ce = cfg.embed_channels
    gx = np.empty((cfg.frames, cfg.stem_plane, cfg.stem_plane, cfg.stem_channels[1]))
    for t in range(cfg.frames):
        ga = ops.transpose(grows[t].reshape(e, e, ce), (2, 0, 1))
        gxc, gw_t = ops.conv2d_backward(ga, chw[t], w, 2, 1)
        params["temporal.conv.w"].accum_grad(gw_t)
        gx[t] = ops.transpose(gxc, (1, 2, 0))
    return gx


def embed_spatial(x: np.ndarray, params: Params, cfg: ModelConfig):
    """Patch tokens of the frame-summed plane: conv per frame, sum over the
    frame axis, non-overlapping patch partition, linear to width d."""
    w = params["spatial.conv.w"].data
    chw = []
    maps = []
    for t in range(x.shape[0]):
        xc = ops.transpose(x[t], (2, 0, 1))
        maps.append(ops.conv2d(xc, w, 2, 1))
        chw.append(xc)
    stackmap = np.stack(maps)
    summed = ops.sum_axis(stackmap, 0)
    g, e, ce = cfg.patch_grid, cfg.embed_plane, cfg.embed_channels
    q = e // g
    plane = ops.transpose(summed, (1, 2, 0))
    patches = plane.reshape(g, q, g, q, ce).transpose(0, 2, 1, 3, 4).reshape(g * g, q * q * ce)
    tokens = ops.bias_add(ops.matmul(patches, params["spatial.proj.w"].data), params["spatial.proj.b"].data)
    return tokens, (chw, stackmap.shape, patches)


def embed_spatial_backward(gtokens, cache, params: Params, cfg: ModelConfig) -> np.ndarray:
    chw, stack_shape, patches = cache
    gpatches, gb = ops.bias_add_backward(gtokens)
    gpatches, gw = ops.matmul_backward(gpatches, patches, params["spatial.proj.w"].data)
    params["spatial.proj.w"].accum_grad(gw)
    params["spatial.proj.b"].accum_grad(gb)
    g, e, ce = cfg.patch_grid, cfg.embed_plane, cfg.embed_channels
    q = e // g
    gplane = gpatches.reshape(g, g, q, q, ce).transpose(0, 2, 1, 3, 4).reshape(e, e, ce)
    gsummed = ops.transpose(gplane, (2, 0, 1))
    gstack = ops.sum_axis_backward(gsummed, stack_shape, 0)
    w = params["spatial.conv.w"].data
    gx = np.empty((cfg.frames, cfg.stem_plane, cfg.stem_plane, cfg.stem_channels[1]))
    for t in range(cfg.frames):
        gxc, gw_t = ops.conv2d_backward(gstack[t], chw[t], w, 2, 1)
        params["spatial.conv.w"].accum_grad(gw_t)
        gx[t] = ops.transpose(gxc, (1, 2, 0))
    return gx


def add_position(tokens: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Add a learned position table to a token matrix of the same shape."""
    if tokens.shape != table.shape:
        raise ShapeError(f"position table {table.shape} does not match tokens {tokens.shape}")
    return ops.add(tokens, table)


def _block_forward(x: np.ndarray, params: Params, prefix: str, cfg: ModelConfig, extra_residual: bool = False):
    """Pre-LN attention block; see module docstring for the wiring."""
    p = lambda k: params[f"{prefix}.{k}"].data
    act, _ = ops.activation_pair(cfg.activation)
    xn, ln1c = ops.layer_norm(x, p("ln1.g"), p("ln1.b"), cfg.ln_eps)
    q = ops.bias_add(ops.matmul(xn, p("attn.wq")), p("attn.bq"))
    k = ops.bias_add(ops.matmul(xn, p("attn.wk")), p("attn.bk"))
    v = ops.bias_add(ops.matmul(xn, p("attn.wv")), p("attn.bv"))
    dh = cfg.head_dim
    sc = 1.0 / np.sqrt(dh)
    attn = []
    heads_out = []
    for hh in range(cfg.heads):
        sl = slice(hh * dh, (hh + 1) * dh)
        scores = ops.scale(ops.matmul(q[:, sl], k[:, sl].T), sc)
        a = ops.softmax_rows(scores)
        attn.append(a)
        heads_out.append(ops.matmul(a, v[:, sl]))
    o = ops.concat(heads_out, axis=1)
    attn_out = ops.bias_add(ops.matmul(o, p("attn.wo")), p("attn.bo"))
    r = ops.add(x, attn_out)
    y, ln2c = ops.layer_norm(r, p("ln2.g"), p("ln2.b"), cfg.ln_eps)
    m1 = ops.bias_add(ops.matmul(y, p("mlp.w1")), p("mlp.b1"))
    m1a = act(m1)
    m2 = ops.bias_add(ops.matmul(m1a, p("mlp.w2")), p("mlp.b2"))
    out = x + y + m2 if extra_residual else y + m2
    cache = {
        "x": x, "xn": xn, "ln1": ln1c, "q": q, "k": k, "v": v, "attn": attn,
        "o": o, "ln2": ln2c, "y": y, "m1": m1, "m1a": m1a, "extra_residual": extra_residual,
    }
    return out, cache


def _block_backward(gout: np.ndarray, cache, params: Params, prefix: str, cfg: ModelConfig) -> np.ndarray:
    p = lambda k: params[f"{prefix}.{k}"]
    _, act_bwd = ops.activation_pair(cfg.activation)
    # out = [x +] y + mlp(y)
    gm2 = gout
    gm1a, gb2 = ops.bias_add_backward(gm2)
    gm1a, gw2 = ops.matmul_backward(gm1a, cache["m1a"], p("mlp.w2").data)
    p("mlp.w2").accum_grad(gw2)
    p("mlp.b2").accum_grad(gb2)
    gm1 = act_bwd(gm1a, cache["m1"])
    gy_mlp, gb1 = ops.bias_add_backward(gm1)
    gy_mlp, gw1 = ops.matmul_backward(gy_mlp, cache["y"], p("mlp.w1").data)
    p("mlp.w1").accum_grad(gw1)
    p("mlp.b1").accum_grad(gb1)
    gy = gout + gy_mlp
    gr, gg2, gb2ln = ops.layer_norm_backward(gy, cache["ln2"])
    p("ln2.g").accum_grad(gg2)
    p("ln2.b").accum_grad(gb2ln)
    # r = x + attn_out
    gattn_out = gr
    go, gbo = ops.bias_add_backward(gattn_out)
    go, gwo = ops.matmul_backward(go, cache["o"], p("attn.wo").data)
    p("attn.wo").accum_grad(gwo)
    p("attn.bo").accum_grad(gbo)
    dh = cfg.head_dim
    sc = 1.0 / np.sqrt(dh)
    q, k, v = cache["q"], cache["k"], cache["v"]
    gq = np.empty_like(q)
    gk = np.empty_like(k)
    gv = np.empty_like(v)
    for hh in range(cfg.heads):
        sl = slice(hh * dh, (hh + 1) * dh)
        a = cache["attn"][hh]
        go_h = go[:, sl]
        ga = ops.matmul_backward(go_h, a, v[:, sl])[0]
        gv[:, sl] = ops.matmul(a.T, go_h)
        gs = ops.scale_backward(ops.softmax_rows_backward(ga, a), sc)
        gq[:, sl] = ops.matmul(gs, k[:, sl])
        gk[:, sl] = ops.matmul(gs.T, q[:, sl])
    gxn = np.zeros_like(cache["xn"])
    for name, g in (("q", gq), ("k", gk), ("v", gv)):
        gi, gb = ops.bias_add_backward(g)
        gi, gw = ops.matmul_backward(gi, cache["xn"], p(f"attn.w{name}").data)
        p(f"attn.w{name}").accum_grad(gw)
        p(f"attn.b{name}").accum_grad(gb)
        gxn += gi
    gx_ln, gg1, gb1ln = ops.layer_norm_backward(gxn, cache["ln1"])
    p("ln1.g").accum_grad(gg1)
    p("ln1.b").accum_grad(gb1ln)
    gx = gr + gx_ln
    if cache["extra_residual"]:
        gx = gx + gout
    return gx


def encoder_forward(x: np.ndarray, params: Params, stage: str, cfg: ModelConfig):
    """`depth` stacked blocks sharing the stage's parameter prefix."""
    caches = []
    for i in range(cfg.depth):
        x, c = _block_forward(x, params, f"{stage}{i}", cfg)
        caches.append(c)
    return x, caches


def encoder_backward(gx: np.ndarray, caches, params: Params, stage: str, cfg: ModelConfig) -> np.ndarray:
    for i in reversed(range(cfg.depth)):
        gx = _block_backward(gx, caches[i], params, f"{stage}{i}", cfg)
    return gx


def fusion_forward(xt: np.ndarray, xs: np.ndarray, params: Params, cfg: ModelConfig):
    """One block over the concatenated token sets, split back per branch."""
    if xt.shape[1] != xs.shape[1]:
        raise ShapeError(f"branch widths differ: {xt.shape} vs {xs.shape}")
    z = ops.concat([xt, xs], axis=0)
    out, block_cache = _block_forward(z, params, "fusion0", cfg, extra_residual=cfg.fusion_double_residual)
    return (out[: xt.shape[0]], out[xt.shape[0] :]), {"block": block_cache, "split": xt.shape[0]}


def fusion_backward(gt, gs, cache, params: Params, cfg: ModelConfig):
    gout = ops.concat([gt, gs], axis=0)
    gz = _block_backward(gout, cache["block"], params, "fusion0", cfg)
    return ops.concat_backward(gz, [cache["split"], gz.shape[0] - cache["split"]], 0)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except (ShapeError, ConfigError) as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def forward_with_cache(frames: np.ndarray, params: Params, cfg: ModelConfig):
    """Logits for one sample plus the cache the backward pass consumes."""
    act, _ = ops.activation_pair(cfg.activation)
    x, stem_c = _stage("stem", stem_forward, frames, params, cfg)
    xt_raw, temb_c = _stage("embed_temporal", embed_temporal, x, params, cfg)
    xs_raw, semb_c = _stage("embed_spatial", embed_spatial, x, params, cfg)
    xt = add_position(xt_raw, params["pos.temporal"].data)
    xs = add_position(xs_raw, params["pos.spatial"].data)
    t1, tf_c = _stage("tf", encoder_forward, xt, params, "tf", cfg) if cfg.use_tf else (xt, None)
    s1, sf_c = _stage("sf", encoder_forward, xs, params, "sf", cfg) if cfg.use_sf else (xs, None)
    if cfg.use_fusion:
        (t2, s2), fus_c = _stage("fusion", fusion_forward, t1, s1, params, cfg)
    else:
        (t2, s2), fus_c = (t1, s1), None
    post_tf = "tf" if cfg.share_post_blocks else "post_tf"
    post_sf = "sf" if cfg.share_post_blocks else "post_sf"
    t3, ptf_c = _stage("post_tf", encoder_forward, t2, params, post_tf, cfg) if cfg.use_tf else (t2, None)
    s3, psf_c = _stage("post_sf", encoder_forward, s2, params, post_sf, cfg) if cfg.use_sf else (s2, None)
    feat = ops.concat([t3, s3], axis=0)
    flat = feat.reshape(1, -1)
    h1 = ops.bias_add(ops.matmul(flat, params["head.w1"].data), params["head.b1"].data)
    h1a = act(h1)
    logits = ops.bias_add(ops.matmul(h1a, params["head.w2"].data), params["head.b2"].data)
    cache = {
        "stem": stem_c, "temporal": temb_c, "spatial": semb_c,
        "tf": tf_c, "sf": sf_c, "fusion": fus_c, "post_tf": ptf_c, "post_sf": psf_c,
        "flat": flat, "h1": h1, "h1a": h1a, "t_tokens": cfg.frames, "n_tokens": cfg.num_patches,
    }
    return logits[0], cache


def forward(frames: np.ndarray, params: Params, cfg: ModelConfig) -> np.ndarray:
    """Logits [num_classes] for one sample; deterministic and read-only."""
    return forward_with_cache(frames, params, cfg)[0]


def forward_batch(batch: np.ndarray, params: Params, cfg: ModelConfig) -> np.ndarray:
    """Per-sample forward over a batch [B,T,2,S,S]; no cross-sample coupling."""
    return np.stack([forward(batch[i], params, cfg) for i in range(batch.shape[0])])


def backward(dlogits: np.ndarray, cache, params: Params, cfg: ModelConfig) -> None:
    """Accumulate parameter gradients for one sample's forward cache."""
    _, act_bwd = ops.activation_pair(cfg.activation)
    g = dlogits[None, :]
    gh1a, gb2 = ops.bias_add_backward(g)
    gh1a, gw2 = ops.matmul_backward(gh1a, cache["h1a"], params["head.w2"].data)
    params["head.w2"].accum_grad(gw2)
    params["head.b2"].accum_grad(gb2)
    gh1 = act_bwd(gh1a, cache["h1"])
    gflat, gb1 = ops.bias_add_backward(gh1)
    gflat, gw1 = ops.matmul_backward(gflat, cache["flat"], params["head.w1"].data)
    params["head.w1"].accum_grad(gw1)
    params["head.b1"].accum_grad(gb1)
    t, n = cache["t_tokens"], cache["n_tokens"]
    gfeat = gflat.reshape(t + n, cfg.dim)
    gt3, gs3 = ops.concat_backward(gfeat, [t, n], 0)
    post_tf = "tf" if cfg.share_post_blocks else "post_tf"
    post_sf = "sf" if cfg.share_post_blocks else "post_sf"
    gt2 = encoder_backward(gt3, cache["post_tf"], params, post_tf, cfg) if cfg.use_tf else gt3
    gs2 = encoder_backward(gs3, cache["post_sf"], params, post_sf, cfg) if cfg.use_sf else gs3
    if cfg.use_fusion:
        gt1, gs1 = fusion_backward(gt2, gs2, cache["fusion"], params, cfg)
    else:
        gt1, gs1 = gt2, gs2
    gxt = encoder_backward(gt1, cache["tf"], params, "tf", cfg) if cfg.use_tf else gt1
    gxs = encoder_backward(gs1, cache["sf"], params, "sf", cfg) if cfg.use_sf else gs1
    params["pos.temporal"].accum_grad(gxt)
    params["pos.spatial"].accum_grad(gxs)
    gx_t = embed_temporal_backward(gxt, cache["temporal"], params, cfg)
    gx_s = embed_spatial_backward(gxs, cache["spatial"], params, cfg)
    stem_backward(gx_t + gx_s, cache["stem"], params, cfg)


# ---------------------------------------------------------------------------
# cache inspection (invariant checks)
# ---------------------------------------------------------------------------

def _block_caches(cache) -> list:
    blocks = []
    for stage in ("tf", "sf", "post_tf", "post_sf"):
        if cache[stage]:
            blocks.extend(cache[stage])
    if cache["fusion"]:
        blocks.append(cache["fusion"]["block"])
    return blocks


def collect_attention(cache) -> list[np.ndarray]:
    """Every attention map (one per head per block) of a forward cache."""
    maps = []
    for blk in _block_caches(cache):
        maps.extend(blk["attn"])
    return maps


def collect_ln_xhat(cache) -> list[np.ndarray]:
    """Normalized (pre scale/shift) rows of every layer-norm application."""
    rows = []
    for frame_cache in cache["stem"]:
        rows.append(frame_cache[1][0][0])
        rows.append(frame_cache[4][0][0])
    for blk in _block_caches(cache):
        rows.append(blk["ln1"][0])
        rows.append(blk["ln2"][0])
    return rows


def config_with_components(cfg: ModelConfig, *, use_sf: bool, use_tf: bool, use_fusion: bool) -> ModelConfig:
    """Variant of a config with transformer components toggled (disabled
    blocks pass their input through unchanged)."""
    return replace(cfg, use_sf=use_sf, use_tf=use_tf, use_fusion=use_fusion)


def config_as_dict(cfg: ModelConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
