"""Per-event classification network over serialized 4D event clouds.

Pipeline: raw (x, y, z, p) features are lifted by a spatio-temporal fusion
front end (spatial conv features modulated by intra-window and inter-window
temporal features, then conv + batchnorm + silu); the result flows through a
two-level U-Net of sequence-mixing blocks; a linear head plus softmax yields
one probability pair per event.

Each mixing block combines a per-window aggregate-and-broadcast (window
context), an appearance branch, a motion branch built from previous-window
differences, a gated selective scan over the fused branches, and a
multi-kernel local pathway. Blocks cycle through the four curve scanning
modes; every stage recomputes its serialization orders from its own (pooled)
coordinates. Pooling groups events of one window sharing a curve cell at the
next-coarser grid; unpooling broadcasts parent features back to children.

Events are first put into a canonical content order (window, t, x, y, p), so
outputs do not depend on the order events arrive in.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import ssm as ssm_mod
from .autodiff import Tensor
from .curves import SCAN_MODES, quantize_axis, quantize_unit, serialize_arrays
from .errors import ConfigError
from .events import flatten_arrays


@dataclass(slots=True)
class FusionConfig:
    """Front-end: feature channels out, embedding width, conv kernel sizes."""
    channels: int
    embed_dim: int
    num_windows: int
    spatial_kernel: int = 3
    intra_kernel: int = 3
    inter_kernel: int = 3
    fuse_kernel: int = 3


@dataclass(slots=True)
class MixerConfig:
    """Mixing block: channels, scan state size, local kernel ladder, gate width."""
    channels: int
    state_dim: int = 8
    kernels: tuple = (1, 3, 5)
    gate_hidden: int = 0
    intra_kernel: int = 3
    inter_kernel: int = 3

    def __post_init__(self):
        if not self.kernels:
            raise ConfigError("mixer kernel list must be non-empty")
        if any(k % 2 == 0 for k in self.kernels):
            raise ConfigError(f"mixer kernels must be odd, got {self.kernels}")


@dataclass(slots=True)
class NetworkConfig:
    stage_channels: tuple = (32, 64)
    blocks_per_stage: int = 2
    scan_modes: tuple = SCAN_MODES
    grid_bits: int = 10
    num_windows: int = 5
    embed_dim: int = 16
    spatial_kernel: int = 3
    intra_kernel: int = 3
    inter_kernel: int = 3
    fuse_kernel: int = 3
    state_dim: int = 8
    ms_kernels: tuple = (1, 3, 5)
    gate_hidden: int = 0
    num_classes: int = 2
    use_stdf: bool = True
    use_ms3m: bool = True
    use_fft_loss: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.scan_modes = tuple(self.scan_modes)
        self.ms_kernels = tuple(self.ms_kernels)
        if not self.stage_channels:
            raise ConfigError("stage_channels must be non-empty")
        unknown = [m for m in self.scan_modes if m not in SCAN_MODES]
        if unknown:
            raise ConfigError(f"unknown scan modes {unknown}; valid: {SCAN_MODES}")
        if self.grid_bits - (len(self.stage_channels) - 1) < 1:
            raise ConfigError(
                f"grid_bits={self.grid_bits} too small for "
                f"{len(self.stage_channels)} stages of pooling"
            )

    def fusion_cfg(self):
        return FusionConfig(
            channels=self.stage_channels[0],
            embed_dim=self.embed_dim,
            num_windows=self.num_windows,
            spatial_kernel=self.spatial_kernel,
            intra_kernel=self.intra_kernel,
            inter_kernel=self.inter_kernel,
            fuse_kernel=self.fuse_kernel,
        )

    def mixer_cfg(self, channels):
        return MixerConfig(
            channels=channels,
            state_dim=self.state_dim,
            kernels=self.ms_kernels,
            gate_hidden=self.gate_hidden,
        )

    def to_dict(self):
        return {
            "stage_channels": list(self.stage_channels),
            "blocks_per_stage": self.blocks_per_stage,
            "scan_modes": list(self.scan_modes),
            "grid_bits": self.grid_bits,
            "num_windows": self.num_windows,
            "embed_dim": self.embed_dim,
            "spatial_kernel": self.spatial_kernel,
            "intra_kernel": self.intra_kernel,
            "inter_kernel": self.inter_kernel,
            "fuse_kernel": self.fuse_kernel,
            "state_dim": self.state_dim,
            "ms_kernels": list(self.ms_kernels),
            "gate_hidden": self.gate_hidden,
            "num_classes": self.num_classes,
            "use_stdf": self.use_stdf,
            "use_ms3m": self.use_ms3m,
            "use_fft_loss": self.use_fft_loss,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter construction


def _seq(rng, *shape, scale=None):
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
    if scale is None:
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _conv_param(rng, c_out, c_in, k):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_in * k), (c_out, c_in, k)),
                  requires_grad=True)


def _init_mixer(params, prefix, cfg: MixerConfig, rng):
    c = cfg.channels
    params[prefix + "ra_w"] = _seq(rng, 2 * c, c)
    params[prefix + "ra_b"] = _zeros(c)
    params[prefix + "intra_w"] = _conv_param(rng, c, c, cfg.intra_kernel)
    params[prefix + "intra_b"] = _zeros(c)
    params[prefix + "inter_w"] = _conv_param(rng, c, c, cfg.inter_kernel)
    params[prefix + "inter_b"] = _zeros(c)
    if cfg.gate_hidden > 0:
        params[prefix + "gate_w1"] = _seq(rng, c, cfg.gate_hidden)
        params[prefix + "gate_b1"] = _zeros(cfg.gate_hidden)
        params[prefix + "gate_w2"] = _seq(rng, cfg.gate_hidden, c)
        params[prefix + "gate_b2"] = _zeros(c)
    else:
        params[prefix + "gate_w"] = _seq(rng, c, c)
        params[prefix + "gate_b"] = _zeros(c)
    params[prefix + "ms_lin_w"] = _seq(rng, c, c)
    params[prefix + "ms_lin_b"] = _zeros(c)
    for i, k in enumerate(cfg.kernels):
        params[prefix + f"ms{i}_w"] = _conv_param(rng, c, c, k)
        params[prefix + f"ms{i}_b"] = _zeros(c)
    ssm = ssm_mod.init_ssm_params(c, cfg.state_dim, rng)
    for name, t in ssm.tensors().items():
        params[prefix + "ssm/" + name] = t
    params[prefix + "out_w"] = _seq(rng, c, c)
    params[prefix + "out_b"] = _zeros(c)


def _init_plain_block(params, prefix, channels, state_dim, rng):
    params[prefix + "conv_w"] = _conv_param(rng, channels, channels, 3)
    params[prefix + "conv_b"] = _zeros(channels)
    ssm = ssm_mod.init_ssm_params(channels, state_dim, rng)
    for name, t in ssm.tensors().items():
        params[prefix + "ssm/" + name] = t
    params[prefix + "out_w"] = _seq(rng, channels, channels)
    params[prefix + "out_b"] = _zeros(channels)


def init_params(cfg: NetworkConfig, seed=0):
    """Deterministic parameter map keyed by layer path."""
    rng = np.random.default_rng(seed)
    params = {}
    c0 = cfg.stage_channels[0]
    e = cfg.embed_dim
    if cfg.use_stdf:
        params["front/spatial_w"] = _seq(rng, 4, e)
        params["front/spatial_b"] = _zeros(e)
        params["front/spatial_conv_w"] = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(cfg.spatial_kernel), (e, cfg.spatial_kernel)),
            requires_grad=True,
        )
        params["front/spatial_conv_b"] = _zeros(e)
        params["front/window_embed"] = _seq(rng, cfg.num_windows, e, scale=0.1)
        params["front/intra_w"] = _conv_param(rng, e, 1, cfg.intra_kernel)
        params["front/intra_b"] = _zeros(e)
        params["front/inter_w"] = _conv_param(rng, e, e, cfg.inter_kernel)
        params["front/inter_b"] = _zeros(e)
        params["front/fuse_w"] = _conv_param(rng, c0, e, cfg.fuse_kernel)
        params["front/fuse_b"] = _zeros(c0)
        params["front/bn_gamma"] = Tensor(np.ones(c0), requires_grad=True)
        params["front/bn_beta"] = _zeros(c0)
        params["front/bn_mean"] = Tensor(np.zeros(c0))
        params["front/bn_var"] = Tensor(np.ones(c0))
    else:
        params["front/spatial_w"] = _seq(rng, 4, e)
        params["front/spatial_b"] = _zeros(e)
        params["front/window_embed"] = _seq(rng, cfg.num_windows, e, scale=0.1)
        params["front/embed_w"] = _seq(rng, e, c0)
        params["front/embed_b"] = _zeros(c0)

    n_stages = len(cfg.stage_channels)
    for s in range(n_stages):
        c = cfg.stage_channels[s]
        if s > 0:
            params[f"down{s}/w"] = _seq(rng, cfg.stage_channels[s - 1], c)
            params[f"down{s}/b"] = _zeros(c)
        for b in range(cfg.blocks_per_stage):
            prefix = f"enc{s}/b{b}/"
            if cfg.use_ms3m:
                _init_mixer(params, prefix, cfg.mixer_cfg(c), rng)
            else:
                _init_plain_block(params, prefix, c, cfg.state_dim, rng)
    for s in range(n_stages - 2, -1, -1):
        c = cfg.stage_channels[s]
        params[f"up{s}/w"] = _seq(rng, cfg.stage_channels[s + 1], c)
        params[f"up{s}/b"] = _zeros(c)
        for b in range(cfg.blocks_per_stage):
            prefix = f"dec{s}/b{b}/"
            if cfg.use_ms3m:
                _init_mixer(params, prefix, cfg.mixer_cfg(c), rng)
            else:
                _init_plain_block(params, prefix, c, cfg.state_dim, rng)
    params["head/w"] = _seq(rng, c0, cfg.num_classes)
    params["head/b"] = _zeros(cfg.num_classes)
    return params


def param_spec(cfg: NetworkConfig):
    """Expected {path: shape} map for checkpoint validation."""
    return {name: t.data.shape for name, t in init_params(cfg, seed=0).items()}


def _ssm_from(params, prefix):
    return ssm_mod.SSMParams(
        A=params[prefix + "ssm/A"],
        W_dt=params[prefix + "ssm/W_dt"],
        b_dt=params[prefix + "ssm/b_dt"],
        W_B=params[prefix + "ssm/W_B"],
        W_C=params[prefix + "ssm/W_C"],
        D=params[prefix + "ssm/D"],
    )


# ---------------------------------------------------------------------------
# forward passes (inputs already in serialized order)


def _conv_seq(f, w, b, depthwise=False):
    """Same-padded conv along the sequence axis of (N, C) features."""
    return ad.transpose(ad.conv1d(ad.transpose(f), w, b, depthwise=depthwise))


def reversed_aggregation(f, window_ids, num_windows, w, b):
    """Per-window mean broadcast back, concatenated with the pointwise
    features, projected to the original channel count."""
    means = ad.segment_mean(f, window_ids, num_windows)
    broadcast = ad.gather_rows(means, window_ids)
    return ad.linear(ad.concat([f, broadcast], axis=1), w, b)


def fusion_forward(points, window_ids, cfg: FusionConfig, params, prefix="front/"):
    """Spatio-temporal fusion front end over (N, 4) serialized features."""
    p = lambda name: params[prefix + name]
    f_pre = ad.linear(points, p("spatial_w"), p("spatial_b"))
    f_s = _conv_seq(f_pre, p("spatial_conv_w"), p("spatial_conv_b"), depthwise=True)
    f_t = ad.embedding_lookup(p("window_embed"), window_ids)
    z_col = ad.tensor_slice(points, 2, 3, axis=1)
    f_intra = _conv_seq(z_col, p("intra_w"), p("intra_b"))
    f_inter = _conv_seq(f_t, p("inter_w"), p("inter_b"))
    f_mod = ad.mul(f_s, ad.add(f_intra, f_inter))
    resid = ad.add(ad.add(f_s, f_t), f_mod)
    fused = ad.conv1d(ad.transpose(resid), p("fuse_w"), p("fuse_b"))
    normed = ad.batchnorm1d(fused, p("bn_gamma"), p("bn_beta"),
                            p("bn_mean"), p("bn_var"))
    return ad.transpose(ad.silu(normed))


def plain_embed_forward(points, window_ids, params, prefix="front/"):
    """Ablation front end: spatial and temporal embeddings summed, then linear."""
    p = lambda name: params[prefix + name]
    f_s = ad.linear(points, p("spatial_w"), p("spatial_b"))
    f_t = ad.embedding_lookup(p("window_embed"), window_ids)
    return ad.linear(ad.add(f_s, f_t), p("embed_w"), p("embed_b"))


def _gate(f_in, params, prefix, cfg: MixerConfig):
    if cfg.gate_hidden > 0:
        h = ad.silu(ad.linear(f_in, params[prefix + "gate_w1"], params[prefix + "gate_b1"]))
        return ad.sigmoid(ad.linear(h, params[prefix + "gate_w2"], params[prefix + "gate_b2"]))
    return ad.sigmoid(ad.linear(f_in, params[prefix + "gate_w"], params[prefix + "gate_b"]))


def mixer_forward(f_in, window_ids, num_windows, cfg: MixerConfig, params, prefix,
                  return_parts=False):
    """Dual-branch gated scan block with a multi-kernel local pathway."""
    p = lambda name: params[prefix + name]
    ra = reversed_aggregation(f_in, window_ids, num_windows, p("ra_w"), p("ra_b"))

    intra = ad.silu(_conv_seq(ra, p("intra_w"), p("intra_b")))

    # motion branch: difference to the previous window's aggregate (first
    # window subtracts zero), then conv along the sequence
    means = ad.segment_mean(ra, window_ids, num_windows)
    prev_ids = np.maximum(np.asarray(window_ids) - 1, 0)
    prev = ad.gather_rows(means, prev_ids)
    mask = Tensor(np.broadcast_to(
        (np.asarray(window_ids) > 0).astype(np.float64)[:, None], prev.data.shape
    ).copy())
    diff = ad.sub(ra, ad.mul(prev, mask))
    inter = _conv_seq(diff, p("inter_w"), p("inter_b"))

    fuse = ad.add(ad.mul(ad.sigmoid(inter), intra), inter)
    gate = _gate(f_in, params, prefix, cfg)
    dual = ad.mul(ssm_mod.selective_scan(ad.silu(fuse), _ssm_from(params, prefix)), gate)

    ms = _conv_seq(ad.linear(ra, p("ms_lin_w"), p("ms_lin_b")), p("ms0_w"), p("ms0_b"))
    terms = []
    for i in range(1, len(cfg.kernels)):
        ms = ad.silu(_conv_seq(ms, p(f"ms{i}_w"), p(f"ms{i}_b")))
        terms.append(ms)
    if terms:
        acc = terms[0]
        for t in terms[1:]:
            acc = ad.add(acc, t)
        ms_out = ad.silu(acc)
    else:
        ms_out = ad.silu(ms)

    out = ad.linear(ad.add(ms_out, dual), p("out_w"), p("out_b"))
    if return_parts:
        return out, {"intra": intra, "inter": inter, "fuse": fuse, "gate": gate,
                     "dual": dual, "multi_scale": ms_out}
    return out


def plain_block_forward(f_in, params, prefix):
    """Ablation block: conv, activation, selective scan, linear."""
    p = lambda name: params[prefix + name]
    h = ad.silu(_conv_seq(f_in, p("conv_w"), p("conv_b")))
    s = ssm_mod.selective_scan(h, _ssm_from(params, prefix))
    return ad.linear(s, p("out_w"), p("out_b"))


# ---------------------------------------------------------------------------
# full network


class _Stage:
    """Coordinates, windows and cached serialization orders at one resolution."""

    __slots__ = ("qx", "qy", "qz", "win", "bits", "_orders")

    def __init__(self, qx, qy, qz, win, bits):
        self.qx, self.qy, self.qz, self.win, self.bits = qx, qy, qz, win, bits
        self._orders = {}

    def order(self, mode):
        if mode not in self._orders:
            fwd = serialize_arrays(self.qx, self.qy, self.qz, self.win, mode, self.bits)
            inv = np.empty_like(fwd)
            inv[fwd] = np.arange(len(fwd))
            self._orders[mode] = (fwd, inv)
        return self._orders[mode]

    def pool(self):
        """Group by (window, half-resolution cell); returns (parent stage, child->parent)."""
        keys = np.stack(
            [self.win, self.qx >> 1, self.qy >> 1, self.qz >> 1], axis=1
        )
        parents, inverse = np.unique(keys, axis=0, return_inverse=True)
        child_to_parent = inverse.reshape(-1)
        return (
            _Stage(parents[:, 1], parents[:, 2], parents[:, 3], parents[:, 0],
                   self.bits - 1),
            child_to_parent,
        )


def _run_block(f, stage, mode, cfg, params, prefix, channels):
    """One mixing block in its scan order, wrapped residually."""
    fwd, inv = stage.order(mode)
    f_ser = ad.gather_rows(f, fwd)
    win_ser = stage.win[fwd]
    if cfg.use_ms3m:
        out = mixer_forward(f_ser, win_ser, cfg.num_windows,
                            cfg.mixer_cfg(channels), params, prefix)
    else:
        out = plain_block_forward(f_ser, params, prefix)
    return ad.add(f, ad.gather_rows(out, inv))


def network_forward(cloud, cfg: NetworkConfig, params, return_aux=False):
    """Per-event class probabilities (N, num_classes) in input event order."""
    arrays = flatten_arrays(cloud)
    canon = np.lexsort((arrays["p"], arrays["y"], arrays["x"],
                        arrays["t"], arrays["window"]))
    xs = arrays["x"][canon]
    ys = arrays["y"][canon]
    zs = arrays["z"][canon]
    win = arrays["window"][canon]
    ps = arrays["p"][canon]

    feats = np.stack(
        [xs / max(cloud.sensor_width, 1), ys / max(cloud.sensor_height, 1),
         zs, ps.astype(np.float64)],
        axis=1,
    )
    stage0 = _Stage(
        np.asarray(quantize_axis(xs, cloud.sensor_width, cfg.grid_bits)),
        np.asarray(quantize_axis(ys, cloud.sensor_height, cfg.grid_bits)),
        np.asarray(quantize_unit(zs, cfg.grid_bits)),
        win, cfg.grid_bits,
    )

    modes = cfg.scan_modes
    front_mode = modes[0]
    fwd0, inv0 = stage0.order(front_mode)
    points = Tensor(feats[fwd0])
    if cfg.use_stdf:
        f = fusion_forward(points, win[fwd0], cfg.fusion_cfg(), params)
    else:
        f = plain_embed_forward(points, win[fwd0], params)
    f = ad.gather_rows(f, inv0)

    n_stages = len(cfg.stage_channels)
    stages = [stage0]
    poolings = []
    for _ in range(n_stages - 1):
        parent, child_to_parent = stages[-1].pool()
        stages.append(parent)
        poolings.append(child_to_parent)

    block_idx = 0
    skips = {}
    for s in range(n_stages):
        c = cfg.stage_channels[s]
        if s > 0:
            pooled = ad.segment_mean(f, poolings[s - 1], len(stages[s].win))
            f = ad.linear(pooled, params[f"down{s}/w"], params[f"down{s}/b"])
        for b in range(cfg.blocks_per_stage):
            mode = modes[block_idx % len(modes)]
            f = _run_block(f, stages[s], mode, cfg, params, f"enc{s}/b{b}/", c)
            block_idx += 1
        if s < n_stages - 1:
            skips[s] = f
    for s in range(n_stages - 2, -1, -1):
        c = cfg.stage_channels[s]
        up = ad.linear(ad.gather_rows(f, poolings[s]), params[f"up{s}/w"], params[f"up{s}/b"])
        f = ad.add(up, skips[s])
        for b in range(cfg.blocks_per_stage):
            mode = modes[block_idx % len(modes)]
            f = _run_block(f, stages[s], mode, cfg, params, f"dec{s}/b{b}/", c)
            block_idx += 1

    logits = ad.linear(f, params["head/w"], params["head/b"])
    probs = ad.softmax(logits, axis=1)

    inv_canon = np.empty_like(canon)
    inv_canon[canon] = np.arange(len(canon))
    out = ad.gather_rows(probs, inv_canon)
    if return_aux:
        aux = {
            "canonical": canon,
            "serial_input_indices": canon[fwd0],  # serialized order, input indexing
            "window_ids_serial": win[fwd0],
        }
        return out, aux
    return out
