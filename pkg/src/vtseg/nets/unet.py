"""2D and 3D U-Nets: two 3x3(x3) conv + ReLU blocks per level, max-pool
down, transposed-conv up, skip concatenation, dropout at the bottleneck,
1x1 conv head producing one logit per voxel."""

from __future__ import annotations

from dataclasses import replace

from . import tape as T
from .state import NetConfig, NetState, ParamBuilder


def _build(cfg: NetConfig) -> NetState:
    nd = cfg.spatial_ndim
    k, f = cfg.kernel_size, cfg.pool_factor
    widths = cfg.channel_widths
    pb = ParamBuilder(cfg.seed, cfg.dtype)
    cin = 1
    for i, w in enumerate(widths[:-1]):
        pb.conv(f"enc{i}.conv1", cin, w, k, nd)
        pb.conv(f"enc{i}.conv2", w, w, k, nd)
        cin = w
    pb.conv("bottleneck.conv1", cin, widths[-1], k, nd)
    pb.conv("bottleneck.conv2", widths[-1], widths[-1], k, nd)
    cin = widths[-1]
    for i in reversed(range(len(widths) - 1)):
        w = widths[i]
        pb.conv_transpose(f"up{i}", cin, w, f, nd)
        pb.conv(f"dec{i}.conv1", 2 * w, w, k, nd)
        pb.conv(f"dec{i}.conv2", w, w, k, nd)
        cin = w
    pb.conv("head", cin, 1, 1, nd)
    return pb.state(cfg)


def build_unet2d(cfg: NetConfig) -> NetState:
    if cfg.kind != "unet2d":
        raise ValueError(f"build_unet2d needs kind 'unet2d', got {cfg.kind!r}")
    return _build(cfg)


def build_unet3d(cfg: NetConfig) -> NetState:
    if cfg.kind != "unet3d":
        raise ValueError(f"build_unet3d needs kind 'unet3d', got {cfg.kind!r}")
    return _build(cfg)


def unet_forward(P: dict, x: T.Tensor, cfg: NetConfig, rng=None, dropout_rate=None) -> T.Tensor:
    """Logits for input ``x`` of shape ``(batch, 1, *spatial)``."""
    rate = cfg.dropout_rate if dropout_rate is None else dropout_rate

    def conv(name, h):
        return T.conv(h, P[f"{name}.w"], P[f"{name}.b"])

    levels = len(cfg.channel_widths)
    h, skips = x, []
    for i in range(levels - 1):
        h = T.relu(conv(f"enc{i}.conv1", h))
        h = T.relu(conv(f"enc{i}.conv2", h))
        skips.append(h)
        h = T.max_pool(h, cfg.pool_factor)
    h = T.relu(conv("bottleneck.conv1", h))
    h = T.relu(conv("bottleneck.conv2", h))
    h = T.dropout(h, rate, rng)
    for i in reversed(range(levels - 1)):
        h = T.conv_transpose(h, P[f"up{i}.w"], P[f"up{i}.b"])
        h = T.concat([h, skips[i]], axis=1)
        h = T.relu(conv(f"dec{i}.conv1", h))
        h = T.relu(conv(f"dec{i}.conv2", h))
    return conv("head", h)


def closed_form_parameter_count(cfg: NetConfig) -> int:
    """Parameter count of a U-Net built from ``cfg``, by formula."""
    nd = cfg.spatial_ndim
    kk = cfg.kernel_size ** nd
    ff = cfg.pool_factor ** nd
    widths = cfg.channel_widths
    total = 0
    cin = 1
    for w in widths:
        total += kk * cin * w + w + kk * w * w + w
        cin = w
    for i in reversed(range(len(widths) - 1)):
        w = widths[i]
        total += ff * widths[i + 1] * w + w
        total += kk * 2 * w * w + w + kk * w * w + w
    total += widths[0] + 1
    return total


def toy_config(kind: str, **overrides) -> NetConfig:
    """Small defaults: 2D 16-32-64-128 on 64x64, 3D 8-16-32-64 on 32^3."""
    if kind == "unet2d":
        base = NetConfig("unet2d", (64, 64), (16, 32, 64, 128))
    elif kind == "unet3d":
        base = NetConfig("unet3d", (32, 32, 32), (8, 16, 32, 64))
    else:
        base = NetConfig("unetr", (32, 32, 32), (16,), patch_size=8, embed_dim=32, heads=2,
                         depth=2)
    return replace(base, **overrides)
