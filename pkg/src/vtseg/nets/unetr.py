"""Transformer U-Net for 3D volumes.

Non-overlapping patches are flattened and linearly embedded, learned
positional offsets are added, and ``depth`` pre-norm transformer blocks
(multi-head self-attention, two-layer GELU feed-forward, residuals) run
over the token sequence. Token features from evenly spaced blocks are
concatenated, folded back onto the patch grid and decoded by
transposed-conv stages up to the input resolution, where they are fused
with a convolutional skip from the input.
"""

from __future__ import annotations

import math

import numpy as np

from . import tape as T
from .state import NetConfig, NetState, ParamBuilder


def tap_blocks(depth: int) -> list[int]:
    """Indices of the blocks whose outputs feed the decoder."""
    m = min(depth, 4)
    return sorted({int(round(depth * (j + 1) / m)) - 1 for j in range(m)})


def _stages(cfg: NetConfig) -> int:
    return int(round(math.log(cfg.patch_size, cfg.pool_factor)))


def build_unetr(cfg: NetConfig) -> NetState:
    if cfg.kind != "unetr":
        raise ValueError(f"build_unetr needs kind 'unetr', got {cfg.kind!r}")
    p, e, c = cfg.patch_size, cfg.embed_dim, cfg.channel_widths[0]
    grid = [d // p for d in cfg.input_dims]
    tokens = grid[0] * grid[1] * grid[2]
    pb = ParamBuilder(cfg.seed, cfg.dtype)
    pb.linear("embed", p ** 3, e, pos=pb.rng.normal(0.0, 0.02, size=(tokens, e)))
    for i in range(cfg.depth):
        pb.linear(f"block{i}.q", e, e, ln_g=np.ones(e), ln_b=np.zeros(e))
        pb.linear(f"block{i}.k", e, e)
        pb.linear(f"block{i}.v", e, e)
        pb.linear(f"block{i}.o", e, e)
        pb.linear(f"block{i}.ffn1", e, 2 * e, ln_g=np.ones(e), ln_b=np.zeros(e))
        pb.linear(f"block{i}.ffn2", 2 * e, e)
    taps = len(tap_blocks(cfg.depth))
    pb.conv("proj", taps * e, c, 1, 3)
    for j in range(_stages(cfg)):
        pb.conv_transpose(f"up{j}", c, c, cfg.pool_factor, 3)
        pb.conv(f"up{j}.conv", c, c, cfg.kernel_size, 3)
    pb.conv("skip", 1, c, cfg.kernel_size, 3)
    pb.conv("fuse", 2 * c, c, cfg.kernel_size, 3)
    pb.conv("head", c, 1, 1, 3)
    return pb.state(cfg)


def patchify(x: T.Tensor, p: int) -> T.Tensor:
    """``(N, 1, D, H, W)`` -> ``(N, tokens, p^3)`` in C order over the patch grid."""
    n, _, d, h, w = x.shape
    g = (d // p, h // p, w // p)
    t = T.reshape(x, (n, g[0], p, g[1], p, g[2], p))
    t = T.transpose(t, (0, 1, 3, 5, 2, 4, 6))
    return T.reshape(t, (n, g[0] * g[1] * g[2], p ** 3))


def attention(P, name, a: T.Tensor, heads: int, record=None) -> T.Tensor:
    n, t, e = a.shape
    dh = e // heads

    def split(x):
        return T.transpose(T.reshape(x, (n, t, heads, dh)), (0, 2, 1, 3))

    q = split(T.linear(a, P[f"{name}.q.w"], P[f"{name}.q.b"]))
    k = split(T.linear(a, P[f"{name}.k.w"], P[f"{name}.k.b"]))
    v = split(T.linear(a, P[f"{name}.v.w"], P[f"{name}.v.b"]))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    if record is not None:
        record.append(weights.value)
    out = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (n, t, e))
    return T.linear(out, P[f"{name}.o.w"], P[f"{name}.o.b"])


def encode_tokens(P, tokens: T.Tensor, cfg: NetConfig, record=None) -> list[T.Tensor]:
    """Run the transformer blocks on embedded tokens; return the tapped outputs."""
    h = tokens
    taps = set(tap_blocks(cfg.depth))
    out = []
    for i in range(cfg.depth):
        b = f"block{i}"
        a = T.layer_norm(h, P[f"{b}.q.ln_g"], P[f"{b}.q.ln_b"])
        h = T.add(h, attention(P, b, a, cfg.heads, record))
        a = T.layer_norm(h, P[f"{b}.ffn1.ln_g"], P[f"{b}.ffn1.ln_b"])
        f = T.gelu(T.linear(a, P[f"{b}.ffn1.w"], P[f"{b}.ffn1.b"]))
        h = T.add(h, T.linear(f, P[f"{b}.ffn2.w"], P[f"{b}.ffn2.b"]))
        if i in taps:
            out.append(h)
    return out


def embed(P, x: T.Tensor, cfg: NetConfig) -> T.Tensor:
    tokens = T.linear(patchify(x, cfg.patch_size), P["embed.w"], P["embed.b"])
    return T.add(tokens, P["embed.pos"])


def unetr_forward(P: dict, x: T.Tensor, cfg: NetConfig, rng=None, dropout_rate=None,
                  record=None) -> T.Tensor:
    """Logits for ``x`` of shape ``(N, 1, D, H, W)``.

    ``record``, if a list, receives the attention weights of every block
    as ``(N, heads, tokens, tokens)`` arrays.
    """
    rate = cfg.dropout_rate if dropout_rate is None else dropout_rate
    n = x.shape[0]
    p = cfg.patch_size
    grid = tuple(d // p for d in x.shape[2:])
    taps = encode_tokens(P, embed(P, x, cfg), cfg, record)
    h = T.dropout(T.concat(taps, axis=-1), rate, rng)
    h = T.transpose(T.reshape(h, (n,) + grid + (h.shape[-1],)), (0, 4, 1, 2, 3))
    h = T.relu(T.conv(h, P["proj.w"], P["proj.b"]))
    for j in range(_stages(cfg)):
        h = T.conv_transpose(h, P[f"up{j}.w"], P[f"up{j}.b"])
        h = T.relu(T.conv(h, P[f"up{j}.conv.w"], P[f"up{j}.conv.b"]))
    skip = T.relu(T.conv(x, P["skip.w"], P["skip.b"]))
    h = T.relu(T.conv(T.concat([h, skip], axis=1), P["fuse.w"], P["fuse.b"]))
    return T.conv(h, P["head.w"], P["head.b"])
