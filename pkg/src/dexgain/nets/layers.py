"""MLP, layer norm and single-layer multi-head attention built on the tape.

Every forward function takes a ParamSet plus a name prefix, so several modules
can live in one ParamSet (or in separate ones) without renaming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dexgain.errors import ContractError
from dexgain.nets import tensor as T
from dexgain.nets.params import ParamSet
from dexgain.nets.tensor import Tensor


@dataclass(frozen=True)
class AttentionSpec:
    token_dim_in: int
    output_dim: int
    query_dim_in: int = 0
    embed_dim: int = 32
    num_heads: int = 2
    mlp_head_dims: tuple = (64,)
    n_positions: int = 16

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


def init_linear(params: ParamSet, name: str, din: int, dout: int, rng: np.random.Generator, scale: float = 1.0):
    params.add(f"{name}.W", rng.normal(0.0, scale / math.sqrt(din), size=(din, dout)))
    params.add(f"{name}.b", np.zeros(dout))


def linear(params: ParamSet, name: str, x) -> Tensor:
    return T.add(T.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def init_mlp(params: ParamSet, prefix: str, sizes, rng: np.random.Generator, out_scale: float = 1.0):
    sizes = list(sizes)
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        init_linear(params, f"{prefix}.{i}", sizes[i], sizes[i + 1], rng, out_scale if last else 1.0)


def mlp_depth(params: ParamSet, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.W" in params:
        n += 1
    return n


def mlp_forward(params: ParamSet, x, prefix: str = "mlp") -> Tensor:
    """Affine layers with tanh between them; the last layer is linear."""
    x = T.as_tensor(x)
    n = mlp_depth(params, prefix)
    if n == 0:
        raise ContractError(f"no MLP under prefix {prefix!r}")
    din = params[f"{prefix}.0.W"].shape[0]
    if x.shape[-1] != din:
        raise ContractError(f"MLP {prefix!r} expects input dim {din}, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    if squeeze:
        x = T.reshape(x, (1, din))
    for i in range(n):
        x = linear(params, f"{prefix}.{i}", x)
        if i < n - 1:
            x = T.tanh(x)
    if squeeze:
        x = T.reshape(x, (x.shape[-1],))
    return x


def init_layer_norm(params: ParamSet, name: str, dim: int):
    params.add(f"{name}.gain", np.ones(dim))
    params.add(f"{name}.bias", np.zeros(dim))


def layer_norm(params: ParamSet, name: str, x, eps: float = 1e-5) -> Tensor:
    x = T.as_tensor(x)
    mu = T.mean(x, axis=-1, keepdims=True)
    xc = T.sub(x, mu)
    var = T.mean(T.square(xc), axis=-1, keepdims=True)
    y = T.div(xc, T.sqrt(T.add(var, eps)))
    return T.add(T.mul(y, params[f"{name}.gain"]), params[f"{name}.bias"])


def _init_token_embed(params: ParamSet, prefix: str, spec: AttentionSpec, rng):
    init_linear(params, f"{prefix}.embed", spec.token_dim_in, spec.embed_dim, rng)
    params.add(f"{prefix}.pos", rng.normal(0.0, 0.1, size=(spec.n_positions, spec.embed_dim)))
    init_layer_norm(params, f"{prefix}.ln", spec.embed_dim)


def _embed_tokens(params: ParamSet, prefix: str, tokens: Tensor, spec: AttentionSpec, pos_offset: int) -> Tensor:
    h = tokens.shape[1]
    if pos_offset < 0 or pos_offset + h > spec.n_positions:
        raise ContractError(f"positions {pos_offset}..{pos_offset + h} exceed table of {spec.n_positions}")
    x = linear(params, f"{prefix}.embed", tokens)
    x = T.add(x, T.getitem(params[f"{prefix}.pos"], slice(pos_offset, pos_offset + h)))
    return layer_norm(params, f"{prefix}.ln", x)


def _split_heads(x: Tensor, nh: int) -> Tensor:
    b, t, e = x.shape
    return T.transpose(T.reshape(x, (b, t, nh, e // nh)), (0, 2, 1, 3))


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on (B, heads, T, head_dim) tensors."""
    hd = q.shape[-1]
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    w = T.softmax(scores, axis=-1)
    return T.matmul(w, v), w


def _as_batch(tokens, spec: AttentionSpec) -> tuple[Tensor, bool]:
    tokens = T.as_tensor(tokens)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ContractError("need a non-empty token sequence")
    if tokens.shape[2] != spec.token_dim_in:
        raise ContractError(f"token dim {tokens.shape[2]} != {spec.token_dim_in}")
    return tokens, squeeze


def init_self_attention(params: ParamSet, spec: AttentionSpec, rng: np.random.Generator, prefix: str = "sa",
                        out_scale: float = 0.1):
    _init_token_embed(params, prefix, spec, rng)
    for n in ("q", "k", "v"):
        init_linear(params, f"{prefix}.{n}", spec.embed_dim, spec.embed_dim, rng)
    init_mlp(params, f"{prefix}.head", (spec.embed_dim, *spec.mlp_head_dims, spec.output_dim), rng, out_scale)


def self_attention_forward(params: ParamSet, tokens, spec: AttentionSpec, prefix: str = "sa",
                           pos_offset: int = 0, return_weights: bool = False):
    """Tokens (B, H, D) or (H, D) -> mean-pooled attention output through the MLP head."""
    tokens, squeeze = _as_batch(tokens, spec)
    x = _embed_tokens(params, prefix, tokens, spec, pos_offset)
    nh = spec.num_heads
    q = _split_heads(linear(params, f"{prefix}.q", x), nh)
    k = _split_heads(linear(params, f"{prefix}.k", x), nh)
    v = _split_heads(linear(params, f"{prefix}.v", x), nh)
    o, w = attention(q, k, v)
    b, _, h, _ = o.shape
    o = T.reshape(T.transpose(o, (0, 2, 1, 3)), (b, h, spec.embed_dim))
    out = mlp_forward(params, T.mean(o, axis=1), f"{prefix}.head")
    if squeeze:
        out = T.reshape(out, (spec.output_dim,))
    return (out, w) if return_weights else out


def init_cross_attention(params: ParamSet, spec: AttentionSpec, rng: np.random.Generator, prefix: str = "ca",
                         out_scale: float = 0.1):
    if spec.query_dim_in <= 0:
        raise ContractError("cross attention needs query_dim_in > 0")
    _init_token_embed(params, prefix, spec, rng)
    init_linear(params, f"{prefix}.q", spec.query_dim_in, spec.embed_dim, rng)
    for n in ("k", "v"):
        init_linear(params, f"{prefix}.{n}", spec.embed_dim, spec.embed_dim, rng)
    init_mlp(params, f"{prefix}.head", (spec.embed_dim, *spec.mlp_head_dims, spec.output_dim), rng, out_scale)


def cross_attention_forward(params: ParamSet, query_vec, tokens, spec: AttentionSpec, prefix: str = "ca",
                            pos_offset: int = 0, return_weights: bool = False):
    """One query per sample attends over its token history; returns head logits."""
    tokens, squeeze = _as_batch(tokens, spec)
    query = T.as_tensor(query_vec)
    if query.ndim == 1:
        query = T.reshape(query, (1, query.shape[0]))
    if query.shape != (tokens.shape[0], spec.query_dim_in):
        raise ContractError(f"query shape {query.shape} does not match ({tokens.shape[0]}, {spec.query_dim_in})")
    x = _embed_tokens(params, prefix, tokens, spec, pos_offset)
    nh = spec.num_heads
    b = tokens.shape[0]
    q = _split_heads(T.reshape(linear(params, f"{prefix}.q", query), (b, 1, spec.embed_dim)), nh)
    k = _split_heads(linear(params, f"{prefix}.k", x), nh)
    v = _split_heads(linear(params, f"{prefix}.v", x), nh)
    o, w = attention(q, k, v)
    o = T.reshape(T.transpose(o, (0, 2, 1, 3)), (b, spec.embed_dim))
    out = mlp_forward(params, o, f"{prefix}.head")
    if squeeze:
        out = T.reshape(out, (spec.output_dim,))
    return (out, w) if return_weights else out


def action_squash(raw, delta_max: float) -> Tensor:
    return T.mul(T.tanh(raw), delta_max)


def gain_squash(logits) -> Tensor:
    """Normalized gains in [0, 1]."""
    return T.sigmoid(logits)
