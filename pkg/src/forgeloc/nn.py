"""Parameterised layers shared by the fusion block, the forgery discovery
network and the classifier heads. Each layer is an ``init_*`` that registers
tensors under a name prefix and a function that applies them."""

from __future__ import annotations

from .numcore import ParamStore, Tensor, ops


def init_linear(store: ParamStore, name: str, d_in: int, d_out: int) -> None:
    store.uniform(f"{name}/W", (d_in, d_out), fan_in=d_in)
    store.zeros(f"{name}/b", (d_out,))


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return ops.linear(x, store[f"{name}/W"], store[f"{name}/b"])


def init_norm(store: ParamStore, name: str, d: int) -> None:
    store.ones(f"{name}/g", (d,))
    store.zeros(f"{name}/b", (d,))


def norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return ops.add(ops.mul(ops.layer_norm(x), store[f"{name}/g"]), store[f"{name}/b"])


def init_attention(store: ParamStore, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(store, f"{name}/{proj}", d, d)


def attention(store: ParamStore, name: str, xq: Tensor, xkv: Tensor, n_heads: int,
              weights_out: list | None = None) -> Tensor:
    q = linear(store, f"{name}/q", xq)
    k = linear(store, f"{name}/k", xkv)
    v = linear(store, f"{name}/v", xkv)
    return linear(store, f"{name}/o", ops.attention(q, k, v, n_heads, weights_out))


def init_block(store: ParamStore, name: str, d: int, mlp_ratio: int) -> None:
    init_norm(store, f"{name}/ln1", d)
    init_attention(store, f"{name}/attn", d)
    init_norm(store, f"{name}/ln2", d)
    init_linear(store, f"{name}/fc1", d, d * mlp_ratio)
    init_linear(store, f"{name}/fc2", d * mlp_ratio, d)


def block(store: ParamStore, name: str, x: Tensor, n_heads: int) -> Tensor:
    """Pre-norm transformer layer: self-attention then a GELU MLP."""
    h = norm(store, f"{name}/ln1", x)
    x = ops.add(x, attention(store, f"{name}/attn", h, h, n_heads))
    h = norm(store, f"{name}/ln2", x)
    h = linear(store, f"{name}/fc2", ops.gelu(linear(store, f"{name}/fc1", h)))
    return ops.add(x, h)
