"""Multi-layer transformer encoder on the autodiff substrate.

Pre-layer-norm residual blocks (stable at small scale), GELU feed-forward,
and a final layer norm after the stack. All weights live in a ParameterStore
so the whole model is one flat named registry for the optimizer, checkpoints
and gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterStore, Tensor


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 3
    dim: int = 64
    heads: int = 4
    ff_dim: int | None = None
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise EncoderError(f"layers must be >= 1, got {self.layers}")
        if self.dim % self.heads != 0:
            raise EncoderError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise EncoderError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def ff(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.dim

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class EncodedSequence:
    """Encoder output rows; row 0 is the [CLS] representation."""

    tokens: Tensor  # (..., n, D)
    attentions: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not np.isfinite(self.tokens.data).all():
            raise EncoderError("encoded sequence contains non-finite values")

    def cls(self) -> Tensor:
        return self.tokens[..., 0, :]

    @property
    def array(self) -> np.ndarray:
        return self.tokens.data


def init_encoder_params(store: ParameterStore, config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder") -> None:
    """Register all encoder weights: N(0, 0.02^2) projections, unit/zero norms."""
    d, f = config.dim, config.ff
    for i in range(config.layers):
        p = f"{prefix}.layer{i:02d}"
        store.register(f"{p}.ln1.scale", np.ones(d))
        store.register(f"{p}.ln1.bias", np.zeros(d))
        for name in ("q", "k", "v", "o"):
            store.register(f"{p}.attn.w{name}", 0.02 * rng.standard_normal((d, d)))
            store.register(f"{p}.attn.b{name}", np.zeros(d))
        store.register(f"{p}.ln2.scale", np.ones(d))
        store.register(f"{p}.ln2.bias", np.zeros(d))
        store.register(f"{p}.ff.w1", 0.02 * rng.standard_normal((d, f)))
        store.register(f"{p}.ff.b1", np.zeros(f))
        store.register(f"{p}.ff.w2", 0.02 * rng.standard_normal((f, d)))
        store.register(f"{p}.ff.b2", np.zeros(d))
    store.register(f"{prefix}.final_ln.scale", np.ones(d))
    store.register(f"{prefix}.final_ln.bias", np.zeros(d))


def layer_norm(x: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * scale + bias


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * keep


def _attention(
    x: Tensor,
    store: ParameterStore,
    prefix: str,
    config: EncoderConfig,
    dropout_rng: np.random.Generator | None,
    attentions: list[np.ndarray] | None,
) -> Tensor:
    lead = x.data.shape[:-2]
    n, d = x.data.shape[-2], x.data.shape[-1]
    h, hd = config.heads, config.head_dim

    def split_heads(t: Tensor) -> Tensor:
        t = t.reshape(*lead, n, h, hd)
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return t.transpose(axes)  # (..., h, n, hd)

    q = split_heads(x @ store[f"{prefix}.attn.wq"] + store[f"{prefix}.attn.bq"])
    k = split_heads(x @ store[f"{prefix}.attn.wk"] + store[f"{prefix}.attn.bk"])
    v = split_heads(x @ store[f"{prefix}.attn.wv"] + store[f"{prefix}.attn.bv"])
    kt_axes = tuple(range(len(lead) + 1)) + (len(lead) + 2, len(lead) + 1)
    scores = (q @ k.transpose(kt_axes)) * (1.0 / np.sqrt(hd))
    probs = scores.softmax(axis=-1)
    if attentions is not None:
        attentions.append(probs.data.copy())
    ctx = probs @ v  # (..., h, n, hd)
    merge_axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    ctx = ctx.transpose(merge_axes).reshape(*lead, n, d)
    out = ctx @ store[f"{prefix}.attn.wo"] + store[f"{prefix}.attn.bo"]
    return _dropout(out, config.dropout, dropout_rng)


def encode(
    x,
    config: EncoderConfig,
    store: ParameterStore,
    *,
    prefix: str = "encoder",
    dropout_rng: np.random.Generator | None = None,
    collect_attention: bool = False,
) -> EncodedSequence:
    """Run the K-layer encoder; output shape equals input shape.

    Deterministic whenever `dropout_rng` is None (dropout disabled).
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim < 2 or x.data.shape[-1] != config.dim:
        raise EncoderError(
            f"expected input (..., n, {config.dim}), got shape {x.data.shape}"
        )
    if not np.isfinite(x.data).all():
        raise EncoderError("encoder input contains non-finite values")
    attentions: list[np.ndarray] | None = [] if collect_attention else None
    for i in range(config.layers):
        p = f"{prefix}.layer{i:02d}"
        attn_in = layer_norm(x, store[f"{p}.ln1.scale"], store[f"{p}.ln1.bias"])
        x = x + _attention(attn_in, store, p, config, dropout_rng, attentions)
        ff_in = layer_norm(x, store[f"{p}.ln2.scale"], store[f"{p}.ln2.bias"])
        hidden = (ff_in @ store[f"{p}.ff.w1"] + store[f"{p}.ff.b1"]).gelu()
        ff_out = hidden @ store[f"{p}.ff.w2"] + store[f"{p}.ff.b2"]
        x = x + _dropout(ff_out, config.dropout, dropout_rng)
    x = layer_norm(x, store[f"{prefix}.final_ln.scale"], store[f"{prefix}.final_ln.bias"])
    return EncodedSequence(tokens=x, attentions=attentions or [])
