"""Masked-attention sequence compressor.

One architecture, instantiated three ways: a key compressor that distills a
value matrix into a single retrieval key, a merging compressor that fuses
several values into one fixed-length value, and a refinement compressor that
squeezes retrieved memories into the injected length.

The input sequence is extended with a learnable target-token block. An
additive mask lets target rows attend to content rows but blocks the reverse
direction, so content-row representations are exactly independent of the
target block at every layer. Each layer applies, with z the layer input:

    z_next = FF(LN2(z + SA(LN1(z)))) + z

(The alternative post-norm residual placement would wrap LN around the outer
residual sum instead; the pre-norm form above is the one implemented and
tested throughout.)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .errors import EmptyInputError, InvalidInputError

LN_EPS = 1e-6


class CompressorKind(Enum):
    KEY = "key"
    MERGE = "merge"
    REFINE = "refine"


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayerParams:
    """Weights of one compressor layer (single attention head, no FF biases)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv", "w1", "w2", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            arr = _frozen(getattr(self, name))
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"layer weight {name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        d = self.wq.shape[0]
        if self.wq.shape != (d, d) or self.wk.shape != (d, d) or self.wv.shape != (d, d):
            raise InvalidInputError("attention weights must be square d_model x d_model")
        if self.w1.shape[0] != d or self.w2.shape != (self.w1.shape[1], d):
            raise InvalidInputError("feed-forward shapes must chain d_model -> d_ff -> d_model")
        for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            if getattr(self, name).shape != (d,):
                raise InvalidInputError(f"{name} must have d_model entries")


@dataclass(frozen=True)
class CompressorParams:
    """Immutable weights of one compressor instance."""

    kind: CompressorKind
    layers: tuple[LayerParams, ...]
    target_tokens: np.ndarray
    mask_constant: float = field(default=kernels.MASK_CONSTANT)

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("compressor needs at least one layer")
        tt = _frozen(self.target_tokens)
        if tt.ndim != 2 or tt.shape[0] < 1:
            raise InvalidInputError("target_tokens must be a (y >= 1, d_model) matrix")
        if not np.all(np.isfinite(tt)):
            raise InvalidInputError("target_tokens contains non-finite entries")
        object.__setattr__(self, "target_tokens", tt)
        object.__setattr__(self, "layers", tuple(self.layers))
        if tt.shape[1] != self.layers[0].wq.shape[0]:
            raise InvalidInputError("target_tokens width must equal d_model")
        if self.kind is CompressorKind.KEY and tt.shape[0] != 1:
            raise InvalidInputError("key compressor must have a single target token")

    @property
    def d_model(self) -> int:
        return self.target_tokens.shape[1]

    @property
    def d_ff(self) -> int:
        return self.layers[0].w1.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def target_len(self) -> int:
        return self.target_tokens.shape[0]


_DEFAULT_TARGET_LEN = {CompressorKind.KEY: 1, CompressorKind.MERGE: 8, CompressorKind.REFINE: 8}


def init_compressor(
    kind: CompressorKind,
    d_model: int,
    seed: int,
    *,
    target_len: int | None = None,
    num_layers: int = 2,
    d_ff: int | None = None,
) -> CompressorParams:
    """Seeded Gaussian init: weights at scale 1/sqrt(d_model), targets at 0.02."""
    if target_len is None:
        target_len = _DEFAULT_TARGET_LEN[kind]
    if kind is CompressorKind.KEY and target_len != 1:
        raise InvalidInputError("key compressor target_len must be 1")
    if d_ff is None:
        d_ff = 4 * d_model
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_model)
    layers = []
    for _ in range(num_layers):
        layers.append(
            LayerParams(
                wq=rng.normal(0.0, scale, (d_model, d_model)),
                wk=rng.normal(0.0, scale, (d_model, d_model)),
                wv=rng.normal(0.0, scale, (d_model, d_model)),
                w1=rng.normal(0.0, scale, (d_model, d_ff)),
                w2=rng.normal(0.0, scale, (d_ff, d_model)),
                ln1_gain=np.ones(d_model),
                ln1_bias=np.zeros(d_model),
                ln2_gain=np.ones(d_model),
                ln2_bias=np.zeros(d_model),
            )
        )
    target = rng.normal(0.0, 0.02, (target_len, d_model))
    return CompressorParams(kind=kind, layers=tuple(layers), target_tokens=target)


def build_mask(content_len: int, target_len: int, mask_constant: float = kernels.MASK_CONSTANT) -> np.ndarray:
    """Additive mask: -C where content rows would attend to target columns, else 0."""
    if content_len < 1 or target_len < 1:
        raise InvalidInputError("content_len and target_len must be >= 1")
    n = content_len + target_len
    mask = np.zeros((n, n))
    mask[:content_len, content_len:] = -float(mask_constant)
    return mask


def compress(seq, params: CompressorParams) -> np.ndarray:
    """Run [seq; target_tokens] through the layer stack; return the target rows."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptyInputError(f"seq must be a nonempty (x, d_model) matrix, got shape {seq.shape}")
    if seq.shape[1] != params.d_model:
        raise InvalidInputError(f"seq width {seq.shape[1]} != d_model {params.d_model}")
    if not np.all(np.isfinite(seq)):
        raise InvalidInputError("seq contains non-finite entries")
    x = seq.shape[0]
    mask = build_mask(x, params.target_len, params.mask_constant)
    z = np.vstack([seq, params.target_tokens])
    for lp in params.layers:
        a = kernels.layer_norm(z, lp.ln1_gain, lp.ln1_bias, LN_EPS)
        s = kernels.masked_attention(a, lp.wq, lp.wk, lp.wv, mask)
        t = kernels.layer_norm(z + s, lp.ln2_gain, lp.ln2_bias, LN_EPS)
        z = kernels.feed_forward(t, lp.w1, lp.w2) + z
    return z[x:]


def merge_values(base, others, params: CompressorParams) -> np.ndarray:
    """Fuse a base value with others: compress(concat([base; others]))."""
    if not others:
        raise InvalidInputError("merge requires at least one other value")
    base = np.asarray(base, dtype=np.float64)
    widths = {base.shape[1]} | {np.asarray(o).shape[1] for o in others}
    if len(widths) != 1:
        raise InvalidInputError("all merge operands must share d_model")
    return compress(np.vstack([base, *others]), params)


def refine_values(values, params: CompressorParams) -> np.ndarray:
    """Squeeze retrieved values into the preset injected length: compress(concat)."""
    if not values:
        raise InvalidInputError("refine requires at least one value")
    return compress(np.vstack(list(values)), params)


# --- analytic backprop ------------------------------------------------------
#
# Used by the gradient-check suites. Mirrors the forward pass above exactly;
# layer-norm uses population variance with the same LN_EPS.


def _ln_fwd(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, (xhat, inv_std, gain)


def _ln_bwd(dy, cache):
    xhat, inv_std, gain = cache
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    return inv_std * (dxhat - m1 - xhat * m2)


def _attn_fwd(a, lp: LayerParams, mask):
    q, k, v = a @ lp.wq, a @ lp.wk, a @ lp.wv
    scale = 1.0 / np.sqrt(float(lp.wk.shape[1]))
    scores = q @ k.T * scale + mask
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    p = e / e.sum(axis=1, keepdims=True)
    return p @ v, (a, q, k, v, p, scale)


def _attn_bwd(ds, lp: LayerParams, cache):
    a, q, k, v, p, scale = cache
    dp = ds @ v.T
    dv = p.T @ ds
    du = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    dq = du @ k * scale
    dk = du.T @ q * scale
    return dq @ lp.wq.T + dk @ lp.wk.T + dv @ lp.wv.T


def _ff_fwd(t, lp: LayerParams):
    h = t @ lp.w1
    return kernels.gelu(h) @ lp.w2, (h,)


def _ff_bwd(df, lp: LayerParams, cache):
    (h,) = cache
    return (df @ lp.w2.T) * kernels.gelu_grad(h) @ lp.w1.T


def compress_vjp(seq, params: CompressorParams, d_out) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(compress(seq) * d_out) w.r.t. seq and target_tokens."""
    seq = np.asarray(seq, dtype=np.float64)
    d_out = np.asarray(d_out, dtype=np.float64)
    x = seq.shape[0]
    mask = build_mask(x, params.target_len, params.mask_constant)
    z = np.vstack([seq, params.target_tokens])
    caches = []
    for lp in params.layers:
        a, c_ln1 = _ln_fwd(z, lp.ln1_gain, lp.ln1_bias)
        s, c_att = _attn_fwd(a, lp, mask)
        r = z + s
        t, c_ln2 = _ln_fwd(r, lp.ln2_gain, lp.ln2_bias)
        f, c_ff = _ff_fwd(t, lp)
        caches.append((c_ln1, c_att, c_ln2, c_ff))
        z = f + z
    dz = np.zeros_like(z)
    dz[x:] = d_out
    for lp, (c_ln1, c_att, c_ln2, c_ff) in zip(reversed(params.layers), reversed(caches)):
        dt = _ff_bwd(dz, lp, c_ff)
        dr = _ln_bwd(dt, c_ln2)
        da = _attn_bwd(dr, lp, c_att)
        dz = dz + dr + _ln_bwd(da, c_ln1)
    return dz[:x], dz[x:]
