"""Dense numeric kernels used by every other module.

All kernels are pure functions over float64 numpy arrays. Reductions follow
numpy's fixed row-major order, so identical inputs give bit-identical outputs
across runs and threads. Natural logarithms throughout.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import EmptyInputError, InvalidInputError, ZeroVectorWarning

# Additive mask value. Large enough that exp(logit - MASK_CONSTANT - rowmax)
# underflows to exact 0.0 in double precision.
MASK_CONSTANT = 1e9

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def _as_finite(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def validate_prob_vector(p, tol: float = 1e-9) -> np.ndarray:
    """Check entries in [0,1] summing to 1 within ``tol``."""
    arr = _as_finite(p, "p", ndim=1)
    if np.any(arr < 0.0) or np.any(arr > 1.0 + tol):
        raise InvalidInputError("probability entries must lie in [0, 1]")
    s = float(arr.sum())
    if abs(s - 1.0) > tol:
        raise InvalidInputError(f"probabilities sum to {s!r}, expected 1 within {tol}")
    return arr


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability."""
    z = _as_finite(logits, "logits", ndim=1)
    if not (temperature > 0.0):
        raise InvalidInputError(f"temperature must be > 0, got {temperature}")
    z = z / float(temperature)
    e = np.exp(z - z.max())
    return e / e.sum()


def entropy(p) -> float:
    """Shannon entropy in nats; 0*log(0) treated as 0."""
    arr = validate_prob_vector(p)
    nz = arr[arr > 0.0]
    return float(-(nz * np.log(nz)).sum())


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    if out.ndim == 0:
        return float(out)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Smooth GELU, tanh form: 0.5*x*(1 + tanh(k*(x + c*x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Elementwise derivative of :func:`gelu`."""
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(_GELU_K * (x + _GELU_C * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_K * (1.0 + 3.0 * _GELU_C * x**2)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> np.ndarray:
    """Row-wise layer normalization: gain * (x - mean) / sqrt(var + eps) + bias."""
    x = _as_finite(x, "x", ndim=2)
    gain = _as_finite(gain, "gain", ndim=1)
    bias = _as_finite(bias, "bias", ndim=1)
    if gain.shape[0] != x.shape[1] or bias.shape[0] != x.shape[1]:
        raise InvalidInputError("gain/bias dims must match the number of columns")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def masked_attention(z, wq, wk, wv, mask, return_weights: bool = False):
    """Single-head attention with an additive mask.

    Computes softmax((z wq)(z wk)^T / sqrt(d_k) + mask) (z wv). Positions whose
    mask entry is -MASK_CONSTANT receive exactly zero attention weight.
    """
    z = _as_finite(z, "z", ndim=2)
    wq = _as_finite(wq, "wq", ndim=2)
    wk = _as_finite(wk, "wk", ndim=2)
    wv = _as_finite(wv, "wv", ndim=2)
    mask = np.asarray(mask, dtype=np.float64)
    n, d = z.shape
    if wq.shape[0] != d or wk.shape[0] != d or wv.shape[0] != d:
        raise InvalidInputError("weight row counts must match z columns")
    if wq.shape[1] != wk.shape[1]:
        raise InvalidInputError("wq and wk must project to the same dimension")
    if mask.shape != (n, n):
        raise InvalidInputError(f"mask must be {(n, n)}, got {mask.shape}")
    q = z @ wq
    k = z @ wk
    v = z @ wv
    scores = q @ k.T / np.sqrt(float(wk.shape[1])) + mask
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=1, keepdims=True)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


def feed_forward(x, w1, w2, b1=None, b2=None) -> np.ndarray:
    """Position-wise feed-forward: gelu(x w1 + b1) w2 + b2."""
    x = _as_finite(x, "x", ndim=2)
    w1 = _as_finite(w1, "w1", ndim=2)
    w2 = _as_finite(w2, "w2", ndim=2)
    if x.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise InvalidInputError("feed-forward shapes do not chain")
    h = x @ w1
    if b1 is not None:
        b1 = _as_finite(b1, "b1", ndim=1)
        if b1.shape[0] != w1.shape[1]:
            raise InvalidInputError("b1 dim must match w1 columns")
        h = h + b1
    out = gelu(h) @ w2
    if b2 is not None:
        b2 = _as_finite(b2, "b2", ndim=1)
        if b2.shape[0] != w2.shape[1]:
            raise InvalidInputError("b2 dim must match w2 columns")
        out = out + b2
    return out


def bilinear_downsample(x, factor: int) -> np.ndarray:
    """Downsample spatial dims by a power-of-two factor.

    Applied as repeated 2x halvings; each halving replaces every 2x2 block
    with its mean. Accepts (H, W) or (H, W, C) arrays.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise InvalidInputError(f"expected 2-D or 3-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("input contains non-finite entries")
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise InvalidInputError(f"factor must be a positive power of two, got {factor}")
    h, w = arr.shape[0], arr.shape[1]
    if h % factor or w % factor:
        raise InvalidInputError(f"spatial dims {(h, w)} not divisible by factor {factor}")
    steps = factor.bit_length() - 1
    for _ in range(steps):
        h, w = arr.shape[0] // 2, arr.shape[1] // 2
        if arr.ndim == 2:
            arr = arr.reshape(h, 2, w, 2).mean(axis=(1, 3))
        else:
            arr = arr.reshape(h, 2, w, 2, arr.shape[2]).mean(axis=(1, 3))
    return arr


def cosine_sim(a, b) -> float:
    """Cosine similarity; defined as 0 (with ZeroVectorWarning) if either is zero."""
    a = _as_finite(a, "a", ndim=1)
    b = _as_finite(b, "b", ndim=1)
    if a.shape != b.shape:
        raise InvalidInputError(f"dim mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of a zero vector; returning 0", ZeroVectorWarning, stacklevel=2)
        return 0.0
    return float(a @ b / (na * nb))


def finite_diff_grad(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient (f(x+eps e_j) - f(x-eps e_j)) / (2 eps)."""
    x = np.array(x, dtype=np.float64)  # private copy; f sees perturbed copies only
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + eps
        hi = f(x)
        xf[j] = orig - eps
        lo = f(x)
        xf[j] = orig
        flat[j] = (hi - lo) / (2.0 * eps)
    return grad
