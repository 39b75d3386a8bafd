"""Masked multi-head self-attention with an explicit backward pass.

Missing tokens are removed from attention by two masks built from the
per-sample missing vector ``m`` (1 = missing):

* ``m1`` is additive and puts ``-LARGE`` on every column of a missing token,
  so ``exp`` of those scores underflows to exactly zero;
* ``m2 = outer(1 - m, 1 - m)`` multiplies the softmax output and zeroes the
  rows of missing tokens.

Position 0 is the CLS token and must always be observed, which keeps every
softmax row well defined.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LARGE = 1e9


@dataclass(frozen=True)
class MaskPair:
    m1: np.ndarray
    m2: np.ndarray

    @property
    def exp_m1(self) -> np.ndarray:
        return np.exp(self.m1)


def build_masks(m) -> MaskPair:
    """Masks for one ``(L,)`` mask vector or a ``(B, L)`` batch of them."""
    m = np.asarray(m)
    if m.ndim not in (1, 2):
        raise ValueError("mask vector must be 1-D or a 2-D batch")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask vector must be binary")
    if np.any(m[..., 0] != 0):
        raise ValueError("position 0 (CLS) must be observed")
    miss = m.astype(np.float64)
    keep = 1.0 - miss
    L = m.shape[-1]
    m1 = np.broadcast_to(-LARGE * miss[..., None, :], m.shape[:-1] + (L, L)).copy()
    m2 = keep[..., :, None] * keep[..., None, :]
    return MaskPair(m1, m2)


@dataclass
class AttentionParams:
    """Projection weights; head ``h`` uses columns ``h*dh:(h+1)*dh`` of wq, wk, wv."""

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    num_heads: int

    NAMES = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

    def __post_init__(self):
        D = self.wq.shape[0]
        if D % self.num_heads:
            raise ValueError(f"model_dim {D} is not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1] // self.num_heads

    @classmethod
    def init(cls, model_dim: int, num_heads: int, rng: np.random.Generator) -> AttentionParams:
        bound = 1.0 / np.sqrt(model_dim)
        arrays = {}
        for name in cls.NAMES:
            shape = (model_dim, model_dim) if name.startswith("w") else (model_dim,)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(num_heads=num_heads, **arrays)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    B, L, D = x.shape
    return x.reshape(B, L, num_heads, D // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def masked_attention(X, params: AttentionParams, masks: MaskPair, return_cache: bool = False):
    """Multi-head attention over ``X`` of shape ``(L, D)`` or ``(B, L, D)``.

    Returns the output-projected result; with ``return_cache`` also the
    tensors needed by :func:`masked_attention_backward` (the pre-projection
    head concatenation is ``cache["context"]``).
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    m1, m2 = masks.m1, masks.m2
    if m1.ndim == 2:
        m1, m2 = m1[None], m2[None]
    B, L, D = X.shape
    if m1.shape[-1] != L or m1.shape[0] not in (1, B):
        raise ValueError(f"mask shape {m1.shape} does not fit tokens {X.shape}")
    if not np.isfinite(X).all():
        raise FloatingPointError("non-finite attention input")
    H = params.num_heads
    dh = D // H
    scale = 1.0 / np.sqrt(dh)
    q = _split_heads(X @ params.wq + params.bq, H)
    k = _split_heads(X @ params.wk + params.bk, H)
    v = _split_heads(X @ params.wv + params.bv, H)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale + m1[:, None]
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=-1, keepdims=True)
    weights = probs * m2[:, None]
    context = _merge_heads(weights @ v)
    out = context @ params.wo + params.bo
    if single:
        out = out[0]
    if not return_cache:
        return out
    cache = {
        "X": X, "q": q, "k": k, "v": v, "probs": probs, "weights": weights,
        "m2": m2, "context": context, "single": single, "scale": scale,
    }
    return out, cache


def masked_attention_backward(grad_out, cache: dict, params: AttentionParams):
    """Reverse-mode gradients of :func:`masked_attention`.

    Returns ``(dX, grads)`` where ``grads`` maps the parameter names of
    :class:`AttentionParams` to arrays. The masks are constants.
    """
    dout = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        dout = dout[None]
    X = cache["X"]
    if dout.shape != X.shape:
        raise ValueError(f"gradient shape {dout.shape} does not match cached output {X.shape}")
    H = params.num_heads
    q, k, v = cache["q"], cache["k"], cache["v"]
    probs, weights = cache["probs"], cache["weights"]
    context = cache["context"]
    grads = {
        "wo": _outer_sum(context, dout),
        "bo": dout.sum(axis=(0, 1)),
    }
    dctx = _split_heads(dout @ params.wo.T, H)
    dweights = dctx @ v.transpose(0, 1, 3, 2)
    dv = weights.transpose(0, 1, 3, 2) @ dctx
    dprobs = dweights * cache["m2"][:, None]
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= cache["scale"]
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dX = np.zeros_like(X)
    for name, d_heads in (("q", dq), ("k", dk), ("v", dv)):
        dproj = _merge_heads(d_heads)
        grads["w" + name] = _outer_sum(X, dproj)
        grads["b" + name] = dproj.sum(axis=(0, 1))
        dX += dproj @ getattr(params, "w" + name).T
    if cache["single"]:
        dX = dX[0]
    return dX, grads
