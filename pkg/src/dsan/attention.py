"""Scaled dot-product, masked multi-head and multi-dimensional pooling attention.

Tensors carry optional leading batch axes: ``X`` may be ``n x d`` or
``B x n x d`` and masks broadcast accordingly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import ConfigError, LayerNormParams, glorot, project, zeros
from .tensor import SENTINEL, DimensionError, Tensor


@dataclass
class MultiHeadParams:
    """Per-head Q/K/V projections stored fused as ``d_e x d_e`` matrices;
    head ``i`` owns columns ``i*d_k:(i+1)*d_k``.
    """

    WQ: Tensor
    WK: Tensor
    WV: Tensor
    WO: Tensor
    ln_q: LayerNormParams
    ln_k: LayerNormParams
    ln_v: LayerNormParams
    ln_o: LayerNormParams
    h: int
    norm: str = "post"

    @classmethod
    def init(cls, d_e: int, h: int, rng: np.random.Generator, norm: str = "post") -> "MultiHeadParams":
        if h < 1 or d_e % h:
            raise ConfigError(f"model width {d_e} is not divisible by head count {h}")
        # per-head fan-out is d_e/h for the split projections
        dk = d_e // h
        w = [glorot(rng, d_e, dk) for _ in range(3 * h)]
        fused = [Tensor(np.concatenate([t.data for t in w[k * h:(k + 1) * h]], axis=1), requires_grad=True)
                 for k in range(3)]
        return cls(*fused, glorot(rng, d_e, d_e),
                   *(LayerNormParams.init(d_e) for _ in range(4)), h=h, norm=norm)

    @property
    def d_e(self) -> int:
        return self.WQ.shape[0]

    @property
    def d_k(self) -> int:
        return self.d_e // self.h

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.WQ": self.WQ, f"{prefix}.WK": self.WK,
               f"{prefix}.WV": self.WV, f"{prefix}.WO": self.WO}
        for tag in ("q", "k", "v", "o"):
            out.update(getattr(self, f"ln_{tag}").named_parameters(f"{prefix}.ln_{tag}"))
        return out


@dataclass
class MultiDimParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    ln_1: LayerNormParams
    ln_2: LayerNormParams
    norm: str = "post"

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, norm: str = "post") -> "MultiDimParams":
        return cls(glorot(rng, d, d), zeros(d), glorot(rng, d, d), zeros(d),
                   LayerNormParams.init(d), LayerNormParams.init(d), norm=norm)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1,
               f"{prefix}.W2": self.W2, f"{prefix}.b2": self.b2}
        out.update(self.ln_1.named_parameters(f"{prefix}.ln_1"))
        out.update(self.ln_2.named_parameters(f"{prefix}.ln_2"))
        return out


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return T.transpose(x, tuple(axes))


def scaled_dot_attention(Q, K, V, logit_offset, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k) + offset) V``; fully masked rows give zeros."""
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape} disagree")
    offset = np.asarray(logit_offset.data if isinstance(logit_offset, Tensor) else logit_offset,
                        dtype=np.float64)
    want = (Q.shape[-2], K.shape[-2])
    if offset.shape[-2:] != want:
        raise DimensionError(f"attention: logit offset {offset.shape} does not end in {want}")
    logits = T.ordered_matmul(Q, _swap_last(K)) * (1.0 / np.sqrt(Q.shape[-1]))
    weights = T.softmax_rows(logits + offset)
    out = T.ordered_matmul(weights, V)
    return (out, weights) if return_weights else out


def split_heads(x: Tensor, h: int) -> Tensor:
    """``(..., n, d)`` -> ``(..., h, n, d/h)``."""
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, h, d // h))
    k = len(lead)
    return T.transpose(x, (*range(k), k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dk = x.shape
    k = len(lead)
    x = T.transpose(x, (*range(k), k + 1, k, k + 2))
    return T.reshape(x, (*lead, n, h * dk))


def masked_multi_head(X, params: MultiHeadParams, combined_mask, taps: dict | None = None) -> Tensor:
    """Self-attention with Q = K = V = X over ``h`` projected subspaces.

    ``combined_mask`` is the ``n x n`` (or ``B x n x n``) logit offset. When
    ``taps`` is a dict, per-head weights land in ``taps["weights"]`` with
    shape ``(..., h, n, n)``.
    """
    X = T.as_tensor(X)
    if X.shape[-1] != params.d_e:
        raise DimensionError(f"input width {X.shape[-1]} != attention width {params.d_e}")
    if params.d_e % params.h:
        raise ConfigError(f"model width {params.d_e} is not divisible by head count {params.h}")
    norm = params.norm
    q = split_heads(project(X, params.WQ, params.ln_q, norm), params.h)
    k = split_heads(project(X, params.WK, params.ln_k, norm), params.h)
    v = split_heads(project(X, params.WV, params.ln_v, norm), params.h)
    offset = np.expand_dims(np.asarray(combined_mask, dtype=np.float64), -3)
    heads, weights = scaled_dot_attention(q, k, v, offset, return_weights=True)
    if taps is not None:
        taps["weights"] = weights.data
    return project(merge_heads(heads), params.WO, params.ln_o, norm)


def multi_dim_source2token(U, params: MultiDimParams, pad_mask=None, taps: dict | None = None) -> Tensor:
    """Per-feature attention pooling over the rows of ``U``.

    Each row gets a full logit vector; the softmax runs down each column,
    with padded rows excluded. Returns the column sums of ``softmax(L) * U``.
    """
    U = T.as_tensor(U)
    if U.shape[-2] < 1:
        raise DimensionError("source2token pooling needs at least one row")
    norm = params.norm
    hidden = T.elu(project(U, params.W1, params.ln_1, norm, params.b1))
    L = project(hidden, params.W2, params.ln_2, norm, params.b2)
    if pad_mask is not None:
        real = np.asarray(pad_mask, dtype=bool)
        L = L + np.where(real, 0.0, SENTINEL)[..., None]
    A = T.softmax(L, axis=-2)
    if taps is not None:
        taps["weights"] = A.data
    return T.ordered_sum(A * U, axis=-2)
