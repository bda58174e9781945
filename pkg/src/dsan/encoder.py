"""Sentence encoder: two directional attention branches and dual pooling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .attention import MultiDimParams, MultiHeadParams, masked_multi_head, multi_dim_source2token
from .data import EmbeddingTable, SentenceBatch
from .layers import NORM_PLACEMENTS, ConfigError, LayerNormParams, glorot, project, zeros
from .masks import MaskSet, combine, mask_set
from .tensor import DimensionError, Tensor

BRANCHES = (("fw", "forward"), ("bw", "backward"))


@dataclass
class ModelConfig:
    d_e: int = 300
    h: int = 5
    d_ff: int = 1200
    d_h: int = 300
    alpha: float = 1.5
    dropout: float = 0.1
    norm: str = "post"

    def validate(self) -> "ModelConfig":
        for name in ("d_e", "h", "d_ff", "d_h"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_e % self.h:
            raise ConfigError(f"d_e={self.d_e} is not divisible by h={self.h}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.norm not in NORM_PLACEMENTS:
            raise ConfigError(f"norm must be one of {NORM_PLACEMENTS}, got {self.norm!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FusionGateParams:
    WS: Tensor
    WH: Tensor
    bF: Tensor
    ln_s: LayerNormParams
    ln_h: LayerNormParams
    norm: str = "post"

    @classmethod
    def init(cls, d_e: int, rng: np.random.Generator, norm: str = "post") -> "FusionGateParams":
        return cls(glorot(rng, d_e, d_e), glorot(rng, d_e, d_e), zeros(d_e),
                   LayerNormParams.init(d_e), LayerNormParams.init(d_e), norm=norm)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.WS": self.WS, f"{prefix}.WH": self.WH, f"{prefix}.bF": self.bF}
        out.update(self.ln_s.named_parameters(f"{prefix}.ln_s"))
        out.update(self.ln_h.named_parameters(f"{prefix}.ln_h"))
        return out


@dataclass
class FFNParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    ln: LayerNormParams

    @classmethod
    def init(cls, d_e: int, d_ff: int, rng: np.random.Generator) -> "FFNParams":
        return cls(glorot(rng, d_e, d_ff), zeros(d_ff), glorot(rng, d_ff, d_e), zeros(d_e),
                   LayerNormParams.init(d_e))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1,
               f"{prefix}.W2": self.W2, f"{prefix}.b2": self.b2}
        out.update(self.ln.named_parameters(f"{prefix}.ln"))
        return out


@dataclass
class BranchParams:
    mha: MultiHeadParams
    gate: FusionGateParams
    ffn: FFNParams

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "BranchParams":
        return cls(MultiHeadParams.init(cfg.d_e, cfg.h, rng, cfg.norm),
                   FusionGateParams.init(cfg.d_e, rng, cfg.norm),
                   FFNParams.init(cfg.d_e, cfg.d_ff, rng))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = self.mha.named_parameters(f"{prefix}.mha")
        out.update(self.gate.named_parameters(f"{prefix}.gate"))
        out.update(self.ffn.named_parameters(f"{prefix}.ffn"))
        return out


@dataclass
class EncoderParams:
    fw: BranchParams
    bw: BranchParams
    pool: MultiDimParams

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "EncoderParams":
        cfg.validate()
        return cls(BranchParams.init(cfg, rng), BranchParams.init(cfg, rng),
                   MultiDimParams.init(2 * cfg.d_e, rng, cfg.norm))

    def named_parameters(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = self.fw.named_parameters(f"{prefix}.fw")
        out.update(self.bw.named_parameters(f"{prefix}.bw"))
        out.update(self.pool.named_parameters(f"{prefix}.pool"))
        return out


def fusion_gate(S, H, params: FusionGateParams, dropout: float = 0.0, rng=None,
                training: bool = False, taps: dict | None = None) -> Tensor:
    """Gated sum of the *projected* inputs: ``F * S^F + (1 - F) * H^F``."""
    S, H = T.as_tensor(S), T.as_tensor(H)
    if S.shape != H.shape:
        raise DimensionError(f"fusion gate inputs differ: {S.shape} vs {H.shape}")
    SF = project(S, params.WS, params.ln_s, params.norm)
    HF = project(H, params.WH, params.ln_h, params.norm)
    pre = T.dropout(SF + HF + params.bF, dropout, rng, training)
    F = T.sigmoid(pre)
    if taps is not None:
        taps["gate"] = F.data
    return F * SF + (1.0 - F) * HF


def position_ffn(X, params: FFNParams, taps: dict | None = None) -> Tensor:
    """``LayerNorm(x + FFN(x))`` at every position."""
    X = T.as_tensor(X)
    hidden = T.relu(T.matmul(X, params.W1) + params.b1)
    out = params.ln(X + (T.matmul(hidden, params.W2) + params.b2))
    if taps is not None:
        taps["hidden"] = hidden.data
        taps["output"] = out.data
    return out


def maxpool_real_positions(U, pad_mask=None) -> tuple[Tensor, np.ndarray]:
    """Column-wise max over real rows, with the winning row per column."""
    U = T.as_tensor(U)
    valid = np.ones(U.shape[:-1], dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    return T.masked_max(U, valid[..., None], axis=-2)


def encode_branch(W, params: BranchParams, combined_mask, dropout: float = 0.0, rng=None,
                  training: bool = False, taps: dict | None = None) -> Tensor:
    """Masked multi-head -> fusion gate -> position-wise FFN for one direction."""
    mha_taps = gate_taps = ffn_taps = None
    if taps is not None:
        mha_taps, gate_taps, ffn_taps = taps.setdefault("mha", {}), taps.setdefault("gate", {}), taps.setdefault("ffn", {})
    H = masked_multi_head(W, params.mha, combined_mask, taps=mha_taps)
    H = T.dropout(H, dropout, rng, training)
    G = fusion_gate(W, H, params.gate, dropout, rng, training, taps=gate_taps)
    return position_ffn(G, params.ffn, taps=ffn_taps)


@dataclass
class EncodedBatch:
    U_fw: Tensor
    U_bw: Tensor
    U: Tensor
    sentence_vector: Tensor
    maxpool_argmax: np.ndarray
    pad_mask: np.ndarray


def encode(batch: SentenceBatch, embeddings: EmbeddingTable | np.ndarray, params: EncoderParams,
           alpha: float, masks: MaskSet | None = None, dropout: float = 0.0, rng=None,
           training: bool = False, taps: dict | None = None) -> EncodedBatch:
    """Encode a padded batch into ``B x 4d_e`` sentence vectors."""
    table = embeddings.matrix if isinstance(embeddings, EmbeddingTable) else np.asarray(embeddings)
    n = batch.width
    if masks is None:
        masks = mask_set(n, float(alpha))
    elif masks.n != n:
        raise DimensionError(f"mask size {masks.n} != batch width {n}")
    # frozen lookup: a constant, never part of the gradient graph
    W = Tensor(table[batch.ids])
    outs = {}
    for tag, direction in BRANCHES:
        sub = taps.setdefault(direction, {}) if taps is not None else None
        m = combine(masks, direction, batch.pad_mask)
        outs[tag] = encode_branch(W, getattr(params, tag), m, dropout, rng, training, taps=sub)
    U = T.concat([outs["fw"], outs["bw"]], axis=-1)
    pool_taps = taps.setdefault("pool", {}) if taps is not None else None
    pooled = multi_dim_source2token(U, params.pool, batch.pad_mask, taps=pool_taps)
    maxed, argmax = maxpool_real_positions(U, batch.pad_mask)
    if pool_taps is not None:
        pool_taps["argmax"] = argmax
    return EncodedBatch(outs["fw"], outs["bw"], U, T.concat([pooled, maxed], axis=-1), argmax,
                        batch.pad_mask)
