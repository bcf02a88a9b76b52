"""Transformer building blocks: multi-head attention + FFN blocks, encoder
stack, causal decoder, and output projection.

Layout conventions: activations are [batch, seq, d_model]; attention masks are
boolean allow-matrices [batch, q_len, k_len] (True = may attend). Blocks are
pre-norm: x + Attn(LN(x)), then s + FFN(LN(s)).
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, ContractError, matmul, softmax, layer_norm


@dataclass
class TransformerConfig:
    n_layers: int = 3
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 0          # 0 -> 4 * d_model
    max_seq_len: int = 256
    dropout: float = 0.0   # reserved; desk-scale runs are deterministic

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


@dataclass
class EncoderOutput:
    hidden: Tensor                 # [batch, seq, d_model]
    source_mask: np.ndarray        # [batch, seq] bool, True = real token
    truncated: bool = False


@dataclass
class AttentionTrace:
    """Attention weights captured during a forward pass.

    Each entry is (label, weights[batch, heads, q_len, k_len]).
    """
    entries: list = field(default_factory=list)

    def add(self, label: str, weights: np.ndarray):
        self.entries.append((label, weights))

    def rows_sum_to_one(self, tol=1e-5) -> bool:
        return all(np.allclose(w.sum(axis=-1), 1.0, atol=tol)
                   for _, w in self.entries)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(T.default_dtype())


def init_block_params(rng, params: dict, prefix: str, d_model: int, d_ff: int,
                      kv_dim: int = 0):
    """Register one attention+FFN block's parameters under `prefix`.

    kv_dim lets the key/value stream have a different width than the query
    stream (used by the act-attention block over concatenated states).
    """
    kv = kv_dim or d_model
    scale_q = 1.0 / np.sqrt(d_model)
    scale_kv = 1.0 / np.sqrt(kv)
    params[f"{prefix}.wq"] = Tensor.randn(rng, (d_model, d_model), scale_q, True)
    params[f"{prefix}.wk"] = Tensor.randn(rng, (kv, d_model), scale_kv, True)
    params[f"{prefix}.wv"] = Tensor.randn(rng, (kv, d_model), scale_kv, True)
    params[f"{prefix}.wo"] = Tensor.randn(rng, (d_model, d_model), scale_q, True)
    params[f"{prefix}.ln1_g"] = Tensor(np.ones(d_model), True)
    params[f"{prefix}.ln1_b"] = Tensor(np.zeros(d_model), True)
    params[f"{prefix}.ln2_g"] = Tensor(np.ones(d_model), True)
    params[f"{prefix}.ln2_b"] = Tensor(np.zeros(d_model), True)
    params[f"{prefix}.ff_w1"] = Tensor.randn(rng, (d_model, d_ff), scale_q, True)
    params[f"{prefix}.ff_b1"] = Tensor(np.zeros(d_ff), True)
    params[f"{prefix}.ff_w2"] = Tensor.randn(rng, (d_ff, d_model), 1.0 / np.sqrt(d_ff), True)
    params[f"{prefix}.ff_b2"] = Tensor(np.zeros(d_model), True)


def transformer_block(params: dict, prefix: str, q: Tensor, kv: Tensor,
                      allow: np.ndarray, n_heads: int,
                      trace: AttentionTrace | None = None,
                      trace_label: str = "") -> Tensor:
    """Pre-norm multi-head attention + FFN with residuals on the query stream.

    q: [B, Sq, d], kv: [B, Sk, dk], allow: [B, Sq, Sk] bool. Disallowed keys
    get -1e9 before softmax; a query row with no allowed key is a contract
    violation.
    """
    if allow is not None and not allow.any(axis=-1).all():
        raise ContractError("attention: query position with every key masked")
    b, sq, d = q.shape
    sk = kv.shape[1]
    dh = d // n_heads

    qn = layer_norm(q, params[f"{prefix}.ln1_g"], params[f"{prefix}.ln1_b"])
    kvn = kv if kv is not q else qn
    qh = matmul(qn, params[f"{prefix}.wq"]).reshape(b, sq, n_heads, dh).transpose(0, 2, 1, 3)
    kh = matmul(kvn, params[f"{prefix}.wk"]).reshape(b, sk, n_heads, dh).transpose(0, 2, 1, 3)
    vh = matmul(kvn, params[f"{prefix}.wv"]).reshape(b, sk, n_heads, dh).transpose(0, 2, 1, 3)

    scores = matmul(qh, kh.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    if allow is not None:
        scores = scores + Tensor.const(T.additive_mask(allow[:, None, :, :]))
    weights = softmax(scores, axis=-1)
    if trace is not None:
        trace.add(trace_label, weights.data.copy())
    mixed = matmul(weights, vh).transpose(0, 2, 1, 3).reshape(b, sq, d)
    s = q + matmul(mixed, params[f"{prefix}.wo"])

    sn = layer_norm(s, params[f"{prefix}.ln2_g"], params[f"{prefix}.ln2_b"])
    ff = matmul(sn, params[f"{prefix}.ff_w1"]) + params[f"{prefix}.ff_b1"]
    ff = matmul(ff.relu(), params[f"{prefix}.ff_w2"]) + params[f"{prefix}.ff_b2"]
    return s + ff


def init_encoder_params(rng, params: dict, prefix: str, cfg: TransformerConfig):
    for i in range(cfg.n_layers):
        init_block_params(rng, params, f"{prefix}.l{i}", cfg.d_model, cfg.d_ff)
    params[f"{prefix}.lnf_g"] = Tensor(np.ones(cfg.d_model), True)
    params[f"{prefix}.lnf_b"] = Tensor(np.zeros(cfg.d_model), True)


def encode(params: dict, prefix: str, emb: Tensor, key_mask: np.ndarray,
           cfg: TransformerConfig, truncated: bool = False) -> EncoderOutput:
    """Self-attention stack over already-embedded input.

    emb: [B, S, d] embeddings (position encodings included by the caller).
    key_mask: [B, S] bool; masked positions are excluded as keys everywhere.
    """
    b, s, _ = emb.shape
    allow = np.broadcast_to(key_mask[:, None, :], (b, s, s)).copy()
    # every query row must keep at least itself attendable
    idx = np.arange(s)
    allow[:, idx, idx] = True
    h = emb
    for i in range(cfg.n_layers):
        h = transformer_block(params, f"{prefix}.l{i}", h, h, allow, cfg.n_heads)
    h = layer_norm(h, params[f"{prefix}.lnf_g"], params[f"{prefix}.lnf_b"])
    return EncoderOutput(hidden=h, source_mask=key_mask, truncated=truncated)


def init_decoder_params(rng, params: dict, prefix: str, cfg: TransformerConfig):
    for i in range(cfg.n_layers):
        init_block_params(rng, params, f"{prefix}.self{i}", cfg.d_model, cfg.d_ff)
    init_block_params(rng, params, f"{prefix}.cross", cfg.d_model, cfg.d_ff)


def decoder_step(params: dict, prefix: str, prev_emb: Tensor, enc: EncoderOutput,
                 cfg: TransformerConfig, trace: AttentionTrace | None = None
                 ) -> tuple[Tensor, Tensor]:
    """Teacher-forced decoder pass over a full prefix.

    prev_emb: [B, T, d] embeddings of the already-generated tokens (position 0
    is the start token). Returns (h, c): the causal self-attention stream after
    n_layers blocks and its cross-attention against the encoder states, both
    [B, T, d].
    """
    b, t, _ = prev_emb.shape
    if t < 1:
        raise ContractError("decoder_step: empty prefix")
    causal = np.tril(np.ones((t, t), dtype=bool))
    causal = np.broadcast_to(causal, (b, t, t))
    h = prev_emb
    for i in range(cfg.n_layers):
        h = transformer_block(params, f"{prefix}.self{i}", h, h, causal, cfg.n_heads)
    sk = enc.hidden.shape[1]
    allow = np.broadcast_to(enc.source_mask[:, None, :], (b, t, sk))
    c = transformer_block(params, f"{prefix}.cross", h, enc.hidden, allow,
                          cfg.n_heads, trace=trace, trace_label=f"{prefix}.cross")
    return h, c


def output_projection(features: Tensor, w: Tensor) -> Tensor:
    """Map concatenated decoder features to vocabulary logits."""
    if features.shape[-1] != w.shape[0]:
        raise T.ShapeError(
            f"output_projection: feature width {features.shape[-1]} vs W rows {w.shape[0]}")
    return matmul(features, w)
