"""Act/response co-generation model: shared encoder with dual masking, act
decoder with belief injection, response decoder with dynamic act attention,
and the two loss regimes (fixed weighted sum vs. learned task uncertainty).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ContractError, concat, cross_entropy, matmul
from .transformer import (TransformerConfig, EncoderOutput, AttentionTrace,
                          encode, decoder_step, output_projection,
                          transformer_block, init_encoder_params,
                          init_decoder_params, init_block_params,
                          sinusoidal_positions)
from .corpus import Batch, Vocab, belief_dim, PAD_ID
from .acts import Ontology
from .config import ConfigError


@dataclass
class DualEncoding:
    enc_act: EncoderOutput    # keys: current utterance + db tokens
    enc_resp: EncoderOutput   # keys: full history + db tokens


class CogenModel:
    """Parameter container plus the forward passes of both generators.

    act_attention selects how the response decoder consumes act hidden
    states: "dynamic" (attention over them) or "mean" (their average), the
    latter existing for the pipeline ablation.
    """

    def __init__(self, cfg: TransformerConfig, text_vocab: Vocab, act_vocab: Vocab,
                 ontology: Ontology, act_attention: str = "dynamic", seed: int = 0):
        if act_attention not in ("dynamic", "mean"):
            raise ConfigError(f"unknown act_attention mode {act_attention!r}")
        self.cfg = cfg
        self.text_vocab = text_vocab
        self.act_vocab = act_vocab
        self.ontology = ontology
        self.act_attention = act_attention
        d = cfg.d_model
        rng = np.random.default_rng(seed)
        p: dict = {}
        scale = 1.0 / np.sqrt(d)
        p["emb.src"] = Tensor.randn(rng, (len(text_vocab), d), scale, True)
        p["emb.act"] = Tensor.randn(rng, (len(act_vocab), d), scale, True)
        p["w_belief"] = Tensor.randn(rng, (belief_dim(ontology), d), scale, True)
        init_encoder_params(rng, p, "enc", cfg)
        init_decoder_params(rng, p, "actdec", cfg)
        init_decoder_params(rng, p, "respdec", cfg)
        if act_attention == "dynamic":
            init_block_params(rng, p, "respdec.dyn", d, cfg.d_ff, kv_dim=2 * d)
            resp_feat = 3 * d
        else:
            resp_feat = 4 * d   # [h; c; mean of 2d-wide act states]
        p["w_act_out"] = Tensor.randn(rng, (2 * d, len(act_vocab)),
                                      1.0 / np.sqrt(2 * d), True)
        p["w_resp_out"] = Tensor.randn(rng, (resp_feat, len(text_vocab)),
                                       1.0 / np.sqrt(resp_feat), True)
        # log sigma^2 of the two tasks, initialized at sigma = 1
        p["s1"] = Tensor(np.zeros(()), True)
        p["s2"] = Tensor(np.zeros(()), True)
        self.params = p
        self._pos_cache: dict = {}

    # -- parameter grouping ---------------------------------------------------

    def param_names(self, group: str = "all") -> list:
        """Names for "all", "act" (encoder + act branch), or "response"."""
        act_prefixes = ("emb.src", "emb.act", "w_belief", "enc.", "actdec.",
                        "w_act_out")
        resp_prefixes = ("respdec.", "w_resp_out")
        if group == "all":
            return list(self.params)
        if group == "act":
            return [n for n in self.params if n.startswith(act_prefixes)]
        if group == "response":
            return [n for n in self.params
                    if n.startswith(resp_prefixes) or n in ("s1", "s2")]
        raise ConfigError(f"unknown parameter group {group!r}")

    def subset(self, names) -> dict:
        return {n: self.params[n] for n in names}

    # -- embeddings -----------------------------------------------------------

    def _positions(self, n: int) -> np.ndarray:
        key = (n, T.default_dtype().__name__)
        if key not in self._pos_cache:
            self._pos_cache[key] = sinusoidal_positions(n, self.cfg.d_model)
        return self._pos_cache[key]

    def _embed(self, table: Tensor, ids: np.ndarray) -> Tensor:
        from .tensor import embedding
        d = self.cfg.d_model
        e = embedding(table, ids) * float(np.sqrt(d))
        return e + Tensor.const(self._positions(ids.shape[-1]))

    # -- forward passes -------------------------------------------------------

    def encode_shared(self, batch: Batch) -> DualEncoding:
        """One parameter set, two masked passes over the same source."""
        act_keys = batch.act_key_mask & batch.src_mask
        if not act_keys.any(axis=-1).all():
            raise ContractError("encode_shared: a turn has an empty current utterance")
        emb = self._embed(self.params["emb.src"], batch.src)
        enc_act = encode(self.params, "enc", emb, act_keys, self.cfg)
        enc_resp = encode(self.params, "enc", emb, batch.src_mask, self.cfg)
        return DualEncoding(enc_act=enc_act, enc_resp=enc_resp)

    def act_forward(self, dual: DualEncoding, belief: np.ndarray,
                    act_in: np.ndarray, trace: AttentionTrace | None = None):
        """Teacher-forced act decoder pass.

        Returns (logits [B, Ta, Va], act hidden states [B, Ta, 2d]). The
        belief projection is added to every act token embedding.
        """
        if np.any(act_in >= len(self.act_vocab)):
            raise IndexError("act_forward: token id outside act vocabulary")
        u = self._embed(self.params["emb.act"], act_in)
        proj = matmul(Tensor.const(belief.astype(T.default_dtype())),
                      self.params["w_belief"])
        u = u + proj.reshape(proj.shape[0], 1, proj.shape[1])
        h, c = decoder_step(self.params, "actdec", u, dual.enc_act, self.cfg,
                            trace=trace)
        hidden = concat([h, c], axis=-1)
        logits = output_projection(hidden, self.params["w_act_out"])
        return logits, hidden

    def response_forward(self, dual: DualEncoding, act_hidden: Tensor,
                         act_mask: np.ndarray, resp_in: np.ndarray,
                         trace: AttentionTrace | None = None) -> Tensor:
        """Teacher-forced response decoder pass -> logits [B, Tr, Vt]."""
        if act_hidden.shape[1] == 0:
            raise ContractError("response_forward: empty act hidden states")
        e = self._embed(self.params["emb.src"], resp_in)
        h, c = decoder_step(self.params, "respdec", e, dual.enc_resp, self.cfg,
                            trace=trace)
        b, tr, d = h.shape
        ta = act_hidden.shape[1]
        if self.act_attention == "dynamic":
            allow = np.broadcast_to(act_mask[:, None, :], (b, tr, ta))
            o = transformer_block(self.params, "respdec.dyn", h, act_hidden,
                                  allow, self.cfg.n_heads, trace=trace,
                                  trace_label="respdec.dyn")
        else:
            w = act_mask.astype(T.default_dtype())
            w = w / w.sum(axis=-1, keepdims=True)
            w = np.broadcast_to(w[:, None, :], (b, tr, ta)).copy()
            o = matmul(Tensor.const(w), act_hidden)
        feats = concat([h, c, o], axis=-1)
        return output_projection(feats, self.params["w_resp_out"])


# -- losses -------------------------------------------------------------------


def sequence_loss(logits: Tensor, targets: np.ndarray,
                  ignore_id: int = PAD_ID) -> Tensor:
    """Token cross entropy, mean over non-padding positions."""
    b, t, v = logits.shape
    flat = logits.reshape(b * t, v)
    tg = targets.reshape(-1)
    n = int((tg != ignore_id).sum())
    if n == 0:
        raise ContractError("sequence_loss: batch has zero non-pad tokens")
    return cross_entropy(flat, tg, ignore_id=ignore_id) * (1.0 / n)


def weighted_sum_loss(l_a: Tensor, l_r: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"weighted-sum alpha must be in [0, 1], got {alpha}")
    return l_a * alpha + l_r * (1.0 - alpha)


def uncertainty_loss(l_a: Tensor, l_r: Tensor, s1: Tensor, s2: Tensor) -> Tensor:
    """Task-uncertainty weighting with s_i = log sigma_i^2:
    0.5*exp(-s1)*L_a + 0.5*exp(-s2)*L_r + s1 + s2."""
    return ((-s1).exp() * l_a * 0.5 + (-s2).exp() * l_r * 0.5
            + s1.reshape(()) + s2.reshape(()))


@dataclass
class LossMode:
    kind: str            # "uncertainty" | "weighted"
    alpha: float = 0.5

    @classmethod
    def parse(cls, text: str) -> "LossMode":
        if text == "uncertainty":
            return cls("uncertainty")
        if text.startswith("weighted:"):
            return cls("weighted", float(text.split(":", 1)[1]))
        raise ConfigError(f"unknown loss mode {text!r}")

    def __str__(self):
        return self.kind if self.kind == "uncertainty" else f"weighted:{self.alpha}"


def combine_losses(model: CogenModel, l_a: Tensor, l_r: Tensor,
                   mode: LossMode) -> Tensor:
    if mode.kind == "uncertainty":
        return uncertainty_loss(l_a, l_r, model.params["s1"], model.params["s2"])
    return weighted_sum_loss(l_a, l_r, mode.alpha)


# -- training -----------------------------------------------------------------


def act_only_step(model: CogenModel, batch: Batch, opt) -> float:
    """Warm-up / act-only step: encoder + act branch, response branch untouched."""
    opt.zero_grad()
    dual = model.encode_shared(batch)
    logits, _ = model.act_forward(dual, batch.belief, batch.act_in)
    l_a = sequence_loss(logits, batch.act_tg)
    l_a.backward()
    opt.step()
    return l_a.item()


def train_step(model: CogenModel, batch: Batch, opt, mode: LossMode) -> dict:
    """One joint forward/backward/Adam step; teacher forcing on both branches
    with the gold act prefix feeding the response decoder."""
    opt.zero_grad()
    dual = model.encode_shared(batch)
    act_logits, act_hidden = model.act_forward(dual, batch.belief, batch.act_in)
    act_mask = batch.act_in != PAD_ID
    resp_logits = model.response_forward(dual, act_hidden, act_mask, batch.resp_in)
    l_a = sequence_loss(act_logits, batch.act_tg)
    l_r = sequence_loss(resp_logits, batch.resp_tg)
    total = combine_losses(model, l_a, l_r, mode)
    total.backward()
    opt.step()
    return {
        "l_a": l_a.item(), "l_r": l_r.item(), "total": total.item(),
        "sigma1_sq": float(np.exp(model.params["s1"].item())),
        "sigma2_sq": float(np.exp(model.params["s2"].item())),
    }
