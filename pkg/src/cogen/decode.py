"""Inference: beam search with trigram avoidance, the two-pass act -> response
pipeline, and attention-trace export.
"""

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad, log_softmax_np
from .transformer import AttentionTrace
from .corpus import make_batch, PAD_ID, SOS_ID, EOS_ID
from .acts import parse


@dataclass
class Hypothesis:
    tokens: tuple                 # includes the leading start token
    score: float                  # sum of chosen-token log-softmax values
    finished: bool = False
    truncated: bool = False
    cache: object = None          # reserved for per-layer prefix states


@dataclass
class DecodeConfig:
    beam_size: int = 2
    max_len: int = 80
    trigram_block: bool = True
    length_norm: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")


def trigram_allowed(tokens, candidate) -> bool:
    """False iff appending `candidate` repeats a trigram already in `tokens`."""
    if len(tokens) < 2:
        return True
    tri = (tokens[-2], tokens[-1], candidate)
    return all(tuple(tokens[i:i + 3]) != tri for i in range(len(tokens) - 2))


def has_repeated_trigram(tokens) -> bool:
    tris = [tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)]
    return len(tris) != len(set(tris))


def _rank_key(cfg: DecodeConfig):
    def key(h: Hypothesis):
        n = max(1, len(h.tokens) - 1)
        score = h.score / n if cfg.length_norm else h.score
        # ties: earlier (lower-id) token sequence wins
        return (-score, h.tokens)
    return key


def beam_search(step_fn, cfg: DecodeConfig, vocab_size: int,
                sos_id: int = SOS_ID, eos_id: int = EOS_ID) -> Hypothesis:
    """Beam search over `step_fn(prefix_tokens) -> logits[vocab_size]`.

    Hypotheses emitting the end token are finalized; search stops when all
    beams finished or max_len is reached. Best = highest-scoring finished
    hypothesis, falling back to the best unfinished one (flagged truncated).
    """
    alive = [Hypothesis(tokens=(sos_id,), score=0.0)]
    finished: list = []
    stalled: list = []
    for _ in range(cfg.max_len):
        candidates = []
        for hyp in alive:
            logp = log_softmax_np(np.asarray(step_fn(hyp.tokens), dtype=np.float64))
            any_allowed = False
            for tok in range(vocab_size):
                if cfg.trigram_block and not trigram_allowed(hyp.tokens, tok):
                    continue
                any_allowed = True
                candidates.append(Hypothesis(
                    tokens=hyp.tokens + (tok,),
                    score=hyp.score + float(logp[tok]),
                    finished=(tok == eos_id)))
            if not any_allowed:
                stalled.append(Hypothesis(hyp.tokens, hyp.score, truncated=True))
        candidates.sort(key=_rank_key(cfg))
        kept = candidates[:cfg.beam_size]
        alive = [h for h in kept if not h.finished]
        finished.extend(h for h in kept if h.finished)
        if not alive:
            break
    leftovers = stalled + [Hypothesis(h.tokens, h.score, truncated=True)
                           for h in alive]
    pool = finished if finished else leftovers
    return min(pool, key=_rank_key(cfg))


@dataclass
class GenerationResult:
    act_tokens: list              # decoded act sequence incl. <sos>/<eos>
    act_triples: set
    response_tokens: list         # without <sos>/<eos>
    act_attention: np.ndarray | None   # [resp_len, act_len], final-layer head avg
    events: list = field(default_factory=list)


def generate_turn(model, turn, act_cfg: DecodeConfig | None = None,
                  resp_cfg: DecodeConfig | None = None) -> GenerationResult:
    """Two-pass generation: beam-decode the act sequence, rerun the act
    decoder over it to collect hidden states, then beam-decode the response
    attending to them."""
    # acts are short and canonically merged; trigram blocking stays off there
    act_cfg = act_cfg or DecodeConfig(beam_size=2, max_len=30, trigram_block=False)
    resp_cfg = resp_cfg or DecodeConfig(beam_size=2, max_len=80, trigram_block=True)
    events = []
    with no_grad():
        batch = make_batch([turn], model.text_vocab, model.act_vocab,
                           model.ontology, model.cfg.max_seq_len)
        dual = model.encode_shared(batch)

        def act_step(prefix):
            logits, _ = model.act_forward(dual, batch.belief,
                                          np.asarray([prefix], dtype=np.int64))
            return logits.data[0, -1]

        act_hyp = beam_search(act_step, act_cfg, len(model.act_vocab))
        body = [t for t in act_hyp.tokens
                if t not in (SOS_ID, EOS_ID, PAD_ID)]
        if not body:
            events.append("empty-act-body")
        act_in = np.asarray([[SOS_ID] + body], dtype=np.int64)
        _, act_hidden = model.act_forward(dual, batch.belief, act_in)
        act_mask = act_in != PAD_ID

        def resp_step(prefix):
            logits = model.response_forward(
                dual, act_hidden, act_mask, np.asarray([prefix], dtype=np.int64))
            return logits.data[0, -1]

        resp_hyp = beam_search(resp_step, resp_cfg, len(model.text_vocab))
        resp_ids = [t for t in resp_hyp.tokens if t not in (SOS_ID, EOS_ID)]

        trace = AttentionTrace()
        model.response_forward(dual, act_hidden, act_mask,
                               np.asarray([resp_hyp.tokens], dtype=np.int64),
                               trace=trace)
        attn = None
        for label, w in trace.entries:
            if label == "respdec.dyn":
                attn = w[0].mean(axis=0)     # [resp_len, act_len], head average

    act_tokens = model.act_vocab.decode(act_hyp.tokens)
    if resp_hyp.truncated:
        events.append("response-truncated")
    return GenerationResult(
        act_tokens=act_tokens,
        act_triples=parse(model.ontology, act_tokens).triples,
        response_tokens=model.text_vocab.decode(resp_ids),
        act_attention=attn,
        events=events)


def export_trace(path, result: GenerationResult, model):
    """Write the dynamic act attention matrix as tab-separated text:
    rows = response tokens, columns = act tokens."""
    if result.act_attention is None:
        raise ValueError("no dynamic act attention trace to export")
    cols = ["<sos>"] + [t for t in result.act_tokens if t not in ("<sos>", "<eos>")]
    rows = ["<sos>"] + list(result.response_tokens)
    attn = result.act_attention
    lines = ["\t" + "\t".join(cols)]
    for i, tok in enumerate(rows[:attn.shape[0]]):
        lines.append(tok + "\t" + "\t".join(f"{w:.6f}" for w in attn[i, :len(cols)]))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
