"""Joint dialogue-act and response co-generation at desk scale: a shared
transformer encoder feeding an act-sequence decoder and a response decoder
coupled by dynamic act attention, trained with an uncertainty-weighted
multi-task loss, plus decoding and evaluation."""

from .tensor import Tensor, Adam, gradcheck, no_grad, use_dtype
from .transformer import TransformerConfig
from .acts import ActTriple, Ontology, canonicalize, parse, act_f1
from .model import CogenModel, LossMode
from .decode import DecodeConfig, beam_search, generate_turn
from .metrics import bleu, inform_rate, request_success, combined_score

__all__ = [
    "Tensor", "Adam", "gradcheck", "no_grad", "use_dtype",
    "TransformerConfig", "ActTriple", "Ontology", "canonicalize", "parse",
    "act_f1", "CogenModel", "LossMode", "DecodeConfig", "beam_search",
    "generate_turn", "bleu", "inform_rate", "request_success", "combined_score",
]

__version__ = "0.1.0"
