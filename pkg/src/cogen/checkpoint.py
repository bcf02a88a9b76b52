"""Versioned binary checkpoint: magic, format version, JSON header (model
config, vocabularies, ontology, hashes), named parameter table as raw 32-bit
little-endian values, and optional Adam state. Round-trips byte-exactly.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .acts import Ontology
from .corpus import Vocab
from .transformer import TransformerConfig
from .model import CogenModel
from .tensor import Adam

MAGIC = b"COGENCK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def vocab_hash(vocab: Vocab) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode()).hexdigest()[:16]


def ontology_hash(ontology: Ontology) -> str:
    text = "|".join(ontology.domains) + "//" + "|".join(ontology.actions) \
        + "//" + "|".join(ontology.slots)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_bytes(f, b: bytes):
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def _read_bytes(f) -> bytes:
    (n,) = struct.unpack("<I", f.read(4))
    return f.read(n)


def save(path, model: CogenModel, opt: Adam | None = None, extra: dict | None = None):
    header = {
        "config": {"n_layers": model.cfg.n_layers, "n_heads": model.cfg.n_heads,
                   "d_model": model.cfg.d_model, "d_ff": model.cfg.d_ff,
                   "max_seq_len": model.cfg.max_seq_len},
        "act_attention": model.act_attention,
        "text_vocab": model.text_vocab.tokens,
        "act_vocab": model.act_vocab.tokens,
        "ontology": {"domains": model.ontology.domains,
                     "actions": model.ontology.actions,
                     "slots": model.ontology.slots},
        "vocab_hash": vocab_hash(model.text_vocab),
        "ontology_hash": ontology_hash(model.ontology),
        "extra": extra or {},
    }
    names = list(model.params)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            _write_bytes(f, json.dumps(header, sort_keys=True).encode())
            f.write(struct.pack("<I", len(names)))
            for name in names:
                data = model.params[name].data.astype("<f4")
                _write_bytes(f, name.encode())
                f.write(struct.pack("<B", data.ndim))
                for dim in data.shape:
                    f.write(struct.pack("<I", dim))
                f.write(data.tobytes())
            if opt is None:
                f.write(struct.pack("<B", 0))
            else:
                f.write(struct.pack("<B", 1))
                f.write(struct.pack("<Q", opt.t))
                f.write(struct.pack("<dddd", opt.lr, opt.beta1, opt.beta2, opt.eps))
                opt_names = list(opt.params)
                f.write(struct.pack("<I", len(opt_names)))
                for name in opt_names:
                    _write_bytes(f, name.encode())
                    f.write(opt.m[name].astype("<f4").tobytes())
                    f.write(opt.v[name].astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    """Returns (model, optimizer-or-None, header)."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(_read_bytes(f).decode())
        cfg = TransformerConfig(**header["config"])
        onto = header["ontology"]
        ontology = Ontology(onto["domains"], onto["actions"], onto["slots"])
        model = CogenModel(cfg, Vocab(header["text_vocab"]),
                           Vocab(header["act_vocab"]), ontology,
                           act_attention=header["act_attention"])
        (n_params,) = struct.unpack("<I", f.read(4))
        for _ in range(n_params):
            name = _read_bytes(f).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            raw = f.read(int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            if name not in model.params:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            if model.params[name].shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} shape {shape} vs model "
                    f"{model.params[name].shape}")
            model.params[name].data = arr.copy()
        (has_opt,) = struct.unpack("<B", f.read(1))
        opt = None
        if has_opt:
            (t,) = struct.unpack("<Q", f.read(8))
            lr, b1, b2, eps = struct.unpack("<dddd", f.read(32))
            (n_opt,) = struct.unpack("<I", f.read(4))
            opt_params = {}
            m, v = {}, {}
            for _ in range(n_opt):
                name = _read_bytes(f).decode()
                p = model.params[name]
                count = p.data.size * 4
                m[name] = np.frombuffer(f.read(count), dtype="<f4").reshape(
                    p.data.shape).astype(np.float32)
                v[name] = np.frombuffer(f.read(count), dtype="<f4").reshape(
                    p.data.shape).astype(np.float32)
                opt_params[name] = p
            opt = Adam(opt_params, lr=lr, beta1=b1, beta2=b2, eps=eps)
            opt.t = t
            opt.m, opt.v = m, v
    return model, opt, header
