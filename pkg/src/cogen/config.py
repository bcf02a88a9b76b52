"""Flat key=value run configuration with schema validation.

Precedence: command-line overrides > config file > defaults. Unknown keys are
rejected. The fingerprint of the resolved config is embedded in artifacts.
"""

import hashlib
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # model
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 0
    max_seq_len: int = 256
    # training
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 300
    warmup_epochs: int = 10
    seed: int = 0
    min_freq: int = 1
    loss_mode: str = "uncertainty"        # or "weighted:<alpha>"
    mode: str = "joint"                   # joint | act_only | pipeline
    act_attention: str = "dynamic"        # dynamic | mean
    stop_exact_match: float = 0.0         # 0 disables early stopping
    stop_check_every: int = 10
    # decoding
    beam_size: int = 2
    trigram_block: bool = True
    act_max_len: int = 30
    resp_max_len: int = 80
    length_norm: bool = False
    # paths
    corpus: str = ""
    ontology: str = ""
    checkpoint: str = ""
    init_from: str = ""
    resume: str = ""
    report: str = ""
    loss_log: str = ""

    @classmethod
    def schema(cls):
        casts = {int: int, float: float, str: str, bool: _bool}
        return {f.name: casts[f.type if isinstance(f.type, type) else
                              {"int": int, "float": float, "str": str,
                               "bool": bool}[f.type]]
                for f in fields(cls)}

    @classmethod
    def resolve(cls, file_path: str = "", overrides: dict | None = None) -> "RunConfig":
        schema = cls.schema()
        values = {}
        if file_path:
            with open(file_path, encoding="utf-8") as f:
                for lineno, raw in enumerate(f, 1):
                    line = raw.strip()
                    if not line or line.startswith("#"):
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{file_path}:{lineno}: expected key=value")
                    key, val = (s.strip() for s in line.split("=", 1))
                    if key not in schema:
                        raise ConfigError(f"{file_path}:{lineno}: unknown key {key!r}")
                    values[key] = schema[key](val)
        for key, val in (overrides or {}).items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = schema[key](val)
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self):
        from .model import LossMode
        LossMode.parse(self.loss_mode)
        if self.mode not in ("joint", "act_only", "pipeline"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.act_attention not in ("dynamic", "mean"):
            raise ConfigError(f"unknown act_attention {self.act_attention!r}")
        if self.mode == "pipeline" and not self.init_from:
            raise ConfigError("pipeline mode requires init_from=<act-only checkpoint>")
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")

    # filesystem locations; excluded from the fingerprint so that runs which
    # differ only in where they read or write artifacts hash identically
    PATH_FIELDS = frozenset(["corpus", "ontology", "checkpoint", "init_from",
                             "resume", "report", "loss_log"])

    def as_items(self):
        return sorted((f.name, getattr(self, f.name)) for f in fields(self))

    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.as_items()
                         if k not in self.PATH_FIELDS)
        return hashlib.sha256(text.encode()).hexdigest()[:16]
