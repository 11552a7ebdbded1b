"""Flat key = value run configuration.

One schema covers all commands; unknown keys are rejected so typos fail
loudly. Scale and optimizer settings accept a sentinel (-1) meaning
"pick the criterion's default": local fusion trains at gamma_abs=2.0,
MMI fine-tunes at gamma_abs=0.1, both with gamma_rel=0.35; MMI uses the
smaller batch and learning rate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .criteria import Scales

CRITERIA = ("ce", "local", "mmi", "lm")
DECODE_MODES = ("auto", "am_only", "shallow", "local")
LM_TYPES = ("ngram", "recurrent")
SPLITS = ("train", "dev", "test")

DEFAULT_GAMMA_REL = 0.35
DEFAULT_GAMMA_ABS = {"ce": 1.0, "local": 2.0, "mmi": 0.1, "lm": 1.0}
DEFAULT_LR = {"ce": 0.05, "local": 0.05, "mmi": 0.005, "lm": 0.05}
DEFAULT_BATCH = {"ce": 16, "local": 16, "mmi": 4, "lm": 16}


class ConfigError(Exception):
    """Invalid configuration file, key, or value."""


@dataclass(frozen=True)
class RunConfig:
    # task generation
    vocab_size: int = 20
    markov_order: int = 1
    temperature: float = 0.5
    frames_per_token: int = 2
    feature_dim: int = 8
    noise_std: float = 0.5
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    n_text_only: int = 20000
    # acoustic model
    embed_dim: int = 16
    hidden_dim: int = 32
    att_dim: int = 16
    encoder_layers: int = 1
    # language model
    lm_type: str = "ngram"
    ngram_order: int = 2
    ngram_kappa: float = 0.1
    lm_dim: int = 32
    lm_path: str = ""
    # criterion and scales (-1 = criterion default)
    criterion: str = "ce"
    alpha: float = -1.0
    beta: float = -1.0
    gamma_den: float = 1.0
    joint_lm: bool = False
    nbest_n: int = 8
    # optimizer (-1 = criterion default)
    lr: float = -1.0
    batch_size: int = -1
    epochs: int = 10
    clip_norm: float = 5.0
    # decoding
    decode_mode: str = "auto"
    beam_size: int = 8
    decode_max_len: int = 0  # 0 = frames/frames_per_token + 2, per utterance
    length_norm: bool = False
    split: str = "dev"
    # per-epoch dev evaluation
    dev_beam_size: int = 4
    dev_limit: int = 0  # 0 = whole dev set
    # paths and seed
    seed: int = 42
    data_dir: str = "data"
    out_dir: str = "out"
    init_checkpoint: str = ""
    checkpoint: str = ""
    hyp_path: str = ""

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.decode_mode not in DECODE_MODES:
            raise ConfigError(f"decode_mode must be one of {DECODE_MODES}, "
                              f"got {self.decode_mode!r}")
        if self.lm_type not in LM_TYPES:
            raise ConfigError(f"lm_type must be one of {LM_TYPES}, got {self.lm_type!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        for key in ("alpha", "beta", "lr"):
            v = getattr(self, key)
            if v < 0 and v != -1.0:
                raise ConfigError(f"{key} must be >= 0, or -1 for the criterion default")
        if self.batch_size < 1 and self.batch_size != -1:
            raise ConfigError("batch_size must be >= 1, or -1 for the criterion default")
        if not 0.0 <= self.gamma_den <= 1.0:
            raise ConfigError(f"gamma_den must lie in [0, 1], got {self.gamma_den}")
        if self.lr != -1.0 and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        for key in ("frames_per_token", "feature_dim", "n_train",
                    "n_dev", "n_test", "n_text_only", "embed_dim", "hidden_dim",
                    "att_dim", "lm_dim", "nbest_n", "epochs", "beam_size",
                    "dev_beam_size", "markov_order", "ngram_order"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("temperature", "ngram_kappa", "clip_norm"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("noise_std",):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        for key in ("decode_max_len", "dev_limit"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0 (0 = automatic)")


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _FIELDS[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        return text
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {text!r} as {kind}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, value)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def print_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply --set key=value overrides; later settings win."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"--set: unknown key {key!r}")
        updates[key] = _parse_value(key, value)
    return dataclasses.replace(cfg, **updates)


def resolve_scales(cfg: RunConfig) -> Scales:
    """Fill sentinel alpha/beta with the criterion defaults."""
    alpha = DEFAULT_GAMMA_ABS[cfg.criterion] if cfg.alpha == -1.0 else cfg.alpha
    if cfg.beta == -1.0:
        beta = 0.0 if cfg.criterion == "ce" else alpha * DEFAULT_GAMMA_REL
    else:
        beta = cfg.beta
    return Scales(alpha=alpha, beta=beta, gamma_den=cfg.gamma_den)


def resolve_lr(cfg: RunConfig) -> float:
    return DEFAULT_LR[cfg.criterion] if cfg.lr == -1.0 else cfg.lr


def resolve_batch_size(cfg: RunConfig) -> int:
    return DEFAULT_BATCH[cfg.criterion] if cfg.batch_size == -1 else cfg.batch_size


def resolve_decode_mode(cfg: RunConfig) -> str:
    """Pair each training criterion with its decode mode unless overridden."""
    if cfg.decode_mode != "auto":
        return cfg.decode_mode
    return "local" if cfg.criterion == "local" else "shallow"
