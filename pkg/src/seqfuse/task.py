"""Synthetic noisy-channel task: Markov text source + noisy token features.

Sentences come from a seeded Markov chain over V-1 content symbols with
an explicit EOS stopping probability per context. Each content token
emits r feature frames: the token's fixed unit-norm embedding plus
Gaussian noise. EOS emits no frames, so an utterance with N tokens
(EOS included) has exactly r*(N-1) frames.

The same chain produces the parallel splits and the larger text-only
corpus, so an external LM estimated on text alone is genuinely matched
to the transcription distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .criteria import Utterance
from .models import BOS, EOS_ID
from .rng import named_rng

# hard stop for source sentences, in content tokens; the per-context EOS
# probability floor makes hitting it rare
MAX_CONTENT_LEN = 50

EOS_SYMBOL = "</s>"


@dataclass(frozen=True)
class TaskConfig:
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
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 (content plus EOS)")
        if self.markov_order < 1:
            raise ValueError("markov_order must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.frames_per_token < 1:
            raise ValueError("frames_per_token must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if min(self.n_train, self.n_dev, self.n_test, self.n_text_only) < 1:
            raise ValueError("all split sizes must be >= 1")
        if self.n_text_only < self.n_train:
            raise ValueError("n_text_only must be >= n_train")


# relative scale of the per-context tilt on top of the last-token
# backbone for sources of order >= 2
TILT = 0.5


class MarkovSource:
    """Sentence sampler with lazily built, per-context transition rows.

    Each context (the last markov_order content tokens, BOS-padded) gets
    its own row: an EOS probability drawn uniformly from [0.1, 0.25] and
    the remaining mass spread over content tokens by a temperature-scaled
    softmax of Gaussian logits. The logits are a backbone draw keyed by
    the last token plus, for order >= 2, a half-scale tilt keyed by the
    full context. Sharing the backbone keeps the low-order projection of
    a higher-order source strongly structured, so short-context models
    estimated on text stay informative about it. Rows come from named
    RNG streams keyed by the context, so they do not depend on sampling
    order.
    """

    def __init__(self, cfg: TaskConfig):
        self.cfg = cfg
        self._rows: dict[tuple[int, ...], np.ndarray] = {}

    def initial_context(self) -> tuple[int, ...]:
        return (BOS,) * self.cfg.markov_order

    def row(self, ctx: tuple[int, ...]) -> np.ndarray:
        """Transition probabilities over token ids 0..V-1 (0 = EOS)."""
        cached = self._rows.get(ctx)
        if cached is not None:
            return cached
        rng = named_rng(self.cfg.seed, f"task/chain/{ctx[-1]}")
        p_eos = rng.uniform(0.1, 0.25)
        g = rng.standard_normal(self.cfg.vocab_size - 1) / self.cfg.temperature
        if self.cfg.markov_order > 1:
            name = "task/chain/" + ",".join(str(t) for t in ctx)
            tilt = named_rng(self.cfg.seed, name)
            g = g + TILT * tilt.standard_normal(self.cfg.vocab_size - 1) \
                / self.cfg.temperature
        g -= g.max()
        content = np.exp(g)
        content *= (1.0 - p_eos) / content.sum()
        row = np.concatenate(([p_eos], content))
        self._rows[ctx] = row
        return row

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        """One EOS-terminated sentence (possibly just EOS)."""
        ctx = self.initial_context()
        tokens: list[int] = []
        while len(tokens) < MAX_CONTENT_LEN:
            tok = int(rng.choice(self.cfg.vocab_size, p=self.row(ctx)))
            if tok == EOS_ID:
                break
            tokens.append(tok)
            ctx = (ctx + (tok,))[-self.cfg.markov_order:]
        tokens.append(EOS_ID)
        return tuple(tokens)


@dataclass
class Dataset:
    """Parallel utterances (ids prefixed by split), text corpus, vocabulary."""

    utterances: list[Utterance]
    text_only: list[tuple[int, ...]]
    vocab: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[Utterance]:
        prefix = name + "-"
        out = [u for u in self.utterances if u.id.startswith(prefix)]
        if not out:
            raise ValueError(f"no utterances in split {name!r}")
        return out


def token_embeddings(cfg: TaskConfig) -> np.ndarray:
    """Fixed per-token feature embeddings, rows scaled to unit norm."""
    rng = named_rng(cfg.seed, "task/embed")
    table = rng.standard_normal((cfg.vocab_size, cfg.feature_dim))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return table


def _features(cfg: TaskConfig, embed: np.ndarray, tokens: tuple[int, ...],
              noise_rng: np.random.Generator) -> np.ndarray:
    content = tokens[:-1]
    frames = np.repeat(embed[list(content)], cfg.frames_per_token, axis=0)
    return frames + cfg.noise_std * noise_rng.standard_normal(frames.shape)


def generate_dataset(cfg: TaskConfig) -> Dataset:
    """Draw all splits and the text-only corpus, reproducibly from cfg.seed."""
    source = MarkovSource(cfg)
    embed = token_embeddings(cfg)

    utterances: list[Utterance] = []
    for split, count in (("train", cfg.n_train), ("dev", cfg.n_dev),
                         ("test", cfg.n_test)):
        text_rng = named_rng(cfg.seed, f"task/text/{split}")
        noise_rng = named_rng(cfg.seed, f"task/noise/{split}")
        for i in range(count):
            tokens = source.sample(text_rng)
            while len(tokens) < 2:  # acoustic utterances need frames
                tokens = source.sample(text_rng)
            feats = _features(cfg, embed, tokens, noise_rng)
            utterances.append(Utterance(id=f"{split}-{i:04d}", tokens=tokens,
                                        feats=feats))

    lm_rng = named_rng(cfg.seed, "task/text/lm")
    text_only = [source.sample(lm_rng) for _ in range(cfg.n_text_only)]

    vocab = [EOS_SYMBOL] + [f"w{i}" for i in range(1, cfg.vocab_size)]
    return Dataset(utterances=utterances, text_only=text_only, vocab=vocab)


# ---------------------------------------------------------------------------
# file formats: JSONL utterances, plain-text corpus, one-symbol-per-line vocab
# ---------------------------------------------------------------------------


def save_utterances(path, utterances):
    with open(path, "w", encoding="utf-8") as f:
        for utt in utterances:
            rec = {"id": utt.id, "tokens": list(utt.tokens),
                   "feats": [[float(x) for x in row] for row in utt.feats.values]}
            f.write(json.dumps(rec) + "\n")


def load_utterances(path) -> list[Utterance]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Utterance(id=rec["id"], tokens=tuple(rec["tokens"]),
                                 feats=np.array(rec["feats"])))
    return out


def save_text(path, sequences):
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            f.write(" ".join(str(t) for t in seq) + "\n")


def load_text(path) -> list[tuple[int, ...]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(tuple(int(t) for t in line.split()))
    return out


def save_vocab(path, vocab):
    with open(path, "w", encoding="utf-8") as f:
        for symbol in vocab:
            f.write(symbol + "\n")


def load_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        vocab = [line.rstrip("\n") for line in f if line.strip()]
    if not vocab or vocab[0] != EOS_SYMBOL:
        raise ValueError(f"vocabulary line 0 must be the EOS symbol {EOS_SYMBOL!r}")
    return vocab
