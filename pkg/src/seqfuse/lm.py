"""External language models with a uniform stepwise interface.

Both models map (state, previous token) to a full (V,) log-distribution
over the next token plus an advanced state, mirroring the acoustic
model's step contract. The n-gram model is exact and gradient-free; the
recurrent model shares the gated cell of the acoustic decoder and can be
trained jointly under the local fusion criterion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import BOS, EOS_ID, gru_params, gru_step, init_param


def _check_token(token: int, vocab_size: int):
    if token != BOS and not 0 <= token < vocab_size:
        raise ValueError(f"token id {token} out of range [0, {vocab_size}) and not BOS")


def _check_terminated(tokens) -> list[int]:
    tokens = list(tokens)
    if not tokens or tokens[-1] != EOS_ID:
        raise ValueError("sequence must be EOS-terminated")
    if EOS_ID in tokens[:-1]:
        raise ValueError("EOS is terminal; scoring past EOS is not defined")
    return tokens


class NGramLM:
    """Count-based n-gram model with add-kappa smoothing.

    p(w | ctx) = (count(ctx, w) + kappa) / (count(ctx) + kappa * V)

    Contexts are the k-1 previous tokens, left-padded with BOS. The
    smoothing closes the distribution exactly: rows sum to one for seen
    and unseen contexts alike, and every probability is positive.
    """

    def __init__(self, order: int, kappa: float, vocab_size: int):
        if order < 1:
            raise ValueError("order must be >= 1")
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        self.order = order
        self.kappa = kappa
        self.V = vocab_size
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self.context_totals: dict[tuple[int, ...], int] = {}

    def parameters(self) -> list[Tensor]:
        return []

    def initial_state(self) -> tuple[int, ...]:
        return (BOS,) * (self.order - 1)

    def _push(self, state: tuple[int, ...], token: int) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return (state + (token,))[-(self.order - 1):]

    def step(self, state: tuple[int, ...], prev_token: int) -> tuple[Tensor, tuple[int, ...]]:
        _check_token(prev_token, self.V)
        ctx = self._push(state, prev_token)
        table = self.counts.get(ctx, {})
        total = self.context_totals.get(ctx, 0)
        counts = np.zeros(self.V)
        for tok, c in table.items():
            counts[tok] = c
        probs = (counts + self.kappa) / (total + self.kappa * self.V)
        return Tensor(np.log(probs)), ctx

    def observe(self, tokens):
        tokens = _check_terminated(tokens)
        state = self.initial_state()
        prev = BOS
        for tok in tokens:
            if not 0 <= tok < self.V:
                raise ValueError(f"token id {tok} out of range [0, {self.V})")
            ctx = self._push(state, prev)
            table = self.counts.setdefault(ctx, {})
            table[tok] = table.get(tok, 0) + 1
            self.context_totals[ctx] = self.context_totals.get(ctx, 0) + 1
            state = ctx
            prev = tok

    # counts-file round trip. BOS appears in contexts as -1.
    def to_json(self) -> str:
        items = []
        for ctx in sorted(self.counts):
            table = self.counts[ctx]
            items.append({
                "ctx": " ".join(str(t) for t in ctx),
                "counts": {str(tok): table[tok] for tok in sorted(table)},
            })
        return json.dumps({
            "order": self.order,
            "kappa": self.kappa,
            "vocab_size": self.V,
            "contexts": items,
        }, indent=0, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NGramLM":
        doc = json.loads(text)
        lm = cls(doc["order"], doc["kappa"], doc["vocab_size"])
        for item in doc["contexts"]:
            ctx = tuple(int(t) for t in item["ctx"].split()) if item["ctx"] else ()
            table = {int(tok): int(c) for tok, c in item["counts"].items()}
            lm.counts[ctx] = table
            lm.context_totals[ctx] = sum(table.values())
        return lm


def ngram_train(corpus, order: int, kappa: float, vocab_size: int) -> NGramLM:
    """Count an add-kappa n-gram model from EOS-terminated token sequences."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("ngram_train: empty corpus")
    lm = NGramLM(order=order, kappa=kappa, vocab_size=vocab_size)
    for tokens in corpus:
        lm.observe(tokens)
    return lm


class RecurrentLM:
    """Single gated recurrent layer over token embeddings."""

    def __init__(self, vocab_size: int, dim: int = 32, seed: int = 0):
        self.V = vocab_size
        self.dim = dim
        p: dict[str, Tensor] = {}
        p["lm/embed"] = init_param(seed, "lm/embed", (vocab_size + 1, dim), dim)
        p.update(gru_params(seed, "lm/rnn", dim, dim))
        p["lm/out/W"] = init_param(seed, "lm/out/W", (dim, vocab_size), dim)
        self.params = p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def initial_state(self) -> Tensor:
        return Tensor(np.zeros((1, self.dim)))

    def step(self, state: Tensor, prev_token: int) -> tuple[Tensor, Tensor]:
        _check_token(prev_token, self.V)
        idx = self.V if prev_token == BOS else prev_token
        x = ad.rows(self.params["lm/embed"], [idx])
        h = gru_step(self.params, "lm/rnn", x, state)
        row = ad.log_softmax(h @ self.params["lm/out/W"])
        return ad.reshape(row, (self.V,)), h


def lm_step(lm, state, prev_token: int):
    """Uniform step entry point: ((V,) log-probs, advanced state)."""
    return lm.step(state, prev_token)


def lm_sequence_logprob(lm, tokens) -> Tensor:
    """Log probability of a complete sequence, EOS factor included."""
    tokens = _check_terminated(tokens)
    state = lm.initial_state()
    prev = BOS
    total = None
    steps = []
    for tok in tokens:
        row, state = lm.step(state, prev)
        steps.append(ad.gather_logprob(ad.reshape(row, (1, lm.V)), [tok]))
        prev = tok
    total = ad.sum_all(ad.concat(steps, axis=0))
    return total


def lm_sequence_logprobs(lm, tokens) -> Tensor:
    """Teacher-forced (N, V) log-distribution matrix along `tokens`."""
    tokens = _check_terminated(tokens)
    state = lm.initial_state()
    prev = BOS
    rows = []
    for tok in tokens:
        row, state = lm.step(state, prev)
        rows.append(ad.reshape(row, (1, lm.V)))
        prev = tok
    return ad.concat(rows, axis=0)
