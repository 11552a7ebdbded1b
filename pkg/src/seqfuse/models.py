"""Toy attention encoder-decoder acoustic model.

Stepwise interface: every decoder step consumes the previous token (or
BOS) and emits a full log-distribution over the output vocabulary, so
the same model serves teacher-forced training and beam search.

Shape conventions: feature input is (T, d_f); encoder states are
(T, 2*d_h); all per-step vectors are kept as (1, d) row matrices; the
public step output is a flat (V,) log-prob vector.

The recurrent cell is a gated cell with explicit update/reset gates and
no bias terms:

    z = sigmoid(W_z [x, h])        r = sigmoid(W_r [x, h])
    hbar = tanh(W_h [x, r * h])    h' = (1 - z) h + z hbar

Attention is MLP-style with weight feedback: the energy for encoder
position t is v . tanh(W_s s + W_e h_t + W_f f_t), where f is the
cumulative sum of all past attention weight vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import named_rng

# Input-only begin-of-sequence marker. Not part of the output vocabulary;
# embedding tables reserve their final row for it.
BOS = -1

# EOS is a regular output token with a fixed id.
EOS_ID = 0


def init_param(seed: int, name: str, shape: tuple[int, int], fan_in: int) -> Tensor:
    """Uniform [-s, s] with s = 1/sqrt(fan_in), from the stream (seed, name)."""
    s = 1.0 / math.sqrt(fan_in)
    rng = named_rng(seed, name)
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def gru_params(seed: int, prefix: str, in_dim: int, hidden: int) -> dict[str, Tensor]:
    total = in_dim + hidden
    return {
        f"{prefix}/Wz": init_param(seed, f"{prefix}/Wz", (total, hidden), total),
        f"{prefix}/Wr": init_param(seed, f"{prefix}/Wr", (total, hidden), total),
        f"{prefix}/Wh": init_param(seed, f"{prefix}/Wh", (total, hidden), total),
    }


def gru_step(params: dict[str, Tensor], prefix: str, x: Tensor, h: Tensor) -> Tensor:
    xh = ad.concat([x, h], axis=1)
    z = ad.sigmoid(xh @ params[f"{prefix}/Wz"])
    r = ad.sigmoid(xh @ params[f"{prefix}/Wr"])
    xrh = ad.concat([x, r * h], axis=1)
    hbar = ad.tanh(xrh @ params[f"{prefix}/Wh"])
    return (1.0 - z) * h + z * hbar


@dataclass
class EncoderStates:
    """Per-frame encoder outputs plus the cached attention projection.

    `att_proj` is states @ W_e, computed once per utterance since it is
    reused by every decoder step.
    """

    states: Tensor  # (T, 2*d_h)
    att_proj: Tensor  # (T, d_a)

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass
class DecoderState:
    """Decoder recurrent state, accumulated attention weights, last context."""

    h: Tensor  # (1, d_h)
    feedback: Tensor  # (T, 1), cumulative attention weights
    context: Tensor  # (1, 2*d_h)


class AcousticModel:
    """Bidirectional recurrent encoder + attention decoder over V tokens."""

    def __init__(self, vocab_size: int, feat_dim: int, embed_dim: int = 16,
                 hidden_dim: int = 32, att_dim: int = 16, encoder_layers: int = 1,
                 seed: int = 0):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if encoder_layers not in (1, 2):
            raise ValueError("encoder_layers must be 1 or 2")
        self.V = vocab_size
        self.d_f = feat_dim
        self.d_e = embed_dim
        self.d_h = hidden_dim
        self.d_a = att_dim
        self.encoder_layers = encoder_layers

        p: dict[str, Tensor] = {}
        p["am/embed"] = init_param(seed, "am/embed", (vocab_size + 1, embed_dim), embed_dim)
        for layer in range(encoder_layers):
            in_dim = feat_dim if layer == 0 else 2 * hidden_dim
            for direction in ("fwd", "bwd"):
                p.update(gru_params(seed, f"am/enc{layer}/{direction}", in_dim, hidden_dim))
        p["am/att/Ws"] = init_param(seed, "am/att/Ws", (hidden_dim, att_dim), hidden_dim)
        p["am/att/We"] = init_param(seed, "am/att/We", (2 * hidden_dim, att_dim), 2 * hidden_dim)
        p["am/att/Wf"] = init_param(seed, "am/att/Wf", (1, att_dim), 1)
        p["am/att/v"] = init_param(seed, "am/att/v", (att_dim, 1), att_dim)
        p.update(gru_params(seed, "am/dec", embed_dim + 2 * hidden_dim, hidden_dim))
        p["am/out/W"] = init_param(seed, "am/out/W", (3 * hidden_dim, vocab_size), 3 * hidden_dim)
        self.params = p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def _embed(self, token: int) -> Tensor:
        if token == BOS:
            return ad.rows(self.params["am/embed"], [self.V])
        if not 0 <= token < self.V:
            raise ValueError(f"token id {token} out of range [0, {self.V}) and not BOS")
        return ad.rows(self.params["am/embed"], [token])

    def initial_state(self, enc: EncoderStates) -> DecoderState:
        return DecoderState(
            h=Tensor(np.zeros((1, self.d_h))),
            feedback=Tensor(np.zeros((enc.length, 1))),
            context=Tensor(np.zeros((1, 2 * self.d_h))),
        )


def encode(am: AcousticModel, feats) -> EncoderStates:
    """Run the bidirectional encoder over a (T, d_f) feature matrix."""
    feats = feats if isinstance(feats, Tensor) else Tensor(feats)
    T = feats.shape[0]
    if T == 0:
        raise ValueError("empty utterance: encoder needs at least one feature frame")

    layer_in = feats
    for layer in range(am.encoder_layers):
        halves = []
        for direction, order in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
            prefix = f"am/enc{layer}/{direction}"
            h = Tensor(np.zeros((1, am.d_h)))
            steps: list[Tensor | None] = [None] * T
            for t in order:
                h = gru_step(am.params, prefix, ad.rows(layer_in, [t]), h)
                steps[t] = h
            halves.append(ad.concat(steps, axis=0))
        layer_in = ad.concat(halves, axis=1)

    att_proj = layer_in @ am.params["am/att/We"]
    return EncoderStates(states=layer_in, att_proj=att_proj)


def attend(am: AcousticModel, state: DecoderState,
           enc: EncoderStates) -> tuple[Tensor, Tensor, DecoderState]:
    """One attention read.

    Returns (context, weights, state'); state' carries the feedback
    vector grown by this step's weights. The decoder recurrent state is
    untouched here.
    """
    if enc.length == 0:
        raise ValueError("attend: empty encoder states")
    pre = enc.att_proj + state.h @ am.params["am/att/Ws"] \
        + state.feedback @ am.params["am/att/Wf"]
    energies = ad.tanh(pre) @ am.params["am/att/v"]  # (T, 1)
    weights = ad.softmax(energies, axis=0)
    context = ad.transpose(weights) @ enc.states  # (1, 2*d_h)
    new_state = DecoderState(h=state.h, feedback=state.feedback + weights,
                             context=context)
    return context, weights, new_state


def _step_row(am: AcousticModel, state: DecoderState, prev_token: int,
              enc: EncoderStates) -> tuple[Tensor, DecoderState]:
    """Shared step body; returns the (1, V) log-prob row and the new state."""
    x = am._embed(prev_token)
    context, _, attended = attend(am, state, enc)
    h = gru_step(am.params, "am/dec", ad.concat([x, context], axis=1), state.h)
    readout = ad.concat([h, context], axis=1)
    row = ad.log_softmax(readout @ am.params["am/out/W"])
    return row, DecoderState(h=h, feedback=attended.feedback, context=context)


def am_step(am: AcousticModel, state: DecoderState, prev_token: int,
            enc: EncoderStates) -> tuple[Tensor, DecoderState]:
    """Advance the decoder by one token; returns ((V,) log-probs, new state)."""
    row, new_state = _step_row(am, state, prev_token, enc)
    return ad.reshape(row, (am.V,)), new_state


def teacher_forced_rows(am: AcousticModel, tokens, enc: EncoderStates) -> Tensor:
    """(N, V) stepwise log-distributions along `tokens`, given encoder states.

    Row n is conditioned on the history tokens[0..n-1] (BOS at n=0). The
    encoder pass is the caller's, so many token sequences can be scored
    against one utterance without re-encoding.
    """
    state = am.initial_state(enc)
    prev = BOS
    rows = []
    for tok in tokens:
        row, state = _step_row(am, state, prev, enc)
        rows.append(row)
        prev = tok
    return ad.concat(rows, axis=0)


def am_sequence_logprobs(am: AcousticModel, utt) -> Tensor:
    """Teacher-forced step distributions for every position of utt.tokens.

    The EOS position is included, so the result is (N, V) with
    N == len(utt.tokens).
    """
    tokens = list(utt.tokens)
    if not tokens or tokens[-1] != EOS_ID:
        raise ValueError(f"utterance {getattr(utt, 'id', '?')}: tokens must end with EOS")
    return teacher_forced_rows(am, tokens, encode(am, utt.feats))
