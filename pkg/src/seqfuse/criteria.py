"""Training objectives: cross entropy, local fusion, n-best MMI.

All three produce a scalar loss tensor (the negated objective, to be
minimized) plus float diagnostics. CE and local fusion operate on
teacher-forced log-probability matrices; MMI re-forwards every n-best
hypothesis through the acoustic model with a shared encoder pass. The
brute-force sequence posterior gives an exact reference point for the
n-best approximation on tiny instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import autodiff as ad
from .autodiff import Tensor
from .lm import lm_sequence_logprob, lm_sequence_logprobs
from .models import EOS_ID, encode, teacher_forced_rows

ENUMERATION_LIMIT = 10 ** 6


@dataclass(frozen=True)
class Scales:
    """Log-linear combination weights.

    alpha scales the acoustic model, beta the language model; gamma_den
    damps the MMI denominator (0 = pure cross entropy, 1 = full MMI).
    The absolute/relative parametrization used for sweeps is
    gamma_abs = alpha and gamma_rel = beta / alpha.
    """

    alpha: float = 1.0
    beta: float = 0.0
    gamma_den: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"scales must be nonnegative, got alpha={self.alpha} beta={self.beta}")
        if not 0.0 <= self.gamma_den <= 1.0:
            raise ValueError(f"gamma_den must lie in [0, 1], got {self.gamma_den}")

    @property
    def gamma_abs(self) -> float:
        return self.alpha

    @property
    def gamma_rel(self) -> float:
        if self.alpha == 0:
            raise ValueError("gamma_rel undefined at alpha = 0")
        return self.beta / self.alpha

    @classmethod
    def from_gammas(cls, gamma_abs: float, gamma_rel: float,
                    gamma_den: float = 1.0) -> "Scales":
        return cls(alpha=gamma_abs, beta=gamma_abs * gamma_rel, gamma_den=gamma_den)


@dataclass
class LossOutput:
    """loss: scalar tensor to minimize; the rest are float diagnostics.

    per_position holds the numerator terms (per-token combined reference
    log scores); denominator is the aggregate log denominator (sum of
    per-step logsumexps for local fusion, the n-best logsumexp for MMI,
    0 for CE).
    """

    loss: Tensor
    per_position: list[float] = field(default_factory=list)
    denominator: float = 0.0


@dataclass
class Utterance:
    id: str
    tokens: tuple[int, ...]
    feats: object  # (T, d_f) array or Tensor

    def __post_init__(self):
        self.tokens = tuple(int(t) for t in self.tokens)
        if not self.tokens or self.tokens[-1] != EOS_ID:
            raise ValueError(f"utterance {self.id}: tokens must end with EOS")
        if EOS_ID in self.tokens[:-1]:
            raise ValueError(f"utterance {self.id}: interior EOS")
        if any(t < 0 for t in self.tokens):
            raise ValueError(f"utterance {self.id}: negative token id")
        if not isinstance(self.feats, Tensor):
            self.feats = Tensor(self.feats)
        if self.feats.values.ndim != 2 or self.feats.shape[0] < 1:
            raise ValueError(f"utterance {self.id}: feats must be (T, d_f) with T >= 1")


def _check_rows(name: str, m: Tensor, n_tokens: int):
    if m.values.ndim != 2:
        raise ValueError(f"{name}: (N, V) matrix required, got shape {m.shape}")
    if m.shape[0] != n_tokens:
        raise ValueError(f"{name}: {m.shape[0]} rows for {n_tokens} tokens")


def ce_loss(am_logprobs: Tensor, tokens) -> LossOutput:
    """Negative log-likelihood of `tokens` under teacher-forced rows."""
    tokens = list(tokens)
    _check_rows("ce_loss", am_logprobs, len(tokens))
    picks = ad.gather_logprob(am_logprobs, tokens)
    loss = ad.neg(ad.sum_all(picks))
    return LossOutput(loss=loss, per_position=[float(v) for v in picks.values],
                      denominator=0.0)


def local_fusion_loss(am_logprobs: Tensor, lm_logprobs: Tensor, tokens,
                      scales: Scales, joint: bool = False) -> LossOutput:
    """Per-token renormalized log-linear fusion loss.

    Every position contributes
        alpha*am[n, w_n] + beta*lm[n, w_n] - logsumexp_w(alpha*am[n, w] + beta*lm[n, w]),
    with both matrices teacher-forced on the reference history, so the
    denominator needs no sampling. Gradients reach the AM always and the
    LM only with joint=True.
    """
    tokens = list(tokens)
    _check_rows("local_fusion_loss", am_logprobs, len(tokens))
    if lm_logprobs.shape != am_logprobs.shape:
        raise ValueError(f"local_fusion_loss: AM shape {am_logprobs.shape} "
                         f"!= LM shape {lm_logprobs.shape}")
    if scales.alpha == 1.0 and scales.beta == 0.0:
        # renormalizing already-normalized rows is the identity, so this
        # is CE exactly; taking the CE path keeps the match bitwise
        out = ce_loss(am_logprobs, tokens)
        return LossOutput(loss=out.loss, per_position=out.per_position,
                          denominator=0.0)
    lm_rows = lm_logprobs if joint else lm_logprobs.detach()
    combined = am_logprobs * scales.alpha + lm_rows * scales.beta
    picks = ad.gather_logprob(combined, tokens)
    norms = ad.logsumexp(combined, axis=-1)  # (N,)
    loss = ad.sum_all(norms) - ad.sum_all(picks)
    return LossOutput(loss=loss,
                      per_position=[float(v) for v in picks.values],
                      denominator=float(norms.values.sum()))


def _hypothesis_sequences(nbest) -> list[tuple[int, ...]]:
    hyps = getattr(nbest, "hypotheses", nbest)
    out = []
    for h in hyps:
        tokens = getattr(h, "tokens", h)
        out.append(tuple(int(t) for t in tokens))
    return out


def mmi_loss(am, lm, utt: Utterance, nbest, scales: Scales) -> LossOutput:
    """Sequence-level MMI with the denominator summed over an n-best list.

    loss = -[ alpha*logP_AM(ref) + beta*logP_LM(ref)
              - gamma_den * logsumexp_h(alpha*logP_AM(h) + beta*logP_LM(h)) ]

    Every hypothesis (reference included) is re-scored by a fresh
    teacher-forced forward pass over one shared encoder pass, so the
    gradient flows through the numerator and all denominator AM scores.
    LM scores enter as constants; its parameters stay frozen here.
    """
    hyps = _hypothesis_sequences(nbest)
    ref = tuple(int(t) for t in utt.tokens)
    if len(set(hyps)) != len(hyps):
        raise ValueError("mmi_loss: duplicate hypotheses in n-best list")
    if ref not in hyps:
        raise ValueError("mmi_loss: n-best list does not contain the reference")

    enc = encode(am, utt.feats)
    scores = []
    ref_score = None
    for h in hyps:
        rows = teacher_forced_rows(am, h, enc)
        am_lp = ad.sum_all(ad.gather_logprob(rows, list(h)))
        with ad.no_grad():
            lm_lp = float(lm_sequence_logprob(lm, h).values)
        s = am_lp * scales.alpha + scales.beta * lm_lp
        scores.append(s)
        if h == ref:
            ref_score = s

    den = ad.logsumexp(ad.stack_scalars(scores), axis=0)
    loss = ad.neg(ref_score) + den * scales.gamma_den

    with ad.no_grad():
        ref_rows = teacher_forced_rows(am, ref, enc)
        am_picks = ad.gather_logprob(ref_rows, list(ref)).values
        lm_picks = ad.gather_logprob(lm_sequence_logprobs(lm, ref), list(ref)).values
    per_position = [scales.alpha * float(a) + scales.beta * float(b)
                    for a, b in zip(am_picks, lm_picks)]
    return LossOutput(loss=loss, per_position=per_position,
                      denominator=float(den.values))


@dataclass
class PosteriorTable:
    """Exhaustive log scores of every EOS-terminated sequence up to max_len.

    log_scores maps token tuples to alpha*logP_AM + beta*logP_LM;
    log_mass is their logsumexp, reported explicitly since the models
    put nonzero probability on sequences past max_len as well.
    """

    log_scores: dict[tuple[int, ...], float]
    log_mass: float

    def posterior(self, tokens) -> float:
        return math.exp(self.log_scores[tuple(tokens)] - self.log_mass)


def exact_sequence_posterior(am, lm, utt: Utterance, scales: Scales,
                             max_len: int) -> tuple[float, PosteriorTable]:
    """Exact renormalized sequence posterior of the reference by brute force.

    Enumerates every EOS-terminated sequence of total length <= max_len,
    scores each with the same log-linear combination as mmi_loss, and
    normalizes over the enumerated set. Only feasible for tiny V and
    max_len; guarded accordingly.
    """
    V = am.V
    if max_len < 1:
        raise ValueError("exact_sequence_posterior: max_len must be >= 1")
    if V ** max_len > ENUMERATION_LIMIT:
        raise ValueError(
            f"exact_sequence_posterior: V^max_len = {V}^{max_len} exceeds "
            f"the enumeration limit {ENUMERATION_LIMIT}")
    ref = tuple(int(t) for t in utt.tokens)
    if len(ref) > max_len:
        raise ValueError(f"reference has {len(ref)} tokens, beyond max_len={max_len}")

    content = range(1, V)
    prefixes: list[tuple[int, ...]] = [()]
    sequences: list[tuple[int, ...]] = []
    for length in range(1, max_len + 1):
        sequences.extend(p + (EOS_ID,) for p in prefixes)
        if length < max_len:
            prefixes = [p + (c,) for p in prefixes for c in content]

    log_scores: dict[tuple[int, ...], float] = {}
    with ad.no_grad():
        enc = encode(am, utt.feats)
        for seq in sequences:
            rows = teacher_forced_rows(am, seq, enc)
            am_lp = float(ad.gather_logprob(rows, list(seq)).values.sum())
            lm_lp = float(lm_sequence_logprob(lm, seq).values)
            log_scores[seq] = scales.alpha * am_lp + scales.beta * lm_lp

    scores = list(log_scores.values())
    m = max(scores)
    log_mass = m + math.log(sum(math.exp(s - m) for s in scores))
    table = PosteriorTable(log_scores=log_scores, log_mass=log_mass)
    return table.posterior(ref), table
