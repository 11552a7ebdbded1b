"""Beam search over the fused model and n-best extraction.

Three per-step scoring modes share one search loop:

    am_only   acoustic log-probs alone
    shallow   alpha*am + beta*lm, left unnormalized
    local     alpha*am + beta*lm, renormalized over the vocabulary at
              every step, conditioned on the hypothesis's own history

Finished hypotheses retire to a result pool and stop occupying beam
slots. Since alpha, beta >= 0 and all rows are log-probabilities,
accumulated scores never increase as a hypothesis grows, so the search
can stop once the best active score falls below the pool's beam_size-th
best; otherwise it runs to max_len, where EOS is forced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .lm import lm_sequence_logprob, lm_step
from .models import BOS, EOS_ID, am_step, encode, teacher_forced_rows

MODES = ("am_only", "shallow", "local")


@dataclass
class DecodeConfig:
    mode: str = "shallow"
    alpha: float = 1.0
    beta: float = 0.0
    beam_size: int = 8
    max_len: int = 32
    length_norm: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class Hypothesis:
    """One (possibly partial) output sequence.

    log_score is the accumulated per-step score under the decode mode;
    truncated marks hypotheses whose EOS was forced by the length limit
    rather than chosen by the model. States are dropped on finish.
    """

    tokens: tuple[int, ...]
    log_score: float
    am_state: object = None
    lm_state: object = None
    finished: bool = False
    truncated: bool = False

    def ranking_score(self, length_norm: bool) -> float:
        if length_norm:
            return self.log_score / len(self.tokens)
        return self.log_score


@dataclass
class NBestList:
    """Ranked list of finished hypotheses.

    Ordered by descending ranking score with lexicographic token order
    breaking ties; duplicate token sequences are forbidden.
    contains_reference is set by nbest_with_forced_reference and stays
    False for plain decodes, where no reference is known.
    """

    hypotheses: list[Hypothesis]
    contains_reference: bool = False
    length_norm: bool = False

    def __post_init__(self):
        seen = set()
        prev_key = None
        for hyp in self.hypotheses:
            if not hyp.finished or not hyp.tokens or hyp.tokens[-1] != EOS_ID:
                raise ValueError(f"unfinished hypothesis in n-best list: {hyp.tokens}")
            if hyp.tokens in seen:
                raise ValueError(f"duplicate hypothesis in n-best list: {hyp.tokens}")
            seen.add(hyp.tokens)
            key = (-hyp.ranking_score(self.length_norm), hyp.tokens)
            if prev_key is not None and key < prev_key:
                raise ValueError("n-best list is not in ranked order")
            prev_key = key

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def sequences(self) -> list[tuple[int, ...]]:
        return [h.tokens for h in self.hypotheses]


def step_scores(mode: str, am_row, lm_row, alpha: float, beta: float) -> np.ndarray:
    """Combine one step's AM/LM log-prob rows into (V,) extension scores."""
    am = am_row.values if isinstance(am_row, ad.Tensor) else np.asarray(am_row)
    if mode == "am_only":
        return am
    lm = lm_row.values if isinstance(lm_row, ad.Tensor) else np.asarray(lm_row)
    combined = alpha * am + beta * lm
    if mode == "shallow":
        return combined
    if mode == "local":
        m = combined.max()
        return combined - (m + np.log(np.exp(combined - m).sum()))
    raise ValueError(f"unknown mode {mode!r}")


def _ranked(hyps: list[Hypothesis], length_norm: bool) -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: (-h.ranking_score(length_norm), h.tokens))


def beam_search(am, lm, feats, cfg: DecodeConfig) -> NBestList:
    """Decode one utterance; returns the top beam_size finished hypotheses."""
    needs_lm = cfg.mode != "am_only"
    if needs_lm and lm is None:
        raise ValueError(f"mode {cfg.mode!r} requires a language model")

    with ad.no_grad():
        enc = encode(am, feats)
        active = [Hypothesis(tokens=(), log_score=0.0,
                             am_state=am.initial_state(enc),
                             lm_state=lm.initial_state() if needs_lm else None)]
        pool: list[Hypothesis] = []

        while active:
            candidates: list[Hypothesis] = []
            for hyp in active:
                prev = hyp.tokens[-1] if hyp.tokens else BOS
                am_row, am_state = am_step(am, hyp.am_state, prev, enc)
                lm_row, lm_state = (lm_step(lm, hyp.lm_state, prev)
                                    if needs_lm else (None, None))
                scores = step_scores(cfg.mode, am_row, lm_row, cfg.alpha, cfg.beta)
                at_limit = len(hyp.tokens) == cfg.max_len - 1
                for tok in (EOS_ID,) if at_limit else range(am.V):
                    ext = Hypothesis(
                        tokens=hyp.tokens + (tok,),
                        log_score=hyp.log_score + float(scores[tok]),
                        am_state=None if tok == EOS_ID else am_state,
                        lm_state=None if tok == EOS_ID else lm_state,
                        finished=tok == EOS_ID,
                        truncated=at_limit)
                    if tok == EOS_ID:
                        pool.append(ext)
                    else:
                        candidates.append(ext)
            active = _ranked(candidates, length_norm=False)[:cfg.beam_size]
            if active and len(pool) >= cfg.beam_size:
                kth = _ranked(pool, length_norm=False)[cfg.beam_size - 1].log_score
                if active[0].log_score < kth:
                    break

    ranked = _ranked(pool, cfg.length_norm)[:cfg.beam_size]
    return NBestList(hypotheses=ranked, length_norm=cfg.length_norm)


def _shallow_reference_score(am, lm, utt, alpha: float, beta: float) -> float:
    """alpha*logP_AM(ref) + beta*logP_LM(ref) by teacher forcing."""
    tokens = list(utt.tokens)
    with ad.no_grad():
        rows = teacher_forced_rows(am, tokens, encode(am, utt.feats))
        am_lp = float(ad.gather_logprob(rows, tokens).values.sum())
        lm_lp = float(lm_sequence_logprob(lm, tokens).values)
    return alpha * am_lp + beta * lm_lp


def nbest_with_forced_reference(am, lm, utt, n: int, alpha: float, beta: float,
                                max_len: int | None = None) -> NBestList:
    """N-best list for MMI training: vanilla shallow scores, reference kept.

    Runs beam search with beam n and no length normalization; if the
    reference is missing from the results, the lowest-scoring hypothesis
    is replaced by it (appended instead when the search returned fewer
    than n hypotheses).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ref = tuple(int(t) for t in utt.tokens)
    if max_len is None:
        max_len = len(ref) + 2
    if max_len < len(ref):
        raise ValueError(f"max_len={max_len} cannot cover the {len(ref)}-token reference")

    cfg = DecodeConfig(mode="shallow", alpha=alpha, beta=beta, beam_size=n,
                       max_len=max_len, length_norm=False)
    hyps = list(beam_search(am, lm, utt.feats, cfg).hypotheses)
    if any(h.tokens == ref for h in hyps):
        return NBestList(hypotheses=hyps, contains_reference=True)

    forced = Hypothesis(tokens=ref,
                        log_score=_shallow_reference_score(am, lm, utt, alpha, beta),
                        finished=True)
    if len(hyps) >= n:
        hyps = hyps[:-1]  # ranked order puts the weakest (ties: lex-largest) last
    hyps.append(forced)
    return NBestList(hypotheses=_ranked(hyps, length_norm=False),
                     contains_reference=True)
