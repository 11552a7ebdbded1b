"""Diagnose what fusion does: rerank vs search, error decomposition."""

import time

import numpy as np

import seqfuse as sf
from seqfuse import training as tr
from seqfuse.config import RunConfig
from seqfuse.criteria import Utterance
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.lm import lm_sequence_logprob
from seqfuse.metrics import corpus_wer, levenshtein
from seqfuse.task import TaskConfig, generate_dataset

TASK = dict(temperature=0.25)
EPOCHS = 14

t0 = time.time()
tc = TaskConfig(vocab_size=20, seed=42, **TASK)
ds = generate_dataset(tc)
dev = ds.split("dev")
cfg = RunConfig(seed=42, lr=0.1, epochs=EPOCHS, dev_limit=10, criterion="ce",
                **TASK)
lm = tr.train_ngram_lm(cfg, ds.text_only)
am, _ = tr.train_am(cfg, ds.split("train"), dev, lm=None)
print(f"trained {time.time()-t0:.0f}s", flush=True)


def decomp(pairs):
    s = i = d = n = 0
    for ref, hyp in pairs:
        _, ss, ii, dd = levenshtein(ref, hyp)
        s, i, d, n = s + ss, i + ii, d + dd, n + len(ref)
    return f"S{s} I{i} D{d} /{n}"


# full n-best once per utterance in am_only mode, then rerank offline
nbests = []
for u in dev:
    c = DecodeConfig(mode="am_only", alpha=1.0, beta=0.0, beam_size=8,
                     max_len=u.feats.shape[0] // 2 + 2, length_norm=False)
    nb = beam_search(am, None, u.feats, c)
    hyps = [(h.tokens, h.log_score, lm_sequence_logprob(lm, h.tokens).item())
            for h in nb]
    nbests.append((u, hyps))

base_pairs = []
for u, hyps in nbests:
    best = max(hyps, key=lambda h: (h[1] / len(h[0]), h[0]))
    base_pairs.append((u.tokens[:-1], best[0][:-1]))
print(f"am_only(ln rerank of 8-best) {corpus_wer(base_pairs):.2f}  "
      f"{decomp(base_pairs)}", flush=True)

for beta in (0.05, 0.1, 0.15, 0.2, 0.3):
    pairs = []
    for u, hyps in nbests:
        best = max(hyps, key=lambda h: ((h[1] + beta * h[2]) / len(h[0]), h[0]))
        pairs.append((u.tokens[:-1], best[0][:-1]))
    print(f"rerank b={beta}: {corpus_wer(pairs):.2f}  {decomp(pairs)}", flush=True)

for beta in (0.1, 0.2, 0.35):
    pairs = []
    for u in dev:
        c = DecodeConfig(mode="shallow", alpha=1.0, beta=beta, beam_size=8,
                         max_len=u.feats.shape[0] // 2 + 2, length_norm=True)
        nb = beam_search(am, lm, u.feats, c)
        pairs.append((u.tokens[:-1], nb.best().tokens[:-1]))
    print(f"search b={beta}: {corpus_wer(pairs):.2f}  {decomp(pairs)}", flush=True)
print(f"total {time.time()-t0:.0f}s", flush=True)
