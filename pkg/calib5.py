"""Battery 5: full ce+local chains on candidate task defaults."""

import dataclasses
import time

import seqfuse.task
from seqfuse import training as tr
from seqfuse.config import RunConfig
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.metrics import corpus_wer
from seqfuse.task import TaskConfig, generate_dataset

VARIANTS = [
    ("A m2 t.5 tau.35", 0.5, dict(markov_order=2, temperature=0.35), 16),
    ("C m1 tau.25 fpt1", 0.5, dict(temperature=0.25, frames_per_token=1), 16),
    ("D m2 t.75 tau.30 fpt1", 0.75,
     dict(markov_order=2, temperature=0.30, frames_per_token=1), 16),
]


def wer(am, lm_, dev, mode, alpha, beta, fpt):
    pairs = []
    for u in dev:
        c = DecodeConfig(mode=mode, alpha=alpha, beta=beta, beam_size=8,
                         max_len=u.feats.shape[0] // fpt + 2, length_norm=True)
        nb = beam_search(am, lm_, u.feats, c)
        pairs.append((u.tokens[:-1], nb.best().tokens[:-1]))
    return corpus_wer(pairs)


for name, tilt, task, epochs in VARIANTS:
    t0 = time.time()
    seqfuse.task.TILT = tilt
    fpt = task.get("frames_per_token", 2)
    ds = generate_dataset(TaskConfig(vocab_size=20, seed=42, **task))
    dev = ds.split("dev")
    cfg = RunConfig(seed=42, lr=0.1, epochs=epochs, dev_limit=10,
                    criterion="ce", **task)
    lm = tr.train_ngram_lm(cfg, ds.text_only)
    am_ce, _ = tr.train_am(cfg, ds.split("train"), dev, lm=None)
    ce_am = wer(am_ce, None, dev, "am_only", 1.0, 0.0, fpt)
    ce_sh1 = wer(am_ce, lm, dev, "shallow", 1.0, 0.1, fpt)
    ce_sh2 = wer(am_ce, lm, dev, "shallow", 1.0, 0.2, fpt)
    print(f"{name}: ce_am {ce_am:.2f} sh.1 {ce_sh1:.2f} sh.2 {ce_sh2:.2f} "
          f"({time.time()-t0:.0f}s)", flush=True)

    cfg_lo = dataclasses.replace(cfg, criterion="local")
    am_lo, _ = tr.train_am(cfg_lo, ds.split("train"), dev, lm=lm)
    lo = wer(am_lo, lm, dev, "local", 2.0, 0.7, fpt)
    lo_am = wer(am_lo, None, dev, "am_only", 1.0, 0.0, fpt)
    best_sh = min(ce_sh1, ce_sh2)
    print(f"{name}: local {lo:.2f} local_am {lo_am:.2f} | "
          f"margin {best_sh - lo:+.2f} window {ce_am - lo:+.2f} "
          f"c7 {lo_am > ce_am} ({time.time()-t0:.0f}s)", flush=True)
