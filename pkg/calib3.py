"""Battery 3: tilted order-2 source, CE + shallow beta grid."""

import time

import seqfuse as sf
from seqfuse import training as tr
from seqfuse.config import RunConfig
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.metrics import corpus_wer
from seqfuse.task import TaskConfig, generate_dataset

SMALL = dict(hidden_dim=16, embed_dim=8, att_dim=8)

VARIANTS = [
    ("t2-35", dict(), dict(markov_order=2, temperature=0.35)),
    ("t2-50", dict(), dict(markov_order=2, temperature=0.5)),
    ("t2-35-n7", dict(), dict(markov_order=2, temperature=0.35, noise_std=0.7)),
    ("t2-35-small", SMALL, dict(markov_order=2, temperature=0.35)),
    ("t2-25", dict(), dict(markov_order=2, temperature=0.25)),
]


def wer(am, lm_, dev, mode, beta, ln=True):
    pairs = []
    for u in dev:
        c = DecodeConfig(mode=mode, alpha=1.0, beta=beta, beam_size=8,
                        max_len=u.feats.shape[0] // 2 + 2, length_norm=ln)
        nb = beam_search(am, lm_, u.feats, c)
        pairs.append((u.tokens[:-1], nb.best().tokens[:-1]))
    return corpus_wer(pairs)


for name, arch, task in VARIANTS:
    t0 = time.time()
    tc = TaskConfig(vocab_size=20, seed=42, **task)
    ds = generate_dataset(tc)
    dev = ds.split("dev")
    cfg = RunConfig(seed=42, lr=0.1, epochs=8, dev_limit=10, criterion="ce",
                    **arch, **task)
    lm = tr.train_ngram_lm(cfg, ds.text_only)
    am, _ = tr.train_am(cfg, ds.split("train"), dev, lm=None)
    base = wer(am, None, dev, "am_only", 0.0)
    parts = [f"{name}: am_only {base:.2f}"]
    for beta in (0.1, 0.2, 0.35, 0.5):
        parts.append(f"sh{beta} {wer(am, lm, dev, 'shallow', beta):.2f}")
    parts.append(f"({time.time()-t0:.0f}s)")
    print("  ".join(parts), flush=True)
