"""Task-design battery: which variants make shallow fusion actually help."""

import time

import seqfuse as sf
from seqfuse import training as tr
from seqfuse.config import RunConfig
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.metrics import corpus_wer
from seqfuse.task import TaskConfig, generate_dataset

VARIANTS = [
    ("small-am", dict(hidden_dim=16, embed_dim=8, att_dim=8), dict()),
    ("small+sharp", dict(hidden_dim=16, embed_dim=8, att_dim=8), dict(temperature=0.25)),
    ("small+noisy", dict(hidden_dim=16, embed_dim=8, att_dim=8), dict(noise_std=0.7)),
    ("default+sharp", dict(), dict(temperature=0.25)),
    ("small+sharp+noisy", dict(hidden_dim=16, embed_dim=8, att_dim=8),
     dict(temperature=0.25, noise_std=0.7)),
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
    for beta in (0.2, 0.35, 0.5):
        parts.append(f"sh{beta} {wer(am, lm, dev, 'shallow', beta):.2f}")
    parts.append(f"({time.time()-t0:.0f}s)")
    print("  ".join(parts), flush=True)
