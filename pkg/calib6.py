"""Warm-start local fine-tune + gentle mmi, full verdict per task variant."""

import argparse
import dataclasses
import time

import seqfuse.task
from seqfuse import training as tr
from seqfuse.checkpoint import save_checkpoint
from seqfuse.config import RunConfig
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.metrics import corpus_wer
from seqfuse.task import TaskConfig, generate_dataset

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=42)
ap.add_argument("--markov", type=int, default=2)
ap.add_argument("--tilt", type=float, default=0.5)
ap.add_argument("--temp", type=float, default=0.35)
ap.add_argument("--fpt", type=int, default=2)
ap.add_argument("--ce-epochs", type=int, default=14)
ap.add_argument("--lo-epochs", type=int, default=8)
ap.add_argument("--lo-lr", type=float, default=0.05)
ap.add_argument("--lo-scratch", action="store_true")
ap.add_argument("--mmi-lr", type=float, default=0.002)
ap.add_argument("--mmi-epochs", type=int, default=1)
ap.add_argument("--mmi-init", choices=("ce", "local"), default="ce")
ap.add_argument("--beta-sh", type=float, default=0.1)
args = ap.parse_args()

t_all = time.time()
seqfuse.task.TILT = args.tilt
task = dict(markov_order=args.markov, temperature=args.temp,
            frames_per_token=args.fpt)
ds = generate_dataset(TaskConfig(vocab_size=20, seed=args.seed, **task))
train, dev = ds.split("train"), ds.split("dev")
cfg = RunConfig(seed=args.seed, lr=0.1, dev_limit=25, **task)
lm = tr.train_ngram_lm(cfg, ds.text_only)


def wer(am, lm_, mode, alpha, beta):
    pairs = []
    for u in dev:
        c = DecodeConfig(mode=mode, alpha=alpha, beta=beta, beam_size=8,
                         max_len=u.feats.shape[0] // args.fpt + 2,
                         length_norm=True)
        nb = beam_search(am, lm_, u.feats, c)
        pairs.append((u.tokens[:-1], nb.best().tokens[:-1]))
    return corpus_wer(pairs)


cfg_ce = dataclasses.replace(cfg, criterion="ce", epochs=args.ce_epochs)
am_ce, rec = tr.train_am(cfg_ce, train, dev, lm=None)
ckpt = f"/tmp/calib6_ce_{args.seed}.sqf"
save_checkpoint(ckpt, {k: t.values for k, t in am_ce.params.items()},
                {"criterion": "ce"})
print(f"[{time.time()-t_all:5.0f}s] ce "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)

ce_am = wer(am_ce, None, "am_only", 1.0, 0.0)
grid = {b: wer(am_ce, lm, "shallow", 1.0, b) for b in (0.1, 0.2, 0.3, 0.4)}
ce_sh = grid[args.beta_sh] if args.beta_sh in grid else wer(am_ce, lm, "shallow", 1.0, args.beta_sh)
print(f"[{time.time()-t_all:5.0f}s] ce_am {ce_am:.2f} sh " +
      " ".join(f"{b}:{w:.2f}" for b, w in grid.items()), flush=True)

cfg_lo = dataclasses.replace(
    cfg, criterion="local", epochs=args.lo_epochs, lr=args.lo_lr,
    init_checkpoint="" if args.lo_scratch else ckpt)
am_lo, rec = tr.train_am(cfg_lo, train, dev, lm=lm)
print(f"[{time.time()-t_all:5.0f}s] local "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)

lo = wer(am_lo, lm, "local", 2.0, 0.7)
lo_am = wer(am_lo, None, "am_only", 1.0, 0.0)
print(f"[{time.time()-t_all:5.0f}s] local {lo:.2f} local_am {lo_am:.2f}",
      flush=True)

if args.mmi_init == "local":
    ckpt_lo = f"/tmp/calib6_lo_{args.seed}.sqf"
    save_checkpoint(ckpt_lo, {k: t.values for k, t in am_lo.params.items()},
                    {"criterion": "local"})
    mmi_start = ckpt_lo
else:
    mmi_start = ckpt
cfg_mmi = dataclasses.replace(cfg, criterion="mmi", epochs=args.mmi_epochs,
                              lr=args.mmi_lr, batch_size=4,
                              init_checkpoint=mmi_start)
am_mmi, rec = tr.train_am(cfg_mmi, train, dev, lm=lm)
print(f"[{time.time()-t_all:5.0f}s] mmi probe "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)
mmi = wer(am_mmi, lm, "shallow", 1.0, args.beta_sh)
print(f"[{time.time()-t_all:5.0f}s] mmi {mmi:.2f}", flush=True)

ok = (ce_sh >= lo >= mmi and ce_sh - lo >= 0.5
      and max(ce_sh, lo, mmi) < ce_am and lo_am > ce_am)
print(f"SEED {args.seed}: ce_am {ce_am:.2f} ce_sh {ce_sh:.2f} lo {lo:.2f} "
      f"mmi {mmi:.2f} lo_am {lo_am:.2f} | margin {ce_sh-lo:+.2f} "
      f"all_ok {ok} | {time.time()-t_all:.0f}s", flush=True)
