"""Criterion-6/7 calibration probe: full pipeline for one seed."""

import argparse
import dataclasses
import time

import numpy as np

import seqfuse as sf
from seqfuse import training as tr
from seqfuse.checkpoint import save_checkpoint
from seqfuse.config import RunConfig
from seqfuse.decoding import DecodeConfig, beam_search
from seqfuse.metrics import corpus_wer
from seqfuse.task import TaskConfig, generate_dataset

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=42)
ap.add_argument("--ce-epochs", type=int, default=14)
ap.add_argument("--local-epochs", type=int, default=14)
ap.add_argument("--mmi-epochs", type=int, default=1)
ap.add_argument("--lr", type=float, default=0.1)
ap.add_argument("--mmi-lr", type=float, default=0.005)
ap.add_argument("--mmi-batch", type=int, default=4)
ap.add_argument("--mmi-limit", type=int, default=0, help="fine-tune on first K train utts")
ap.add_argument("--beam", type=int, default=8)
ap.add_argument("--noise", type=float, default=0.5)
ap.add_argument("--temp", type=float, default=0.25)
ap.add_argument("--beta-sh", type=float, default=0.15)
ap.add_argument("--no-ln", action="store_true")
args = ap.parse_args()

t_all = time.time()
cfg = RunConfig(seed=args.seed, lr=args.lr, dev_limit=25, noise_std=args.noise,
                temperature=args.temp)
ds = generate_dataset(TaskConfig(vocab_size=cfg.vocab_size, seed=cfg.seed,
                                 noise_std=args.noise, temperature=args.temp))
tr_utts = ds.split("train")
dev = ds.split("dev")
lm = tr.train_ngram_lm(cfg, ds.text_only)


def dev_wer(am, lm_, mode, alpha, beta):
    pairs = []
    for u in dev:
        c = DecodeConfig(mode=mode, alpha=alpha, beta=beta, beam_size=args.beam,
                         max_len=u.feats.shape[0] // 2 + 2,
                         length_norm=not args.no_ln)
        nb = beam_search(am, lm_, u.feats, c)
        pairs.append((u.tokens[:-1], nb.best().tokens[:-1]))
    return corpus_wer(pairs)


t0 = time.time()
cfg_ce = dataclasses.replace(cfg, criterion="ce", epochs=args.ce_epochs)
am_ce, rec = tr.train_am(cfg_ce, tr_utts, dev, lm=None)
print(f"[{time.time()-t_all:5.0f}s] ce: {time.time()-t0:.0f}s "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)
save_checkpoint(f"/tmp/calib_ce_{args.seed}.sqf",
                {k: t.values for k, t in am_ce.params.items()}, {"criterion": "ce"})

t0 = time.time()
wer_ce_am = dev_wer(am_ce, None, "am_only", 1.0, 0.0)
wer_ce_sh = dev_wer(am_ce, lm, "shallow", 1.0, args.beta_sh)
print(f"[{time.time()-t_all:5.0f}s] decode ce: am_only {wer_ce_am:.2f} "
      f"shallow {wer_ce_sh:.2f} ({time.time()-t0:.0f}s)", flush=True)

t0 = time.time()
cfg_lo = dataclasses.replace(cfg, criterion="local", epochs=args.local_epochs)
am_lo, rec = tr.train_am(cfg_lo, tr_utts, dev, lm=lm)
print(f"[{time.time()-t_all:5.0f}s] local: {time.time()-t0:.0f}s "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)

t0 = time.time()
wer_lo = dev_wer(am_lo, lm, "local", 2.0, 0.7)
wer_lo_am = dev_wer(am_lo, None, "am_only", 1.0, 0.0)
print(f"[{time.time()-t_all:5.0f}s] decode local: local {wer_lo:.2f} "
      f"am_only {wer_lo_am:.2f} ({time.time()-t0:.0f}s)", flush=True)

t0 = time.time()
mmi_train = tr_utts[:args.mmi_limit] if args.mmi_limit else tr_utts
cfg_mmi = dataclasses.replace(cfg, criterion="mmi", epochs=args.mmi_epochs,
                              lr=args.mmi_lr, batch_size=args.mmi_batch,
                              init_checkpoint=f"/tmp/calib_ce_{args.seed}.sqf")
am_mmi, rec = tr.train_am(cfg_mmi, mmi_train, dev, lm=lm)
print(f"[{time.time()-t_all:5.0f}s] mmi: {time.time()-t0:.0f}s "
      + " ".join(f"{e['dev_wer']:.0f}" for e in rec["epochs"]), flush=True)

wer_mmi = dev_wer(am_mmi, lm, "shallow", 1.0, args.beta_sh)
print(f"[{time.time()-t_all:5.0f}s] decode mmi: shallow {wer_mmi:.2f}", flush=True)

ok_order = wer_ce_sh >= wer_lo >= wer_mmi
ok_margin = wer_ce_sh - wer_lo >= 0.5
ok_amonly = max(wer_ce_sh, wer_lo, wer_mmi) < wer_ce_am
ok_c7 = wer_lo_am > wer_ce_am
print(f"SEED {args.seed}: ce_am {wer_ce_am:.2f} ce_sh {wer_ce_sh:.2f} "
      f"local {wer_lo:.2f} mmi {wer_mmi:.2f} local_am {wer_lo_am:.2f} | "
      f"order {ok_order} margin {ok_margin} beats_am {ok_amonly} c7 {ok_c7} | "
      f"total {time.time()-t_all:.0f}s", flush=True)
