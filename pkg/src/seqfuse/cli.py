"""Command-line entry points.

    seqfuse gen    --config run.cfg                 write dataset files
    seqfuse train  --config run.cfg                 train per cfg.criterion
    seqfuse decode --config run.cfg                 checkpoint -> hypothesis file
    seqfuse eval   --config run.cfg                 hypothesis file -> WER report
    seqfuse sweep  --config run.cfg --grid ...      scale grid -> CSV
    seqfuse bench  --config run.cfg                 per-criterion step timings

`--set key=value` overrides any config key. Exit codes: 0 ok, 2 config
error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import math
import os
import sys

from .checkpoint import CheckpointError, load_into, save_checkpoint
from .config import (DEFAULT_GAMMA_ABS, DEFAULT_GAMMA_REL, ConfigError,
                     RunConfig, apply_overrides, load_config,
                     resolve_decode_mode, resolve_scales)
from .decoding import DecodeConfig, beam_search
from .metrics import corpus_wer, levenshtein
from .models import EOS_ID
from .task import (TaskConfig, generate_dataset, load_text, load_utterances,
                   save_text, save_utterances, save_vocab)
from .training import (bench_criteria, build_am, decode_max_len, load_lm,
                       train_am, train_ngram_lm, train_recurrent_lm)

SWEEP_AXES = ("gamma_abs", "gamma_rel", "gamma_den", "seed")
SWEEP_HEADER = "criterion,gamma_abs,gamma_rel,gamma_den,dev_wer,seed"


class DataError(Exception):
    """Missing or malformed data files, mismatched utterance ids."""


def task_config(cfg: RunConfig) -> TaskConfig:
    return TaskConfig(vocab_size=cfg.vocab_size, markov_order=cfg.markov_order,
                      temperature=cfg.temperature,
                      frames_per_token=cfg.frames_per_token,
                      feature_dim=cfg.feature_dim, noise_std=cfg.noise_std,
                      n_train=cfg.n_train, n_dev=cfg.n_dev, n_test=cfg.n_test,
                      n_text_only=cfg.n_text_only, seed=cfg.seed)


def _load_split(cfg: RunConfig, split: str):
    path = os.path.join(cfg.data_dir, f"{split}.jsonl")
    try:
        return load_utterances(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load utterances from {path}: {e}") from None


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def cmd_gen(cfg: RunConfig) -> int:
    dataset = generate_dataset(task_config(cfg))
    os.makedirs(cfg.data_dir, exist_ok=True)
    for split in ("train", "dev", "test"):
        save_utterances(os.path.join(cfg.data_dir, f"{split}.jsonl"),
                        dataset.split(split))
    save_text(os.path.join(cfg.data_dir, "text_only.txt"), dataset.text_only)
    save_vocab(os.path.join(cfg.data_dir, "vocab.txt"), dataset.vocab)
    print(f"wrote {cfg.n_train}/{cfg.n_dev}/{cfg.n_test} utterances and "
          f"{cfg.n_text_only} text-only sentences to {cfg.data_dir}")
    return 0


def _train_lm(cfg: RunConfig) -> int:
    path = os.path.join(cfg.data_dir, "text_only.txt")
    try:
        text = load_text(path)
    except OSError as e:
        raise DataError(f"cannot load text corpus {path}: {e}") from None
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.lm_type == "ngram":
        lm = train_ngram_lm(cfg, text)
        out = os.path.join(cfg.out_dir, "lm.counts.json")
        with open(out, "w", encoding="utf-8") as f:
            f.write(lm.to_json())
        print(f"counted order-{cfg.ngram_order} n-gram model over "
              f"{len(text)} sentences -> {out}")
        return 0
    lm, records = train_recurrent_lm(cfg, text)
    out = os.path.join(cfg.out_dir, "lm.sqf")
    save_checkpoint(out, lm.params,
                    {"kind": "recurrent_lm", "criterion": "lm",
                     "vocab_size": cfg.vocab_size, "lm_dim": cfg.lm_dim,
                     "seed": cfg.seed, "step": len(records["steps"])})
    _write_jsonl(os.path.join(cfg.out_dir, "metrics.jsonl"), records["epochs"])
    _write_jsonl(os.path.join(cfg.out_dir, "steps.jsonl"), records["steps"])
    _write_jsonl(os.path.join(cfg.out_dir, "timing.jsonl"), records["timing"])
    last = records["epochs"][-1]
    print(f"trained recurrent lm, final train loss {last['train_loss']:.4f} -> {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    if cfg.criterion == "lm":
        return _train_lm(cfg)
    if cfg.criterion == "mmi" and not cfg.init_checkpoint:
        raise ConfigError("criterion=mmi requires init_checkpoint "
                          "(a converged ce model)")
    lm = load_lm(cfg) if cfg.criterion in ("local", "mmi") else None
    train_utts = _load_split(cfg, "train")
    dev_utts = _load_split(cfg, "dev")

    am, records = train_am(cfg, train_utts, dev_utts, lm=lm)

    os.makedirs(cfg.out_dir, exist_ok=True)
    out = os.path.join(cfg.out_dir, "checkpoint.sqf")
    save_checkpoint(out, am.params, {
        "criterion": cfg.criterion, "step": len(records["steps"]),
        "seed": cfg.seed, "vocab_size": cfg.vocab_size,
        "feature_dim": cfg.feature_dim, "embed_dim": cfg.embed_dim,
        "hidden_dim": cfg.hidden_dim, "att_dim": cfg.att_dim,
        "encoder_layers": cfg.encoder_layers})
    _write_jsonl(os.path.join(cfg.out_dir, "metrics.jsonl"), records["epochs"])
    _write_jsonl(os.path.join(cfg.out_dir, "steps.jsonl"), records["steps"])
    _write_jsonl(os.path.join(cfg.out_dir, "timing.jsonl"), records["timing"])
    last = records["epochs"][-1]
    print(f"trained criterion={cfg.criterion} for {cfg.epochs} epochs, "
          f"dev loss {last['dev_loss']:.4f}, dev WER {last['dev_wer']:.2f}% -> {out}")
    return 0


def _hyp_path(cfg: RunConfig) -> str:
    return cfg.hyp_path or os.path.join(cfg.out_dir, f"hyps_{cfg.split}.jsonl")


def cmd_decode(cfg: RunConfig) -> int:
    am = build_am(cfg)
    ckpt = cfg.checkpoint or os.path.join(cfg.out_dir, "checkpoint.sqf")
    load_into(am, ckpt)
    mode = resolve_decode_mode(cfg)
    lm = load_lm(cfg) if mode != "am_only" else None
    scales = resolve_scales(cfg)
    utts = _load_split(cfg, cfg.split)

    os.makedirs(cfg.out_dir, exist_ok=True)
    out = _hyp_path(cfg)
    with open(out, "w", encoding="utf-8") as f:
        for utt in utts:
            dc = DecodeConfig(mode=mode, alpha=scales.alpha, beta=scales.beta,
                              beam_size=cfg.beam_size,
                              max_len=decode_max_len(cfg, utt),
                              length_norm=cfg.length_norm)
            best = beam_search(am, lm, utt.feats, dc).best()
            f.write(json.dumps({"id": utt.id, "hyp": list(best.tokens),
                                "score": best.log_score}) + "\n")
    print(f"decoded {len(utts)} utterances ({mode}, beam {cfg.beam_size}) -> {out}")
    return 0


def _strip_eos(tokens):
    tokens = list(tokens)
    return tokens[:-1] if tokens and tokens[-1] == EOS_ID else tokens


def cmd_eval(cfg: RunConfig) -> int:
    refs = {u.id: _strip_eos(u.tokens) for u in _load_split(cfg, cfg.split)}
    path = _hyp_path(cfg)
    hyps = {}
    try:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    hyps[rec["id"]] = _strip_eos(rec["hyp"])
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load hypotheses from {path}: {e}") from None

    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        raise DataError(f"hypothesis ids do not match references: "
                        f"missing {missing or 'none'}, extra {extra or 'none'}")

    pairs = [(refs[uid], hyps[uid]) for uid in sorted(refs)]
    wer = corpus_wer(pairs)
    subs = ins = dels = 0
    for ref, hyp in pairs:
        _, s, i, d = levenshtein(ref, hyp)
        subs, ins, dels = subs + s, ins + i, dels + d
    total_ref = sum(len(r) for r, _ in pairs)
    print(f"WER {wer:.2f}% (S={subs} I={ins} D={dels}) "
          f"over {len(pairs)} utterances, {total_ref} reference tokens")
    return 0


def _parse_grid(specs) -> list[dict]:
    if not specs:
        raise ConfigError("sweep requires at least one --grid axis=v1,v2,...")
    axes: dict[str, list] = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--grid expects axis=v1,v2,..., got {spec!r}")
        name, _, values = spec.partition("=")
        name = name.strip()
        if name not in SWEEP_AXES:
            raise ConfigError(f"--grid axis must be one of {SWEEP_AXES}, got {name!r}")
        if name in axes:
            raise ConfigError(f"--grid axis {name!r} given twice")
        try:
            axes[name] = [int(v) if name == "seed" else float(v)
                          for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--grid {name}: cannot parse {values!r}") from None
        if not axes[name]:
            raise ConfigError(f"--grid {name}: no values")
    names = list(axes)
    return [dict(zip(names, combo))
            for combo in itertools.product(*(axes[n] for n in names))]


def _sweep_point(cfg: RunConfig, point: dict) -> float:
    gamma_abs = point.get("gamma_abs", DEFAULT_GAMMA_ABS[cfg.criterion])
    gamma_rel = point.get("gamma_rel", DEFAULT_GAMMA_REL)
    run_cfg = dataclasses.replace(
        cfg, alpha=gamma_abs, beta=gamma_abs * gamma_rel,
        gamma_den=point.get("gamma_den", cfg.gamma_den),
        seed=point.get("seed", cfg.seed))
    lm = load_lm(run_cfg) if run_cfg.criterion in ("local", "mmi") else None
    train_utts = _load_split(run_cfg, "train")
    dev_utts = _load_split(run_cfg, "dev")
    am, _ = train_am(run_cfg, train_utts, dev_utts, lm=lm)

    mode = resolve_decode_mode(run_cfg) if lm is not None else "am_only"
    scales = resolve_scales(run_cfg)
    pairs = []
    for utt in dev_utts:
        dc = DecodeConfig(mode=mode, alpha=scales.alpha, beta=scales.beta,
                          beam_size=run_cfg.beam_size,
                          max_len=decode_max_len(run_cfg, utt),
                          length_norm=run_cfg.length_norm)
        best = beam_search(am, lm, utt.feats, dc).best()
        pairs.append((_strip_eos(utt.tokens), _strip_eos(best.tokens)))
    return corpus_wer(pairs)


def cmd_sweep(cfg: RunConfig, grid_specs) -> int:
    points = _parse_grid(grid_specs)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = [SWEEP_HEADER]
    for point in points:
        gamma_abs = point.get("gamma_abs", DEFAULT_GAMMA_ABS[cfg.criterion])
        gamma_rel = point.get("gamma_rel", DEFAULT_GAMMA_REL)
        gamma_den = point.get("gamma_den", cfg.gamma_den)
        seed = point.get("seed", cfg.seed)
        try:
            wer = _sweep_point(cfg, point)
        except Exception as e:  # record the failure, keep sweeping
            print(f"grid point {point} failed: {e}", file=sys.stderr)
            wer = math.nan
        rows.append(f"{cfg.criterion},{gamma_abs!r},{gamma_rel!r},"
                    f"{gamma_den!r},{wer!r},{seed}")
        print(rows[-1])
    out = os.path.join(cfg.out_dir, "sweep.csv")
    with open(out, "w", encoding="utf-8") as f:
        f.write("\n".join(rows) + "\n")
    print(f"wrote {len(points)} grid points -> {out}")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    dataset = generate_dataset(task_config(cfg))
    rows = bench_criteria(cfg, dataset.split("train"), dataset.text_only)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = os.path.join(cfg.out_dir, "bench.csv")
    with open(out, "w", encoding="utf-8") as f:
        f.write("criterion,ms_per_step,slowdown\n")
        for row in rows:
            f.write(f"{row['criterion']},{row['ms_per_step']:.3f},"
                    f"{row['slowdown']:.2f}\n")
    print(f"{'criterion':<10} {'ms_per_step':>12} {'slowdown':>9}")
    for row in rows:
        print(f"{row['criterion']:<10} {row['ms_per_step']:>12.3f} "
              f"{row['slowdown']:>9.2f}")
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seqfuse",
        description="sequence-to-sequence training criteria with LM fusion")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "decode", "eval", "sweep", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        if name == "sweep":
            p.add_argument("--grid", action="append", default=[],
                           metavar="AXIS=V1,V2,...",
                           help="sweep axis (gamma_abs, gamma_rel, gamma_den, seed)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = apply_overrides(cfg, args.overrides)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "decode":
            return cmd_decode(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.grid)
        return cmd_bench(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
