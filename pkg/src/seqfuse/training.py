"""Mini-batch gradient descent over the three criteria, plus the step bench.

Plain SGD with global-norm gradient clipping; the graph is rebuilt per
step, so one step is: zero grads, forward per utterance, mean the batch
losses, backward, clipped update. Per-step wall-clock timings are kept
apart from the loss records so determinism checks can ignore them.
"""

from __future__ import annotations

import dataclasses
import math
import time

from . import autodiff as ad
from .checkpoint import load_into
from .config import (ConfigError, RunConfig, resolve_batch_size,
                     resolve_decode_mode, resolve_lr, resolve_scales)
from .criteria import Scales, ce_loss, local_fusion_loss, mmi_loss
from .decoding import DecodeConfig, beam_search, nbest_with_forced_reference
from .lm import NGramLM, RecurrentLM, lm_sequence_logprobs, ngram_train
from .metrics import corpus_wer
from .models import EOS_ID, AcousticModel, am_sequence_logprobs
from .rng import named_rng


def build_am(cfg: RunConfig) -> AcousticModel:
    return AcousticModel(vocab_size=cfg.vocab_size, feat_dim=cfg.feature_dim,
                         embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
                         att_dim=cfg.att_dim, encoder_layers=cfg.encoder_layers,
                         seed=cfg.seed)


def build_recurrent_lm(cfg: RunConfig) -> RecurrentLM:
    return RecurrentLM(vocab_size=cfg.vocab_size, dim=cfg.lm_dim, seed=cfg.seed)


def load_lm(cfg: RunConfig):
    """Load the LM artifact named by lm_path (counts file or checkpoint)."""
    if not cfg.lm_path:
        raise ConfigError(f"criterion={cfg.criterion} needs lm_path")
    if cfg.lm_path.endswith(".json"):
        with open(cfg.lm_path, encoding="utf-8") as f:
            return NGramLM.from_json(f.read())
    lm = build_recurrent_lm(cfg)
    load_into(lm, cfg.lm_path)
    return lm


def sgd_step(params, lr: float, clip_norm: float) -> float:
    """Clipped gradient descent update; returns the pre-clip global norm."""
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    scale = lr if norm <= clip_norm else lr * clip_norm / norm
    for p in params:
        p.values -= scale * p.grad
    return norm


def utterance_loss(cfg: RunConfig, am, lm, utt, scales: Scales):
    if cfg.criterion == "ce":
        return ce_loss(am_sequence_logprobs(am, utt), utt.tokens).loss
    if cfg.criterion == "local":
        am_rows = am_sequence_logprobs(am, utt)
        lm_rows = lm_sequence_logprobs(lm, utt.tokens)
        return local_fusion_loss(am_rows, lm_rows, utt.tokens, scales,
                                 joint=cfg.joint_lm).loss
    if cfg.criterion == "mmi":
        nbest = nbest_with_forced_reference(am, lm, utt, cfg.nbest_n,
                                            scales.alpha, scales.beta)
        return mmi_loss(am, lm, utt, nbest, scales).loss
    raise ConfigError(f"no utterance loss for criterion {cfg.criterion!r}")


def decode_max_len(cfg: RunConfig, utt) -> int:
    if cfg.decode_max_len > 0:
        return cfg.decode_max_len
    return utt.feats.shape[0] // cfg.frames_per_token + 2


def decode_utterance(cfg: RunConfig, am, lm, utt, scales: Scales, mode: str,
                     beam_size: int) -> tuple[int, ...]:
    dc = DecodeConfig(mode=mode, alpha=scales.alpha, beta=scales.beta,
                      beam_size=beam_size, max_len=decode_max_len(cfg, utt),
                      length_norm=cfg.length_norm)
    return beam_search(am, lm, utt.feats, dc).best().tokens


def dev_metrics(cfg: RunConfig, am, lm, dev_utts, scales: Scales) -> tuple[float, float]:
    """Mean dev loss under the training criterion, and dev WER under the
    criterion's paired decode mode (am_only when no LM is present)."""
    utts = dev_utts[:cfg.dev_limit] if cfg.dev_limit else dev_utts
    with ad.no_grad():
        total = 0.0
        for utt in utts:
            total += utterance_loss(cfg, am, lm, utt, scales).item()
        dev_loss = total / len(utts)
    mode = resolve_decode_mode(cfg) if lm is not None else "am_only"
    pairs = []
    for utt in utts:
        hyp = decode_utterance(cfg, am, lm, utt, scales, mode, cfg.dev_beam_size)
        pairs.append((utt.tokens[:-1], hyp[:-1]))  # strip EOS
    return dev_loss, corpus_wer(pairs)


def _batches(order, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train_am(cfg: RunConfig, train_utts, dev_utts, lm=None) -> tuple[AcousticModel, dict]:
    """Train an acoustic model per cfg.criterion; returns (model, records).

    records holds per-step losses, per-epoch dev metrics, and per-step
    timings as separate lists of JSON-ready dicts.
    """
    if cfg.criterion in ("local", "mmi") and lm is None:
        raise ConfigError(f"criterion={cfg.criterion} requires a language model")
    am = build_am(cfg)
    if cfg.criterion == "mmi":
        if not cfg.init_checkpoint:
            raise ConfigError("criterion=mmi requires init_checkpoint "
                              "(a converged ce model)")
        load_into(am, cfg.init_checkpoint)

    scales = resolve_scales(cfg)
    lr = resolve_lr(cfg)
    batch_size = resolve_batch_size(cfg)
    params = list(am.parameters())
    if cfg.criterion == "local" and cfg.joint_lm and lm is not None:
        params += lm.parameters()

    records = {"steps": [], "epochs": [], "timing": []}
    step = 0
    for epoch in range(cfg.epochs):
        rng = named_rng(cfg.seed, f"train/shuffle/{epoch}")
        order = [train_utts[i] for i in rng.permutation(len(train_utts))]
        epoch_losses = []
        for batch in _batches(order, batch_size):
            t0 = time.perf_counter()
            ad.zero_grads(params)
            losses = [utterance_loss(cfg, am, lm, utt, scales) for utt in batch]
            batch_loss = ad.stack_scalars(losses).sum() * (1.0 / len(batch))
            ad.backward(batch_loss)
            sgd_step(params, lr, cfg.clip_norm)
            elapsed = time.perf_counter() - t0
            step += 1
            epoch_losses.append(batch_loss.item())
            records["steps"].append({"step": step, "loss": epoch_losses[-1]})
            records["timing"].append({"step": step, "seconds": elapsed})
        dev_loss, dev_wer = dev_metrics(cfg, am, lm, dev_utts, scales)
        records["epochs"].append({"epoch": epoch + 1,
                                  "train_loss": sum(epoch_losses) / len(epoch_losses),
                                  "dev_loss": dev_loss, "dev_wer": dev_wer})
    return am, records


def train_recurrent_lm(cfg: RunConfig, text) -> tuple[RecurrentLM, dict]:
    """Next-token CE training of the recurrent LM on text-only data."""
    lm = build_recurrent_lm(cfg)
    params = lm.parameters()
    lr = resolve_lr(cfg)
    batch_size = resolve_batch_size(cfg)
    records = {"steps": [], "epochs": [], "timing": []}
    step = 0
    for epoch in range(cfg.epochs):
        rng = named_rng(cfg.seed, f"train/shuffle/{epoch}")
        order = [text[i] for i in rng.permutation(len(text))]
        epoch_losses = []
        for batch in _batches(order, batch_size):
            t0 = time.perf_counter()
            ad.zero_grads(params)
            losses = [ce_loss(lm_sequence_logprobs(lm, seq), seq).loss
                      for seq in batch]
            batch_loss = ad.stack_scalars(losses).sum() * (1.0 / len(batch))
            ad.backward(batch_loss)
            sgd_step(params, lr, cfg.clip_norm)
            elapsed = time.perf_counter() - t0
            step += 1
            epoch_losses.append(batch_loss.item())
            records["steps"].append({"step": step, "loss": epoch_losses[-1]})
            records["timing"].append({"step": step, "seconds": elapsed})
        records["epochs"].append({"epoch": epoch + 1,
                                  "train_loss": sum(epoch_losses) / len(epoch_losses)})
    return lm, records


def train_ngram_lm(cfg: RunConfig, text) -> NGramLM:
    return ngram_train(text, order=cfg.ngram_order, kappa=cfg.ngram_kappa,
                       vocab_size=cfg.vocab_size)


BENCH_WARMUP = 20
BENCH_STEPS = 200


def bench_criteria(cfg: RunConfig, train_utts, text) -> list[dict]:
    """Mean wall-clock per training step for ce/local/mmi on equal footing.

    Same data, same parameter init, same batch size for all three; the
    LM is the n-gram model so its cost does not depend on training state.
    Returns rows {criterion, ms_per_step, slowdown}.
    """
    lm = train_ngram_lm(cfg, text)
    batch_size = cfg.batch_size if cfg.batch_size != -1 else 8
    needed = (BENCH_WARMUP + BENCH_STEPS) * batch_size
    pool = [train_utts[i % len(train_utts)] for i in range(needed)]

    rows = []
    for criterion in ("ce", "local", "mmi"):
        run_cfg = dataclasses.replace(
            cfg, criterion=criterion, batch_size=batch_size,
            alpha=-1.0, beta=-1.0, init_checkpoint="")
        am = build_am(run_cfg)
        scales = resolve_scales(run_cfg)
        lr = resolve_lr(run_cfg)
        params = list(am.parameters())
        times = []
        for i in range(BENCH_WARMUP + BENCH_STEPS):
            batch = pool[i * batch_size:(i + 1) * batch_size]
            t0 = time.perf_counter()
            ad.zero_grads(params)
            losses = [utterance_loss(run_cfg, am, lm, utt, scales) for utt in batch]
            batch_loss = ad.stack_scalars(losses).sum() * (1.0 / len(batch))
            ad.backward(batch_loss)
            sgd_step(params, lr, run_cfg.clip_norm)
            if i >= BENCH_WARMUP:
                times.append(time.perf_counter() - t0)
        rows.append({"criterion": criterion,
                     "ms_per_step": 1000.0 * sum(times) / len(times)})
    base = rows[0]["ms_per_step"]
    for row in rows:
        row["slowdown"] = row["ms_per_step"] / base
    return rows
