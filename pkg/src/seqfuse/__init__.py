"""Sequence-to-sequence training criteria with external LM fusion.

Cross entropy, locally renormalized fusion, and n-best MMI over a toy
attention encoder-decoder, with matching beam-search decoders and exact
brute-force oracles for desk-scale verification.
"""

from .autodiff import (FiniteDiffReport, ShapeError, Tensor, backward,
                       finite_diff_check, gather_logprob, log_softmax,
                       logsumexp, matmul, no_grad, zero_grads)
from .checkpoint import (CheckpointError, check_architecture, load_checkpoint,
                         load_into, save_checkpoint)
from .config import (ConfigError, RunConfig, apply_overrides, load_config,
                     parse_config, print_config, resolve_scales)
from .criteria import (LossOutput, PosteriorTable, Scales, Utterance, ce_loss,
                       exact_sequence_posterior, local_fusion_loss, mmi_loss)
from .decoding import (DecodeConfig, Hypothesis, NBestList, beam_search,
                       nbest_with_forced_reference, step_scores)
from .lm import (NGramLM, RecurrentLM, lm_sequence_logprob,
                 lm_sequence_logprobs, lm_step, ngram_train)
from .metrics import corpus_wer, levenshtein
from .models import (BOS, EOS_ID, AcousticModel, DecoderState, EncoderStates,
                     am_sequence_logprobs, am_step, attend, encode,
                     teacher_forced_rows)
from .task import Dataset, TaskConfig, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "AcousticModel", "BOS", "CheckpointError", "ConfigError", "Dataset",
    "DecodeConfig", "DecoderState", "EncoderStates", "EOS_ID",
    "FiniteDiffReport", "Hypothesis", "LossOutput", "NBestList", "NGramLM",
    "PosteriorTable", "RecurrentLM", "RunConfig", "Scales", "ShapeError",
    "TaskConfig", "Tensor", "Utterance", "am_sequence_logprobs", "am_step",
    "apply_overrides", "attend", "backward", "beam_search", "ce_loss",
    "check_architecture", "corpus_wer", "encode", "exact_sequence_posterior",
    "finite_diff_check", "gather_logprob", "generate_dataset",
    "levenshtein", "lm_sequence_logprob", "lm_sequence_logprobs", "lm_step",
    "load_checkpoint", "load_config", "load_into", "local_fusion_loss",
    "log_softmax", "logsumexp", "matmul", "mmi_loss",
    "nbest_with_forced_reference", "ngram_train", "no_grad", "parse_config",
    "print_config", "resolve_scales", "save_checkpoint", "step_scores",
    "teacher_forced_rows", "zero_grads",
]
