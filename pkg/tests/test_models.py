"""Attention encoder-decoder tests: shapes, normalization, attention behavior."""

import math

import numpy as np
import pytest

from seqfuse import autodiff as ad
from seqfuse.autodiff import Tensor
from seqfuse.criteria import Utterance
from seqfuse.models import (BOS, EOS_ID, AcousticModel, EncoderStates, am_step,
                            am_sequence_logprobs, attend, encode,
                            teacher_forced_rows)


def toy_am(seed=0, **kw):
    kw.setdefault("vocab_size", 4)
    kw.setdefault("feat_dim", 3)
    kw.setdefault("embed_dim", 5)
    kw.setdefault("hidden_dim", 6)
    kw.setdefault("att_dim", 4)
    return AcousticModel(seed=seed, **kw)


class TestConstruction:
    def test_param_shapes(self):
        am = toy_am()
        p = am.params
        assert p["am/embed"].shape == (5, 5)  # V + 1 rows, BOS uses the extra one
        assert p["am/enc0/fwd/Wz"].shape == (3 + 6, 6)
        assert p["am/enc0/bwd/Wh"].shape == (3 + 6, 6)
        assert p["am/att/Ws"].shape == (6, 4)
        assert p["am/att/We"].shape == (12, 4)
        assert p["am/att/Wf"].shape == (1, 4)
        assert p["am/att/v"].shape == (4, 1)
        assert p["am/dec/Wz"].shape == (5 + 12 + 6, 6)
        assert p["am/out/W"].shape == (18, 4)

    def test_two_layer_encoder_stacks(self):
        am = toy_am(encoder_layers=2)
        assert am.params["am/enc1/fwd/Wz"].shape == (12 + 6, 6)

    def test_num_parameters_counts_every_entry(self):
        am = toy_am()
        assert am.num_parameters() == sum(t.values.size for t in am.parameters())

    def test_same_seed_reproduces_init(self):
        a, b = toy_am(seed=3), toy_am(seed=3)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].values, b.params[k].values)

    def test_different_seed_differs(self):
        a, b = toy_am(seed=3), toy_am(seed=4)
        assert any((a.params[k].values != b.params[k].values).any() for k in a.params)

    def test_bos_embedding_is_extra_row(self):
        am = toy_am()
        emb = am._embed(BOS)
        np.testing.assert_array_equal(emb.values, am.params["am/embed"].values[[4]])

    def test_token_out_of_range_rejected(self):
        am = toy_am()
        with pytest.raises(ValueError):
            am._embed(4)
        with pytest.raises(ValueError):
            am._embed(-2)


class TestEncoder:
    def test_state_shapes(self):
        am = toy_am()
        enc = encode(am, np.random.default_rng(0).normal(size=(7, 3)))
        assert enc.states.shape == (7, 12)
        assert enc.att_proj.shape == (7, 4)
        assert enc.length == 7

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            encode(toy_am(), np.zeros((0, 3)))

    def test_reversal_swaps_directions(self):
        # running the swapped-weight model on reversed frames must give the
        # original states reversed in time with fwd/bwd halves exchanged
        am = toy_am(seed=11)
        am2 = toy_am(seed=11)
        for gate in ("Wz", "Wr", "Wh"):
            f = am.params[f"am/enc0/fwd/{gate}"].values
            b = am.params[f"am/enc0/bwd/{gate}"].values
            am2.params[f"am/enc0/fwd/{gate}"] = Tensor(b.copy(), requires_grad=True)
            am2.params[f"am/enc0/bwd/{gate}"] = Tensor(f.copy(), requires_grad=True)
        feats = np.random.default_rng(1).normal(size=(5, 3))
        s1 = encode(am, feats).states.values
        s2 = encode(am2, feats[::-1].copy()).states.values
        d = am.d_h
        swapped = np.concatenate([s2[:, d:], s2[:, :d]], axis=1)
        np.testing.assert_allclose(s1, swapped[::-1], atol=1e-14)


class TestAttention:
    def test_single_frame_gets_full_weight(self):
        am = toy_am()
        enc = encode(am, np.random.default_rng(2).normal(size=(1, 3)))
        _, weights, _ = attend(am, am.initial_state(enc), enc)
        np.testing.assert_allclose(weights.values, [[1.0]], atol=0)

    def test_identical_states_get_uniform_weights(self):
        am = toy_am()
        states = Tensor(np.tile(np.random.default_rng(3).normal(size=(1, 12)), (6, 1)))
        enc = EncoderStates(states=states, att_proj=states @ am.params["am/att/We"])
        _, weights, _ = attend(am, am.initial_state(enc), enc)
        np.testing.assert_allclose(weights.values, np.full((6, 1), 1 / 6), atol=1e-15)

    def test_weights_are_a_distribution(self):
        am = toy_am()
        enc = encode(am, np.random.default_rng(4).normal(size=(9, 3)))
        _, weights, _ = attend(am, am.initial_state(enc), enc)
        assert weights.values.min() > 0
        np.testing.assert_allclose(weights.values.sum(), 1.0, atol=1e-15)

    def test_feedback_accumulates_weights(self):
        # after k reads the feedback column sums to k (one unit of mass per read)
        am = toy_am()
        enc = encode(am, np.random.default_rng(5).normal(size=(4, 3)))
        state = am.initial_state(enc)
        for k in range(1, 4):
            _, _, state = attend(am, state, enc)
            np.testing.assert_allclose(state.feedback.values.sum(), float(k), atol=1e-12)

    def test_feedback_changes_second_read(self):
        am = toy_am()
        enc = encode(am, np.random.default_rng(6).normal(size=(4, 3)))
        state = am.initial_state(enc)
        _, w1, state = attend(am, state, enc)
        _, w2, _ = attend(am, state, enc)
        # recurrent state is unchanged, so any difference comes from feedback
        assert not np.allclose(w1.values, w2.values)


class TestDecoder:
    def test_rows_are_normalized(self):
        am = toy_am()
        utt_feats = np.random.default_rng(7).normal(size=(6, 3))
        rows = teacher_forced_rows(am, [1, 3, 2, 0], encode(am, utt_feats))
        assert rows.shape == (4, 4)
        np.testing.assert_allclose(np.exp(rows.values).sum(axis=1), np.ones(4), atol=1e-12)

    def test_zero_output_projection_gives_uniform(self):
        am = toy_am()
        am.params["am/out/W"].values[:] = 0.0
        enc = encode(am, np.random.default_rng(8).normal(size=(2, 3)))
        row, _ = am_step(am, am.initial_state(enc), BOS, enc)
        np.testing.assert_allclose(row.values, np.full(4, -math.log(4)), atol=1e-15)

    def test_am_step_returns_flat_row(self):
        am = toy_am()
        enc = encode(am, np.random.default_rng(9).normal(size=(3, 3)))
        row, state = am_step(am, am.initial_state(enc), BOS, enc)
        assert row.shape == (4,)
        row2, _ = am_step(am, state, 2, enc)
        assert not np.allclose(row.values, row2.values)

    def test_stepwise_matches_teacher_forced(self):
        am = toy_am(seed=5)
        feats = np.random.default_rng(10).normal(size=(5, 3))
        tokens = [2, 1, 1, 0]
        enc = encode(am, feats)
        block = teacher_forced_rows(am, tokens, enc).values
        state, prev = am.initial_state(enc), BOS
        for n, tok in enumerate(tokens):
            row, state = am_step(am, state, prev, enc)
            np.testing.assert_array_equal(row.values, block[n])
            prev = tok

    def test_sequence_logprobs_requires_eos(self):
        am = toy_am()
        feats = np.random.default_rng(11).normal(size=(2, 3))
        with pytest.raises(ValueError):
            am_sequence_logprobs(am, Utterance(id="x", tokens=(1, 2), feats=feats))

    def test_gradient_reaches_every_parameter_group(self):
        am = toy_am(seed=2)
        feats = np.random.default_rng(12).normal(size=(6, 3))
        rows = am_sequence_logprobs(am, Utterance(id="y", tokens=(1, 2, 3, 0), feats=feats))
        ad.backward(ad.neg(ad.sum_all(ad.gather_logprob(rows, [1, 2, 3, 0]))))
        for name, t in am.params.items():
            assert t.grad is not None and np.abs(t.grad).max() > 0, name
