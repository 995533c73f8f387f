from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest

from conftest import small_config
from oracles import (
    A,
    B,
    HAND_SET_TABLES,
    ONE_NODE,
    TRAP,
    TableModel,
    exhaustive_best,
    forced_table,
    random_forced,
    table_row,
)
from graph2seq.graph import LabeledGraph, prepare
from graph2seq.inference import (
    Ensemble,
    InferenceError,
    beam_search,
    decode_corpus,
    default_max_len,
    ensemble_step,
    greedy_decode,
    replace_unk,
)
from graph2seq.model import Graph2Seq
from graph2seq.synthetic import random_levi
from graph2seq.vocab import BOS_ID, Vocabulary

@pytest.fixture(scope="module")
def rand_model(toy_data):
    from graph2seq.training import build_vocabularies

    src, tgt = build_vocabularies(toy_data)
    return Graph2Seq(small_config(), src, tgt, seed=4, dtype=np.float64)


class TestExhaustiveOracle:
    def test_greedy_trap(self):
        score, seq = exhaustive_best(TRAP)
        assert seq == [B, A, A]
        assert greedy_decode([TableModel(TRAP)], ONE_NODE) != seq
        res = beam_search([TableModel(TRAP)], ONE_NODE, beam=2)
        assert res.tokens == seq and res.score == pytest.approx(score, abs=1e-12)
        assert res.finished

    @pytest.mark.parametrize("seed", range(40))
    def test_full_width_beam_is_exhaustive(self, seed):
        fn = random_forced(np.random.default_rng(seed))
        score, seq = exhaustive_best(fn)
        res = beam_search([TableModel(fn)], ONE_NODE, beam=4)
        assert res.tokens == seq and res.score == pytest.approx(score, abs=1e-12)

    def test_beam_two_on_hand_set_tables(self):
        for fn in HAND_SET_TABLES:
            score, seq = exhaustive_best(fn)
            res = beam_search([TableModel(fn)], ONE_NODE, beam=2)
            assert res.tokens == seq
            assert res.score == pytest.approx(score, abs=1e-12)

    def test_wider_beam_never_worse_on_forced_length(self):
        for seed in range(200):
            m = TableModel(random_forced(np.random.default_rng(1000 + seed)))
            scores = [beam_search([m], ONE_NODE, beam=b).score for b in (1, 2, 3, 4)]
            assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))

    def test_early_finishers_can_hide_longer_greedy_path(self):
        # with free length, two early finishers end the search before the greedy
        # continuation is reached; the narrower beam then scores higher
        table = {
            (): table_row(0.11, 0.45, 0.44),
            (A,): table_row(0.33, 0.34, 0.33),
            (B,): table_row(0.45, 0.50, 0.05),
            (A, A): table_row(0.005, 0.99, 0.005),
            (A, A, A): table_row(1.0, 0.0, 0.0),
            (B, A): table_row(0.90, 0.05, 0.05),
        }
        m = TableModel(lambda p: table.get(p, table_row(1 / 3, 1 / 3, 1 / 3)))
        greedy = beam_search([m], ONE_NODE, beam=1)
        wide = beam_search([m], ONE_NODE, beam=2)
        assert greedy.tokens == [A, A, A]
        assert wide.tokens == [B, A]
        assert greedy.score == pytest.approx(math.log(0.45 * 0.34 * 0.99) / 4)
        assert wide.score == pytest.approx(math.log(0.44 * 0.5 * 0.9) / 3)
        assert wide.score < greedy.score


class TestBeamMechanics:
    def test_logprob_is_sum_of_steps(self):
        res = beam_search([TableModel(TRAP)], ONE_NODE, beam=2)
        assert res.logprob == pytest.approx(math.log(0.45 * 0.95 * 0.95))
        assert res.score == pytest.approx(res.logprob / 4)

    def test_attention_rows_include_end_token(self):
        res = beam_search([TableModel(TRAP, nodes=3)], ONE_NODE, beam=2)
        assert res.attention.shape == (4, 3)
        assert res.attention.argmax(axis=1).tolist() == [0, 1, 2, 0]

    def test_peaked_model_beam_five_equals_beam_one(self):
        fn = forced_table({(): 0.999, (A,): 0.001, (A, B): 0.999}, length=3)
        m = TableModel(fn)
        assert beam_search([m], ONE_NODE, beam=5).tokens == beam_search([m], ONE_NODE, beam=1).tokens == [A, B, A]

    def test_unfinished_flag(self, caplog):
        never_ends = lambda p: table_row(0.0, 0.6, 0.4)  # noqa: E731
        with caplog.at_level(logging.WARNING):
            res = beam_search([TableModel(never_ends)], ONE_NODE, beam=3, max_len=4)
        assert not res.finished and res.tokens == [A, A, A, A]
        assert res.score == pytest.approx(4 * math.log(0.6) / 4)
        assert "no hypothesis finished" in caplog.text

    def test_stops_when_nothing_alive(self):
        ends = lambda p: table_row(1.0, 0.0, 0.0)  # noqa: E731
        res = beam_search([TableModel(ends)], ONE_NODE, beam=5)
        assert res.tokens == [] and res.finished and res.score == 0.0

    def test_bad_beam(self):
        with pytest.raises(InferenceError):
            beam_search([TableModel(TRAP)], ONE_NODE, beam=0)

    def test_default_max_len(self):
        assert default_max_len(ONE_NODE) == 12
        big = prepare(LabeledGraph(tuple(f"n{i}" for i in range(60)), tuple((0, i, "r") for i in range(1, 60)), 0))
        assert default_max_len(big) == 200


class TestRealModel:
    def test_beam_one_is_greedy(self, rand_model):
        rng = np.random.default_rng(0)
        labels = rand_model.src_vocab.itos[4:]
        for _ in range(25):
            g = random_levi(rng, 12, labels)
            assert beam_search([rand_model], g, beam=1).tokens == greedy_decode([rand_model], g)

    def test_ensemble_of_copies(self, rand_model):
        rng = np.random.default_rng(1)
        labels = rand_model.src_vocab.itos[4:]
        for _ in range(5):
            g = random_levi(rng, 12, labels)
            single = beam_search([rand_model], g, beam=3)
            many = beam_search([rand_model] * 5, g, beam=3)
            assert many.tokens == single.tokens
            assert many.score == pytest.approx(single.score, abs=1e-9)

    def test_two_model_average(self, toy_data, rand_model):
        other = Graph2Seq(small_config(), rand_model.src_vocab, rand_model.tgt_vocab, seed=9, dtype=np.float64)
        g = toy_data[0].graph
        models = [rand_model, other]
        mems, sts = Ensemble(models).start(g)
        lp, _, att = ensemble_step(models, mems, sts, np.array([BOS_ID]))
        per = [m.step(*m.start(g), np.array([BOS_ID])) for m in models]
        for v in range(len(rand_model.tgt_vocab)):
            assert lp[0, v] == pytest.approx((per[0][0][0, v] + per[1][0][0, v]) / 2, abs=1e-12)
        np.testing.assert_allclose(att, (per[0][2] + per[1][2]) / 2, atol=1e-12)

    def test_vocab_mismatch(self, rand_model):
        odd = Graph2Seq(small_config(), rand_model.src_vocab, Vocabulary(rand_model.tgt_vocab.itos[:-1]), seed=1)
        with pytest.raises(InferenceError, match="mismatch"):
            Ensemble([rand_model, odd])
        with pytest.raises(InferenceError):
            Ensemble([])

    def test_state_count_mismatch(self, rand_model, toy_data):
        mem, st = rand_model.start(toy_data[0].graph)
        with pytest.raises(InferenceError):
            ensemble_step([rand_model, rand_model], [mem], [st], np.array([BOS_ID]))

    def test_decode_corpus_and_trace(self, rand_model, toy_data):
        out = decode_corpus([rand_model], [x.graph for x in toy_data[:3]], beam=2)
        assert len(out) == 3
        rec = json.loads(out[0].trace(7))
        assert rec["id"] == 7 and rec["tokens"] == out[0].words
        assert len(rec["attention_argmax"]) == len(out[0].result.attention)


class TestReplaceUnk:
    def test_no_unknowns(self):
        assert replace_unk(["a", "b"], np.zeros((2, 3)), ["x", "y", "z"]) == ["a", "b"]

    def test_peaked(self):
        att = np.array([[1.0, 0, 0], [0, 0.1, 0.9], [0, 1.0, 0]])
        assert replace_unk(["the", "<unk>", "ran"], att, ["want", "girl", "boy"]) == ["the", "boy", "ran"]

    def test_tie_goes_to_lowest_node(self):
        att = np.array([[0.2, 0.4, 0.4]])
        assert replace_unk(["<unk>"], att, ["a", "b", "c"]) == ["b"]

    def test_relation_nodes_are_candidates(self):
        levi = prepare(LabeledGraph(("want", "boy"), ((0, 1, "ARG0"),), 0))
        att = np.eye(3)[[2]]
        assert replace_unk(["<unk>"], att, levi.labels) == ["ARG0"]

    def test_missingtable_row(self):
        with pytest.raises(InferenceError):
            replace_unk(["a", "<unk>"], np.ones((1, 2)), ["x", "y"])
