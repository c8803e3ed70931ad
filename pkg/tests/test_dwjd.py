import math
import threading
import time

import numpy as np
import pytest
from streamdec.core import AttentionConfig, DecodeConfig, Hypothesis, PosteriorLattice, RepresentationStream
from streamdec.ctc import ctc_prefix_score
from streamdec.dwjd import (
    DecodeSession,
    NoFinishedHypothesis,
    accumulate_att_score,
    combine_score,
    dwjd_decode,
    end_detect,
    exhaustive_search,
    finalize_hypotheses,
    format_hypotheses,
    write_hypotheses,
)
from streamdec.lm import BigramLM, UniformLM
from streamdec.stream_sim import ChunkedEncoder, StreamingConfig, chunked_encode

from _support import prob_stream, tiny_instance, toy_utterance

MECHS = ["hma", "mocha", "smocha", "mta"]


class TableDecoder:
    """Decoder with a fixed output distribution and fixed attention energies."""

    def __init__(self, vocab, logp, params):
        self.vocab = vocab
        self.logp = np.asarray(logp, float)
        self.params = params

    def initial_state(self):
        return np.zeros(1)

    def step(self, context, state, prev_label):
        return state, self.logp

    def attention_params(self):
        return {"params": self.params}


def _summary(hyps):
    return [(h.seq, h.s_combined, h.s_att, h.s_tctc, h.s_lm) for h in hyps]


def test_combine_examples():
    assert combine_score(-1, -2, -3, 0.6, 0.3) == pytest.approx(-2.3)
    assert combine_score(-1, -2, -3, 0.0, 0.0) == -2
    assert combine_score(-1, -2, -3, 1.0, 0.0) == -1
    assert combine_score(-math.inf, -2, 0, 0.0, 0.0) == -2


def test_accumulate_examples():
    assert accumulate_att_score(0.0, math.log(0.5)) == math.log(0.5)
    s = 0.0
    for _ in range(7):
        s = accumulate_att_score(s, math.log(1 / 5))
    assert s == pytest.approx(7 * math.log(1 / 5))


def _finished(scores):
    out = []
    for n, s in scores.items():
        out.append(Hypothesis(seq=(1,) + (3,) * n + (2,), s_combined=s, complete=True))
    return out


def test_end_detect_examples():
    n = 5
    base = {n - 3: -30.0, n - 2: -31.0, n - 1: -29.0}
    assert end_detect(_finished({**base, n: -50.0}), n, 3, -10.0)
    assert not end_detect(_finished({**base, n: -35.0}), n, 3, -10.0)
    assert not end_detect(_finished({n - 1: -29.0, n - 2: -31.0, n: -50.0}), n, 3, -10.0)
    assert not end_detect(_finished(base), n, 3, -10.0)


def test_finalize_singleton_and_theta_zero(toy_utt, toy):
    _, _, enc = toy_utt
    cfg = DecodeConfig(theta=0.0, attention=AttentionConfig("mta"))
    hyps = dwjd_decode(enc.stream, enc.lattice, toy, cfg=cfg)
    again = finalize_hypotheses(hyps, enc.lattice, cfg, toy.vocab)
    assert [h.seq for h in again] == [h.seq for h in hyps]
    one = finalize_hypotheses(hyps[:1], enc.lattice, cfg, toy.vocab)
    assert _summary(one) == _summary(hyps[:1])


def test_finalize_uses_full_ctc_score(vocab2):
    P = np.zeros((4, vocab2.size))
    P[:, 0] = 0.5
    P[:, 3] = 0.5
    lat = PosteriorLattice.from_array(P)
    a = vocab2.index("a")
    early = Hypothesis(seq=(1, a, 2), s_att=-1.0, s_tctc=-0.1, complete=True)
    late = Hypothesis(seq=(1, a, a, 2), s_att=-1.5, s_tctc=-0.5, complete=True)
    out = finalize_hypotheses([early, late], lat, DecodeConfig(mu=1.0), vocab2)
    for h in out:
        assert h.s_tctc == ctc_prefix_score(h.seq[1:], lat, blank=0, eos=2)
        assert h.s_combined == h.s_tctc


@pytest.mark.parametrize("mech", MECHS)
def test_streaming_matches_upfront(mech):
    for seed in range(3):
        m, raw, _, scfg = toy_utterance(seed)
        cfg = DecodeConfig(attention=AttentionConfig(mech))
        enc = chunked_encode(raw, scfg, m)
        upfront = dwjd_decode(enc.stream, enc.lattice, m, cfg=cfg)
        prod = ChunkedEncoder(m, scfg)
        session = DecodeSession(prod.stream, prod.lattice, m, cfg)
        for x in raw:
            prod.push(x)
            session.advance()
        prod.finish()
        session.advance()
        assert _summary(session.results()) == _summary(upfront)


def test_suspends_until_needed_frame_arrives(vocab2):
    # attention stops at frame index 6 but only 5 frames have arrived
    full, params = prob_stream([0.1] * 6 + [0.9, 0.9])
    P = np.zeros((8, vocab2.size))
    P[:, 0] = 0.6
    P[:, 3] = 0.3
    P[:, 4] = 0.1
    lat = PosteriorLattice.from_array(P)
    dec = TableDecoder(vocab2, np.log([1e-9, 1e-9, 0.2, 0.5, 0.3 - 2e-9]), params)
    stream = RepresentationStream(full.dim)
    first_round = []

    def on_round(sess):
        if sess.rounds == 1:
            first_round.extend(h.t_att for h in sess.active + sess.finished)

    session = DecodeSession(stream, lat, dec, DecodeConfig(beam_size=2, max_output_len=2), on_round=on_round)
    stream.extend(full.rows()[:5])
    assert not session.advance()
    assert session.waiting_on == 5 and session.rounds == 0
    stream.append(full.h(5))
    assert not session.advance()
    assert session.waiting_on == 6 and session.rounds == 0
    stream.append(full.h(6))
    session.advance()
    assert session.rounds >= 1
    assert first_round and set(first_round) == {6}


def test_hand_built_instance_matches_exhaustive(vocab2):
    _, params = prob_stream([0.9, 0.2, 0.9])
    P = np.array([
        [0.05, 0, 0, 0.9, 0.05],
        [0.9, 0, 0, 0.05, 0.05],
        [0.1, 0, 0, 0.1, 0.8],
    ])
    stream, _ = prob_stream([0.9, 0.2, 0.9])
    lat = PosteriorLattice.from_array(P)
    dec = TableDecoder(vocab2, np.log([1e-9, 1e-9, 0.3, 0.4, 0.3 - 2e-9]), params)
    cfg = DecodeConfig(beam_size=16, max_output_len=3, end_D=-math.inf, attention=AttentionConfig("mta"))
    got = dwjd_decode(stream, lat, dec, cfg=cfg)
    ref = exhaustive_search(stream, lat, dec, cfg, 3)
    assert got[0].seq == ref[0].seq == (1, 3, 4, 2)
    assert [h.seq for h in got] == [h.seq for h in ref]


@pytest.mark.parametrize("seed", range(12))
def test_agrees_with_exhaustive_search(seed):
    stream, lat, m, cfg = tiny_instance(seed)
    got = dwjd_decode(stream, lat, m, cfg=cfg)
    ref = exhaustive_search(stream, lat, m, cfg, 3)
    assert got[0].seq == ref[0].seq
    assert got[0].s_combined == pytest.approx(ref[0].s_combined, abs=1e-12)


@pytest.mark.parametrize("mech", MECHS)
def test_beam_keeps_best_candidates(mech):
    m, raw, _, scfg = toy_utterance(5)
    enc = chunked_encode(raw, scfg, m)
    cfg = DecodeConfig(beam_size=3, attention=AttentionConfig(mech))
    session = DecodeSession(enc.stream, enc.lattice, m, cfg, keep_log=True)
    assert session.advance()
    for rec in session.log:
        assert len(rec.kept_scores) == min(cfg.beam_size, rec.n_candidates)
        assert rec.kept_scores == sorted(rec.candidate_scores, reverse=True)[: len(rec.kept_scores)]


@pytest.mark.parametrize("mech", MECHS)
def test_endpoints_never_move_back(mech):
    for seed in range(4):
        m, raw, _, scfg = toy_utterance(seed, n_labels=6)
        enc = chunked_encode(raw, scfg, m)
        hyps = dwjd_decode(enc.stream, enc.lattice, m, cfg=DecodeConfig(attention=AttentionConfig(mech)))
        for h in hyps:
            att = [t for t in h.att_endpoints if t is not None]
            assert att == sorted(att)
            assert list(h.ctc_endpoints) == sorted(h.ctc_endpoints)


def test_decodes_toy_labels(toy, toy_utt):
    _, labels, enc = toy_utt
    for mech in MECHS + ["loaa"]:
        hyps = dwjd_decode(enc.stream, enc.lattice, toy, cfg=DecodeConfig(attention=AttentionConfig(mech)))
        assert list(hyps[0].seq[1:-1]) == labels, mech


def test_no_finished_hypothesis(vocab2):
    stream, params = prob_stream([0.9, 0.9])
    lat = PosteriorLattice.from_array(np.array([[0.5, 0, 0, 0.5, 0]] * 2))
    dec = TableDecoder(vocab2, [-math.inf, -math.inf, -math.inf, math.log(0.5), math.log(0.5)], params)
    with pytest.raises(NoFinishedHypothesis):
        dwjd_decode(stream, lat, dec, cfg=DecodeConfig(max_output_len=2))


def test_threaded_producer(toy):
    raw, labels = toy.synth_utterance(6, rng=11)
    scfg = StreamingConfig(n_c=4, n_r=2)
    cfg = DecodeConfig(attention=AttentionConfig("smocha"))
    enc = ChunkedEncoder(toy, scfg)

    def produce():
        for x in raw:
            enc.push(x)
            time.sleep(0.0005)
        enc.finish()

    th = threading.Thread(target=produce)
    th.start()
    hyps = dwjd_decode(enc.stream, enc.lattice, toy, cfg=cfg, timeout=30)
    th.join()
    ref = chunked_encode(raw, scfg, toy)
    assert _summary(hyps) == _summary(dwjd_decode(ref.stream, ref.lattice, toy, cfg=cfg))
    assert list(hyps[0].seq[1:-1]) == labels


def test_lm_changes_scores(toy, toy_utt):
    _, labels, enc = toy_utt
    lm = BigramLM(toy.vocab).fit([labels])
    cfg = DecodeConfig(beta=0.3, attention=AttentionConfig("mta"))
    hyps = dwjd_decode(enc.stream, enc.lattice, toy, lm=lm, cfg=cfg)
    top = hyps[0]
    assert top.s_lm < 0
    assert top.s_combined == pytest.approx(combine_score(top.s_tctc, top.s_att, top.s_lm, 0.5, 0.3))


def test_lm_probabilities_normalised(vocab5):
    lm = BigramLM(vocab5).fit([[3, 4, 5], [3, 3, 6], [7]])
    outs = vocab5.real_ids + [vocab5.eos_id]
    for prev in [vocab5.sos_id] + vocab5.real_ids:
        assert sum(lm.prob(prev, y) for y in outs) <= 1.0 + 1e-12
    assert UniformLM(vocab5).score_next((1,), 3) == pytest.approx(-math.log(6))


def test_hypothesis_file(tmp_path, toy, toy_utt):
    _, labels, enc = toy_utt
    hyps = dwjd_decode(enc.stream, enc.lattice, toy, cfg=DecodeConfig(attention=AttentionConfig("mta")))
    write_hypotheses(tmp_path / "u.hyp", hyps, toy.vocab, ["beam=20"])
    lines = (tmp_path / "u.hyp").read_text().splitlines()
    assert lines[0] == "# beam=20"
    assert lines[2].split("\t")[0] == "1"
    assert lines[2].split("\t")[-1] == " ".join(toy.vocab.labels[y] for y in labels)
    assert len(format_hypotheses(hyps, toy.vocab)) == len(hyps)
