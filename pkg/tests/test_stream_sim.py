import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamdec.core import DimMismatch, FrameUnavailable, Vocab
from streamdec.stream_sim import (
    ArrivalBatch,
    ChunkedEncoder,
    EmptyInput,
    StreamingConfig,
    ToyModel,
    audio_seconds,
    chunked_encode,
    simulate_arrival,
    toy_decoder_step,
)

_MODEL = ToyModel(Vocab.build(list("abc")), seed=2)


def test_hop_layout(toy):
    raw = np.zeros((5, toy.input_dim))
    res = chunked_encode(raw, StreamingConfig(n_c=2, n_r=1), toy)
    assert [(h.first, h.stop, h.emitted) for h in res.hops] == [(0, 2, 2), (2, 4, 2), (4, 5, 1)]
    assert [list(h.lookahead) for h in res.hops] == [[2], [4], []]
    assert res.stream.T_max == 5 and res.lattice.closed


def test_hop_waits_for_lookahead(toy):
    enc = ChunkedEncoder(toy, StreamingConfig(n_c=2, n_r=1))
    counts = [enc.push(np.zeros(toy.input_dim)) for _ in range(5)]
    assert counts == [0, 0, 2, 0, 2]
    assert enc.finish() == 1
    with pytest.raises(EmptyInput):
        enc.push(np.zeros(toy.input_dim))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(0, 4), st.integers(3, 30), st.data())
def test_future_beyond_lookahead_is_invisible(seed, n_c, n_r, T, data):
    m = _MODEL
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(T, m.input_dim))
    j = data.draw(st.integers(0, T - 1))
    cfg = StreamingConfig(n_c=n_c, n_r=n_r)
    base = chunked_encode(raw, cfg, m).stream.rows()
    bumped = raw.copy()
    bumped[j + n_r + 1:] += rng.normal(size=bumped[j + n_r + 1:].shape)
    assert np.array_equal(chunked_encode(bumped, cfg, m).stream.rows()[: j + 1], base[: j + 1])


def test_perturbing_within_lookahead_changes_frame(toy):
    raw = np.random.default_rng(0).normal(size=(10, toy.input_dim))
    cfg = StreamingConfig(n_c=4, n_r=2)
    base = chunked_encode(raw, cfg, toy).stream.rows()
    raw[5] += 1.0
    assert not np.array_equal(chunked_encode(raw, cfg, toy).stream.rows()[3], base[3])


def test_large_lookahead_is_single_pass(toy):
    raw = np.random.default_rng(1).normal(size=(23, toy.input_dim))
    a = chunked_encode(raw, StreamingConfig(n_c=4, n_r=40), toy)
    b = chunked_encode(raw, StreamingConfig(n_c=23, n_r=40), toy)
    assert len(b.hops) == 1
    np.testing.assert_array_equal(a.stream.rows(), b.stream.rows())
    np.testing.assert_array_equal(a.lattice.probs, b.lattice.probs)


def test_encoder_is_deterministic(vocab5):
    outs = []
    for _ in range(2):
        m = ToyModel(vocab5, seed=3)
        raw, labels = m.synth_utterance(5, rng=9)
        outs.append((chunked_encode(raw, StreamingConfig(), m).stream.rows(), labels))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    assert outs[0][1] == outs[1][1]


def test_lattice_rows_are_distributions(toy, toy_utt):
    _, _, enc = toy_utt
    P = enc.lattice.probs
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert not P[:, [toy.vocab.sos_id, toy.vocab.eos_id]].any()


def test_synth_labels_peak_in_lattice(toy, toy_utt):
    _, labels, enc = toy_utt
    path = [int(y) for y in enc.lattice.probs.argmax(1)]
    collapsed = [y for i, y in enumerate(path) if y != 0 and (i == 0 or path[i - 1] != y)]
    assert collapsed == labels


def test_decoder_step(toy):
    ctx = np.zeros(toy.rep_dim)
    s1, lp1 = toy_decoder_step(ctx, toy.initial_state(), toy.vocab.sos_id, toy)
    s2, lp2 = toy_decoder_step(ctx, toy.initial_state(), toy.vocab.sos_id, toy)
    np.testing.assert_array_equal(lp1, lp2)
    np.testing.assert_array_equal(s1, s2)
    assert np.logaddexp.reduce(lp1) == pytest.approx(0.0, abs=1e-12)
    assert lp1[toy.vocab.blank_id] == -np.inf and lp1[toy.vocab.sos_id] == -np.inf
    h = np.random.default_rng(0).normal(size=toy.rep_dim)
    assert not np.array_equal(toy.step(h, toy.initial_state(), toy.vocab.sos_id)[1], lp1)
    with pytest.raises(DimMismatch):
        toy.step(np.zeros(toy.rep_dim + 1), toy.initial_state(), 1)


def test_arrival_examples():
    cfg = StreamingConfig(frame_period_ms=10)
    batches = simulate_arrival(30, cfg)
    assert [(b.start, b.stop) for b in batches] == [(0, 10), (10, 20), (20, 30)]
    assert [b.time_s for b in batches] == pytest.approx([0.1, 0.2, 0.3])
    assert simulate_arrival(5, cfg) == [ArrivalBatch(0.1, 0, 5)]
    assert simulate_arrival(30, StreamingConfig(frame_period_ms=0)) == [ArrivalBatch(0.0, 0, 30)]
    assert audio_seconds(30, cfg) == pytest.approx(0.3)
    assert audio_seconds(30, StreamingConfig(frame_period_ms=0)) == pytest.approx(0.3)


def test_empty_input(toy):
    with pytest.raises(EmptyInput):
        chunked_encode(np.zeros((0, toy.input_dim)), StreamingConfig(), toy)
    with pytest.raises(EmptyInput):
        ChunkedEncoder(toy, StreamingConfig()).finish()


def test_encoder_rejects_bad_frame(toy):
    with pytest.raises(DimMismatch):
        ChunkedEncoder(toy, StreamingConfig()).push(np.zeros(toy.input_dim + 1))


def test_decimation_quarters_frame_rate(toy):
    raw = np.random.default_rng(2).normal(size=(18, toy.input_dim))
    res = chunked_encode(raw, StreamingConfig(n_c=4, n_r=2, decimate=True), toy)
    assert res.stream.T_max == 5
    np.testing.assert_allclose(np.diff(res.stream.rows()[:, toy.clock_index]), 1 / 64)


def test_consumer_sees_growing_stream(toy):
    enc = ChunkedEncoder(toy, StreamingConfig(n_c=2, n_r=1))
    with pytest.raises(FrameUnavailable):
        enc.stream.require(0)
    enc.push_many(np.zeros((3, toy.input_dim)))
    assert enc.stream.require(1)


@pytest.mark.parametrize("kw", [{"n_c": 0}, {"n_r": -1}, {"frame_period_ms": -1}, {"batch_frames": 0}])
def test_streaming_config_validation(kw):
    with pytest.raises(ValueError):
        StreamingConfig(**kw)
