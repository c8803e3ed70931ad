import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamdec.core import AttentionConfig, DecodeConfig
from streamdec.metrics import (
    EmptyReference,
    RtfReport,
    edit_distance,
    error_rate,
    measure_rtf,
    timed_decode,
    write_report_csv,
)
from streamdec.stream_sim import StreamingConfig

from _support import toy_utterance

tokens = st.lists(st.sampled_from("abcd"), max_size=10)


def test_edit_distance_examples():
    assert edit_distance("abc", "abc")[0] == 0
    assert edit_distance("kitten".replace("", " ").split(), "sitting".replace("", " ").split())[0] == 3
    assert edit_distance(list("abcd"), []) == (4, 0, 0, 4)
    assert edit_distance([], list("ab")) == (2, 0, 2, 0)


def test_error_rate():
    assert error_rate(list("abcd"), list("abed")) == 0.25
    with pytest.raises(EmptyReference):
        error_rate([], ["a"])


@given(tokens, tokens)
def test_distance_symmetric_and_bounded(a, b):
    d = edit_distance(a, b)[0]
    assert d == edit_distance(b, a)[0]
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


@given(tokens, tokens, tokens)
def test_triangle_inequality(a, b, c):
    assert edit_distance(a, c)[0] <= edit_distance(a, b)[0] + edit_distance(b, c)[0]


def test_rtf_ratio():
    assert RtfReport(1.0, 2.0, None).rtf == 0.5
    with pytest.raises(ValueError):
        RtfReport(1.0, 0.0, None)


@pytest.fixture(scope="module")
def long_utt():
    m, raw, labels, _ = toy_utterance(4, n_labels=30)
    scfg = StreamingConfig(n_c=16, n_r=16, frame_period_ms=10)
    cfg = DecodeConfig(attention=AttentionConfig("mta"))
    timed_decode(raw[:40], m, scfg, cfg)  # compile kernels before timing
    return m, raw, labels, scfg, cfg


def test_streaming_emits_before_audio_ends(long_utt):
    m, raw, labels, scfg, cfg = long_utt
    run = timed_decode(raw, m, scfg, cfg)
    rep = run.report
    assert rep.first_emission_offset < rep.audio_seconds
    assert rep.expanded_before_end
    assert rep.processing_seconds == pytest.approx(rep.finish_offset - 0.1)
    assert list(run.hypotheses[0].seq[1:-1]) == labels


def test_offline_waits_for_all_audio(long_utt):
    m, raw, _, scfg, cfg = long_utt
    rep = measure_rtf(raw, m, scfg, cfg, streaming=False)
    assert rep.first_emission_offset >= rep.audio_seconds
    assert not rep.expanded_before_end
    assert rep.rtf > 0


def test_streaming_and_offline_agree(long_utt):
    m, raw, _, scfg, cfg = long_utt
    a = timed_decode(raw, m, scfg, cfg).hypotheses
    b = timed_decode(raw, m, scfg, cfg, streaming=False).hypotheses
    assert [(h.seq, h.s_combined) for h in a] == [(h.seq, h.s_combined) for h in b]


def test_report_csv(tmp_path):
    rep = RtfReport(0.5, 2.0, 0.25)
    write_report_csv(tmp_path / "r.csv", [("u1", rep, 0.1, 20), ("u2", rep, None, 20)], ["beam=20"])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# beam=20"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["utt_id", "rtf", "first_emission_offset_ms", "error_rate", "beam_size"]
    assert rows[1] == ["u1", "0.250000", "250.000", "0.100000", "20"]
    assert rows[2][3] == ""
