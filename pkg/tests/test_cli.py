import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from streamdec.cli import main
from streamdec.core import write_stream_file


def _rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:  # argparse rejects the arguments
        return exc.code


def _body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def test_decode_smoke(tmp_path):
    assert main(["decode", "--toy", "1", "--out", str(tmp_path)]) == 0
    hyp = tmp_path / "toy001.hyp"
    assert _body(hyp)[0].startswith("1\t")
    report = _rows(tmp_path / "rtf.csv")
    assert report[0]["utt_id"] == "toy001" and float(report[0]["error_rate"]) == 0.0


def test_decode_echoes_config(tmp_path):
    assert main(["decode", "--toy", "1", "--attention", "mta", "--mu", "0.5", "--beam", "20", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "toy001.hyp").read_text()
    for item in ("attention=mta", "mu=0.5", "beam=20", "theta=1e-08", "seed=0"):
        assert f"# {item}\n" in header


def test_arrival_period_does_not_change_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["decode", "--toy", "2", "--toy-labels", "20"]
    assert main(common + ["--arrival-period-ms", "0", "--out", str(a)]) == 0
    assert main(common + ["--arrival-period-ms", "100", "--out", str(b)]) == 0
    for name in ("toy001.hyp", "toy002.hyp"):
        assert _body(a / name) == _body(b / name)
    ra, rb = _rows(a / "rtf.csv"), _rows(b / "rtf.csv")
    assert [r["first_emission_offset_ms"] for r in ra] != [r["first_emission_offset_ms"] for r in rb]


def test_compare_ctc_theta_zero(tmp_path):
    assert main(["compare-ctc", "--toy", "2", "--theta", "0", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "ctc_compare.csv")
    assert rows and all(r["S_ctc"] == r["S_tctc"] and r["gap"] == "0" for r in rows)


def test_compare_ctc_peaky_saves_work(tmp_path):
    assert main(["compare-ctc", "--toy", "3", "--toy-labels", "12", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "ctc_compare.csv")
    assert np.mean([float(r["cost_ratio"]) for r in rows]) < 1.0


def test_compare_ctc_flat_lattice_flags_gaps(tmp_path):
    peaky, flat = tmp_path / "p", tmp_path / "f"
    common = ["compare-ctc", "--toy", "3", "--toy-labels", "12"]
    assert main(common + ["--out", str(peaky)]) == 0
    assert main(common + ["--temperature", "1.0", "--out", str(flat)]) == 0
    gaps_p = sum(int(r["gap"]) for r in _rows(peaky / "ctc_compare.csv"))
    gaps_f = sum(int(r["gap"]) for r in _rows(flat / "ctc_compare.csv"))
    assert gaps_f > gaps_p


def test_dump_attention_constant_p(tmp_path):
    assert main(["dump-attention", "--toy", "1", "--attention", "smocha", "--constant-p", "0.5",
                 "--steps", "3", "--frames", "4", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "constant.smocha.train.csv")
    first = [float(r["weight"]) for r in rows if r["output_step"] == "1"]
    assert first == [0.5, 0.25, 0.125, 0.0625]
    mocha = _rows(tmp_path / "constant.mocha.train.csv")
    sums = [sum(float(r["weight"]) for r in mocha if r["output_step"] == str(i)) for i in (1, 2, 3)]
    assert sums[0] > sums[1] > sums[2]


def test_dump_attention_mta_truncates(tmp_path):
    assert main(["dump-attention", "--toy", "1", "--attention", "mta", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "toy001.mta.decode.csv")
    by_step = {}
    for r in rows:
        by_step.setdefault(int(r["output_step"]), []).append(int(r["frame"]))
    ends = [max(f) for _, f in sorted(by_step.items())]
    assert ends == sorted(ends)
    assert (tmp_path / "toy001.mta.train.csv").exists()


def test_precomputed_inputs(tmp_path):
    from streamdec.core import Vocab, write_lattice_file
    from streamdec.stream_sim import StreamingConfig, ToyModel, chunked_encode

    m = ToyModel(Vocab.build(list("abcde")), seed=0)
    raw, labels = m.synth_utterance(5, rng=1)
    enc = chunked_encode(raw, StreamingConfig(), m)
    write_stream_file(tmp_path / "u.stream", enc.stream.rows())
    write_lattice_file(tmp_path / "u.lat", enc.lattice.probs)
    out = tmp_path / "out"
    assert main(["decode", "--stream", str(tmp_path / "u.stream"), "--lattice", str(tmp_path / "u.lat"),
                 "--out", str(out)]) == 0
    assert _body(out / "u.hyp")[0].split("\t")[-1] == " ".join("abcde"[y - 3] for y in labels)


def test_manifest(tmp_path):
    from streamdec.core import Vocab
    from streamdec.stream_sim import ToyModel

    m = ToyModel(Vocab.build(list("abcde")), seed=4)
    raw, labels = m.synth_utterance(4, rng=2)
    write_stream_file(tmp_path / "r.txt", raw)
    man = {"seed": 4, "out": str(tmp_path / "o"),
           "utterances": [{"id": "u1", "raw": str(tmp_path / "r.txt"), "ref": " ".join("abcde"[y - 3] for y in labels)}]}
    (tmp_path / "m.json").write_text(json.dumps(man))
    assert main(["decode", "--manifest", str(tmp_path / "m.json")]) == 0
    assert float(_rows(tmp_path / "o" / "rtf.csv")[0]["error_rate"]) == 0.0


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("STREAMDEC_SEED", "7")
    assert main(["decode", "--toy", "1", "--out", str(tmp_path)]) == 0
    assert "# seed=7\n" in (tmp_path / "toy001.hyp").read_text()


@pytest.mark.parametrize("argv", [
    ["decode", "--toy", "1", "--mu", "2"],
    ["decode"],
    ["decode", "--toy", "1", "--attention", "global"],
    ["decode", "--raw", "missing-file.txt"],
    ["compare-ctc", "--toy", "1", "--stream", "x"],
])
def test_bad_input_exit_code(tmp_path, argv):
    assert _exit_code(argv + ["--out", str(tmp_path)]) == 1


def test_bad_raw_file(tmp_path):
    (tmp_path / "r.txt").write_text("dim=2 frames=1\n1 2\n")
    assert main(["decode", "--raw", str(tmp_path / "r.txt"), "--out", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "streamdec", "decode", "--toy", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
