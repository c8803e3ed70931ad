"""Error rates and real-time-factor measurement."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import kernels as K
from .core import DecodeConfig, Hypothesis, PosteriorLattice, RepresentationStream, StreamDecError
from .dwjd import DecodeSession
from .lm import LmScorer
from .stream_sim import ChunkedEncoder, StreamingConfig, ToyModel, audio_seconds, simulate_arrival


class EmptyReference(StreamDecError):
    pass


def edit_distance(ref: Sequence, hyp: Sequence):
    """Levenshtein distance with unit costs; returns ``(distance, subs, ins, dels)``."""
    ids: dict = {}
    r = np.array([ids.setdefault(t, len(ids)) for t in ref], dtype=np.int64)
    h = np.array([ids.setdefault(t, len(ids)) for t in hyp], dtype=np.int64)
    d, s, i, de = K.edit_distance(r, h)
    return int(d), int(s), int(i), int(de)


def error_rate(ref: Sequence, hyp: Sequence) -> float:
    if len(ref) == 0:
        raise EmptyReference("error rate is undefined for an empty reference")
    return edit_distance(ref, hyp)[0] / len(ref)


@dataclass
class RtfReport:
    """Timing of one decode.

    Times are on a simulated clock that starts when speech starts: it jumps
    to each batch arrival time and advances by the measured compute time.
    ``processing_seconds`` runs from the first frame arrival to the final
    result.
    """

    processing_seconds: float
    audio_seconds: float
    first_emission_offset: Optional[float]
    compute_seconds: float = 0.0
    finish_offset: float = 0.0
    last_arrival: float = 0.0
    streaming: bool = True

    def __post_init__(self):
        if self.audio_seconds <= 0:
            raise ValueError("audio_seconds must be > 0")

    @property
    def rtf(self) -> float:
        return self.processing_seconds / self.audio_seconds

    @property
    def expanded_before_end(self) -> bool:
        """Whether the first beam expansion finished before the last frame arrived."""
        return self.first_emission_offset is not None and self.first_emission_offset < self.last_arrival


@dataclass
class TimedDecode:
    hypotheses: List[Hypothesis]
    report: RtfReport
    session: DecodeSession


class _DirectProducer:
    """Feeds precomputed representation and posterior rows in lockstep."""

    def __init__(self, lattice_rows, dim: int):
        self.lattice_rows = np.asarray(lattice_rows, float)
        self.stream = RepresentationStream(dim)
        self.lattice = PosteriorLattice(self.lattice_rows.shape[1])

    def push_many(self, rows) -> None:
        for h in rows:
            self.lattice.append(self.lattice_rows[self.stream.t_enc])
            self.stream.append(h)

    def finish(self) -> None:
        self.stream.close()
        self.lattice.close()


def timed_decode(raw, model: ToyModel, scfg: StreamingConfig, cfg: DecodeConfig,
                 lm: Optional[LmScorer] = None, streaming: bool = True, lattice=None) -> TimedDecode:
    """Run encoder and search against the arrival schedule of ``scfg``.

    In streaming mode each batch is encoded and searched as it arrives.
    Offline mode waits for the last batch, then does all the work. With
    ``lattice`` given, ``raw`` holds precomputed representation frames and
    the encoder is skipped.
    """
    raw = np.atleast_2d(np.asarray(raw, float))
    schedule = simulate_arrival(len(raw), scfg)
    enc = ChunkedEncoder(model, scfg) if lattice is None else _DirectProducer(lattice, raw.shape[1])
    clock = {"now": 0.0, "t0": 0.0, "first": None}

    def on_round(_session):
        if clock["first"] is None:
            clock["first"] = clock["now"] + (time.perf_counter() - clock["t0"])

    session = DecodeSession(enc.stream, enc.lattice, model, cfg, lm, on_round=on_round)
    compute = 0.0
    batches = schedule if streaming else [schedule[-1]]
    for k, batch in enumerate(batches):
        clock["now"] = max(clock["now"], batch.time_s)
        clock["t0"] = time.perf_counter()
        start = batch.start if streaming else 0
        enc.push_many(raw[start:batch.stop])
        if k == len(batches) - 1:
            enc.finish()
        session.advance()
        dt = time.perf_counter() - clock["t0"]
        clock["now"] += dt
        compute += dt
    t0 = time.perf_counter()
    hyps = session.results()
    dt = time.perf_counter() - t0
    compute += dt
    finish = clock["now"] + dt
    first_arrival = schedule[0].time_s
    report = RtfReport(
        processing_seconds=finish - first_arrival,
        audio_seconds=audio_seconds(len(raw), scfg),
        first_emission_offset=clock["first"],
        compute_seconds=compute,
        finish_offset=finish,
        last_arrival=schedule[-1].time_s,
        streaming=streaming,
    )
    return TimedDecode(hyps, report, session)


def measure_rtf(raw, model: ToyModel, scfg: StreamingConfig, cfg: DecodeConfig,
                lm: Optional[LmScorer] = None, streaming: bool = True) -> RtfReport:
    return timed_decode(raw, model, scfg, cfg, lm, streaming).report


REPORT_COLUMNS = ("utt_id", "rtf", "first_emission_offset_ms", "error_rate", "beam_size")


def write_report_csv(path, rows, header_lines=()) -> None:
    """``rows`` yields ``(utt_id, RtfReport, error_rate or None, beam_size)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for utt, rep, err, beam in rows:
            first = "" if rep.first_emission_offset is None else f"{1000.0 * rep.first_emission_offset:.3f}"
            w.writerow([utt, f"{rep.rtf:.6f}", first, "" if err is None else f"{err:.6f}", beam])
