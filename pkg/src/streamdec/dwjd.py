"""Online joint CTC/attention beam search with dynamic waiting.

The search is length synchronous: every round expands each open hypothesis
by one label. Expanding a hypothesis runs the attention scan, a decoder
step and a truncated CTC scan per candidate label. Any of these may need a
frame the encoder has not produced yet; the hypothesis is then suspended
and the round is retried after more frames arrive, reusing whatever was
already computed. Because no step reads past the frame it needs, the final
result does not depend on the arrival schedule.
"""

from __future__ import annotations

import itertools
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np

from .attention import Attention
from .core import (
    DecodeConfig,
    FrameUnavailable,
    Hypothesis,
    PosteriorLattice,
    RepresentationStream,
    StreamDecError,
    Vocab,
)
from .ctc import CtcPrefixScorer, ctc_prefix_score
from .lm import LmScorer, UniformLM

log = logging.getLogger(__name__)


class NoFinishedHypothesis(StreamDecError):
    pass


class Decoder(Protocol):
    """What the search needs from an attention decoder."""

    vocab: Vocab

    def initial_state(self) -> Any: ...

    def step(self, context, state, prev_label: int):
        """Returns ``(next_state, log_distribution)`` over the vocabulary."""
        ...

    def attention_params(self) -> dict:
        """``{"params": ..., "chunk_params": ..., "loaa_params": ...}``."""
        ...


def combine_score(s_tctc: float, s_att: float, s_lm: float, mu: float, beta: float) -> float:
    """``mu * s_tctc + (1 - mu) * s_att + beta * s_lm``.

    Terms with a zero weight are skipped so an impossible score under a
    branch that is switched off does not turn the sum into NaN.
    """
    total = 0.0
    if mu != 0.0:
        total += mu * s_tctc
    if mu != 1.0:
        total += (1.0 - mu) * s_att
    if beta != 0.0:
        total += beta * s_lm
    return total


def accumulate_att_score(parent_s_att: float, logp: float) -> float:
    return parent_s_att + logp


def end_detect(finished: Sequence[Hypothesis], n: int, M: int, D_end: float) -> bool:
    """True when the best complete hypothesis of length ``n`` trails the best of
    each of the ``M`` shorter lengths by more than ``-D_end``.

    Lengths count output labels. A missing length makes the test fail.
    """
    best: Dict[int, float] = {}
    for h in finished:
        k = h.n_labels
        if k not in best or h.s_combined > best[k]:
            best[k] = h.s_combined
    if n not in best:
        return False
    for m in range(1, M + 1):
        if n - m not in best or not best[n] - best[n - m] < D_end:
            return False
    return True


def recombine(h: Hypothesis, cfg: DecodeConfig) -> float:
    return combine_score(h.s_tctc, h.s_att, h.s_lm, cfg.mu, cfg.beta)


def finalize_hypotheses(finished: Sequence[Hypothesis], lat: PosteriorLattice, cfg: DecodeConfig,
                        vocab: Vocab) -> List[Hypothesis]:
    """Swap each truncated CTC score for the full-utterance score and re-rank."""
    out = []
    for h in finished:
        s_ctc = ctc_prefix_score(h.seq[1:], lat, blank=vocab.blank_id, eos=vocab.eos_id)
        h2 = replace(h, s_tctc=s_ctc)
        h2.s_combined = recombine(h2, cfg)
        out.append(h2)
    out.sort(key=Hypothesis.sort_key)
    return out


@dataclass
class _Expansion:
    """Partial work on one hypothesis within a round, kept across retries."""

    scans: Any = None
    att: Any = None
    dec: Any = None
    cands: Optional[List[int]] = None
    ctc: Dict[int, tuple] = field(default_factory=dict)
    children: Optional[List[Hypothesis]] = None


@dataclass
class RoundRecord:
    length: int
    n_candidates: int
    candidate_scores: List[float]
    kept_scores: List[float]


class DecodeSession:
    """One utterance's beam search, driven by the caller as frames arrive.

    Call :meth:`advance` after delivering frames; it returns True once the
    search has stopped. :meth:`results` then gives the re-ranked finished
    hypotheses (it needs the lattice to be closed).
    """

    def __init__(self, stream: RepresentationStream, lattice: PosteriorLattice, model: Decoder,
                 cfg: Optional[DecodeConfig] = None, lm: Optional[LmScorer] = None,
                 vocab: Optional[Vocab] = None, keep_log: bool = False, on_round=None):
        self.cfg = cfg or DecodeConfig()
        self.vocab = vocab or model.vocab
        self.model = model
        self.lm = lm or UniformLM(self.vocab)
        self.stream = stream
        self.lattice = lattice
        prm = model.attention_params()
        self.attention = Attention(self.cfg.attention, prm["params"], stream,
                                   prm.get("chunk_params"), prm.get("loaa_params"))
        self.scorer = CtcPrefixScorer(lattice, self.vocab.blank_id, self.vocab.eos_id, self.cfg.theta)
        root = Hypothesis(seq=(self.vocab.sos_id,), ctc_table=self.scorer.root,
                          decoder_state=model.initial_state())
        self.active: List[Hypothesis] = [root]
        self.finished: List[Hypothesis] = []
        self.rounds = 0
        self.done = False
        self.waiting_on: Optional[int] = None
        self.suspensions = 0
        self.keep_log = keep_log
        self.log: List[RoundRecord] = []
        self.on_round = on_round
        self._work: Dict[int, _Expansion] = {}

    @property
    def pre_beam(self) -> int:
        cfg = self.cfg
        return cfg.pre_beam or int(math.ceil(1.5 * cfg.beam_size))

    def advance(self) -> bool:
        """Run rounds until the search ends or needs a frame that has not arrived."""
        while not self.done:
            if not self._round():
                return False
        return True

    def _candidates(self, hyp: Hypothesis, logp: np.ndarray) -> List[int]:
        V = self.vocab
        n = hyp.n_labels
        if n >= self.cfg.max_output_len:
            return [V.eos_id] if logp[V.eos_id] > -math.inf else []
        banned = {V.blank_id, V.sos_id}
        if n < self.cfg.min_output_len:
            banned.add(V.eos_id)
        ids = [y for y in range(len(logp)) if y not in banned and logp[y] > -math.inf]
        ids.sort(key=lambda y: (-logp[y], y))
        return ids[: self.pre_beam]

    def _expand(self, hyp: Hypothesis, work: _Expansion) -> None:
        if work.att is None:
            if work.scans is None:
                work.scans = self.attention.new_scans(hyp.decoder_state)
            work.att = self.attention.step(hyp.t_att, hyp.decoder_state, hyp.att_state, work.scans)
        res, att_state = work.att
        if work.dec is None:
            work.dec = self.model.step(res.context, hyp.decoder_state, hyp.seq[-1])
            work.cands = self._candidates(hyp, work.dec[1])
        q, logp = work.dec
        for y in work.cands:
            if y not in work.ctc:
                work.ctc[y] = self.scorer.score(hyp.ctc_table, y, hyp.t_ctc)
        cfg = self.cfg
        t_att = hyp.t_att if res.endpoint is None else res.endpoint
        children = []
        for y in work.cands:
            s_ctc, t_ctc, table = work.ctc[y]
            s_att = accumulate_att_score(hyp.s_att, float(logp[y]))
            s_lm = hyp.s_lm + self.lm.score_next(hyp.seq, y)
            children.append(Hypothesis(
                seq=hyp.seq + (y,),
                s_att=s_att,
                s_tctc=s_ctc,
                s_lm=s_lm,
                s_combined=combine_score(s_ctc, s_att, s_lm, cfg.mu, cfg.beta),
                t_att=t_att,
                t_ctc=t_ctc,
                ctc_table=table,
                decoder_state=q,
                att_state=att_state,
                att_endpoints=hyp.att_endpoints + (res.endpoint,),
                ctc_endpoints=hyp.ctc_endpoints + (t_ctc,),
                complete=y == self.vocab.eos_id,
            ))
        work.children = children

    def _round(self) -> bool:
        blocked: Optional[FrameUnavailable] = None
        for idx, hyp in enumerate(self.active):
            work = self._work.setdefault(idx, _Expansion())
            if work.children is not None:
                continue
            try:
                self._expand(hyp, work)
            except FrameUnavailable as exc:
                if blocked is None or exc.frame < blocked.frame:
                    blocked = exc
        if blocked is not None:
            self.waiting_on = blocked.frame
            self.suspensions += 1
            return False
        self.waiting_on = None
        cands = [c for idx in range(len(self.active)) for c in self._work[idx].children]
        cands.sort(key=Hypothesis.sort_key)
        kept = cands[: self.cfg.beam_size]
        if self.keep_log:
            self.log.append(RoundRecord(self.rounds + 1, len(cands), [c.s_combined for c in cands],
                                        [c.s_combined for c in kept]))
        self._work = {}
        self.rounds += 1
        ended = [h for h in kept if h.complete]
        self.finished.extend(ended)
        self.active = [h for h in kept if not h.complete]
        if self.on_round is not None:
            self.on_round(self)
        if not self.active:
            self.done = True
        elif ended and end_detect(self.finished, self.rounds - 1, self.cfg.end_M, self.cfg.end_D):
            log.debug("end detected after %d rounds", self.rounds)
            self.done = True
        return True

    def results(self) -> List[Hypothesis]:
        if not self.done:
            raise RuntimeError("search has not finished")
        if not self.finished:
            raise NoFinishedHypothesis("no hypothesis reached <eos>")
        if not self.lattice.closed:
            raise FrameUnavailable(self.lattice.t_enc)
        return finalize_hypotheses(self.finished, self.lattice, self.cfg, self.vocab)


def dwjd_decode(stream: RepresentationStream, lat: PosteriorLattice, model: Decoder,
                lm: Optional[LmScorer] = None, cfg: Optional[DecodeConfig] = None,
                vocab: Optional[Vocab] = None, timeout: Optional[float] = None) -> List[Hypothesis]:
    """Decode one utterance, blocking while the producer is behind.

    Another thread may be appending to ``stream`` and ``lat``; this call
    returns once the search has ended and the producer has closed the
    lattice.
    """
    session = DecodeSession(stream, lat, model, cfg, lm, vocab)
    while not session.advance():
        need = session.waiting_on + 1
        if not (stream.wait_for(need, timeout) and lat.wait_for(need, timeout)):
            raise TimeoutError(f"no frame {session.waiting_on} after {timeout} s")
    if not lat.closed and not lat.wait_for(sys.maxsize, timeout):
        raise TimeoutError("lattice was never closed")
    return session.results()


# ---------------------------------------------------------------------------
# output and an exhaustive reference search
# ---------------------------------------------------------------------------


def format_hypotheses(hyps: Sequence[Hypothesis], vocab: Vocab) -> List[str]:
    lines = []
    for rank, h in enumerate(hyps, start=1):
        labels = " ".join(vocab.labels[y] for y in h.seq if y not in (vocab.sos_id, vocab.eos_id))
        lines.append(f"{rank}\t{h.s_combined!r}\t{h.s_att!r}\t{h.s_tctc!r}\t{h.s_lm!r}\t{labels}")
    return lines


def write_hypotheses(path, hyps: Sequence[Hypothesis], vocab: Vocab, header_lines=()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# rank\tcombined\ts_att\ts_ctc\ts_lm\tlabels\n")
        for line in format_hypotheses(hyps, vocab):
            fh.write(line + "\n")


def score_sequence(labels: Sequence[int], stream: RepresentationStream, lat: PosteriorLattice, model: Decoder,
                   cfg: DecodeConfig, lm: Optional[LmScorer] = None, vocab: Optional[Vocab] = None) -> Hypothesis:
    """Score one complete label sequence by replaying the decoder along it.

    The CTC term is the full-utterance score, as after finalisation.
    """
    vocab = vocab or model.vocab
    lm = lm or UniformLM(vocab)
    prm = model.attention_params()
    att = Attention(cfg.attention, prm["params"], stream, prm.get("chunk_params"), prm.get("loaa_params"))
    seq = (vocab.sos_id,)
    q = model.initial_state()
    t_att, att_state = 0, None
    s_att = s_lm = 0.0
    for y in list(labels) + [vocab.eos_id]:
        res, att_state = att.step(t_att, q, att_state, att.new_scans(q))
        q, logp = model.step(res.context, q, seq[-1])
        s_att += float(logp[y])
        s_lm += lm.score_next(seq, y)
        if res.endpoint is not None:
            t_att = res.endpoint
        seq = seq + (y,)
    s_ctc = ctc_prefix_score(seq[1:], lat, blank=vocab.blank_id, eos=vocab.eos_id)
    return Hypothesis(seq=seq, s_att=s_att, s_tctc=s_ctc, s_lm=s_lm,
                      s_combined=combine_score(s_ctc, s_att, s_lm, cfg.mu, cfg.beta), complete=True)


def exhaustive_search(stream: RepresentationStream, lat: PosteriorLattice, model: Decoder, cfg: DecodeConfig,
                      max_len: int, lm: Optional[LmScorer] = None, vocab: Optional[Vocab] = None) -> List[Hypothesis]:
    """Score every label sequence of length ``cfg.min_output_len..max_len``, best first."""
    vocab = vocab or model.vocab
    out = []
    for n in range(cfg.min_output_len, max_len + 1):
        for labels in itertools.product(vocab.real_ids, repeat=n):
            out.append(score_sequence(labels, stream, lat, model, cfg, lm, vocab))
    out.sort(key=Hypothesis.sort_key)
    return out
