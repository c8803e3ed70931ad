"""Streaming simulator and a deterministic toy acoustic model.

The toy model is not trained. Its parameters are laid out by hand so that
the pipeline behaves like a well-trained streaming recogniser: each label
shows up as a single spiky encoder frame, the CTC head is peaky, the
monotonic attention fires on the first unconsumed spike, and the decoder
reads the attended label back out of the context vector. Pseudo-random
parts (prototype rotation, decoder weights, extra attention units) come
from ``seed`` so different seeds give different but reproducible models.

Chunking follows the latency-controlled contract: a hop emits ``n_c``
frames once ``n_r`` further raw frames have arrived. Each output frame is
computed from the unbounded past and at most ``n_r`` future raw frames, so
its value does not depend on how the input was split into chunks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .attention import EnergyParams
from .core import DimMismatch, PosteriorLattice, RepresentationStream, StreamDecError, Vocab

CLOCK_STEP = 1.0 / 64  # exact in binary, so clock differences are exact
DEFAULT_BATCH_FRAMES = 10


class EmptyInput(StreamDecError):
    pass


@dataclass
class StreamingConfig:
    n_c: int = 16
    n_r: int = 16
    frame_period_ms: float = 10.0
    batch_frames: int = DEFAULT_BATCH_FRAMES
    decimate: bool = False

    def __post_init__(self):
        if self.n_c < 1:
            raise ValueError("n_c must be >= 1")
        if self.n_r < 0:
            raise ValueError("n_r must be >= 0")
        if self.frame_period_ms < 0:
            raise ValueError("frame_period_ms must be >= 0")
        if self.batch_frames < 1:
            raise ValueError("batch_frames must be >= 1")


def _softmax_log(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    return z - (m + math.log(float(np.sum(np.exp(z - m)))))


@dataclass
class ToyModel:
    """Hand-structured encoder, CTC head, decoder and attention energies."""

    vocab: Vocab
    seed: int = 0
    n_noise: int = 3
    hidden: int = 8
    amp: float = 1.0
    noise: float = 0.03
    temperature: float = 0.25
    ctc_gain: float = 5.75
    history_weight: float = 0.05
    history_decay: float = 0.6
    lookahead_weight: float = 0.05
    lookahead_decay: float = 0.3
    dec_gain: float = 6.0
    eos_bias: float = 3.0
    eos_gain: float = 10.0
    att_offset: float = -16.0
    att_peak: float = 8.0
    n_extra_units: int = 2
    params_: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.label_ids = list(self.vocab.real_ids)
        self.n_labels = len(self.label_ids)
        if self.n_labels < 1:
            raise ValueError("the vocabulary needs at least one ordinary label")
        self._coord = {y: c for c, y in enumerate(self.label_ids)}
        d = self.input_dim
        # rows of a random orthogonal matrix serve as label prototypes
        R, _ = np.linalg.qr(rng.normal(size=(d, d)))
        self.R = R.T
        H = self.hidden
        self.A = rng.normal(0, 0.3 / math.sqrt(H), (H, H))
        self.B = rng.normal(0, 0.3 / math.sqrt(self.rep_dim), (H, self.rep_dim))
        self.E = rng.normal(0, 0.3, (self.vocab.size, H))
        self.O = rng.normal(0, 0.3 / math.sqrt(H), (self.vocab.size, H))
        self._extra_W1 = rng.normal(0, 0.3, (self.n_extra_units, self.state_dim))
        self._extra_W2 = rng.normal(0, 0.3, (self.n_extra_units, self.rep_dim))
        self._extra_v = rng.normal(0, 0.05, self.n_extra_units)

    # -- dimensions -------------------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.n_labels + self.n_noise

    @property
    def rep_dim(self) -> int:
        return self.input_dim + 2  # label/noise coordinates, clock, constant one

    @property
    def state_dim(self) -> int:
        return self.hidden + 1  # hidden units, clock of the last context

    @property
    def clock_index(self) -> int:
        return self.input_dim

    @property
    def one_index(self) -> int:
        return self.input_dim + 1

    # -- synthetic data ---------------------------------------------------

    def synth_utterance(self, n_labels: int, rng=None, min_gap: int = 1, max_gap: int = 4):
        """Raw frames for a random label sequence; returns ``(raw, labels)``.

        Every label is one spike frame preceded by ``min_gap..max_gap`` quiet
        frames; the same label never appears twice in a row.
        """
        rng = np.random.default_rng(rng)
        labels = []
        for _ in range(n_labels):
            choices = [y for y in self.label_ids if not labels or y != labels[-1]] or self.label_ids
            labels.append(int(choices[rng.integers(len(choices))]))
        frames = []
        for y in labels:
            for _ in range(int(rng.integers(min_gap, max_gap + 1))):
                frames.append(self.noise * rng.normal(size=self.input_dim))
            frames.append(self.amp * self.R[self._coord[y]] + self.noise * rng.normal(size=self.input_dim))
        for _ in range(int(rng.integers(min_gap, max_gap + 1))):
            frames.append(self.noise * rng.normal(size=self.input_dim))
        return np.array(frames), labels

    # -- encoder pieces ---------------------------------------------------

    def forward_update(self, f: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.history_decay * f + (1.0 - self.history_decay) * x

    def represent(self, x: np.ndarray, f: np.ndarray, future: Sequence[np.ndarray], j: int) -> np.ndarray:
        """Representation of output frame ``j`` from its raw frame, history state and lookahead."""
        u = x + self.history_weight * f
        w = self.lookahead_weight
        for fx in future:
            w *= self.lookahead_decay
            u = u + w * fx
        h = np.empty(self.rep_dim)
        h[: self.input_dim] = self.R @ u
        h[self.clock_index] = j * CLOCK_STEP
        h[self.one_index] = 1.0
        return h

    def ctc_posterior(self, h: np.ndarray) -> np.ndarray:
        V = self.vocab
        z = np.full(V.size, -np.inf)
        z[self.label_ids] = self.ctc_gain * h[: self.n_labels] / self.amp
        z[V.blank_id] = 0.5 * self.ctc_gain
        z = z / self.temperature
        p = np.exp(z - np.max(z))
        return p / p.sum()

    # -- decoder ----------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.state_dim)

    def step(self, context, state, prev_label: int):
        """Decoder update; returns ``(next_state, log_distribution)``."""
        r = np.asarray(context, float)
        q = np.asarray(state, float)
        if r.shape != (self.rep_dim,) or q.shape != (self.state_dim,):
            raise DimMismatch(f"context {r.shape} / state {q.shape} do not match the model")
        V = self.vocab
        hid = np.tanh(self.A @ q[: self.hidden] + self.B @ r + self.E[prev_label])
        mass = r[self.one_index]
        nq = np.empty(self.state_dim)
        nq[: self.hidden] = hid
        # weighted mean frame position of the context
        nq[self.hidden] = r[self.clock_index] / mass if mass > 1e-12 else 0.0
        z = self.O @ hid
        lab = r[: self.n_labels] / self.amp
        z[self.label_ids] += self.dec_gain * lab
        z[V.eos_id] += self.eos_bias - self.eos_gain * float(lab.sum())
        z[V.blank_id] = -np.inf
        z[V.sos_id] = -np.inf
        return nq, _softmax_log(z)

    # -- attention energies -----------------------------------------------

    def attention_params(self) -> dict:
        """Energy parameters for the monotonic scan, the chunk softmax and location-aware attention.

        Unit 0 detects a spike frame, unit 1 detects frames after the
        previously attended position; the energy is high only when both fire.
        """
        if self.params_:
            return self.params_
        n_u = 2 + self.n_extra_units
        a_s = 10.0 / self.amp
        a_p = 8.0 / CLOCK_STEP
        W1 = np.zeros((n_u, self.state_dim))
        W2 = np.zeros((n_u, self.rep_dim))
        b = np.zeros(n_u)
        W2[0, : self.n_labels] = a_s
        b[0] = -0.5 * a_s * self.amp
        W2[1, self.clock_index] = a_p
        W1[1, self.hidden] = -a_p
        b[1] = -0.5 * a_p * CLOCK_STEP
        W1[2:] = self._extra_W1
        W2[2:] = self._extra_W2
        v = np.concatenate(([1.0, 1.0], self._extra_v))
        vhat = v / np.linalg.norm(v)
        g = (self.att_peak - self.att_offset) / (vhat[0] + vhat[1])
        main = EnergyParams(W1=W1, W2=W2, b=b, v=v, g=g, r=self.att_offset)
        # the chunk softmax peaks on the same frame the scan stops at
        chunk = EnergyParams(W1=W1.copy(), W2=W2.copy(), b=b.copy(), v=v.copy(), g=20.0, r=0.0)
        loaa = EnergyParams(W1=W1.copy(), W2=W2.copy(), b=b.copy(), v=np.concatenate(([8.0, 8.0], self._extra_v)),
                            normalize=False, Q=np.array([[0.0, 0.0, 1.0]]), W3=np.zeros((n_u, 1)))
        self.params_ = {"params": main, "chunk_params": chunk, "loaa_params": loaa}
        return self.params_


def toy_decoder_step(context, state, prev_label: int, model: ToyModel):
    return model.step(context, state, prev_label)


# ---------------------------------------------------------------------------
# latency-controlled chunked encoding
# ---------------------------------------------------------------------------


@dataclass
class Hop:
    first: int  # first raw frame of the chunk
    stop: int  # one past the last raw frame of the chunk
    lookahead: range  # raw frames read beyond the chunk
    emitted: int  # output frames appended by this hop


class ChunkedEncoder:
    """Producer that turns raw frames into stream and lattice rows hop by hop."""

    def __init__(self, model: ToyModel, cfg: StreamingConfig,
                 stream: Optional[RepresentationStream] = None, lattice: Optional[PosteriorLattice] = None):
        self.model = model
        self.cfg = cfg
        self.stream = stream if stream is not None else RepresentationStream(model.rep_dim)
        self.lattice = lattice if lattice is not None else PosteriorLattice(model.vocab.size)
        self.raw: List[np.ndarray] = []
        self.hops: List[Hop] = []
        self._f = np.zeros(model.input_dim)
        self._next = 0  # first raw frame not yet encoded
        self._pool: List[np.ndarray] = []
        self._finished = False

    def push(self, x) -> int:
        """Add one raw frame; returns how many output frames became available."""
        if self._finished:
            raise EmptyInput("encoder already finished")
        x = np.asarray(x, float)
        if x.shape != (self.model.input_dim,):
            raise DimMismatch(f"raw frame must have length {self.model.input_dim}")
        self.raw.append(x)
        before = self.stream.t_enc
        while self._next + self.cfg.n_c + self.cfg.n_r <= len(self.raw):
            self._hop(self._next + self.cfg.n_c)
        return self.stream.t_enc - before

    def push_many(self, frames) -> int:
        return sum(self.push(x) for x in frames)

    def finish(self) -> int:
        """Flush the remaining (possibly partial) chunks and close the outputs."""
        if self._finished:
            return 0
        if not self.raw:
            raise EmptyInput("no raw frames")
        self._finished = True
        before = self.stream.t_enc
        while self._next < len(self.raw):
            self._hop(min(self._next + self.cfg.n_c, len(self.raw)))
        if self._pool:
            self._emit(np.mean(self._pool, axis=0))
        self.stream.close()
        self.lattice.close()
        return self.stream.t_enc - before

    def _hop(self, stop: int) -> None:
        first = self._next
        T = len(self.raw)
        n_r = self.cfg.n_r
        before = self.stream.t_enc
        for j in range(first, stop):
            x = self.raw[j]
            self._f = self.model.forward_update(self._f, x)
            future = self.raw[j + 1:min(j + 1 + n_r, T)]
            if self.cfg.decimate:
                self._pool.append(self.model.represent(x, self._f, future, self.stream.t_enc))
                if len(self._pool) == 4:
                    self._emit(np.mean(self._pool, axis=0))
                    self._pool = []
            else:
                self._emit(self.model.represent(x, self._f, future, j))
        self._next = stop
        self.hops.append(Hop(first, stop, range(stop, min(stop + n_r, T)), self.stream.t_enc - before))

    def _emit(self, h: np.ndarray) -> None:
        h = h.copy()
        h[self.model.clock_index] = self.stream.t_enc * CLOCK_STEP
        h[self.model.one_index] = 1.0
        self.stream.append(h)
        self.lattice.append(self.model.ctc_posterior(h))


@dataclass
class EncodeResult:
    stream: RepresentationStream
    lattice: PosteriorLattice
    hops: List[Hop]


def chunked_encode(raw, cfg: StreamingConfig, model: ToyModel) -> EncodeResult:
    """Encode a whole utterance hop by hop and return the closed stream and lattice."""
    raw = np.atleast_2d(np.asarray(raw, float)) if len(raw) else np.zeros((0, model.input_dim))
    if raw.shape[0] == 0:
        raise EmptyInput("no raw frames")
    enc = ChunkedEncoder(model, cfg)
    enc.push_many(raw)
    enc.finish()
    return EncodeResult(enc.stream, enc.lattice, enc.hops)


# ---------------------------------------------------------------------------
# arrival schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrivalBatch:
    time_s: float
    start: int
    stop: int


def simulate_arrival(n_frames: int, cfg: StreamingConfig) -> List[ArrivalBatch]:
    """Batches of ``cfg.batch_frames`` raw frames, each delivered once its audio has been captured.

    A zero frame period delivers everything at time 0.
    """
    if hasattr(n_frames, "__len__"):
        n_frames = len(n_frames)
    if n_frames <= 0:
        return []
    if cfg.frame_period_ms == 0:
        return [ArrivalBatch(0.0, 0, n_frames)]
    size = cfg.batch_frames
    step_s = size * cfg.frame_period_ms / 1000.0
    return [
        ArrivalBatch((b + 1) * step_s, start, min(start + size, n_frames))
        for b, start in enumerate(range(0, n_frames, size))
    ]


def audio_seconds(n_frames: int, cfg: StreamingConfig, nominal_period_ms: float = 10.0) -> float:
    """Duration of ``n_frames`` raw frames; offline runs (period 0) use the nominal period."""
    period = cfg.frame_period_ms or nominal_period_ms
    return n_frames * period / 1000.0
