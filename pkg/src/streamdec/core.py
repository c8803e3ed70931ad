"""Shared types: vocabulary, growable frame streams, hypotheses, configuration.

Frame indices are 0-based everywhere in the Python API. Files and CSV dumps
written by the CLI use 1-based frame numbers.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

BLANK_TOKEN = "<blank>"
SOS_TOKEN = "<sos>"
EOS_TOKEN = "<eos>"

NEG_INF = float("-inf")


class StreamDecError(Exception):
    """Base class for every error raised by this package."""


class NonStochasticFrame(StreamDecError):
    def __init__(self, frame: int, detail: str = ""):
        self.frame = frame
        super().__init__(f"frame {frame} is not a probability vector{': ' + detail if detail else ''}")


class StreamClosed(StreamDecError):
    pass


class DimMismatch(StreamDecError):
    pass


class FrameUnavailable(StreamDecError):
    """Frame ``frame`` has not been produced yet and the stream is still open."""

    def __init__(self, frame: int):
        self.frame = frame
        super().__init__(f"frame {frame} not yet available")


class EmptyLattice(StreamDecError):
    pass


class EmptyStream(StreamDecError):
    pass


class UnknownLabel(StreamDecError):
    pass


class InputFormatError(StreamDecError):
    pass


# ---------------------------------------------------------------------------
# vocabulary and label sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    labels: tuple
    blank_id: int
    sos_id: int
    eos_id: int

    def __post_init__(self):
        ids = {self.blank_id, self.sos_id, self.eos_id}
        if len(ids) != 3:
            raise ValueError("blank, sos and eos must be distinct")
        if not all(0 <= i < len(self.labels) for i in ids):
            raise ValueError("reserved ids must index into the label list")

    @classmethod
    def build(cls, symbols: Sequence[str]) -> "Vocab":
        """Vocabulary ``<blank> <sos> <eos>`` followed by ``symbols``."""
        labels = (BLANK_TOKEN, SOS_TOKEN, EOS_TOKEN) + tuple(symbols)
        return cls(labels, 0, 1, 2)

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "Vocab":
        labels = tuple(line.strip() for line in lines if line.strip())
        try:
            return cls(labels, labels.index(BLANK_TOKEN), labels.index(SOS_TOKEN), labels.index(EOS_TOKEN))
        except ValueError as exc:
            raise InputFormatError(f"vocab is missing a reserved token: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "Vocab":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def real_ids(self) -> list:
        """Identifiers of ordinary output labels (no blank/sos/eos)."""
        special = {self.blank_id, self.sos_id, self.eos_id}
        return [i for i in range(len(self.labels)) if i not in special]

    def index(self, token: str) -> int:
        try:
            return self.labels.index(token)
        except ValueError:
            raise UnknownLabel(token) from None

    def encode(self, tokens: Sequence[str]) -> list:
        return [self.index(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list:
        return [self.labels[i] for i in ids]


def check_sequence(seq: Sequence[int], vocab: Vocab) -> None:
    """Raise ``ValueError`` unless ``seq`` is a well-formed label sequence."""
    if not seq or seq[0] != vocab.sos_id:
        raise ValueError("label sequence must start with <sos>")
    for k, y in enumerate(seq):
        if not 0 <= y < len(vocab):
            raise UnknownLabel(str(y))
        if y == vocab.blank_id:
            raise ValueError("blank inside a label sequence")
        if y == vocab.eos_id and k != len(seq) - 1:
            raise ValueError("<eos> may only be the final element")
        if y == vocab.sos_id and k != 0:
            raise ValueError("<sos> may only be the first element")


def strip_specials(seq: Sequence[int], vocab: Vocab) -> list:
    return [y for y in seq if y not in (vocab.sos_id, vocab.eos_id)]


# ---------------------------------------------------------------------------
# growable frame buffers
# ---------------------------------------------------------------------------


class FrameBuffer:
    """Append-only row store shared by one producer and one consumer.

    ``t_enc`` only grows. After :meth:`close`, ``T_max`` is fixed and appends
    raise :class:`StreamClosed`. Readers either block with :meth:`wait_for`
    or probe with :meth:`require`, which raises :class:`FrameUnavailable`
    instead of reading out of bounds.
    """

    def __init__(self, width: int, capacity: int = 64):
        self.width = int(width)
        self._data = np.zeros((max(capacity, 1), self.width))
        self._n = 0
        self._T_max: Optional[int] = None
        self._cond = threading.Condition()

    @property
    def t_enc(self) -> int:
        return self._n

    @property
    def T_max(self) -> Optional[int]:
        return self._T_max

    @property
    def closed(self) -> bool:
        return self._T_max is not None

    @property
    def data(self) -> np.ndarray:
        """Backing array; rows ``[0, t_enc)`` are valid. Do not write to it."""
        return self._data

    def rows(self) -> np.ndarray:
        return self._data[: self._n]

    def _check_row(self, row: np.ndarray) -> np.ndarray:
        row = np.asarray(row, dtype=float)
        if row.ndim != 1 or row.shape[0] != self.width:
            raise DimMismatch(f"expected a vector of length {self.width}, got shape {row.shape}")
        return row

    def append(self, row) -> int:
        row = self._check_row(row)
        with self._cond:
            if self._T_max is not None:
                raise StreamClosed("append after end-of-input")
            if self._n == self._data.shape[0]:
                grown = np.zeros((2 * self._data.shape[0], self.width))
                grown[: self._n] = self._data[: self._n]
                self._data = grown
            self._data[self._n] = row
            self._n += 1
            self._cond.notify_all()
            return self._n

    def extend(self, rows) -> int:
        for row in np.atleast_2d(np.asarray(rows, dtype=float)) if len(rows) else ():
            self.append(row)
        return self._n

    def close(self) -> None:
        with self._cond:
            if self._T_max is None:
                self._T_max = self._n
            self._cond.notify_all()

    def require(self, j: int) -> bool:
        """True if frame ``j`` is readable, False if the stream ended before it."""
        if j < self._n:
            return True
        if self._T_max is not None:
            return False
        raise FrameUnavailable(j)

    def wait_for(self, n: int, timeout: Optional[float] = None) -> bool:
        """Block until ``n`` frames exist or the stream is closed."""
        with self._cond:
            return self._cond.wait_for(lambda: self._n >= n or self._T_max is not None, timeout)

    def __len__(self) -> int:
        return self._n


class RepresentationStream(FrameBuffer):
    """Encoder outputs ``h_j`` arriving one at a time."""

    def __init__(self, dim: int, capacity: int = 64):
        super().__init__(dim, capacity)

    @property
    def dim(self) -> int:
        return self.width

    @classmethod
    def from_array(cls, frames, closed: bool = True) -> "RepresentationStream":
        frames = np.atleast_2d(np.asarray(frames, dtype=float))
        s = cls(frames.shape[1], capacity=max(len(frames), 1))
        for row in frames:
            s.append(row)
        if closed:
            s.close()
        return s

    def h(self, j: int) -> np.ndarray:
        if not self.require(j):
            raise IndexError(f"frame {j} is past the end of the stream (T_max={self.T_max})")
        return self._data[j]


class PosteriorLattice(FrameBuffer):
    """Per-frame CTC label distributions, blank included, in linear space."""

    def __init__(self, vocab_size: int, capacity: int = 64):
        super().__init__(vocab_size, capacity)

    @property
    def vocab_size(self) -> int:
        return self.width

    @classmethod
    def from_array(cls, probs, closed: bool = True) -> "PosteriorLattice":
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 1:
            probs = probs[None, :]
        lat = cls(probs.shape[1], capacity=max(len(probs), 1))
        for row in probs:
            lat.append(row)
        if closed:
            lat.close()
        return lat

    @property
    def probs(self) -> np.ndarray:
        return self.rows()


def validate_lattice(lat: PosteriorLattice, atol: float = 1e-9) -> None:
    """Raise :class:`NonStochasticFrame` on the first frame that is not a distribution."""
    for j, row in enumerate(lat.rows()):
        if row.shape[0] != lat.vocab_size:
            raise NonStochasticFrame(j, "wrong width")
        if np.any(row < 0) or not np.all(np.isfinite(row)):
            raise NonStochasticFrame(j, "negative or non-finite entry")
        if abs(math.fsum(row) - 1.0) > atol:
            raise NonStochasticFrame(j, f"sums to {math.fsum(row):.12g}")


def append_frame(stream: RepresentationStream, h) -> RepresentationStream:
    stream.append(h)
    return stream


# ---------------------------------------------------------------------------
# configuration and hypotheses
# ---------------------------------------------------------------------------

MECHANISMS = ("loaa", "hma", "mocha", "smocha", "mta")
STREAMING_MECHANISMS = ("hma", "mocha", "smocha", "mta")


@dataclass
class AttentionConfig:
    mechanism: str = "mta"
    chunk_width: int = 4
    chunk_order: float = 1  # math.inf for "all history"
    r_init: float = -4.0

    def __post_init__(self):
        self.mechanism = self.mechanism.lower()
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown attention mechanism {self.mechanism!r}")
        if self.chunk_width < 1:
            raise ValueError("chunk_width must be >= 1")
        if not (self.chunk_order >= 1):
            raise ValueError("chunk_order must be >= 1 or inf")


@dataclass
class DecodeConfig:
    mu: float = 0.5
    beta: float = 0.0
    beam_size: int = 20
    theta: float = 1e-8
    end_M: int = 3
    end_D: float = -10.0
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    max_output_len: int = 100
    pre_beam: Optional[int] = None
    min_output_len: int = 1

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.max_output_len < 0:
            raise ValueError("max_output_len must be >= 0")
        if not 0 <= self.min_output_len <= self.max_output_len:
            raise ValueError("min_output_len must lie in [0, max_output_len]")
        if self.pre_beam is not None and self.pre_beam < 1:
            raise ValueError("pre_beam must be >= 1")

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "beta": self.beta,
            "beam": self.beam_size,
            "theta": self.theta,
            "end_M": self.end_M,
            "end_D": self.end_D,
            "attention": self.attention.mechanism,
            "chunk_width": self.attention.chunk_width,
            "chunk_order": self.attention.chunk_order,
            "max_output_len": self.max_output_len,
            "min_output_len": self.min_output_len,
        }


@dataclass
class Hypothesis:
    """One prefix in the beam.

    ``t_att`` / ``t_ctc`` are 0-based end-points. ``att_endpoints`` keeps the
    end-point chosen at each output step (``None`` when the scan ran off the
    end of the stream).
    """

    seq: tuple
    s_att: float = 0.0
    s_tctc: float = 0.0
    s_lm: float = 0.0
    s_combined: float = 0.0
    t_att: int = 0
    t_ctc: int = 0
    ctc_table: Any = None
    decoder_state: Any = None
    att_state: Any = None
    att_endpoints: tuple = ()
    ctc_endpoints: tuple = ()
    complete: bool = False

    @property
    def n_labels(self) -> int:
        """Number of output labels, excluding <sos> and <eos>."""
        return len(self.seq) - 1 - int(self.complete)

    def sort_key(self):
        # higher score first, then shorter, then lexicographic ids
        return (-self.s_combined, len(self.seq), self.seq)


# ---------------------------------------------------------------------------
# text file formats
# ---------------------------------------------------------------------------


def _read_matrix(path, first_key: str) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InputFormatError(f"{path}: empty file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        width, n = int(header[first_key]), int(header["frames"])
    except (KeyError, ValueError):
        raise InputFormatError(f"{path}: header must be '{first_key}=<N> frames=<T>'") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise InputFormatError(f"{path}: header promises {n} frames, found {len(body)}")
    out = np.zeros((n, width))
    for j, ln in enumerate(body):
        try:
            vals = [float(v) for v in ln.split()]
        except ValueError:
            raise InputFormatError(f"{path}: line {j + 2} is not numeric") from None
        if len(vals) != width:
            raise InputFormatError(f"{path}: line {j + 2} has {len(vals)} values, expected {width}")
        out[j] = vals
    return out


def _write_matrix(path, arr: np.ndarray, first_key: str) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{first_key}={arr.shape[1]} frames={arr.shape[0]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_stream_file(path) -> np.ndarray:
    return _read_matrix(path, "dim")


def write_stream_file(path, frames) -> None:
    _write_matrix(path, frames, "dim")


def read_lattice_file(path) -> np.ndarray:
    return _read_matrix(path, "vocab")


def write_lattice_file(path, probs) -> None:
    _write_matrix(path, probs, "vocab")
