"""CTC prefix scores: full, truncated (streaming), and a brute-force oracle.

Prefixes are tuples of label ids *without* the leading ``<sos>``. A prefix
ending in ``eos`` asks for the probability that the labelling is exactly the
rest of the prefix.
"""

from __future__ import annotations

import itertools
import math
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels as K
from .core import (
    NEG_INF,
    EmptyLattice,
    FrameUnavailable,
    PosteriorLattice,
    StreamDecError,
    UnknownLabel,
)

DEFAULT_THETA = 1e-8


class TooLarge(StreamDecError):
    pass


def safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else NEG_INF


def _as_lattice(lat) -> PosteriorLattice:
    if isinstance(lat, PosteriorLattice):
        return lat
    return PosteriorLattice.from_array(np.asarray(lat, dtype=float))


def _check_labels(labels: Sequence[int], vocab_size: int, blank: int) -> None:
    for y in labels:
        if not 0 <= y < vocab_size or y == blank:
            raise UnknownLabel(f"label {y} is not a CTC output label")


class CtcForwardTable:
    """Forward rows for one prefix, shared by every hypothesis holding it.

    Rows are filled lazily and never change once written, so children can
    read a parent's rows while extending it on demand. ``psi`` and
    ``endpoint`` hold the result of the last truncated scan.
    """

    def __init__(self, lattice: PosteriorLattice, blank: int, parent=None, label: Optional[int] = None):
        self.lattice = lattice
        self.blank = blank
        self.parent = parent
        self.label = label
        self.prefix: tuple = () if parent is None else parent.prefix + (label,)
        self.children: dict = {}
        self.gamma_n = np.zeros(16)
        self.gamma_b = np.zeros(16)
        self.n_rows = 0
        self.psi: Optional[float] = None
        self.endpoint: Optional[int] = None
        self.columns = 0
        self._scan_key = None

    @classmethod
    def root(cls, lattice, blank: int) -> "CtcForwardTable":
        return cls(_as_lattice(lattice), blank)

    @classmethod
    def for_prefix(cls, prefix: Sequence[int], lattice, blank: int) -> "CtcForwardTable":
        node = cls.root(lattice, blank)
        for y in prefix:
            node = node.child(y)
        return node

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def child(self, y: int) -> "CtcForwardTable":
        node = self.children.get(y)
        if node is None:
            _check_labels((y,), self.lattice.vocab_size, self.blank)
            node = CtcForwardTable(self.lattice, self.blank, self, y)
            self.children[y] = node
        return node

    def _grow(self, n: int) -> None:
        if n > self.gamma_n.shape[0]:
            cap = max(n, 2 * self.gamma_n.shape[0])
            for name in ("gamma_n", "gamma_b"):
                old = getattr(self, name)
                new = np.zeros(cap)
                new[: self.n_rows] = old[: self.n_rows]
                setattr(self, name, new)

    def ensure_rows(self, n: int) -> None:
        """Fill rows ``[0, n)``; frames ``< n`` must already be in the lattice."""
        if n <= self.n_rows:
            return
        lat = self.lattice
        if n > lat.t_enc:
            raise FrameUnavailable(lat.t_enc)
        self._grow(n)
        probs = lat.data
        if self.is_root:
            if self.n_rows == 0:
                self.gamma_n[0] = 0.0
                self.gamma_b[0] = probs[0, self.blank]
                self.n_rows = 1
            K.ctc_root_rows(self.gamma_b, probs, self.blank, self.n_rows, n)
        else:
            parent = self.parent
            parent.ensure_rows(n - 1)
            if self.n_rows == 0:
                self.gamma_n[0] = probs[0, self.label] if parent.is_root else 0.0
                self.gamma_b[0] = 0.0
                self.n_rows = 1
            same = (not parent.is_root) and parent.label == self.label
            K.ctc_extend_rows(
                self.gamma_n, self.gamma_b, parent.gamma_n, parent.gamma_b,
                probs, self.label, self.blank, same, self.n_rows, n,
            )
        self.n_rows = n

    def eos_score(self, prev_endpoint: int):
        """Log probability that this prefix is the whole labelling, and the end-point used.

        The empty prefix has no end-point of its own, so it is scored over
        the complete lattice once the producer has closed it.
        """
        if self.is_root:
            lat = self.lattice
            if not lat.closed:
                raise FrameUnavailable(lat.t_enc)
            if lat.t_enc == 0:
                raise EmptyLattice("lattice has no frames")
            t = lat.t_enc - 1
            return safe_log(self.end_probability(t)), t
        return safe_log(self.end_probability(prev_endpoint)), prev_endpoint

    def end_probability(self, t: int) -> float:
        """gamma_n + gamma_b at frame ``t``: the prefix is the complete labelling of frames ``0..t``."""
        self.ensure_rows(t + 1)
        return float(self.gamma_n[t] + self.gamma_b[t])

    def scan(self, prev_endpoint: int, theta: float):
        """Truncated prefix probability of this (non-root) prefix.

        Walks frames forward from frame 1 accumulating the per-frame prefix
        probability; stops at the first frame past ``prev_endpoint`` whose
        contribution is below ``theta``, or at the last frame once the
        lattice is closed. Raises :class:`FrameUnavailable` when it needs a
        frame the producer has not delivered yet.

        Returns ``(psi, endpoint)`` with a 0-based endpoint.
        """
        if self.is_root:
            raise ValueError("the <sos> prefix has no prefix score")
        key = (prev_endpoint, theta)
        if self._scan_key == key:
            return self.psi, self.endpoint
        lat = self.lattice
        avail = lat.t_enc
        if avail == 0:
            if lat.closed:
                raise EmptyLattice("lattice has no frames")
            raise FrameUnavailable(0)
        parent = self.parent
        y = self.label
        same = (not parent.is_root) and parent.label == y
        psi = float(lat.data[0, y]) if parent.is_root else 0.0
        j = 1
        block = 16
        while True:
            if j >= avail:
                if lat.closed:
                    end = avail - 1
                    break
                raise FrameUnavailable(j)
            hi = min(avail, max(j + block, prev_endpoint + 1))
            parent.ensure_rows(hi - 1)
            psi, j, broke = K.ctc_psi_scan(
                parent.gamma_n, parent.gamma_b, lat.data, y, same, psi, j, hi, prev_endpoint, theta
            )
            if broke:
                end = j
                break
            block *= 2
        self.psi, self.endpoint, self._scan_key = psi, end, key
        self.columns = end + 1  # lattice frames that contributed to psi
        return psi, end


class CtcPrefixScorer:
    """Prefix tree of forward tables over one (possibly growing) lattice."""

    def __init__(self, lattice: PosteriorLattice, blank: int, eos: Optional[int] = None, theta: float = DEFAULT_THETA):
        self.lattice = lattice
        self.blank = blank
        self.eos = eos
        self.theta = theta
        self.root = CtcForwardTable(lattice, blank)

    def score(self, parent: CtcForwardTable, y: int, prev_endpoint: int):
        """T-CTC score of ``parent.prefix + (y,)``; returns ``(log_score, endpoint, table)``."""
        if self.eos is not None and y == self.eos:
            score, end = parent.eos_score(prev_endpoint)
            return score, end, parent
        node = parent.child(y)
        psi, end = node.scan(prev_endpoint, self.theta)
        return safe_log(psi), end, node


def tctc_prefix_score(
    prefix: Sequence[int],
    lat: Union[PosteriorLattice, np.ndarray],
    prev_endpoint: int,
    theta: float = DEFAULT_THETA,
    parent_table: Optional[CtcForwardTable] = None,
    *,
    blank: int = 0,
    eos: Optional[int] = None,
):
    """Truncated CTC prefix score of ``prefix`` given its parent's end-point.

    Returns ``(log_score, endpoint, table)``. For a prefix ending in ``eos``
    the score is the parent's complete-labelling probability at
    ``prev_endpoint`` and the end-point does not move (a bare ``eos`` is
    scored over the whole, closed lattice).
    """
    prefix = tuple(int(y) for y in prefix)
    if not prefix:
        raise ValueError("prefix needs at least one label after <sos>")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if parent_table is None:
        lattice = _as_lattice(lat)
        parent_table = CtcForwardTable.for_prefix(prefix[:-1], lattice, blank)
    elif parent_table.prefix != prefix[:-1]:
        raise ValueError("parent_table does not hold the parent prefix")
    y = prefix[-1]
    if eos is not None and y == eos:
        score, end = parent_table.eos_score(prev_endpoint)
        return score, end, parent_table
    node = parent_table.child(y)
    psi, end = node.scan(prev_endpoint, theta)
    return safe_log(psi), end, node


def ctc_prefix_score(
    prefix: Sequence[int],
    lat: Union[PosteriorLattice, np.ndarray],
    *,
    blank: int = 0,
    eos: Optional[int] = None,
) -> float:
    """Full-utterance CTC prefix score (log).

    Sums, over every frame ``j``, the probability that the labelling of
    frames ``0..j`` is ``prefix`` with its last label emitted at ``j``.
    With a trailing ``eos`` it returns the probability that the complete
    labelling equals the prefix.
    """
    probs = lat.probs if isinstance(lat, PosteriorLattice) else np.asarray(lat, dtype=float)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyLattice("lattice has no frames")
    prefix = tuple(int(y) for y in prefix)
    ends = eos is not None and bool(prefix) and prefix[-1] == eos
    labels = prefix[:-1] if ends else prefix
    if not labels and not ends:
        raise ValueError("prefix needs at least one label after <sos>")
    _check_labels(labels, probs.shape[1], blank)
    probs = np.ascontiguousarray(probs)
    T = probs.shape[0]
    gn, gb = K.ctc_full_forward(probs, np.asarray(labels, dtype=np.int64), blank)
    L = len(labels)
    if ends:
        return safe_log(float(gn[L, T - 1] + gb[L, T - 1]))
    y = labels[-1]
    same = L > 1 and labels[-2] == y
    psi0 = float(gn[L, 0])
    psi, _, _ = K.ctc_psi_scan(gn[L - 1], gb[L - 1], probs, y, same, psi0, 1, T, T, -1.0)
    return safe_log(psi)


def collapse(alignment: Sequence[int], blank: int) -> tuple:
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for a in alignment:
        if a != prev and a != blank:
            out.append(a)
        prev = a
    return tuple(out)


def brute_force_prefix_oracle(
    prefix: Sequence[int],
    lat: Union[PosteriorLattice, np.ndarray],
    *,
    blank: int = 0,
    eos: Optional[int] = None,
    max_frames: int = 8,
    max_vocab: int = 4,
) -> float:
    """Enumerate all alignments; sum those whose collapse starts with ``prefix``."""
    probs = lat.probs if isinstance(lat, PosteriorLattice) else np.asarray(lat, dtype=float)
    T, V = probs.shape
    if T > max_frames or V > max_vocab:
        raise TooLarge(f"{V}^{T} alignments is too many to enumerate")
    prefix = tuple(int(y) for y in prefix)
    ends = eos is not None and bool(prefix) and prefix[-1] == eos
    labels = prefix[:-1] if ends else prefix
    n = len(labels)
    terms = []
    for path in itertools.product(range(V), repeat=T):
        c = collapse(path, blank)
        if (c == labels) if ends else (c[:n] == labels):
            terms.append(math.prod(probs[j, a] for j, a in enumerate(path)))
    return safe_log(math.fsum(terms))
