"""Attention mechanisms: location-aware (offline) and four monotonic variants.

Decode-mode steps read the representation stream left to right and only as
far as they need. They raise :class:`~streamdec.core.FrameUnavailable` when a
frame has not arrived yet, so a caller can retry the same step later. Pass the
same :class:`StepScan` back in and the energies already computed are reused.

Training-mode functions work on complete selection-probability matrices
``p[i, j]`` (output step ``i``, frame ``j``) and return expectations.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels as K
from .core import AttentionConfig, EmptyStream, RepresentationStream, StreamDecError

log = logging.getLogger(__name__)

__all__ = [
    "AttentionConfig",
    "AttentionStepResult",
    "EnergyParams",
    "KeyCache",
    "StepScan",
    "energy",
    "loaa_attend",
    "hma_decode_step",
    "mocha_decode_step",
    "smocha_decode_step",
    "mta_decode_step",
    "hma_expectation",
    "mocha_expectation",
    "smocha_expectation",
    "mta_train_weights",
    "Attention",
]


class ZeroVectorV(StreamDecError):
    pass


class DegenerateNormalization(StreamDecError):
    pass


@dataclass
class EnergyParams:
    """Parameters of ``g * v^T/|v| * tanh(W1 q + W2 h + b) + r``.

    ``W3`` and ``Q`` are only used by location-aware attention, whose energy
    is the plain ``v^T tanh(W1 q + W2 h + W3 f + b)``.
    """

    W1: np.ndarray
    W2: np.ndarray
    b: np.ndarray
    v: np.ndarray
    g: float = 1.0
    r: float = 0.0
    W3: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    normalize: bool = True

    @classmethod
    def random(cls, state_dim, rep_dim, att_dim, rng=None, r=-4.0, g=1.0, normalize=True,
               n_filters=0, filter_width=5, scale=0.5):
        rng = np.random.default_rng(rng)
        p = cls(
            W1=rng.normal(0, scale / math.sqrt(state_dim), (att_dim, state_dim)),
            W2=rng.normal(0, scale / math.sqrt(rep_dim), (att_dim, rep_dim)),
            b=rng.normal(0, 0.1, att_dim),
            v=rng.normal(0, 1.0, att_dim),
            g=g,
            r=r,
            normalize=normalize,
        )
        if n_filters:
            p.Q = rng.normal(0, 0.5, (n_filters, filter_width))
            p.W3 = rng.normal(0, scale / math.sqrt(n_filters), (att_dim, n_filters))
        return p

    @property
    def att_dim(self) -> int:
        return self.W1.shape[0]

    def direction(self) -> np.ndarray:
        """``v / |v|`` for the normalized form, ``v`` otherwise."""
        if not self.normalize:
            return self.v
        norm = float(np.linalg.norm(self.v))
        if norm == 0.0:
            raise ZeroVectorV("energy vector v has zero norm")
        return self.v / norm


def energy(q, h, params: EnergyParams) -> float:
    """Monotonic energy of one (decoder state, representation) pair."""
    pre = params.W1 @ np.asarray(q, float) + params.W2 @ np.asarray(h, float) + params.b
    return params.g * float(params.direction() @ np.tanh(pre)) + params.r


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class AttentionStepResult:
    endpoint: Optional[int]
    weights: np.ndarray
    context: np.ndarray
    probs: np.ndarray
    start: int = 0  # frame index of weights[0]
    probs_start: int = 0  # frame index of probs[0]


class KeyCache:
    """``W2 h_j`` for every frame seen so far, computed once per frame."""

    def __init__(self, W2: np.ndarray, stream: RepresentationStream):
        self.W2 = W2
        self.stream = stream
        self.keys = np.zeros((64, W2.shape[0]))
        self.n = 0

    def ensure(self, n: int) -> np.ndarray:
        if n > self.n:
            if n > self.keys.shape[0]:
                grown = np.zeros((max(n, 2 * self.keys.shape[0]), self.keys.shape[1]))
                grown[: self.n] = self.keys[: self.n]
                self.keys = grown
            data = self.stream.data
            for j in range(self.n, n):
                self.keys[j] = self.W2 @ data[j]
            self.n = n
        return self.keys


class StepScan:
    """Energies and selection probabilities of one output step, grown lazily."""

    def __init__(self, params: EnergyParams, keys: KeyCache, q):
        self.params = params
        self.keys = keys
        self.wqb = params.W1 @ np.asarray(q, float) + params.b
        self.vhat = params.direction()
        self.e = np.zeros(64)
        self.n = 0

    @property
    def stream(self) -> RepresentationStream:
        return self.keys.stream

    def upto(self, n: int) -> np.ndarray:
        """Energies of frames ``[0, n)``; those frames must be available."""
        if n > self.n:
            if n > self.e.shape[0]:
                grown = np.zeros(max(n, 2 * self.e.shape[0]))
                grown[: self.n] = self.e[: self.n]
                self.e = grown
            keys = self.keys.ensure(n)
            K.energy_rows(self.wqb, keys, self.vhat, float(self.params.g), float(self.params.r), self.n, n, self.e)
            self.n = n
        return self.e[:n]

    def probs(self, lo: int, hi: int) -> np.ndarray:
        return sigmoid(self.upto(hi)[lo:hi])


def _scan(step: StepScan, start: int) -> Optional[int]:
    """First frame ``j >= start`` with selection probability above 0.5."""
    stream = step.stream
    j = start
    while stream.require(j):
        e = step.upto(j + 1)[j]
        if sigmoid(e) > 0.5:
            return j
        j += 1
    return None


def _softmax(u: np.ndarray) -> np.ndarray:
    z = np.exp(u - np.max(u))
    return z / z.sum()


def _zero_result(step: StepScan, start: int, dim: int) -> AttentionStepResult:
    stop = max(step.n, start)
    return AttentionStepResult(None, np.zeros(0), np.zeros(dim), step.probs(start, stop), start, start)


def _ensure_step(scan, params, stream, q):
    if scan is None:
        scan = StepScan(params, KeyCache(params.W2, stream), q)
    return scan


# ---------------------------------------------------------------------------
# decode mode
# ---------------------------------------------------------------------------


def loaa_attend(q, prev_weights, H, params: EnergyParams) -> AttentionStepResult:
    """Location-aware global attention over the complete representation list."""
    H = np.atleast_2d(np.asarray(H, float))
    T = H.shape[0]
    if T == 0 or H.size == 0:
        raise EmptyStream("location-aware attention needs at least one frame")
    prev = np.zeros(T) if prev_weights is None else np.asarray(prev_weights, float)
    pre = (params.W1 @ np.asarray(q, float) + params.b)[None, :] + H @ params.W2.T
    if params.Q is not None:
        pre = pre + location_features(prev, params.Q) @ params.W3.T
    e = np.tanh(pre) @ params.v
    w = _softmax(e)
    return AttentionStepResult(None, w, w @ H, np.zeros(0), 0, 0)


def location_features(prev_weights, Q) -> np.ndarray:
    """``Q * prev_weights`` per filter, zero padded to the input length."""
    prev = np.asarray(prev_weights, float)
    T = len(prev)
    cols = []
    for kern in np.atleast_2d(Q):
        off = (len(kern) - 1) // 2
        cols.append(np.convolve(prev, kern)[off:off + T])
    return np.stack(cols, axis=1)


def hma_decode_step(prev_endpoint: int, q, stream: RepresentationStream, params: EnergyParams,
                    scan: Optional[StepScan] = None) -> AttentionStepResult:
    """Hard monotonic attention: stop at the first frame from ``prev_endpoint`` with p > 0.5."""
    scan = _ensure_step(scan, params, stream, q)
    t = _scan(scan, prev_endpoint)
    if t is None:
        return _zero_result(scan, prev_endpoint, stream.dim)
    ctx = stream.data[t].copy()
    return AttentionStepResult(t, np.ones(1), ctx, scan.probs(prev_endpoint, t + 1), t, prev_endpoint)


def _chunk(chunk_scan: StepScan, lo: int, hi: int) -> np.ndarray:
    return _softmax(chunk_scan.upto(hi)[lo:hi])


def mocha_decode_step(prev_endpoint: int, q, stream: RepresentationStream, params: EnergyParams, w: int,
                      chunk_params: Optional[EnergyParams] = None, scan: Optional[StepScan] = None,
                      chunk_scan: Optional[StepScan] = None) -> AttentionStepResult:
    """Monotonic chunk-wise attention with chunk width ``w``.

    The chunk is clipped at frame 0 and the softmax renormalised over the
    frames that remain.
    """
    if w < 1:
        raise ValueError("chunk width must be >= 1")
    scan = _ensure_step(scan, params, stream, q)
    t = _scan(scan, prev_endpoint)
    if t is None:
        return _zero_result(scan, prev_endpoint, stream.dim)
    chunk_scan = _ensure_step(chunk_scan, chunk_params or params, stream, q)
    lo = max(0, t - w + 1)
    weights = _chunk(chunk_scan, lo, t + 1)
    ctx = K.weighted_rows(weights, stream.data, lo, t + 1)
    return AttentionStepResult(t, weights, ctx, scan.probs(prev_endpoint, t + 1), lo, prev_endpoint)


def smocha_decode_step(prev_endpoint: int, q, stream: RepresentationStream, params: EnergyParams, w: int,
                       n: float = 1, chunk_params: Optional[EnergyParams] = None,
                       scan: Optional[StepScan] = None, chunk_scan: Optional[StepScan] = None) -> AttentionStepResult:
    """Stable MoChA with ``n`` consecutive decoding chunks (``n=inf``: all history).

    Each chunk ending at ``k`` in ``[t-n+1, t]`` gets the normalised stopping
    expectation of ``k`` as its mass; that mass is spread over the chunk by
    the chunk softmax. The attended span is ``[t-w-n+2, t]``.
    """
    if w < 1:
        raise ValueError("chunk width must be >= 1")
    if not n >= 1:
        raise ValueError("chunk order must be >= 1")
    scan = _ensure_step(scan, params, stream, q)
    t = _scan(scan, prev_endpoint)
    if t is None:
        return _zero_result(scan, prev_endpoint, stream.dim)
    chunk_scan = _ensure_step(chunk_scan, chunk_params or params, stream, q)
    k_lo = 0 if math.isinf(n) else max(0, t - int(n) + 1)
    if k_lo == t:
        ebar = np.ones(1)
    else:
        ez = K.smocha_row_product(sigmoid(scan.upto(t + 1)))[k_lo:]
        total = ez.sum()
        if total > 0.0:
            ebar = ez / total
        else:
            log.warning("sMoChA window expectations underflowed at frame %d; using a one-hot weight", t)
            ebar = np.zeros(t - k_lo + 1)
            ebar[-1] = 1.0
    lo = max(0, k_lo - w + 1)
    u = chunk_scan.upto(t + 1)
    weights = np.zeros(t + 1 - lo)
    for off, mass in enumerate(ebar):
        k = k_lo + off
        c_lo = max(0, k - w + 1)
        weights[c_lo - lo:k + 1 - lo] += mass * _softmax(u[c_lo:k + 1])
    ctx = K.weighted_rows(weights, stream.data, lo, t + 1)
    return AttentionStepResult(t, weights, ctx, scan.probs(prev_endpoint, t + 1), lo, prev_endpoint)


def mta_decode_step(prev_endpoint: int, q, stream: RepresentationStream, params: EnergyParams,
                    scan: Optional[StepScan] = None) -> AttentionStepResult:
    """Monotonic truncated attention.

    The end-point is the first frame at or after ``prev_endpoint`` with
    p > 0.5. Weights ``p_j * prod_{k<j}(1 - p_k)`` run from frame 0 to the
    end-point, so frames before ``prev_endpoint`` still contribute.
    """
    scan = _ensure_step(scan, params, stream, q)
    t = _scan(scan, prev_endpoint)
    if t is None:
        return AttentionStepResult(None, np.zeros(0), np.zeros(stream.dim), scan.probs(0, max(scan.n, 0)), 0, 0)
    p = scan.probs(0, t + 1)
    weights = K.smocha_row_product(p)
    ctx = K.weighted_rows(weights, stream.data, 0, t + 1)
    return AttentionStepResult(t, weights, ctx, p, 0, 0)


# ---------------------------------------------------------------------------
# training mode (expectations)
# ---------------------------------------------------------------------------


def _one_hot_first(T: int) -> np.ndarray:
    e = np.zeros(T)
    if T:
        e[0] = 1.0
    return e


def hma_expectation(p, init=None, method: str = "direct") -> np.ndarray:
    """Expected stopping indicators of hard monotonic attention.

    Row ``i`` depends on row ``i-1`` (``init`` for the first row, one-hot at
    frame 0 by default). ``method="recursive"`` uses the first-order
    recursion instead of the explicit sum over start frames.
    """
    p = np.atleast_2d(np.asarray(p, float))
    prev = _one_hot_first(p.shape[1]) if init is None else np.asarray(init, float)
    row_fn = {"direct": K.hma_row_direct, "recursive": K.hma_row_recursive}[method]
    out = np.zeros_like(p)
    for i in range(p.shape[0]):
        out[i] = row_fn(np.ascontiguousarray(p[i]), np.ascontiguousarray(prev))
        prev = out[i]
    return out


def chunk_spread(ez, u, w: int) -> np.ndarray:
    """Spread each stopping mass ``ez[k]`` over the chunk ending at ``k`` by softmax of ``u``."""
    ez = np.asarray(ez, float)
    u = np.asarray(u, float)
    T = ez.shape[0]
    out = np.zeros(T)
    for k in range(T):
        if ez[k] == 0.0:
            continue
        lo = max(0, k - w + 1)
        out[lo:k + 1] += ez[k] * _softmax(u[lo:k + 1])
    return out


def mocha_expectation(p, u, w: int, init=None, H=None):
    """Expected MoChA weights; returns ``(E_alpha, contexts)`` (contexts ``None`` without ``H``)."""
    ez = hma_expectation(p, init)
    u = np.atleast_2d(np.asarray(u, float))
    alpha = np.stack([chunk_spread(ez[i], u[i], w) for i in range(ez.shape[0])])
    ctx = None if H is None else alpha @ np.asarray(H, float)
    return alpha, ctx


def smocha_expectation(p, method: str = "product") -> np.ndarray:
    """Stable-MoChA stopping expectations; each row scans from frame 0 independently."""
    p = np.atleast_2d(np.asarray(p, float))
    row_fn = {"product": K.smocha_row_product, "recursive": K.smocha_row_recursive}[method]
    return np.stack([row_fn(np.ascontiguousarray(row)) for row in p]) if p.size else p.copy()


def mta_train_weights(p, H):
    """Untruncated MTA weights over all frames and the matching contexts."""
    alpha = smocha_expectation(p)
    return alpha, alpha @ np.asarray(H, float)


# ---------------------------------------------------------------------------
# mechanism dispatch used by the decoder
# ---------------------------------------------------------------------------


class Attention:
    """Binds an :class:`AttentionConfig` to parameters and one stream.

    ``step`` is retry-safe: callers keep the returned ``scans`` object and hand
    it back after a :class:`FrameUnavailable`.
    """

    def __init__(self, config: AttentionConfig, params: EnergyParams, stream: RepresentationStream,
                 chunk_params: Optional[EnergyParams] = None, loaa_params: Optional[EnergyParams] = None):
        self.config = config
        self.params = params
        self.chunk_params = chunk_params or params
        self.loaa_params = loaa_params
        self.stream = stream
        self.keys = KeyCache(params.W2, stream)
        self.chunk_keys = KeyCache(self.chunk_params.W2, stream)
        if config.mechanism == "loaa" and loaa_params is None:
            raise ValueError("location-aware attention needs loaa_params")

    def new_scans(self, q):
        mech = self.config.mechanism
        if mech == "loaa":
            return None
        main = StepScan(self.params, self.keys, q)
        chunk = StepScan(self.chunk_params, self.chunk_keys, q) if mech in ("mocha", "smocha") else None
        return main, chunk

    def step(self, prev_endpoint: int, q, att_state, scans):
        """Returns ``(result, new_att_state)``."""
        cfg = self.config
        mech = cfg.mechanism
        if mech == "loaa":
            self.stream.require(self.stream.t_enc)  # offline only: waits for end of input
            res = loaa_attend(q, att_state, self.stream.rows(), self.loaa_params)
            return res, res.weights
        main, chunk = scans
        if mech == "hma":
            res = hma_decode_step(prev_endpoint, q, self.stream, self.params, scan=main)
        elif mech == "mocha":
            res = mocha_decode_step(prev_endpoint, q, self.stream, self.params, cfg.chunk_width,
                                    self.chunk_params, scan=main, chunk_scan=chunk)
        elif mech == "smocha":
            res = smocha_decode_step(prev_endpoint, q, self.stream, self.params, cfg.chunk_width,
                                     cfg.chunk_order, self.chunk_params, scan=main, chunk_scan=chunk)
        else:
            res = mta_decode_step(prev_endpoint, q, self.stream, self.params, scan=main)
        return res, None


def write_attention_csv(path, rows, header_lines=()) -> None:
    """Write ``output_step, frame, weight`` rows (1-based) for one utterance.

    ``rows`` yields ``(output_step, first_frame, weights)`` with 0-based
    indices.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["output_step", "frame", "weight"])
        for step, first, weights in rows:
            for k, wgt in enumerate(np.asarray(weights, float)):
                writer.writerow([step + 1, first + k + 1, repr(float(wgt))])
