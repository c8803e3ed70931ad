"""Streaming joint CTC/attention decoding with monotonic attention.

The hot loops live in :mod:`streamdec.kernels` and are compiled with numba
unless ``STREAMDEC_DISABLE_JIT=1`` is set, in which case pure-numpy versions
run instead.
"""

__version__ = "0.1.0"

from ._jit import backend_name
from .core import (
    AttentionConfig,
    DecodeConfig,
    FrameUnavailable,
    Hypothesis,
    PosteriorLattice,
    RepresentationStream,
    StreamDecError,
    Vocab,
    append_frame,
    validate_lattice,
)
from .ctc import brute_force_prefix_oracle, ctc_prefix_score, tctc_prefix_score
from .dwjd import DecodeSession, combine_score, dwjd_decode, end_detect, finalize_hypotheses
from .stream_sim import StreamingConfig, ToyModel, chunked_encode, simulate_arrival

__all__ = [
    "AttentionConfig",
    "DecodeConfig",
    "DecodeSession",
    "FrameUnavailable",
    "Hypothesis",
    "PosteriorLattice",
    "RepresentationStream",
    "StreamDecError",
    "StreamingConfig",
    "ToyModel",
    "Vocab",
    "append_frame",
    "backend_name",
    "brute_force_prefix_oracle",
    "chunked_encode",
    "combine_score",
    "ctc_prefix_score",
    "dwjd_decode",
    "end_detect",
    "finalize_hypotheses",
    "simulate_arrival",
    "tctc_prefix_score",
    "validate_lattice",
]
