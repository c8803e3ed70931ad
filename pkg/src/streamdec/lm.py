"""Label language models for the ``beta`` term of the joint score."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .core import Vocab


class LmScorer(Protocol):
    def score_next(self, prefix: Sequence[int], label: int) -> float:
        """Log probability of ``label`` after ``prefix`` (which starts with <sos>)."""
        ...


class UniformLM:
    """Every ordinary label and <eos> equally likely."""

    def __init__(self, vocab: Vocab):
        self.logp = -math.log(len(vocab.real_ids) + 1)

    def score_next(self, prefix, label) -> float:
        return self.logp


class BigramLM:
    """Absolute-discount back-off bigram over label ids.

    Unigrams are add-one smoothed over ordinary labels plus <eos>, so every
    in-vocabulary label gets a finite, non-positive log probability.
    """

    def __init__(self, vocab: Vocab, discount: float = 0.5):
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        self.vocab = vocab
        self.discount = discount
        self.outputs = list(vocab.real_ids) + [vocab.eos_id]
        self.unigram = {y: 1.0 / len(self.outputs) for y in self.outputs}
        self.bigram: dict = {}
        self.context_total: dict = {}
        self.backoff: dict = {}

    def fit(self, sentences: Iterable[Sequence[int]]) -> "BigramLM":
        V = self.vocab
        uni = Counter()
        bi = defaultdict(Counter)
        for sent in sentences:
            seq = [V.sos_id] + [y for y in sent if y in self.unigram and y != V.eos_id] + [V.eos_id]
            for a, b in zip(seq, seq[1:]):
                uni[b] += 1
                bi[a][b] += 1
        total = sum(uni.values()) + len(self.outputs)
        self.unigram = {y: (uni[y] + 1) / total for y in self.outputs}
        self.bigram = {a: dict(c) for a, c in bi.items()}
        self.context_total = {a: sum(c.values()) for a, c in bi.items()}
        self.backoff = {}
        for a, c in bi.items():
            seen_mass = sum(self.unigram[b] for b in c)
            freed = self.discount * len(c) / self.context_total[a]
            self.backoff[a] = freed / (1.0 - seen_mass) if seen_mass < 1.0 else 0.0
        return self

    @classmethod
    def from_text(cls, path, vocab: Vocab, discount: float = 0.5) -> "BigramLM":
        """Train on a text file with one space-separated label sentence per line."""
        sents = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            toks = line.split()
            if toks:
                sents.append(vocab.encode(toks))
        return cls(vocab, discount).fit(sents)

    def prob(self, prev: int, label: int) -> float:
        counts = self.bigram.get(prev)
        if not counts:
            return self.unigram[label]
        total = self.context_total[prev]
        c = counts.get(label, 0)
        if c:
            return (c - self.discount) / total
        return self.backoff[prev] * self.unigram[label]

    def score_next(self, prefix, label) -> float:
        if label not in self.unigram:
            return float("-inf")
        return math.log(self.prob(prefix[-1], label))
