"""N-gram next-template anomaly detector (DeepLog's top-k criterion without the LSTM)."""

from __future__ import annotations

import json
import warnings
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ANOMALOUS, NORMAL, LogSequence
from .exceptions import EmptyTrainingSet, InvalidConfig, NoLabels
from .metrics import prf1


def _tids(seq):
    return tuple(seq.template_ids) if isinstance(seq, LogSequence) else tuple(seq)


class NgramDetector(BaseEstimator):
    """Flag a sequence when some next template falls outside the top-k continuations.

    Parameters
    ----------
    n : int, default=3
        Context length.
    top_k : int, default=5
        A continuation is expected if it ranks within the ``top_k`` most
        frequent successors of its context (ties: lower template id first).
        Unseen contexts are anomalous.
    """

    def __init__(self, n=3, top_k=5):
        self.n = n
        self.top_k = top_k

    def fit(self, X, y=None):
        if self.n < 1 or self.top_k < 1:
            raise InvalidConfig("n and top_k must be >= 1")
        seqs = [_tids(s) for s in X]
        if not seqs:
            raise EmptyTrainingSet("no training sequences")
        counts = defaultdict(Counter)
        vocab = set()
        for s in seqs:
            vocab.update(s)
            for i in range(self.n, len(s)):
                counts[s[i - self.n:i]][s[i]] += 1
        self.counts_ = dict(counts)
        self.vocab_ = frozenset(vocab)
        self._ranked = {}
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "counts_"):
            return self.fit(X)
        for s in map(_tids, X):
            self.vocab_ = self.vocab_ | set(s)
            for i in range(self.n, len(s)):
                self.counts_.setdefault(s[i - self.n:i], Counter())[s[i]] += 1
        self._ranked = {}
        return self

    def _top(self, context, top_k):
        key = (context, top_k)
        hit = self._ranked.get(key)
        if hit is None:
            succ = self.counts_[context]
            ranked = sorted(succ.items(), key=lambda kv: (-kv[1], kv[0]))
            hit = frozenset(t for t, _ in ranked[:top_k])
            self._ranked[key] = hit
        return hit

    def first_violation(self, seq, top_k=None):
        """Index of the first unexpected position, or None."""
        check_is_fitted(self, "counts_")
        top_k = top_k or self.top_k
        s = _tids(seq)
        for i in range(self.n, len(s)):
            ctx = s[i - self.n:i]
            if ctx not in self.counts_ or s[i] not in self._top(ctx, top_k):
                return i
        return None

    def predict_one(self, seq, top_k=None) -> str:
        s = _tids(seq)
        if len(s) < self.n + 1:
            warnings.warn(f"sequence of {len(s)} templates is shorter than n+1={self.n + 1}; treated normal",
                          stacklevel=2)
            return NORMAL
        return ANOMALOUS if self.first_violation(s, top_k) is not None else NORMAL

    def predict(self, X, top_k=None) -> np.ndarray:
        """1 for anomalous, 0 for normal. Sequences shorter than ``n + 1`` are normal."""
        check_is_fitted(self, "counts_")
        out = np.zeros(len(X), dtype=np.int64)
        short = []
        for j, seq in enumerate(X):
            s = _tids(seq)
            if len(s) < self.n + 1:
                short.append(j)
                continue
            out[j] = self.first_violation(s, top_k) is not None
        self.short_sequences_ = short
        return out

    def score(self, X, y=None):
        """F1 on labelled sequences (anomalous is the positive class)."""
        return evaluate(self, X)["f1"]

    # -- persistence: one header line, then sorted {context_tids, next_tid, count} rows

    def save(self, path):
        check_is_fitted(self, "counts_")
        rows = sorted((ctx, nxt, c) for ctx, succ in self.counts_.items() for nxt, c in succ.items())
        with Path(path).open("w") as fh:
            fh.write(json.dumps({"n": self.n, "top_k": self.top_k, "vocab": sorted(self.vocab_)}) + "\n")
            for ctx, nxt, c in rows:
                fh.write(json.dumps({"context_tids": list(ctx), "next_tid": nxt, "count": c}) + "\n")

    @classmethod
    def load(cls, path):
        with Path(path).open() as fh:
            header = json.loads(fh.readline())
            model = cls(n=header["n"], top_k=header["top_k"])
            counts = defaultdict(Counter)
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    counts[tuple(row["context_tids"])][row["next_tid"]] = row["count"]
        model.counts_ = dict(counts)
        model.vocab_ = frozenset(header.get("vocab", ()))
        model._ranked = {}
        return model


def train(sequences, n=3, top_k=5) -> NgramDetector:
    return NgramDetector(n=n, top_k=top_k).fit(sequences)


def predict_sequence(model: NgramDetector, seq, top_k=None) -> str:
    return model.predict_one(seq, top_k)


def evaluate(model: NgramDetector, sequences) -> dict:
    labels = [s.ground_truth for s in sequences]
    if not sequences or any(lab is None for lab in labels):
        raise NoLabels("evaluation needs labelled sequences")
    pred = model.predict(sequences)
    truth = np.array([lab == ANOMALOUS for lab in labels], dtype=np.int64)
    return prf1(pred, truth)
